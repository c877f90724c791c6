#pragma once

// JSON run manifests. A manifest fully describes a run: problem, network,
// search, trainer loop, reward schedule, baseline settings and master seed.
// Unknown keys are rejected so typos surface as errors naming the field.

#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>

#include "json.hpp"

#include "seqrl/baselines.hpp"
#include "seqrl/cdma.hpp"
#include "seqrl/mcts.hpp"
#include "seqrl/net.hpp"
#include "seqrl/trainer.hpp"

namespace seqrl {

using json = nlohmann::json;

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ProblemSpec {
  std::string type = "radar";  // "cdma" | "radar"
  int J = 2, M = 2, N = 8;     // cdma uses J, M, N; radar uses N
  int ell = 1;

  Problem make() const {
    if (type == "cdma") return make_cdma_problem({J, M, N}, ell);
    if (type == "radar") return make_radar_problem(N, ell);
    throw ConfigError("problem.type: expected \"cdma\" or \"radar\", got \"" + type + "\"");
  }
};

struct RandomBaselineSpec {
  long budget = 100000;
  int runs = 20;
  std::string unit = "trials";  // "trials" | "visited_states"
};

struct DqnBaselineSpec {
  baselines::DqnConfig dqn;
  std::optional<Segment> reward;  // default: the schedule's first segment
};

struct Manifest {
  std::string name = "run";
  std::uint64_t seed = 1;
  ProblemSpec problem;
  std::optional<FeatureSpec> features;
  net::NetworkConfig network;  // dims and policy width are derived from the problem
  mcts::SearchConfig search;
  TrainLoopConfig trainer;
  RewardSchedule schedule;
  RandomBaselineSpec random;
  baselines::ExhaustiveConfig exhaustive;
  DqnBaselineSpec dqn;

  FeatureSpec feature_spec(const Problem& p) const {
    return features ? *features : FeatureSpec::default_for(p.game);
  }

  net::NetworkConfig network_for(const Problem& p) const {
    net::NetworkConfig c = network;
    const FeatureSpec f = feature_spec(p);
    c.rows = f.rows;
    c.cols = f.cols;
    c.policy_size = p.game.move_count();
    return c;
  }

  TrainSetup train_setup() const {
    const Problem p = problem.make();
    TrainSetup s;
    s.problem = p;
    s.features = feature_spec(p);
    s.net = network_for(p);
    s.net.validate();
    s.search = search;
    s.loop = trainer;
    s.schedule = schedule;
    s.schedule.direction = p.direction;
    s.seed = seed;
    return s;
  }
};

namespace detail {

class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + "expected an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(field(key) + ": wrong type (" + j_.at(key).dump() + ")");
    }
  }
  bool has(const char* key) const { return j_.contains(key); }
  const json& at(const char* key) {
    seen_.insert(key);
    return j_.at(key);
  }
  std::string field(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }
  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw ConfigError(field(k) + ": unknown field");
  }

 private:
  std::string where() const { return path_.empty() ? "manifest: " : path_ + ": "; }
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline Segment read_segment(const json& j, const std::string& path) {
  Reader r(j, path);
  Segment s;
  r.get("lo", s.lo);
  r.get("hi", s.hi);
  r.get("start_episode", s.start_episode);
  r.finish();
  return s;
}

inline json segment_json(const Segment& s) {
  json j{{"lo", s.lo}, {"hi", s.hi}};
  if (s.start_episode >= 0) j["start_episode"] = s.start_episode;
  return j;
}

template <typename Fn>
void checked(const std::string& field, Fn&& fn) {
  try {
    fn();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(field + ": " + e.what());
  }
}

}  // namespace detail

inline Manifest parse_manifest(const json& j) {
  using detail::Reader;
  Manifest m;
  Reader top(j, "");
  top.get("name", m.name);
  top.get("seed", m.seed);

  if (!top.has("problem")) throw ConfigError("problem: missing");
  {
    Reader r(top.at("problem"), "problem");
    r.get("type", m.problem.type);
    r.get("J", m.problem.J);
    r.get("M", m.problem.M);
    r.get("N", m.problem.N);
    r.get("ell", m.problem.ell);
    r.finish();
    detail::checked("problem", [&] { m.problem.make(); });
  }
  if (top.has("features")) {
    Reader r(top.at("features"), "features");
    FeatureSpec f;
    r.get("rows", f.rows);
    r.get("cols", f.cols);
    r.finish();
    m.features = f;
  }
  if (top.has("network")) {
    Reader r(top.at("network"), "network");
    auto& n = m.network;
    r.get("conv_layers", n.conv_layers);
    r.get("filters", n.filters);
    r.get("kernel", n.kernel);
    r.get("value_hidden", n.value_hidden);
    r.get("l2", n.l2);
    r.get("learning_rate", n.learning_rate);
    r.get("momentum", n.momentum);
    r.get("bn_decay", n.bn_decay);
    r.finish();
  }
  if (top.has("search")) {
    Reader r(top.at("search"), "search");
    auto& s = m.search;
    r.get("q", s.q);
    r.get("cp", s.cp);
    r.get("alpha", s.alpha);
    r.get("noise_fraction", s.noise_fraction);
    r.get("noise", s.noise);
    r.get("tau_explore", s.tau_explore);
    r.get("tau_exploit", s.tau_exploit);
    r.finish();
    detail::checked("search", [&] { s.validate(); });
  }
  if (top.has("trainer")) {
    Reader r(top.at("trainer"), "trainer");
    auto& t = m.trainer;
    r.get("G", t.G);
    r.get("z", t.z);
    r.get("eval_games", t.eval_games);
    r.get("probe_games", t.probe_games);
    std::string mode = t.batch_mode == BatchMode::kWithoutReplacement ? "without_replacement"
                                                                      : "with_replacement";
    r.get("batch_mode", mode);
    if (mode == "without_replacement")
      t.batch_mode = BatchMode::kWithoutReplacement;
    else if (mode == "with_replacement")
      t.batch_mode = BatchMode::kWithReplacement;
    else
      throw ConfigError("trainer.batch_mode: expected \"without_replacement\" or \"with_replacement\"");
    r.get("batch_size", t.batch_size);
    r.get("batch_repeat", t.batch_repeat);
    r.get("total_episodes", t.total_episodes);
    r.get("calibrate_mu", t.calibrate_mu);
    r.get("calibration_games", t.calibration_games);
    if (r.has("stop_at")) {
      double v = 0;
      r.get("stop_at", v);
      t.stop_at = v;
    }
    r.get("visited_cap", t.visited_cap);
    r.get("workers", t.workers);
    r.finish();
    detail::checked("trainer", [&] { t.validate(); });
  }
  if (top.has("schedule")) {
    Reader r(top.at("schedule"), "schedule");
    r.get("trigger", m.schedule.trigger);
    if (r.has("halving")) {
      std::pair<double, double> range;
      r.get("halving", range);
      m.schedule.segments = halving_segments(range.first, range.second);
    }
    if (r.has("segments")) {
      if (!m.schedule.segments.empty())
        throw ConfigError("schedule: give either segments or halving, not both");
      const json& segs = r.at("segments");
      if (!segs.is_array()) throw ConfigError("schedule.segments: expected an array");
      for (std::size_t i = 0; i < segs.size(); ++i)
        m.schedule.segments.push_back(
            detail::read_segment(segs[i], "schedule.segments[" + std::to_string(i) + "]"));
    }
    r.finish();
  }
  if (!m.trainer.calibrate_mu) {
    if (m.schedule.segments.empty()) throw ConfigError("schedule.segments: missing");
    detail::checked("schedule", [&] { m.schedule.validate(); });
  } else if (m.problem.type != "cdma") {
    throw ConfigError("trainer.calibrate_mu: only the cdma problem calibrates Mu");
  }

  if (top.has("baselines")) {
    Reader b(top.at("baselines"), "baselines");
    if (b.has("random")) {
      Reader r(b.at("random"), "baselines.random");
      r.get("budget", m.random.budget);
      r.get("runs", m.random.runs);
      r.get("unit", m.random.unit);
      r.finish();
      if (m.random.unit != "trials" && m.random.unit != "visited_states")
        throw ConfigError("baselines.random.unit: expected \"trials\" or \"visited_states\"");
    }
    if (b.has("exhaustive")) {
      Reader r(b.at("exhaustive"), "baselines.exhaustive");
      auto& e = m.exhaustive;
      r.get("limit_bits", e.limit_bits);
      r.get("census", e.census);
      r.get("census_limit_bits", e.census_limit_bits);
      r.get("top_k", e.top_k);
      r.get("symmetry", e.symmetry);
      r.finish();
    }
    if (b.has("dqn")) {
      Reader r(b.at("dqn"), "baselines.dqn");
      auto& d = m.dqn.dqn;
      r.get("fifo_capacity", d.fifo_capacity);
      r.get("epsilon", d.epsilon);
      d.epsilon_final = d.epsilon;
      r.get("epsilon_final", d.epsilon_final);
      r.get("epsilon_decay_episodes", d.epsilon_decay_episodes);
      r.get("batch_size", d.batch_size);
      r.get("eval_every", d.eval_every);
      r.get("episodes", d.episodes);
      r.get("updates_per_episode", d.updates_per_episode);
      if (r.has("reward")) m.dqn.reward = detail::read_segment(r.at("reward"), "baselines.dqn.reward");
      r.finish();
      detail::checked("baselines.dqn", [&] { d.validate(); });
    }
    b.finish();
  }
  top.finish();
  detail::checked("network", [&] { m.network_for(m.problem.make()).validate(); });
  return m;
}

inline Manifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  json j;
  try {
    j = json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return parse_manifest(j);
}

inline json to_json(const Manifest& m) {
  json j;
  j["name"] = m.name;
  j["seed"] = m.seed;
  j["problem"] = {{"type", m.problem.type}, {"N", m.problem.N}, {"ell", m.problem.ell}};
  if (m.problem.type == "cdma") {
    j["problem"]["J"] = m.problem.J;
    j["problem"]["M"] = m.problem.M;
  }
  if (m.features) j["features"] = {{"rows", m.features->rows}, {"cols", m.features->cols}};
  const auto& n = m.network;
  j["network"] = {{"conv_layers", n.conv_layers}, {"filters", n.filters},
                  {"kernel", n.kernel},           {"value_hidden", n.value_hidden},
                  {"l2", n.l2},                   {"learning_rate", n.learning_rate},
                  {"momentum", n.momentum},       {"bn_decay", n.bn_decay}};
  const auto& s = m.search;
  j["search"] = {{"q", s.q},
                 {"cp", s.cp},
                 {"alpha", s.alpha},
                 {"noise_fraction", s.noise_fraction},
                 {"noise", s.noise},
                 {"tau_explore", s.tau_explore},
                 {"tau_exploit", s.tau_exploit}};
  const auto& t = m.trainer;
  j["trainer"] = {{"G", t.G},
                  {"z", t.z},
                  {"eval_games", t.eval_games},
                  {"probe_games", t.probe_games},
                  {"batch_mode", t.batch_mode == BatchMode::kWithoutReplacement
                                     ? "without_replacement"
                                     : "with_replacement"},
                  {"batch_size", t.batch_size},
                  {"batch_repeat", t.batch_repeat},
                  {"total_episodes", t.total_episodes},
                  {"calibrate_mu", t.calibrate_mu},
                  {"calibration_games", t.calibration_games},
                  {"visited_cap", t.visited_cap},
                  {"workers", t.workers}};
  if (t.stop_at) j["trainer"]["stop_at"] = *t.stop_at;
  json segs = json::array();
  for (const auto& seg : m.schedule.segments) segs.push_back(detail::segment_json(seg));
  j["schedule"] = {{"trigger", m.schedule.trigger}, {"segments", segs}};
  const auto& e = m.exhaustive;
  const auto& d = m.dqn.dqn;
  j["baselines"] = {
      {"random", {{"budget", m.random.budget}, {"runs", m.random.runs}, {"unit", m.random.unit}}},
      {"exhaustive",
       {{"limit_bits", e.limit_bits},
        {"census", e.census},
        {"census_limit_bits", e.census_limit_bits},
        {"top_k", e.top_k},
        {"symmetry", e.symmetry}}},
      {"dqn",
       {{"fifo_capacity", d.fifo_capacity},
        {"epsilon", d.epsilon},
        {"epsilon_final", d.epsilon_final},
        {"epsilon_decay_episodes", d.epsilon_decay_episodes},
        {"batch_size", d.batch_size},
        {"eval_every", d.eval_every},
        {"episodes", d.episodes},
        {"updates_per_episode", d.updates_per_episode}}}};
  if (m.dqn.reward) j["baselines"]["dqn"]["reward"] = detail::segment_json(*m.dqn.reward);
  return j;
}

}  // namespace seqrl

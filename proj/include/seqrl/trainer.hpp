#pragma once

// Outer reinforcement-learning loop: noisy self-play, windowed replay,
// network updates, noiseless evaluation, segmented reward induction and
// visited-state accounting.

#include <algorithm>
#include <atomic>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <deque>
#include <fstream>
#include <functional>
#include <memory>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <unordered_set>
#include <vector>

#include "seqrl/binary_io.hpp"
#include "seqrl/cdma.hpp"
#include "seqrl/game.hpp"
#include "seqrl/mcts.hpp"
#include "seqrl/net.hpp"
#include "seqrl/radar.hpp"
#include "seqrl/rng.hpp"

namespace seqrl {

// --- Problems -----------------------------------------------------------------

enum class Direction { kMinimize, kMaximize };

inline bool better(Direction d, double a, double b) {
  return d == Direction::kMinimize ? a < b : a > b;
}

struct Problem {
  std::string name;  // "cdma" or "radar"
  GameConfig game;
  Direction direction = Direction::kMaximize;
  std::function<double(const SequenceSet&)> metric;
  std::optional<cdma::CdmaConfig> cdma;  // set for the cdma metric
};

inline Problem make_cdma_problem(const cdma::CdmaConfig& c, int ell) {
  c.validate();
  Problem p;
  p.name = "cdma";
  p.game = GameConfig{c.rows(), c.N, ell};
  p.game.validate();
  p.direction = Direction::kMinimize;
  p.metric = [c](const SequenceSet& s) { return cdma::metric_ccc(s, c); };
  p.cdma = c;
  return p;
}

inline Problem make_radar_problem(int n, int ell) {
  if (n < 2) throw std::invalid_argument("radar: N must be >= 2");
  Problem p;
  p.name = "radar";
  p.game = GameConfig{1, n, ell};
  p.game.validate();
  p.direction = Direction::kMaximize;
  p.metric = [](const SequenceSet& s) { return radar::metric_mmf(radar::PhaseCode::from_row(s)); };
  return p;
}

// Runs a function over [0, n) on up to `workers` threads. Results must be
// written to disjoint slots by the callee.
template <typename Fn>
void parallel_for(int n, int workers, Fn&& fn) {
  workers = std::max(1, std::min(workers, n));
  if (workers == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::atomic<bool> failed{false};
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      while (!failed) {
        const int i = next++;
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          if (!failed.exchange(true)) error = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

// --- Reward schedule ------------------------------------------------------------

struct Segment {
  double lo = 0;
  double hi = 1;
  long start_episode = -1;  // fixed switch-in episode, -1 for the reward trigger
};

// Ordered overlapping metric ranges over which the linear reward is defined.
// Maximization maps lo -> -1, hi -> +1; minimization maps lo -> +1, hi -> -1.
struct RewardSchedule {
  Direction direction = Direction::kMaximize;
  std::vector<Segment> segments;
  double trigger = 0.8;
  int index = 0;

  void validate() const {
    if (segments.empty()) throw std::invalid_argument("schedule: no segments");
    for (std::size_t i = 0; i < segments.size(); ++i) {
      if (!(segments[i].lo < segments[i].hi))
        throw std::invalid_argument("schedule: segment " + std::to_string(i) + " needs lo < hi");
      if (i == 0) continue;
      const auto& a = segments[i - 1];
      const auto& b = segments[i];
      if (!(std::max(a.lo, b.lo) < std::min(a.hi, b.hi)))
        throw std::invalid_argument("schedule: segments " + std::to_string(i - 1) + " and " +
                                    std::to_string(i) + " do not overlap");
      if (b.start_episode >= 0 && a.start_episode > b.start_episode)
        throw std::invalid_argument("schedule: switch episodes must increase");
    }
  }

  const Segment& active() const { return segments.at(index); }

  double reward(double metric) const { return reward_in(active(), metric); }

  double reward_in(const Segment& s, double metric) const {
    if (direction == Direction::kMaximize) return radar::reward_radar(metric, {s.lo, s.hi});
    if (s.lo == 0) return cdma::reward_ccc(metric, {s.hi});
    return std::clamp(1.0 - 2.0 * (metric - s.lo) / (s.hi - s.lo), -1.0, 1.0);
  }
};

// Advances to the next segment when its fixed episode is reached or, for
// segments without one, when the evaluation's mean reward reaches the trigger.
// Never regresses. Returns true if the segment changed.
inline bool segmented_induction_step(RewardSchedule& sched, long episodes_done,
                                     double mean_eval_reward) {
  bool moved = false;
  while (sched.index + 1 < static_cast<int>(sched.segments.size())) {
    const Segment& next = sched.segments[sched.index + 1];
    const bool fire = next.start_episode >= 0 ? episodes_done >= next.start_episode
                                              : (!moved && mean_eval_reward >= sched.trigger);
    if (!fire) break;
    ++sched.index;
    moved = true;
  }
  return moved;
}

// Segments of width w = range/2 sliding by w/2 over [lo, hi].
inline std::vector<Segment> halving_segments(double lo, double hi) {
  const double w = (hi - lo) / 2;
  return {{lo, lo + w, -1}, {lo + w / 2, lo + 1.5 * w, -1}, {lo + w, hi, -1}};
}

// --- Visited states ----------------------------------------------------------

class HyperLogLog {
 public:
  static constexpr int kBits = 14;
  static constexpr std::size_t kRegisters = std::size_t{1} << kBits;

  HyperLogLog() : reg_(kRegisters, 0) {}

  void insert(std::uint64_t key) {
    const std::uint64_t h = splitmix64(key ^ 0x5bd1e9955bd1e995ULL);
    const std::size_t idx = h >> (64 - kBits);
    const std::uint64_t rest = (h << kBits) | (std::uint64_t{1} << (kBits - 1));
    const auto rank = static_cast<std::uint8_t>(std::countl_zero(rest) + 1);
    reg_[idx] = std::max(reg_[idx], rank);
  }

  double estimate() const {
    const double m = kRegisters;
    double sum = 0;
    int zeros = 0;
    for (auto r : reg_) {
      sum += std::ldexp(1.0, -r);
      zeros += r == 0;
    }
    const double alpha = 0.7213 / (1.0 + 1.079 / m);
    double e = alpha * m * m / sum;
    if (e <= 2.5 * m && zeros > 0) e = m * std::log(m / zeros);
    return e;
  }

  const std::vector<std::uint8_t>& registers() const { return reg_; }
  void set_registers(std::vector<std::uint8_t> r) {
    if (r.size() != kRegisters) throw FormatError("hll: register count mismatch");
    reg_ = std::move(r);
  }

 private:
  std::vector<std::uint8_t> reg_;
};

// Exact distinct-state count until `max_exact` keys are held, then a
// HyperLogLog estimate.
class VisitedStateTracker {
 public:
  explicit VisitedStateTracker(std::size_t max_exact = std::size_t{1} << 24) : cap_(max_exact) {}

  void insert(std::uint64_t key) {
    if (hll_) {
      hll_->insert(key);
      return;
    }
    exact_.insert(key);
    if (exact_.size() > cap_) degrade();
  }
  template <typename Range>
  void insert_all(const Range& keys) {
    for (auto k : keys) insert(k);
  }

  std::uint64_t count() const {
    if (hll_) return static_cast<std::uint64_t>(std::llround(hll_->estimate()));
    return exact_.size();
  }
  bool approximate() const { return hll_.has_value(); }
  std::size_t max_exact() const { return cap_; }

  void save(ByteWriter& w) const {
    w.u8(hll_ ? 1 : 0);
    if (hll_) {
      w.bytes(std::string_view(reinterpret_cast<const char*>(hll_->registers().data()),
                               hll_->registers().size()));
    } else {
      std::vector<std::uint64_t> keys(exact_.begin(), exact_.end());
      std::sort(keys.begin(), keys.end());
      w.u64(keys.size());
      for (auto k : keys) w.u64(k);
    }
  }
  void load(ByteReader& r) {
    exact_.clear();
    hll_.reset();
    if (r.u8()) {
      const std::string raw = r.bytes(HyperLogLog::kRegisters);
      hll_.emplace();
      hll_->set_registers(std::vector<std::uint8_t>(raw.begin(), raw.end()));
    } else {
      const std::uint64_t n = r.u64();
      for (std::uint64_t i = 0; i < n; ++i) exact_.insert(r.u64());
    }
  }

 private:
  void degrade() {
    hll_.emplace();
    for (auto k : exact_) hll_->insert(k);
    exact_.clear();
    exact_.rehash(0);
  }

  std::size_t cap_;
  std::unordered_set<std::uint64_t> exact_;
  std::optional<HyperLogLog> hll_;
};

// --- Self-play ---------------------------------------------------------------------

struct Experience {
  std::vector<double> features;
  std::vector<double> pi;
  double reward = 0;
};

struct Episode {
  std::vector<Experience> experiences;
  SequenceSet final_set;
  double metric = 0;
  double reward = 0;
  std::vector<std::uint64_t> visited_keys;
  long network_calls = 0;
};

// Reward of a terminal state under a reward function of the metric.
inline std::function<double(const GameState&)> terminal_reward(
    const Problem& p, std::function<double(double)> reward_of_metric) {
  return [metric = p.metric, reward_of_metric = std::move(reward_of_metric)](const GameState& s) {
    return reward_of_metric(metric(to_sequence_set(s)));
  };
}

struct SelfPlayOptions {
  bool noisy = true;
  bool collect_keys = true;
  bool keep_experiences = true;
};

inline Episode self_play_episode(const net::NetworkSnapshot& snap, const Problem& problem,
                                 const FeatureSpec& spec, const mcts::SearchConfig& search_cfg,
                                 const std::function<double(double)>& reward_of_metric,
                                 std::uint64_t seed, const SelfPlayOptions& opts = {}) {
  mcts::SearchConfig cfg = search_cfg;
  cfg.noise = search_cfg.noise && opts.noisy;
  const auto eval = mcts::network_evaluator(snap, spec, terminal_reward(problem, reward_of_metric));
  Episode ep;
  GameState s = initial_state(problem.game);
  const int steps = problem.game.steps();
  mcts::SearchOptions so;
  so.collect_keys = opts.collect_keys;
  if (opts.collect_keys) ep.visited_keys.push_back(canonical_key(s));
  while (!s.terminal()) {
    const int t = s.t();
    const double tau = mcts::tau_for_step(cfg, t, steps);
    auto r = mcts::search(s, eval, cfg, tau, derive_seed(seed, Stream::kNoise, t), so);
    ep.network_calls += r.network_calls;
    if (opts.collect_keys)
      ep.visited_keys.insert(ep.visited_keys.end(), r.visited_keys.begin(), r.visited_keys.end());
    Engine eng = make_engine(derive_seed(seed, Stream::kSelfPlay, t));
    const Move m = mcts::sample_move(r.pi, tau <= mcts::kArgmaxTau, eng);
    if (opts.keep_experiences)
      ep.experiences.push_back({encode_features(s, spec).data, std::move(r.pi), 0.0});
    s = apply_move(s, m);
    if (opts.collect_keys) ep.visited_keys.push_back(canonical_key(s));
  }
  ep.final_set = to_sequence_set(s);
  ep.metric = problem.metric(ep.final_set);
  ep.reward = reward_of_metric(ep.metric);
  for (auto& e : ep.experiences) e.reward = ep.reward;
  return ep;
}

// Plays with the raw network policy: no search, no noise. Moves are sampled
// from P in the exploratory steps and taken greedily afterwards.
inline Episode raw_policy_episode(const net::NetworkSnapshot& snap, const Problem& problem,
                                  const FeatureSpec& spec, std::uint64_t seed,
                                  const mcts::SearchConfig& cfg) {
  Episode ep;
  GameState s = initial_state(problem.game);
  const int steps = problem.game.steps();
  while (!s.terminal()) {
    const auto pred = snap->predict(encode_features(s, spec));
    ++ep.network_calls;
    Engine eng = make_engine(derive_seed(seed, Stream::kProbe, s.t()));
    const bool greedy = mcts::tau_for_step(cfg, s.t(), steps) <= mcts::kArgmaxTau;
    s = apply_move(s, mcts::sample_move(pred.P, greedy, eng));
  }
  ep.final_set = to_sequence_set(s);
  ep.metric = problem.metric(ep.final_set);
  return ep;
}

struct EvalResult {
  double mean_metric = 0;
  double extreme_metric = 0;
  double mean_reward = 0;
  SequenceSet best_set;
  std::vector<SequenceSet> found;
  long network_calls = 0;
};

inline EvalResult summarize(const Problem& problem, const std::vector<Episode>& games) {
  EvalResult r;
  r.extreme_metric = games.front().metric;
  r.best_set = games.front().final_set;
  for (const auto& g : games) {
    r.mean_metric += g.metric / games.size();
    r.mean_reward += g.reward / games.size();
    r.network_calls += g.network_calls;
    if (better(problem.direction, g.metric, r.extreme_metric)) {
      r.extreme_metric = g.metric;
      r.best_set = g.final_set;
    }
    r.found.push_back(g.final_set);
  }
  return r;
}

// n noiseless games; game g uses seed derive(seed, g).
inline EvalResult evaluate_noiseless(const net::NetworkSnapshot& snap, const Problem& problem,
                                     const FeatureSpec& spec, const mcts::SearchConfig& cfg,
                                     const std::function<double(double)>& reward_of_metric, int n,
                                     std::uint64_t seed, int workers = 1,
                                     VisitedStateTracker* tracker = nullptr) {
  if (n < 1) throw std::invalid_argument("evaluate: n must be >= 1");
  std::vector<Episode> games(n);
  SelfPlayOptions opts{false, tracker != nullptr, false};
  parallel_for(n, workers, [&](int g) {
    games[g] = self_play_episode(snap, problem, spec, cfg, reward_of_metric,
                                 splitmix64(seed + static_cast<std::uint64_t>(g)), opts);
  });
  if (tracker)
    for (const auto& g : games) tracker->insert_all(g.visited_keys);
  return summarize(problem, games);
}

// Mean metric of n games played from the raw network policy.
inline EvalResult dnn_vs_mcts_probe(const net::NetworkSnapshot& snap, const Problem& problem,
                                    const FeatureSpec& spec, const mcts::SearchConfig& cfg, int n,
                                    std::uint64_t seed) {
  std::vector<Episode> games(n);
  for (int g = 0; g < n; ++g)
    games[g] = raw_policy_episode(snap, problem, spec, splitmix64(seed + static_cast<std::uint64_t>(g)), cfg);
  return summarize(problem, games);
}

// --- Replay window -------------------------------------------------------------------

struct StoredEpisode {
  std::vector<Experience> experiences;  // rewards are recomputed from `metric`
  double metric = 0;
};

class ReplayWindow {
 public:
  explicit ReplayWindow(std::size_t capacity_episodes) : cap_(capacity_episodes) {
    if (cap_ < 1) throw std::invalid_argument("replay: capacity must be >= 1");
  }
  void push(StoredEpisode ep) {
    episodes_.push_back(std::move(ep));
    while (episodes_.size() > cap_) episodes_.pop_front();
  }
  std::size_t episodes() const { return episodes_.size(); }
  std::size_t capacity() const { return cap_; }
  std::size_t experiences() const {
    std::size_t n = 0;
    for (const auto& e : episodes_) n += e.experiences.size();
    return n;
  }
  const std::deque<StoredEpisode>& contents() const { return episodes_; }
  void clear() { episodes_.clear(); }

  // Flattened training examples with rewards from the active segment.
  net::Batch examples(const RewardSchedule& sched) const {
    net::Batch out;
    for (const auto& ep : episodes_) {
      const double r = sched.reward(ep.metric);
      for (const auto& e : ep.experiences) out.push_back({e.features, e.pi, r, -1});
    }
    return out;
  }

 private:
  std::size_t cap_;
  std::deque<StoredEpisode> episodes_;
};

enum class BatchMode { kWithoutReplacement, kWithReplacement };

inline int batches_per_update(std::size_t experiences, BatchMode mode, int batch_size = 64,
                              int repeat = 6) {
  const int base = static_cast<int>((experiences + batch_size - 1) / batch_size);
  return mode == BatchMode::kWithoutReplacement ? base : base * repeat;
}

// Index lists of the mini-batches for one update.
inline std::vector<std::vector<std::size_t>> plan_batches(std::size_t n, BatchMode mode,
                                                          std::uint64_t seed, int batch_size = 64,
                                                          int repeat = 6) {
  Engine eng = make_engine(seed);
  std::vector<std::vector<std::size_t>> out;
  if (n == 0) return out;
  if (mode == BatchMode::kWithoutReplacement) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t i = n - 1; i > 0; --i) std::swap(idx[i], idx[uniform_below(eng, i + 1)]);
    for (std::size_t at = 0; at < n; at += batch_size)
      out.emplace_back(idx.begin() + at, idx.begin() + std::min(n, at + batch_size));
  } else {
    const int count = batches_per_update(n, mode, batch_size, repeat);
    for (int b = 0; b < count; ++b) {
      std::vector<std::size_t> batch(batch_size);
      for (auto& i : batch) i = uniform_below(eng, n);
      out.push_back(std::move(batch));
    }
  }
  return out;
}

// --- Run log ---------------------------------------------------------------------

struct RunLogRow {
  long episode = 0;
  double mean_metric = 0;
  double extreme_metric = 0;
  std::uint64_t visited_states = 0;
  int segment_index = 0;
  double elapsed_s = 0;
};

inline constexpr std::string_view kRunLogHeader = "# seqrl-runlog v1";

inline void write_runlog(std::ostream& out, const std::vector<RunLogRow>& rows,
                         long approximate_from = -1, bool with_elapsed = true) {
  out << kRunLogHeader << '\n';
  if (approximate_from >= 0)
    out << "# visited_states approximate from episode " << approximate_from << '\n';
  out << "episode,mean_metric,extreme_metric,visited_states,segment_index";
  if (with_elapsed) out << ",elapsed_s";
  out << '\n';
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%ld,%.10g,%.10g,%llu,%d", r.episode, r.mean_metric,
                  r.extreme_metric, static_cast<unsigned long long>(r.visited_states),
                  r.segment_index);
    out << buf;
    if (with_elapsed) {
      std::snprintf(buf, sizeof buf, ",%.3f", r.elapsed_s);
      out << buf;
    }
    out << '\n';
  }
}

// --- Training loop ----------------------------------------------------------------

struct TrainLoopConfig {
  int G = 100;
  int z = 3;
  int eval_games = 50;
  int probe_games = 0;
  BatchMode batch_mode = BatchMode::kWithoutReplacement;
  int batch_size = 64;
  int batch_repeat = 6;
  long total_episodes = 8000;
  bool calibrate_mu = false;  // minimization problems: calibrate the upper metric end
  int calibration_games = 50;
  std::optional<double> stop_at;  // stop once the evaluation extreme reaches this
  std::size_t visited_cap = std::size_t{1} << 24;
  int workers = 1;

  void validate() const {
    if (G < 1) throw std::invalid_argument("trainer: G must be >= 1");
    if (z < 1) throw std::invalid_argument("trainer: z must be >= 1");
    if (eval_games < 1) throw std::invalid_argument("trainer: eval_games must be >= 1");
    if (probe_games < 0) throw std::invalid_argument("trainer: probe_games must be >= 0");
    if (batch_size < 1) throw std::invalid_argument("trainer: batch_size must be >= 1");
    if (batch_repeat < 1) throw std::invalid_argument("trainer: batch_repeat must be >= 1");
    if (total_episodes < 1) throw std::invalid_argument("trainer: total_episodes must be >= 1");
  }
};

struct ProbeRow {
  long episode = 0;
  double mean_raw = 0;   // E[M'] from the raw network policy
  double mean_mcts = 0;  // E[M] from noiseless search
};

struct TrainSetup {
  Problem problem;
  FeatureSpec features;
  net::NetworkConfig net;
  mcts::SearchConfig search;
  TrainLoopConfig loop;
  RewardSchedule schedule;  // may be empty when calibrate_mu is set
  std::uint64_t seed = 0;
};

class Trainer {
 public:
  explicit Trainer(TrainSetup setup)
      : s_(std::move(setup)),
        learner_(net::Network::init_random(s_.net, derive_seed(s_.seed, Stream::kInit))),
        window_(static_cast<std::size_t>(s_.loop.z) * s_.loop.G),
        tracker_(s_.loop.visited_cap),
        start_(std::chrono::steady_clock::now()) {
    s_.loop.validate();
    s_.search.validate();
    if (s_.net.policy_size != s_.problem.game.move_count())
      throw std::invalid_argument("trainer: policy width must equal 2^ell");
    if (s_.net.rows != s_.features.rows || s_.net.cols != s_.features.cols)
      throw std::invalid_argument("trainer: network input does not match the feature spec");
    s_.schedule.direction = s_.problem.direction;
    if (!s_.loop.calibrate_mu) s_.schedule.validate();
    snapshot_ = learner_.publish();
  }

  const TrainSetup& setup() const { return s_; }
  const RewardSchedule& schedule() const { return s_.schedule; }
  const std::vector<RunLogRow>& log() const { return log_; }
  const std::vector<ProbeRow>& probes() const { return probes_; }
  const ReplayWindow& window() const { return window_; }
  const VisitedStateTracker& tracker() const { return tracker_; }
  long episodes_done() const { return episodes_; }
  long approximate_from() const { return approx_from_; }
  const net::NetworkSnapshot& snapshot() const { return snapshot_; }
  const std::optional<SequenceSet>& best_set() const { return best_set_; }
  std::optional<double> best_metric() const { return best_metric_; }
  bool finished() const {
    return episodes_ >= s_.loop.total_episodes || reached_target();
  }
  bool reached_target() const {
    return s_.loop.stop_at && best_eval_ &&
           !better(s_.problem.direction, *s_.loop.stop_at, *best_eval_);
  }

  std::function<double(double)> reward_fn() const {
    return [sched = s_.schedule](double m) { return sched.reward(m); };
  }

  // One-shot calibration of the upper metric end against the untrained
  // network. Runs before the first episode when enabled.
  void calibrate() {
    if (!s_.loop.calibrate_mu || calibrated_) return;
    if (!s_.problem.cdma)
      throw std::invalid_argument("trainer: Mu calibration applies to the cdma metric");
    cdma::MuCalibration cal;
    auto mu = cal.calibrate(
        *s_.problem.cdma,
        [&](const cdma::CdmaRewardSpec& spec, int game) {
          auto r = [spec](double m) { return cdma::reward_ccc(m, spec); };
          return self_play_episode(snapshot_, s_.problem, s_.features, s_.search, r,
                                   derive_seed(s_.seed, Stream::kCalibration, game),
                                   {false, false, false})
              .metric;
        },
        s_.loop.calibration_games);
    s_.schedule.segments = {{0.0, mu.Mu, -1}};
    s_.schedule.index = 0;
    s_.schedule.validate();
    calibrated_ = true;
  }

  // One cycle: G noisy episodes, an update on the window, a noiseless
  // evaluation, a possible segment change.
  void run_iteration() {
    if (s_.loop.calibrate_mu && !calibrated_) calibrate();
    const int G = s_.loop.G;
    const auto reward = reward_fn();
    std::vector<Episode> eps(G);
    const long base = episodes_;
    parallel_for(G, s_.loop.workers, [&](int i) {
      eps[i] = self_play_episode(snapshot_, s_.problem, s_.features, s_.search, reward,
                                 derive_seed(s_.seed, Stream::kSelfPlay, base + i));
    });
    for (auto& e : eps) {
      tracker_.insert_all(e.visited_keys);
      note_found(e.final_set, e.metric);
      window_.push({std::move(e.experiences), e.metric});
    }
    episodes_ += G;

    train_on_window();

    const EvalResult ev =
        evaluate_noiseless(snapshot_, s_.problem, s_.features, s_.search, reward,
                           s_.loop.eval_games, derive_seed(s_.seed, Stream::kEvaluation, cycle_),
                           s_.loop.workers, &tracker_);
    note_found(ev.best_set, ev.extreme_metric);
    if (!best_eval_ || better(s_.problem.direction, ev.extreme_metric, *best_eval_))
      best_eval_ = ev.extreme_metric;
    if (tracker_.approximate() && approx_from_ < 0) approx_from_ = episodes_;
    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count() +
        elapsed_offset_;
    // An estimated count may dip when the tracker switches representation;
    // the logged count stays monotone.
    const std::uint64_t visited =
        std::max<std::uint64_t>(tracker_.count(), log_.empty() ? 0 : log_.back().visited_states);
    log_.push_back({episodes_, ev.mean_metric, ev.extreme_metric, visited, s_.schedule.index,
                    elapsed});
    if (s_.loop.probe_games > 0) {
      const auto pr = dnn_vs_mcts_probe(snapshot_, s_.problem, s_.features, s_.search,
                                        s_.loop.probe_games,
                                        derive_seed(s_.seed, Stream::kProbe, cycle_));
      probes_.push_back({episodes_, pr.mean_metric, ev.mean_metric});
    }
    segmented_induction_step(s_.schedule, episodes_, ev.mean_reward);
    ++cycle_;
  }

  // Runs cycles until the budget or the target is reached. `after_cycle` is
  // called after every cycle (checkpointing, progress output).
  void run(const std::function<void(const Trainer&)>& after_cycle = {}) {
    while (!finished()) {
      run_iteration();
      if (after_cycle) after_cycle(*this);
    }
  }

  // --- Loop-state checkpoint -------------------------------------------------------

  void save(const std::string& path) const {
    ByteWriter w;
    w.bytes(kMagic);
    w.u32(kVersion);
    w.u64(s_.seed);
    w.u64(static_cast<std::uint64_t>(cycle_));
    w.u64(static_cast<std::uint64_t>(episodes_));
    w.u8(calibrated_ ? 1 : 0);
    w.u32(static_cast<std::uint32_t>(s_.schedule.index));
    w.u64(s_.schedule.segments.size());
    for (const auto& seg : s_.schedule.segments) {
      w.f64(seg.lo);
      w.f64(seg.hi);
      w.i64(seg.start_episode);
    }
    const auto& n = learner_.working();
    net::write_config(w, n.config());
    w.u64(n.version());
    w.f64s(std::vector<double>(n.parameters().begin(), n.parameters().end()));
    w.f64s(std::vector<double>(n.buffers().begin(), n.buffers().end()));
    w.f64s(learner_.velocity());
    w.u64(window_.episodes());
    for (const auto& ep : window_.contents()) {
      w.f64(ep.metric);
      w.u64(ep.experiences.size());
      for (const auto& e : ep.experiences) {
        w.f64s(e.features);
        w.f64s(e.pi);
      }
    }
    tracker_.save(w);
    w.i64(approx_from_);
    w.u64(log_.size());
    for (const auto& r : log_) {
      w.i64(r.episode);
      w.f64(r.mean_metric);
      w.f64(r.extreme_metric);
      w.u64(r.visited_states);
      w.u32(static_cast<std::uint32_t>(r.segment_index));
      w.f64(r.elapsed_s);
    }
    w.u64(probes_.size());
    for (const auto& p : probes_) {
      w.i64(p.episode);
      w.f64(p.mean_raw);
      w.f64(p.mean_mcts);
    }
    w.u8(best_eval_ ? 1 : 0);
    w.f64(best_eval_.value_or(0));
    w.u8(best_set_ ? 1 : 0);
    if (best_set_) {
      w.f64(*best_metric_);
      w.u32(static_cast<std::uint32_t>(best_set_->rows()));
      w.u32(static_cast<std::uint32_t>(best_set_->cols()));
      const auto e = best_set_->entries();
      w.bytes(std::string_view(reinterpret_cast<const char*>(e.data()), e.size()));
    }
    w.save(path);
  }

  void load(const std::string& path) {
    ByteReader r = ByteReader::load(path);
    if (r.bytes(kMagic.size()) != kMagic) throw FormatError(path + ": not a run checkpoint");
    if (r.u32() != kVersion) throw FormatError(path + ": unsupported run checkpoint version");
    if (r.u64() != s_.seed) throw net::ConfigMismatch(path + ": checkpoint was written with another seed");
    cycle_ = static_cast<long>(r.u64());
    episodes_ = static_cast<long>(r.u64());
    calibrated_ = r.u8() != 0;
    s_.schedule.index = static_cast<int>(r.u32());
    const std::uint64_t nseg = r.u64();
    s_.schedule.segments.clear();
    for (std::uint64_t i = 0; i < nseg; ++i) {
      Segment seg;
      seg.lo = r.f64();
      seg.hi = r.f64();
      seg.start_episode = r.i64();
      s_.schedule.segments.push_back(seg);
    }
    const net::NetworkConfig cfg = net::read_config(r);
    if (!(cfg == s_.net)) throw net::ConfigMismatch(path + ": network config differs from the manifest");
    net::Network n = net::Network::init_random(cfg, 0);
    n.set_version(r.u64());
    auto params = r.f64s();
    auto buffers = r.f64s();
    if (params.size() != n.parameter_count() || buffers.size() != n.buffers().size())
      throw FormatError(path + ": parameter count mismatch");
    std::copy(params.begin(), params.end(), n.mutable_parameters().begin());
    std::copy(buffers.begin(), buffers.end(), n.mutable_buffers().begin());
    learner_ = net::Learner(n);
    learner_.restore_velocity(r.f64s());
    snapshot_ = learner_.publish();
    window_.clear();
    const std::uint64_t neps = r.u64();
    for (std::uint64_t i = 0; i < neps; ++i) {
      StoredEpisode ep;
      ep.metric = r.f64();
      const std::uint64_t nx = r.u64();
      for (std::uint64_t j = 0; j < nx; ++j) {
        Experience e;
        e.features = r.f64s();
        e.pi = r.f64s();
        ep.experiences.push_back(std::move(e));
      }
      window_.push(std::move(ep));
    }
    tracker_.load(r);
    approx_from_ = r.i64();
    log_.clear();
    const std::uint64_t nrows = r.u64();
    for (std::uint64_t i = 0; i < nrows; ++i) {
      RunLogRow row;
      row.episode = r.i64();
      row.mean_metric = r.f64();
      row.extreme_metric = r.f64();
      row.visited_states = r.u64();
      row.segment_index = static_cast<int>(r.u32());
      row.elapsed_s = r.f64();
      log_.push_back(row);
    }
    probes_.clear();
    const std::uint64_t nprobe = r.u64();
    for (std::uint64_t i = 0; i < nprobe; ++i) {
      ProbeRow p;
      p.episode = r.i64();
      p.mean_raw = r.f64();
      p.mean_mcts = r.f64();
      probes_.push_back(p);
    }
    const bool has_eval = r.u8() != 0;
    const double be = r.f64();
    best_eval_ = has_eval ? std::optional<double>(be) : std::nullopt;
    best_set_.reset();
    best_metric_.reset();
    if (r.u8()) {
      best_metric_ = r.f64();
      const int rows = static_cast<int>(r.u32());
      const int cols = static_cast<int>(r.u32());
      const std::string raw = r.bytes(static_cast<std::size_t>(rows) * cols);
      best_set_ = SequenceSet(rows, cols, std::vector<Symbol>(raw.begin(), raw.end()));
    }
    if (!r.at_end()) throw FormatError(path + ": trailing bytes");
    elapsed_offset_ = log_.empty() ? 0.0 : log_.back().elapsed_s;
    start_ = std::chrono::steady_clock::now();
  }

 private:
  static constexpr std::string_view kMagic = "SEQRLRUN";
  static constexpr std::uint32_t kVersion = 1;

  void train_on_window() {
    const net::Batch all = window_.examples(s_.schedule);
    const auto plan = plan_batches(all.size(), s_.loop.batch_mode,
                                   derive_seed(s_.seed, Stream::kTraining, cycle_),
                                   s_.loop.batch_size, s_.loop.batch_repeat);
    net::Batch batch;
    for (const auto& idx : plan) {
      // Batch norm needs at least two samples for a meaningful variance.
      if (idx.size() < 2) continue;
      batch.clear();
      for (auto i : idx) batch.push_back(all[i]);
      learner_.step(batch);
    }
    snapshot_ = learner_.publish();
  }

  void note_found(const SequenceSet& set, double metric) {
    if (!best_metric_ || better(s_.problem.direction, metric, *best_metric_)) {
      best_metric_ = metric;
      best_set_ = set;
    }
  }

  TrainSetup s_;
  net::Learner learner_;
  net::NetworkSnapshot snapshot_;
  ReplayWindow window_;
  VisitedStateTracker tracker_;
  std::vector<RunLogRow> log_;
  std::vector<ProbeRow> probes_;
  std::optional<SequenceSet> best_set_;
  std::optional<double> best_metric_;
  std::optional<double> best_eval_;
  long episodes_ = 0;
  long cycle_ = 0;
  long approx_from_ = -1;
  bool calibrated_ = false;
  std::chrono::steady_clock::time_point start_;
  double elapsed_offset_ = 0;
};

}  // namespace seqrl

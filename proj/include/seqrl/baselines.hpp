#pragma once

// Comparison searchers: budgeted random search, exhaustive enumeration and a
// terminal-reward deep Q learner.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "seqrl/game.hpp"
#include "seqrl/mcts.hpp"
#include "seqrl/net.hpp"
#include "seqrl/radar.hpp"
#include "seqrl/rng.hpp"
#include "seqrl/trainer.hpp"

namespace seqrl::baselines {

// --- Random search ----------------------------------------------------------------

enum class BudgetUnit { kTrials, kVisitedStates };

struct RandomSearchConfig {
  long budget = 100000;
  int runs = 20;
  BudgetUnit unit = BudgetUnit::kTrials;
  std::vector<long> checkpoints;  // empty: 1, 2, 5, 10, 20, 50, ... and the budget
  int workers = 1;
};

struct CurvePoint {
  long n = 0;          // trials or distinct visited states, per `unit`
  double mean_best = 0;
  double min_best = 0;
  double max_best = 0;
};

struct RandomSearchResult {
  std::vector<long> checkpoints;
  std::vector<std::vector<double>> best;  // [run][checkpoint] best-so-far
  std::vector<CurvePoint> curve;          // mean-max curve
  SequenceSet best_set;
  double best_metric = 0;
};

inline std::vector<long> log_checkpoints(long budget) {
  std::vector<long> out;
  for (long scale = 1; scale <= budget; scale *= 10) {
    for (long m : {1L, 2L, 5L}) {
      const long v = m * scale;
      if (v < budget) out.push_back(v);
    }
    if (scale > budget / 10) break;
  }
  out.push_back(budget);
  return out;
}

// Uniform +-1 sets. Run r draws from derive(seed, kBaseline, r). In the
// visited-state unit a trial costs the distinct game states on its fill path.
inline RandomSearchResult random_search(const Problem& problem, const RandomSearchConfig& cfg,
                                        std::uint64_t seed) {
  if (cfg.budget < 1) throw std::invalid_argument("random search: budget must be >= 1");
  if (cfg.runs < 1) throw std::invalid_argument("random search: runs must be >= 1");
  RandomSearchResult res;
  res.checkpoints = cfg.checkpoints.empty() ? log_checkpoints(cfg.budget) : cfg.checkpoints;
  std::sort(res.checkpoints.begin(), res.checkpoints.end());
  if (res.checkpoints.front() < 1 || res.checkpoints.back() > cfg.budget)
    throw std::invalid_argument("random search: checkpoints must lie in [1, budget]");
  const auto& g = problem.game;
  const int ncp = static_cast<int>(res.checkpoints.size());
  res.best.assign(cfg.runs, std::vector<double>(ncp, 0.0));
  std::vector<SequenceSet> run_best_set(cfg.runs);
  std::vector<double> run_best(cfg.runs);

  parallel_for(cfg.runs, cfg.workers, [&](int r) {
    Engine eng = make_engine(derive_seed(seed, Stream::kBaseline, static_cast<std::uint64_t>(r)));
    std::unordered_set<std::uint64_t> seen;
    long spent = 0;
    int cp = 0;
    std::optional<double> best;
    SequenceSet best_set;
    while (cp < ncp) {
      GameState s = initial_state(g);
      if (cfg.unit == BudgetUnit::kVisitedStates && seen.insert(canonical_key(s)).second) ++spent;
      while (!s.terminal()) {
        s = apply_move(s, Move{static_cast<std::uint32_t>(uniform_below(eng, g.move_count()))});
        if (cfg.unit == BudgetUnit::kVisitedStates && seen.insert(canonical_key(s)).second) ++spent;
      }
      if (cfg.unit == BudgetUnit::kTrials) ++spent;
      SequenceSet set = to_sequence_set(s);
      const double m = problem.metric(set);
      if (!best || better(problem.direction, m, *best)) {
        best = m;
        best_set = std::move(set);
      }
      while (cp < ncp && spent >= res.checkpoints[cp]) res.best[r][cp++] = *best;
    }
    run_best[r] = *best;
    run_best_set[r] = std::move(best_set);
  });

  res.best_metric = run_best[0];
  res.best_set = run_best_set[0];
  for (int r = 1; r < cfg.runs; ++r)
    if (better(problem.direction, run_best[r], res.best_metric)) {
      res.best_metric = run_best[r];
      res.best_set = run_best_set[r];
    }
  for (int c = 0; c < ncp; ++c) {
    CurvePoint p{res.checkpoints[c], 0, res.best[0][c], res.best[0][c]};
    for (int r = 0; r < cfg.runs; ++r) {
      p.mean_best += res.best[r][c] / cfg.runs;
      p.min_best = std::min(p.min_best, res.best[r][c]);
      p.max_best = std::max(p.max_best, res.best[r][c]);
    }
    res.curve.push_back(p);
  }
  return res;
}

// --- Exhaustive search ------------------------------------------------------------

struct ExhaustiveConfig {
  int limit_bits = 28;
  bool census = false;
  int census_limit_bits = 20;
  int top_k = 8;
  bool symmetry = true;  // radar only: one representative per negation/reversal orbit
  double tie_tolerance = 1e-9;
  int workers = 1;
};

struct ScoredSet {
  double metric = 0;
  SequenceSet set;
};

struct ExhaustiveResult {
  SequenceSet best;
  double best_metric = 0;
  std::uint64_t optima = 0;      // sets attaining the optimum, symmetry images included
  std::uint64_t evaluated = 0;   // metric evaluations performed
  std::vector<ScoredSet> top;    // best first, representatives only
  std::map<double, std::uint64_t> census;  // metric -> number of sets (census mode)
};

class LimitExceeded : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Set with bit (NK - 1 - i) of `code` giving cell i (+1 when set).
inline SequenceSet decode_set(std::uint64_t code, int rows, int cols) {
  const int bits = rows * cols;
  std::vector<Symbol> e(bits);
  for (int i = 0; i < bits; ++i) e[i] = ((code >> (bits - 1 - i)) & 1U) ? 1 : -1;
  return SequenceSet(rows, cols, std::move(e));
}

inline std::uint64_t reverse_bits(std::uint64_t v, int bits) {
  std::uint64_t r = 0;
  for (int i = 0; i < bits; ++i) r |= ((v >> i) & 1U) << (bits - 1 - i);
  return r;
}

inline std::string power_of_two_string(int bits) {
  return bits < 64 ? std::to_string(std::uint64_t{1} << bits) : "2^" + std::to_string(bits);
}

inline ExhaustiveResult exhaustive_search(const Problem& problem, const ExhaustiveConfig& cfg) {
  const int rows = problem.game.K, cols = problem.game.N;
  const int bits = rows * cols;
  if (bits > cfg.limit_bits || bits > 62)
    throw LimitExceeded("exhaustive search: " + power_of_two_string(bits) +
                        " sets required, limit is " + power_of_two_string(cfg.limit_bits));
  if (cfg.census && bits > cfg.census_limit_bits)
    throw LimitExceeded("exhaustive census: " + power_of_two_string(bits) +
                        " sets required, census limit is " +
                        power_of_two_string(cfg.census_limit_bits));
  const bool sym = cfg.symmetry && problem.name == "radar" && rows == 1;
  const std::uint64_t total = std::uint64_t{1} << bits;
  const std::uint64_t mask = total - 1;
  const Direction dir = problem.direction;

  struct Partial {
    std::optional<double> best;
    std::uint64_t best_code = 0;
    std::uint64_t optima = 0, evaluated = 0;
    std::vector<std::pair<double, std::uint64_t>> top;
    std::map<double, std::uint64_t> census;
  };
  auto tie = [&](double a, double b) {
    return std::abs(a - b) <= cfg.tie_tolerance * std::max(1.0, std::abs(b));
  };
  auto push_top = [&](Partial& p, double m, std::uint64_t code) {
    if (cfg.top_k <= 0) return;
    auto it = std::find_if(p.top.begin(), p.top.end(),
                           [&](const auto& x) { return better(dir, m, x.first); });
    if (static_cast<int>(p.top.size()) >= cfg.top_k && it == p.top.end()) return;
    p.top.insert(it, {m, code});
    if (static_cast<int>(p.top.size()) > cfg.top_k) p.top.pop_back();
  };

  // Orbit size of a representative under negation and reversal.
  auto orbit = [&](std::uint64_t c) -> std::uint64_t {
    const std::uint64_t imgs[4] = {c, ~c & mask, reverse_bits(c, bits),
                                   ~reverse_bits(c, bits) & mask};
    std::uint64_t n = 0;
    for (int i = 0; i < 4; ++i) {
      bool dup = false;
      for (int j = 0; j < i; ++j) dup = dup || imgs[j] == imgs[i];
      n += !dup;
    }
    return n;
  };
  // Representative: leading cell +1 (negation) and the smaller of the
  // representative's reversal pair.
  auto is_rep = [&](std::uint64_t c) {
    if (!((c >> (bits - 1)) & 1U)) return false;
    std::uint64_t rv = reverse_bits(c, bits);
    if (!((rv >> (bits - 1)) & 1U)) rv = ~rv & mask;
    return c <= rv;
  };

  const int chunks = std::max(1, cfg.workers) * 8;
  std::vector<Partial> parts(chunks);
  parallel_for(chunks, cfg.workers, [&](int ci) {
    Partial& p = parts[ci];
    const std::uint64_t lo = total / chunks * ci + std::min<std::uint64_t>(ci, total % chunks);
    const std::uint64_t hi = lo + total / chunks + (static_cast<std::uint64_t>(ci) < total % chunks);
    for (std::uint64_t c = lo; c < hi; ++c) {
      std::uint64_t weight = 1;
      if (sym) {
        if (!is_rep(c)) continue;
        weight = orbit(c);
      }
      const double m = problem.metric(decode_set(c, rows, cols));
      ++p.evaluated;
      if (cfg.census) p.census[std::round(m * 1e9) / 1e9] += weight;
      if (!p.best || (better(dir, m, *p.best) && !tie(m, *p.best))) {
        p.best = m;
        p.best_code = c;
        p.optima = weight;
      } else if (tie(m, *p.best)) {
        p.optima += weight;
      }
      push_top(p, m, c);
    }
  });

  Partial all;
  for (auto& p : parts) {
    all.evaluated += p.evaluated;
    for (auto& [m, n] : p.census) all.census[m] += n;
    for (auto& t : p.top) push_top(all, t.first, t.second);
    if (!p.best) continue;
    if (!all.best || (better(dir, *p.best, *all.best) && !tie(*p.best, *all.best))) {
      all.best = p.best;
      all.best_code = p.best_code;
      all.optima = p.optima;
    } else if (tie(*p.best, *all.best)) {
      all.optima += p.optima;
      all.best_code = std::min(all.best_code, p.best_code);
    }
  }
  ExhaustiveResult res;
  res.best = decode_set(all.best_code, rows, cols);
  res.best_metric = *all.best;
  res.optima = all.optima;
  res.evaluated = all.evaluated;
  for (auto& t : all.top) res.top.push_back({t.first, decode_set(t.second, rows, cols)});
  res.census = std::move(all.census);
  return res;
}

// --- Deep Q learning baseline -------------------------------------------------------

struct DqnConfig {
  std::size_t fifo_capacity = 10000;  // experiences
  double epsilon = 0.1;
  double epsilon_final = 0.1;
  long epsilon_decay_episodes = 0;  // 0: constant epsilon
  int batch_size = 64;
  int eval_every = 10;  // B
  long episodes = 2000;
  int updates_per_episode = 1;

  void validate() const {
    if (fifo_capacity < static_cast<std::size_t>(batch_size))
      throw std::invalid_argument("dqn: fifo capacity must be >= batch size");
    if (!(epsilon >= 0 && epsilon <= 1) || !(epsilon_final >= 0 && epsilon_final <= 1))
      throw std::invalid_argument("dqn: epsilon must lie in [0, 1]");
    if (batch_size < 2) throw std::invalid_argument("dqn: batch size must be >= 2");
    if (eval_every < 1) throw std::invalid_argument("dqn: eval_every must be >= 1");
    if (episodes < 1) throw std::invalid_argument("dqn: episodes must be >= 1");
    if (updates_per_episode < 0) throw std::invalid_argument("dqn: updates_per_episode must be >= 0");
  }

  double epsilon_at(long episode) const {
    if (epsilon_decay_episodes <= 0) return epsilon;
    const double f = std::min(1.0, static_cast<double>(episode) / epsilon_decay_episodes);
    return epsilon + (epsilon_final - epsilon) * f;
  }
};

struct DqnLogRow {
  long episode = 0;
  double greedy_metric = 0;
  double best_metric = 0;  // best greedy metric so far
  std::uint64_t visited_states = 0;
};

struct DqnResult {
  net::NetworkSnapshot net;
  std::vector<DqnLogRow> log;
  SequenceSet best_set;  // best greedy episode
  double best_metric = 0;
  std::uint64_t visited_states = 0;
};

// Bounded replay memory; evicts oldest first.
class ExperienceFifo {
 public:
  explicit ExperienceFifo(std::size_t capacity) : cap_(capacity) {
    if (cap_ < 1) throw std::invalid_argument("dqn: fifo capacity must be >= 1");
  }
  void push(net::Example e) {
    items_.push_back(std::move(e));
    if (items_.size() > cap_) items_.pop_front();
  }
  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return cap_; }
  bool ready() const { return items_.size() * 2 > cap_; }
  const net::Example& operator[](std::size_t i) const { return items_[i]; }

 private:
  std::size_t cap_;
  std::deque<net::Example> items_;
};

struct DqnStep {
  std::vector<double> features;
  int action = 0;
};

// One episode, epsilon-greedy over Q. Returns the steps and the final set.
inline std::pair<std::vector<DqnStep>, SequenceSet> dqn_episode(
    const net::Network& q, const Problem& problem, const FeatureSpec& spec, double epsilon,
    Engine& eng, std::unordered_set<std::uint64_t>* seen) {
  std::vector<DqnStep> steps;
  GameState s = initial_state(problem.game);
  if (seen) seen->insert(canonical_key(s));
  while (!s.terminal()) {
    FeatureImage img = encode_features(s, spec);
    int a;
    if (epsilon > 0 && uniform01(eng) < epsilon) {
      a = static_cast<int>(uniform_below(eng, problem.game.move_count()));
    } else {
      const auto qv = q.q_values(img);
      a = mcts::argmax_lowest(qv);
    }
    steps.push_back({std::move(img.data), a});
    s = apply_move(s, Move{static_cast<std::uint32_t>(a)});
    if (seen) seen->insert(canonical_key(s));
  }
  return {std::move(steps), to_sequence_set(s)};
}

inline SequenceSet dqn_discover(const net::NetworkSnapshot& q, const Problem& problem,
                                const FeatureSpec& spec) {
  Engine unused = make_engine(0);
  return dqn_episode(*q, problem, spec, 0.0, unused, nullptr).second;
}

// Plain terminal-reward regression: every step of an episode is pushed with
// the episode's reward; once the FIFO holds more than half its capacity, each
// episode is followed by `updates_per_episode` SGD steps on random batches.
// Every `eval_every` episodes a greedy episode is played and logged. Visited
// states count environment states touched by all episodes, greedy ones included.
inline DqnResult dqn_train(const Problem& problem, const FeatureSpec& spec,
                           const net::NetworkConfig& net_cfg, const DqnConfig& cfg,
                           const std::function<double(double)>& reward_of_metric,
                           std::uint64_t seed) {
  cfg.validate();
  if (net_cfg.head != net::Head::kQValues)
    throw std::invalid_argument("dqn: network needs a Q head");
  if (net_cfg.policy_size != problem.game.move_count())
    throw std::invalid_argument("dqn: Q head width must equal 2^ell");
  net::Learner learner(net::Network::init_random(net_cfg, derive_seed(seed, Stream::kInit)));
  Engine eng = make_engine(derive_seed(seed, Stream::kDqn));
  ExperienceFifo fifo(cfg.fifo_capacity);
  std::unordered_set<std::uint64_t> seen;
  DqnResult res;
  std::optional<double> best;

  for (long ep = 0; ep < cfg.episodes; ++ep) {
    auto [steps, set] = dqn_episode(learner.working(), problem, spec, cfg.epsilon_at(ep), eng, &seen);
    const double r = reward_of_metric(problem.metric(set));
    for (auto& st : steps) fifo.push({std::move(st.features), {}, r, st.action});
    if (fifo.ready()) {
      for (int u = 0; u < cfg.updates_per_episode; ++u) {
        net::Batch batch;
        for (int b = 0; b < cfg.batch_size; ++b) batch.push_back(fifo[uniform_below(eng, fifo.size())]);
        learner.step(batch);
      }
    }
    if ((ep + 1) % cfg.eval_every == 0) {
      auto greedy = dqn_episode(learner.working(), problem, spec, 0.0, eng, &seen).second;
      const double m = problem.metric(greedy);
      if (!best || better(problem.direction, m, *best)) {
        best = m;
        res.best_set = greedy;
      }
      res.log.push_back({ep + 1, m, *best, seen.size()});
    }
  }
  if (!best) {
    res.best_set = dqn_episode(learner.working(), problem, spec, 0.0, eng, &seen).second;
    best = problem.metric(res.best_set);
  }
  res.net = learner.publish();
  res.best_metric = *best;
  res.visited_states = seen.size();
  return res;
}

}  // namespace seqrl::baselines

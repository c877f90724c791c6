#pragma once

// Network-guided tree search over the symbol-filling game.
//
// Each search builds a fresh tree rooted at the current state. The first
// simulation expands the root itself, so after q simulations the root's edges
// carry q - 1 visits in total. Terminal vertices back up their true reward and
// are never sent to the evaluator.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <ostream>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "seqrl/game.hpp"
#include "seqrl/net.hpp"
#include "seqrl/rng.hpp"

namespace seqrl::mcts {

struct SearchConfig {
  int q = 400;
  double cp = 5.0;
  double alpha = 0.05;
  double noise_fraction = 0.25;
  bool noise = true;
  double tau_explore = 1.0;
  double tau_exploit = 1e-4;

  void validate() const {
    if (q < 1) throw std::invalid_argument("mcts: q must be >= 1");
    if (!(cp > 0)) throw std::invalid_argument("mcts: cp must be positive");
    if (!(alpha > 0)) throw std::invalid_argument("mcts: alpha must be positive");
    if (!(noise_fraction >= 0 && noise_fraction <= 1))
      throw std::invalid_argument("mcts: noise_fraction must lie in [0, 1]");
    if (!(tau_explore > 0) || !(tau_exploit > 0))
      throw std::invalid_argument("mcts: temperatures must be positive");
  }
};

// Temperatures at or below this value are treated as the zero-temperature
// limit: one-hot at the most visited edge.
inline constexpr double kArgmaxTau = 1e-3;

// Time steps t < ceil(steps / 3) use the exploratory temperature.
inline bool exploratory_step(int t, int steps) { return t < (steps + 2) / 3; }

inline double tau_for_step(const SearchConfig& cfg, int t, int steps) {
  return exploratory_step(t, steps) ? cfg.tau_explore : cfg.tau_exploit;
}

struct EdgeStats {
  int N = 0;
  double Q = 0;
  double P = 0;
};

inline int select_edge(std::span<const EdgeStats> edges, double cp) {
  long total = 0;
  for (const auto& e : edges) total += e.N;
  const double root = std::sqrt(static_cast<double>(total));
  int best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < edges.size(); ++j) {
    const double u = edges[j].Q + cp * edges[j].P * root / (1.0 + edges[j].N);
    if (u > best_score) {
      best_score = u;
      best = static_cast<int>(j);
    }
  }
  return best;
}

inline void backup_edge(EdgeStats& e, double value) {
  ++e.N;
  e.Q += (value - e.Q) / e.N;
}

inline std::vector<double> dirichlet_sample(int n, double alpha, Engine& eng) {
  std::gamma_distribution<double> gamma(alpha, 1.0);
  std::vector<double> d(n);
  double sum = 0;
  for (auto& x : d) sum += (x = gamma(eng));
  if (!(sum > 0)) {
    // Every draw underflowed; the limit of a vanishing concentration is a
    // uniformly chosen vertex of the simplex.
    std::fill(d.begin(), d.end(), 0.0);
    d[uniform_below(eng, n)] = 1.0;
    return d;
  }
  for (auto& x : d) x /= sum;
  return d;
}

inline std::vector<double> apply_root_noise(std::span<const double> priors, double alpha,
                                            double fraction, std::uint64_t seed) {
  Engine eng = make_engine(seed);
  const auto d = dirichlet_sample(static_cast<int>(priors.size()), alpha, eng);
  std::vector<double> out(priors.size());
  for (std::size_t j = 0; j < priors.size(); ++j)
    out[j] = (1.0 - fraction) * priors[j] + fraction * d[j];
  return out;
}

inline int argmax_lowest(std::span<const double> v) {
  int best = 0;
  for (std::size_t j = 1; j < v.size(); ++j)
    if (v[j] > v[best]) best = static_cast<int>(j);
  return best;
}

// Pi_j proportional to N_j^(1/tau); unvisited edges get 0.
inline std::vector<double> policy_from_counts(std::span<const int> counts, double tau) {
  std::vector<double> pi(counts.size(), 0.0);
  int best = -1;
  for (std::size_t j = 0; j < counts.size(); ++j)
    if (counts[j] > 0 && (best < 0 || counts[j] > counts[best])) best = static_cast<int>(j);
  if (best < 0) throw std::invalid_argument("mcts: no visited edges");
  if (tau <= kArgmaxTau) {
    pi[best] = 1.0;
    return pi;
  }
  const double log_max = std::log(static_cast<double>(counts[best]));
  double sum = 0;
  for (std::size_t j = 0; j < counts.size(); ++j) {
    if (counts[j] == 0) continue;
    pi[j] = std::exp((std::log(static_cast<double>(counts[j])) - log_max) / tau);
    sum += pi[j];
  }
  for (auto& p : pi) p /= sum;
  return pi;
}

// Samples proportionally to pi, or returns the argmax (ties to the lowest
// index) when `greedy`.
inline Move sample_move(std::span<const double> pi, bool greedy, Engine& eng) {
  if (greedy) return Move{static_cast<std::uint32_t>(argmax_lowest(pi))};
  double total = 0;
  for (double p : pi) total += p;
  double u = uniform01(eng) * total;
  int last_positive = 0;
  for (std::size_t j = 0; j < pi.size(); ++j) {
    if (pi[j] <= 0) continue;
    last_positive = static_cast<int>(j);
    if (u < pi[j]) return Move{static_cast<std::uint32_t>(j)};
    u -= pi[j];
  }
  return Move{static_cast<std::uint32_t>(last_positive)};
}

// Leaf evaluation: `predict` for non-terminal states, `terminal_value` for
// filled ones.
struct Evaluator {
  std::function<net::Prediction(const GameState&)> predict;
  std::function<double(const GameState&)> terminal_value;
};

inline Evaluator network_evaluator(net::NetworkSnapshot snap, FeatureSpec spec,
                                   std::function<double(const GameState&)> terminal_value) {
  return Evaluator{[snap = std::move(snap), spec](const GameState& s) {
                     return snap->predict(encode_features(s, spec));
                   },
                   std::move(terminal_value)};
}

struct SearchResult {
  std::vector<int> counts;
  std::vector<double> pi;
  std::vector<double> root_priors;  // after noise
  std::vector<std::uint64_t> visited_keys;  // every vertex created, root first
  int network_calls = 0;
  int vertices = 0;
};

class SearchTree {
 public:
  struct Vertex {
    GameState state;
    bool terminal = false;
    double terminal_value = 0;
    std::vector<EdgeStats> edges;
    std::vector<int> child;  // vertex index per edge, -1 if not yet created
  };

  SearchTree(const GameState& root, const Evaluator& eval, bool keep_keys)
      : eval_(eval), keep_keys_(keep_keys) {
    if (root.terminal()) throw std::invalid_argument("mcts: search root is terminal");
    root_state_ = root;
  }

  // One simulation: descend, expand a new leaf, back up. Returns the value.
  double simulate(std::ostream* trace) {
    path_.clear();
    double value;
    if (vertices_.empty()) {
      value = expand(root_state_);
    } else {
      int v = 0;
      while (true) {
        Vertex& vx = vertices_[v];
        if (vx.terminal) {
          value = vx.terminal_value;
          break;
        }
        const int e = select_edge(vx.edges, cp_);
        path_.push_back({v, e});
        if (vertices_[v].child[e] < 0) {
          const GameState next = apply_move(vertices_[v].state, Move{static_cast<std::uint32_t>(e)});
          const int id = static_cast<int>(vertices_.size());
          value = expand(next);
          vertices_[v].child[e] = id;
          break;
        }
        v = vertices_[v].child[e];
      }
    }
    for (const auto& [v, e] : path_) backup_edge(vertices_[v].edges[e], value);
    if (trace) {
      *trace << "sim";
      for (const auto& step : path_) *trace << ' ' << step.second;
      *trace << " value " << value << '\n';
    }
    return value;
  }

  void set_cp(double cp) { cp_ = cp; }
  Vertex& root() { return vertices_.at(0); }
  const std::vector<Vertex>& vertices() const { return vertices_; }
  int network_calls() const { return network_calls_; }
  std::vector<std::uint64_t>& keys() { return keys_; }

 private:
  double expand(const GameState& s) {
    Vertex vx;
    vx.state = s;
    double value;
    if (s.terminal()) {
      vx.terminal = true;
      vx.terminal_value = value = eval_.terminal_value(s);
    } else {
      const net::Prediction p = eval_.predict(s);
      ++network_calls_;
      const int n = s.config().move_count();
      if (static_cast<int>(p.P.size()) != n)
        throw std::logic_error("mcts: evaluator returned a policy of the wrong width");
      vx.edges.resize(n);
      for (int j = 0; j < n; ++j) vx.edges[j].P = p.P[j];
      vx.child.assign(n, -1);
      value = std::clamp(p.value, -1.0, 1.0);
    }
    if (keep_keys_) keys_.push_back(canonical_key(s));
    vertices_.push_back(std::move(vx));
    return value;
  }

  const Evaluator& eval_;
  bool keep_keys_;
  GameState root_state_;
  double cp_ = 1.0;
  std::vector<Vertex> vertices_;
  std::vector<std::pair<int, int>> path_;
  std::vector<std::uint64_t> keys_;
  int network_calls_ = 0;
};

struct SearchOptions {
  bool collect_keys = false;
  std::ostream* trace = nullptr;
};

inline SearchResult search(const GameState& root, const Evaluator& eval, const SearchConfig& cfg,
                           double tau, std::uint64_t seed, const SearchOptions& opts = {}) {
  cfg.validate();
  SearchTree tree(root, eval, opts.collect_keys);
  tree.set_cp(cfg.cp);
  tree.simulate(opts.trace);
  auto& root_edges = tree.root().edges;
  if (cfg.noise) {
    std::vector<double> priors(root_edges.size());
    for (std::size_t j = 0; j < priors.size(); ++j) priors[j] = root_edges[j].P;
    const auto noisy = apply_root_noise(priors, cfg.alpha, cfg.noise_fraction, seed);
    for (std::size_t j = 0; j < priors.size(); ++j) root_edges[j].P = noisy[j];
  }
  for (int i = 1; i < cfg.q; ++i) tree.simulate(opts.trace);

  SearchResult r;
  const auto& edges = tree.vertices().front().edges;
  r.counts.resize(edges.size());
  r.root_priors.resize(edges.size());
  for (std::size_t j = 0; j < edges.size(); ++j) {
    r.counts[j] = edges[j].N;
    r.root_priors[j] = edges[j].P;
  }
  if (cfg.q == 1) {
    // Only the root was expanded; fall back to its priors.
    r.pi = r.root_priors;
    if (tau <= kArgmaxTau) {
      const int b = argmax_lowest(r.pi);
      r.pi.assign(r.pi.size(), 0.0);
      r.pi[b] = 1.0;
    }
  } else {
    r.pi = policy_from_counts(r.counts, tau);
  }
  r.visited_keys = std::move(tree.keys());
  r.network_calls = tree.network_calls();
  r.vertices = static_cast<int>(tree.vertices().size());
  return r;
}

}  // namespace seqrl::mcts

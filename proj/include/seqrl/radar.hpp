#pragma once

// Pulse-compression radar metrics for binary phase codes: zero-padded shifts,
// the clutter matrix R, matched-filter merit factor, and the mismatched-filter
// SIR s^T R^{-1} s that serves as the search metric.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "seqrl/game.hpp"
#include "seqrl/rng.hpp"

namespace seqrl::radar {

class PhaseCode {
 public:
  PhaseCode() = default;
  explicit PhaseCode(std::vector<Symbol> s) : s_(std::move(s)) {
    if (s_.size() < 2) throw std::invalid_argument("radar: phase code needs N >= 2");
    for (Symbol v : s_)
      if (v != 1 && v != -1) throw std::invalid_argument("radar: phase code entries must be +1/-1");
  }
  PhaseCode(std::initializer_list<int> s) : PhaseCode(std::vector<Symbol>(s.begin(), s.end())) {}
  static PhaseCode from_row(const SequenceSet& set, int row = 0) {
    const auto r = set.row(row);
    return PhaseCode(std::vector<Symbol>(r.begin(), r.end()));
  }

  int size() const { return static_cast<int>(s_.size()); }
  Symbol operator[](int i) const { return s_[i]; }
  std::span<const Symbol> values() const { return s_; }
  SequenceSet as_set() const { return SequenceSet(1, size(), s_); }

  PhaseCode negated() const {
    std::vector<Symbol> v(s_);
    for (auto& x : v) x = static_cast<Symbol>(-x);
    return PhaseCode(std::move(v));
  }
  PhaseCode reversed() const { return PhaseCode(std::vector<Symbol>(s_.rbegin(), s_.rend())); }

  friend bool operator==(const PhaseCode&, const PhaseCode&) = default;

 private:
  std::vector<Symbol> s_;
};

// Dense row-major square matrix; just enough for R and its factorization.
class Matrix {
 public:
  explicit Matrix(int n = 0) : n_(n), a_(static_cast<std::size_t>(n) * n, 0.0) {}
  int size() const { return n_; }
  double& operator()(int i, int j) { return a_[static_cast<std::size_t>(i) * n_ + j]; }
  double operator()(int i, int j) const { return a_[static_cast<std::size_t>(i) * n_ + j]; }

 private:
  int n_;
  std::vector<double> a_;
};

class FactorizationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// J_n s: n > 0 shifts left with trailing zeros, n < 0 shifts right with
// leading zeros.
inline std::vector<double> shifted(const PhaseCode& s, int n) {
  const int len = s.size();
  if (n <= -len || n >= len)
    throw std::out_of_range("radar: shift " + std::to_string(n) + " outside (-N, N)");
  std::vector<double> out(len, 0.0);
  for (int i = 0; i < len; ++i) {
    const int src = i + n;
    if (src >= 0 && src < len) out[i] = s[src];
  }
  return out;
}

// Aperiodic autocorrelation at lag k.
inline int aperiodic_autocorrelation(const PhaseCode& s, int k) {
  int c = 0;
  for (int i = 0; i + k < s.size(); ++i) c += s[i] * s[i + k];
  return c;
}

// R = sum over n != 0 of (J_n s)(J_n s)^T. Entry (i, j) collects the products
// s[i+n] s[j+n] over all in-range n except n = 0, which is the aperiodic
// autocorrelation at lag |i-j| minus s[i] s[j].
inline Matrix build_R(const PhaseCode& s) {
  const int n = s.size();
  std::vector<int> acf(n);
  for (int k = 0; k < n; ++k) acf[k] = aperiodic_autocorrelation(s, k);
  Matrix r(n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) r(i, j) = acf[std::abs(i - j)] - s[i] * s[j];
  return r;
}

namespace detail {
inline std::string code_string(const PhaseCode& s) {
  std::string out;
  for (int i = 0; i < s.size(); ++i) out += s[i] > 0 ? '+' : '-';
  return out;
}
}  // namespace detail

// Lower-triangular Cholesky factor of an SPD matrix, with forward/back solves.
class Cholesky {
 public:
  explicit Cholesky(const Matrix& a) : l_(a.size()) {
    const int n = a.size();
    for (int j = 0; j < n; ++j) {
      double d = a(j, j);
      for (int k = 0; k < j; ++k) d -= l_(j, k) * l_(j, k);
      if (!(d > 0)) {
        ok_ = false;
        return;
      }
      const double ljj = std::sqrt(d);
      l_(j, j) = ljj;
      for (int i = j + 1; i < n; ++i) {
        double v = a(i, j);
        for (int k = 0; k < j; ++k) v -= l_(i, k) * l_(j, k);
        l_(i, j) = v / ljj;
      }
    }
  }

  bool ok() const { return ok_; }

  // Solves L y = b in place.
  void forward(std::vector<double>& b) const {
    const int n = l_.size();
    for (int i = 0; i < n; ++i) {
      double v = b[i];
      for (int k = 0; k < i; ++k) v -= l_(i, k) * b[k];
      b[i] = v / l_(i, i);
    }
  }
  // Solves L^T x = y in place.
  void backward(std::vector<double>& y) const {
    const int n = l_.size();
    for (int i = n - 1; i >= 0; --i) {
      double v = y[i];
      for (int k = i + 1; k < n; ++k) v -= l_(k, i) * y[k];
      y[i] = v / l_(i, i);
    }
  }
  std::vector<double> solve(std::vector<double> b) const {
    forward(b);
    backward(b);
    return b;
  }

 private:
  Matrix l_;
  bool ok_ = true;
};

// Factorization of R for one code; computing both the metric and the weights
// from one instance factors R once.
class MmfSolver {
 public:
  explicit MmfSolver(const PhaseCode& s) : s_(s), chol_(build_R(s)) {
    if (!chol_.ok())
      throw FactorizationError("radar: R is not positive definite for code " +
                               detail::code_string(s));
  }

  // s^T R^{-1} s = |L^{-1} s|^2.
  double metric() const {
    std::vector<double> y(s_.values().begin(), s_.values().end());
    chol_.forward(y);
    double m = 0;
    for (double v : y) m += v * v;
    return m;
  }

  std::vector<double> weights() const {
    return chol_.solve(std::vector<double>(s_.values().begin(), s_.values().end()));
  }

 private:
  PhaseCode s_;
  Cholesky chol_;
};

inline double metric_mmf(const PhaseCode& s) { return MmfSolver(s).metric(); }

inline std::vector<double> mmf_weights(const PhaseCode& s) { return MmfSolver(s).weights(); }

// SIR of a receive filter x against code s: (x^T s)^2 / sum_{n != 0} (x^T J_n s)^2.
inline double sir(std::span<const double> x, const PhaseCode& s) {
  const int n = s.size();
  if (static_cast<int>(x.size()) != n) throw std::invalid_argument("radar: filter length mismatch");
  double signal = 0;
  for (int i = 0; i < n; ++i) signal += x[i] * s[i];
  double interference = 0;
  for (int k = 1 - n; k < n; ++k) {
    if (k == 0) continue;
    const auto js = shifted(s, k);
    double c = 0;
    for (int i = 0; i < n; ++i) c += x[i] * js[i];
    interference += c * c;
  }
  return signal * signal / interference;
}

// Matched-filter SIR (merit factor): N^2 / (2 * sum_{k >= 1} C_k^2).
inline double merit_factor_mf(const PhaseCode& s) {
  double energy = 0;
  for (int i = 0; i < s.size(); ++i) energy += s[i] * s[i];
  double sidelobes = 0;
  for (int k = 1; k < s.size(); ++k) {
    const double c = aperiodic_autocorrelation(s, k);
    sidelobes += 2 * c * c;
  }
  return energy * energy / sidelobes;
}

struct MmfBounds {
  double lower;
  double upper;
  double conjectured_upper;
};

inline MmfBounds bounds_mmf(int n) {
  if (n < 2) throw std::invalid_argument("radar: bounds need N >= 2");
  const double nn = n;
  return {16.0 / (9.0 * nn * nn * nn), nn * nn * nn * std::ldexp(1.0, n - 4), 37.0};
}

struct RadarRewardSpec {
  double Ml = 0.0;
  double Mu = 1.0;
};

// Linear map of [Ml, Mu] onto [-1, 1], clamped outside.
inline double reward_radar(double metric, const RadarRewardSpec& spec) {
  if (!(spec.Ml < spec.Mu)) throw std::invalid_argument("radar: reward range needs Ml < Mu");
  const double r = (2.0 * metric - spec.Mu - spec.Ml) / (spec.Mu - spec.Ml);
  return std::clamp(r, -1.0, 1.0);
}

// --- Clutter simulation ------------------------------------------------------

struct ClutterModel {
  double sigma2 = 1.0;
  long trials = 100000;
};

struct MseEstimate {
  double mse = 0;
  double std_error = 0;  // Monte-Carlo standard error of `mse`
  long trials = 0;
};

// Draws h_n ~ N(0, sigma2) for every range bin n in [1-N, N-1], forms the
// received vector y = h_0 s + sum_{n != 0} h_n J_n s, estimates h_0 with the
// mismatched filter x = R^{-1} s and averages (h_0 - est)^2.
inline MseEstimate simulate_mse(const PhaseCode& s, const ClutterModel& model, std::uint64_t seed) {
  if (model.trials < 1) throw std::invalid_argument("radar: trials must be >= 1");
  if (!(model.sigma2 > 0)) throw std::invalid_argument("radar: sigma2 must be positive");
  const int n = s.size();
  const auto x = mmf_weights(s);
  double xs = 0;
  for (int i = 0; i < n; ++i) xs += x[i] * s[i];
  std::vector<std::vector<double>> shifts;
  for (int k = 1 - n; k < n; ++k) shifts.push_back(shifted(s, k));

  Engine eng = make_engine(seed);
  std::normal_distribution<double> gauss(0.0, std::sqrt(model.sigma2));
  std::vector<double> y(n);
  double sum = 0, sum_sq = 0;
  for (long t = 0; t < model.trials; ++t) {
    std::fill(y.begin(), y.end(), 0.0);
    double h0 = 0;
    for (int k = 1 - n; k < n; ++k) {
      const double h = gauss(eng);
      if (k == 0) h0 = h;
      const auto& js = shifts[k + n - 1];
      for (int i = 0; i < n; ++i) y[i] += h * js[i];
    }
    double xy = 0;
    for (int i = 0; i < n; ++i) xy += x[i] * y[i];
    const double err = h0 - xy / xs;
    sum += err * err;
    sum_sq += err * err * err * err;
  }
  const double trials = static_cast<double>(model.trials);
  const double mean = sum / trials;
  const double var = std::max(0.0, sum_sq / trials - mean * mean);
  return {mean, std::sqrt(var / trials), model.trials};
}

// --- Benchmark codes -----------------------------------------------------------

struct NamedCode {
  std::string name;
  PhaseCode code;
};

// Printed codes, flattened row by row.
inline std::vector<NamedCode> benchmark_codes() {
  return {
      {"legendre59",
       PhaseCode{+1, +1, -1, +1, +1, -1, +1, -1, +1, -1, -1, -1, +1, -1, +1, +1, -1, +1, +1, +1,
                 -1, +1, -1, +1, -1, -1, +1, -1, -1, +1, +1, +1, -1, +1, +1, +1, +1, -1, -1, +1,
                 +1, +1, +1, +1, -1, -1, -1, -1, -1, +1, +1, -1, -1, -1, -1, +1, -1, -1, -1}},
      {"alphaseq59",
       PhaseCode{+1, +1, +1, +1, +1, +1, +1, +1, +1, +1, +1, +1, +1, +1, +1, +1, -1, -1, -1, -1,
                 -1, -1, -1, -1, +1, +1, +1, -1, -1, +1, +1, -1, +1, +1, -1, +1, -1, -1, +1, -1,
                 +1, -1, +1, -1, -1, +1, -1, +1, -1, +1, -1, +1, -1, +1, -1, +1, -1, +1, -1}},
      {"barker13", PhaseCode{1, 1, 1, 1, 1, -1, -1, 1, 1, -1, 1, -1, 1}},
      {"optimal28",
       PhaseCode{-1, +1, -1, +1, -1, +1, -1, +1, -1, -1, +1, -1, -1, +1,
                 +1, +1, +1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1}},
      {"dql59",
       PhaseCode{+1, -1, +1, +1, -1, +1, -1, +1, +1, -1, +1, -1, +1, +1, -1, +1, -1, +1, +1, -1,
                 +1, +1, +1, -1, -1, -1, +1, +1, -1, +1, -1, -1, -1, +1, -1, +1, +1, +1, +1, +1,
                 -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1}},
  };
}

inline PhaseCode benchmark_code(const std::string& name) {
  for (auto& c : benchmark_codes())
    if (c.name == name) return c.code;
  throw std::invalid_argument("radar: unknown benchmark code " + name);
}

}  // namespace seqrl::radar

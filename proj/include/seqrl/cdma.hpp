#pragma once

// Complementary-code metric for multi-carrier CDMA. A set of J*M rows is split
// into J flocks; flock j owns rows [j*M, (j+1)*M). All correlations are exact
// integers.

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <span>
#include <stdexcept>
#include <string>

#include "seqrl/game.hpp"

namespace seqrl::cdma {

struct CdmaConfig {
  int J = 1;  // users
  int M = 1;  // element codes per user
  int N = 1;  // code length

  int rows() const { return J * M; }
  void validate() const {
    if (J < 1 || M < 1 || N < 1) throw std::invalid_argument("cdma: J, M, N must be >= 1");
  }
};

// M consecutive rows of a sequence set.
class Flock {
 public:
  Flock(const SequenceSet& set, int first_row, int rows)
      : data_(set.entries().subspan(static_cast<std::size_t>(first_row) * set.cols(),
                                    static_cast<std::size_t>(rows) * set.cols())),
        rows_(rows),
        cols_(set.cols()) {
    if (first_row < 0 || rows < 1 || first_row + rows > set.rows())
      throw std::out_of_range("cdma: flock rows outside the set");
  }
  explicit Flock(const SequenceSet& set) : Flock(set, 0, set.rows()) {}

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  int at(int m, int n) const { return data_[static_cast<std::size_t>(m) * cols_ + n]; }

 private:
  std::span<const Symbol> data_;
  int rows_;
  int cols_;
};

inline Flock user_flock(const SequenceSet& set, const CdmaConfig& cfg, int j) {
  return Flock(set, j * cfg.M, cfg.M);
}

namespace detail {
inline void check_pair(const Flock& a, const Flock& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument("cdma: flock shapes differ");
}
inline void check_shift(int v, int lo, int hi, const char* what) {
  if (v < lo || v > hi)
    throw std::out_of_range(std::string("cdma: ") + what + " shift " + std::to_string(v) +
                            " outside [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
}
}  // namespace detail

// Cyclic cross-correlation summed over the flock, shift 0..N-1.
inline std::int64_t ccf(const Flock& a, const Flock& b, int v) {
  detail::check_pair(a, b);
  const int n_len = a.cols();
  detail::check_shift(v, 0, n_len - 1, "ccf");
  std::int64_t sum = 0;
  for (int m = 0; m < a.rows(); ++m)
    for (int n = 0; n < n_len; ++n) sum += a.at(m, n) * b.at(m, (n + v) % n_len);
  return sum;
}

// Cyclic auto-correlation summed over the flock, shift 1..N-1.
inline std::int64_t caf(const Flock& flock, int v) {
  detail::check_shift(v, 1, flock.cols() - 1, "caf");
  return ccf(flock, flock, v);
}

// Flipped correlation: the wrapped-around part of the cyclic sum enters with
// a minus sign. Shift 1..N-1.
inline std::int64_t fcf(const Flock& a, const Flock& b, int v) {
  detail::check_pair(a, b);
  const int n_len = a.cols();
  detail::check_shift(v, 1, n_len - 1, "fcf");
  std::int64_t sum = 0;
  for (int m = 0; m < a.rows(); ++m) {
    for (int n = 0; n < n_len - v; ++n) sum += a.at(m, n) * b.at(m, n + v);
    for (int n = n_len - v; n < n_len; ++n) sum -= a.at(m, n) * b.at(m, (n + v) % n_len);
  }
  return sum;
}

inline std::int64_t metric_ccc_exact(const SequenceSet& set, const CdmaConfig& cfg) {
  cfg.validate();
  if (set.rows() != cfg.rows() || set.cols() != cfg.N)
    throw std::invalid_argument("cdma: set shape " + std::to_string(set.rows()) + "x" +
                                std::to_string(set.cols()) + " does not match J*M x N = " +
                                std::to_string(cfg.rows()) + "x" + std::to_string(cfg.N));
  std::int64_t total = 0;
  for (int j = 0; j < cfg.J; ++j) {
    const Flock f = user_flock(set, cfg, j);
    for (int v = 1; v < cfg.N; ++v) total += std::llabs(caf(f, v));
  }
  for (int j1 = 0; j1 < cfg.J; ++j1)
    for (int j2 = j1 + 1; j2 < cfg.J; ++j2) {
      const Flock a = user_flock(set, cfg, j1), b = user_flock(set, cfg, j2);
      for (int v = 0; v < cfg.N; ++v) total += std::llabs(ccf(a, b, v));
    }
  for (int j1 = 0; j1 < cfg.J; ++j1)
    for (int j2 = j1; j2 < cfg.J; ++j2) {
      const Flock a = user_flock(set, cfg, j1), b = user_flock(set, cfg, j2);
      for (int v = 1; v < cfg.N; ++v) total += std::llabs(fcf(a, b, v));
    }
  return total;
}

inline double metric_ccc(const SequenceSet& set, const CdmaConfig& cfg) {
  return static_cast<double>(metric_ccc_exact(set, cfg));
}

// Largest attainable metric, reached by the all-ones set. The closed form is
// written in the user count J.
inline double sup_metric_ccc(const CdmaConfig& cfg) {
  cfg.validate();
  const double n = cfg.N, j = cfg.J, m = cfg.M;
  if (cfg.N % 2 == 1) return ((3 * n * n + 1) * (j * j + j) - 2 * n * j * (j + 3)) * m / 4;
  return (3 * n * n * (j * j + j) - 2 * n * j * (j + 3)) * m / 4;
}

struct CdmaRewardSpec {
  double Mu = 0.0;  // metric mapped to reward -1
};

inline double reward_ccc(double metric, const CdmaRewardSpec& spec) {
  if (!(spec.Mu > 0)) throw std::invalid_argument("cdma: Mu must be positive");
  if (metric < 0) throw std::invalid_argument("cdma: metric must be nonnegative");
  if (metric > spec.Mu) return -1.0;
  return 1.0 - 2.0 * metric / spec.Mu;
}

// One-shot worst-case calibration: Mu starts at the supremum, a freshly
// initialized network plays `games` noiseless games under that reward, and Mu
// becomes the mean metric found. The value is frozen afterwards; calibrating
// again requires reset(), which callers invoke when they reinitialize the
// network.
class MuCalibration {
 public:
  // play(spec, game_index) returns the metric of one noiseless game.
  template <typename PlayFn>
  CdmaRewardSpec calibrate(const CdmaConfig& cfg, PlayFn&& play, int games = 50) {
    if (done_) throw std::logic_error("cdma: Mu is already calibrated for this network");
    if (games < 1) throw std::invalid_argument("cdma: calibration needs at least one game");
    const CdmaRewardSpec initial{sup_metric_ccc(cfg)};
    double sum = 0;
    for (int g = 0; g < games; ++g) sum += play(initial, g);
    spec_ = CdmaRewardSpec{sum / games};
    if (!(spec_.Mu > 0)) spec_.Mu = initial.Mu;  // every game found an ideal set
    done_ = true;
    return spec_;
  }

  bool calibrated() const { return done_; }
  const CdmaRewardSpec& spec() const { return spec_; }
  void reset() { done_ = false; }
  // Restores a frozen value (checkpoint resume).
  void restore(const CdmaRewardSpec& spec) {
    spec_ = spec;
    done_ = true;
  }

 private:
  bool done_ = false;
  CdmaRewardSpec spec_{};
};

}  // namespace seqrl::cdma

#include <gtest/gtest.h>

#include <cmath>

#include <Eigen/Dense>

#include "oracles.hpp"
#include "seqrl/radar.hpp"
#include "seqrl/rng.hpp"

using namespace seqrl;
using namespace seqrl::radar;

namespace {
PhaseCode random_code(Engine& eng, int n) {
  std::vector<Symbol> v(n);
  for (auto& x : v) x = uniform_below(eng, 2) ? 1 : -1;
  return PhaseCode(v);
}
std::vector<int> as_ints(const PhaseCode& s) { return {s.values().begin(), s.values().end()}; }

// Merit factor straight from the definition with explicit shifted vectors.
double mf_brute(const std::vector<int>& s) {
  const int n = static_cast<int>(s.size());
  double den = 0;
  for (int k = 1 - n; k < n; ++k) {
    if (k == 0) continue;
    double c = 0;
    for (int i = 0; i < n; ++i) {
      const int j = i + k;
      if (j >= 0 && j < n) c += s[i] * s[j];
    }
    den += c * c;
  }
  return static_cast<double>(n) * n / den;
}
}  // namespace

TEST(Shifted, Examples) {
  const PhaseCode s{1, -1, 1};
  EXPECT_EQ(shifted(s, 1), (std::vector<double>{-1, 1, 0}));
  EXPECT_EQ(shifted(s, -1), (std::vector<double>{0, 1, -1}));
  EXPECT_EQ(shifted(s, 0), (std::vector<double>{1, -1, 1}));
  EXPECT_THROW(shifted(s, 3), std::out_of_range);
  EXPECT_THROW(shifted(s, -3), std::out_of_range);
  Engine eng = make_engine(1);
  const auto r = random_code(eng, 11);
  for (int n = -10; n <= 10; ++n) {
    const auto v = shifted(r, n);
    double e = 0;
    for (double x : v) e += x * x;
    EXPECT_EQ(e, 11 - std::abs(n));
  }
}

TEST(BuildR, Examples) {
  const auto r = build_R(PhaseCode{1, 1});
  EXPECT_EQ(r(0, 0), 1);
  EXPECT_EQ(r(1, 1), 1);
  EXPECT_EQ(r(0, 1), 0);
  Engine eng = make_engine(2);
  for (int n = 2; n <= 8; ++n)
    for (int t = 0; t < 10; ++t) {
      const auto R = build_R(random_code(eng, n));
      double tr = 0;
      for (int i = 0; i < n; ++i) tr += R(i, i);
      EXPECT_EQ(tr, n * n - n);
    }
}

TEST(BuildR, MatchesOuterProductSumAndIsSpd) {
  Engine eng = make_engine(3);
  for (int t = 0; t < 100; ++t) {
    const int n = t < 50 ? 16 : 2 + static_cast<int>(uniform_below(eng, 31));
    const auto s = random_code(eng, n);
    const auto R = build_R(s);
    Eigen::MatrixXd ref = Eigen::MatrixXd::Zero(n, n), got(n, n);
    for (int k = 1 - n; k < n; ++k) {
      if (k == 0) continue;
      const auto js = shifted(s, k);
      const Eigen::Map<const Eigen::VectorXd> v(js.data(), n);
      ref += v * v.transpose();
    }
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) got(i, j) = R(i, j);
    ASSERT_EQ((got - ref).cwiseAbs().maxCoeff(), 0.0);
    ASSERT_EQ((got - got.transpose()).cwiseAbs().maxCoeff(), 0.0);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(got);
    ASSERT_GT(es.eigenvalues().minCoeff(), 0.0);
  }
}

TEST(MetricMmf, PublishedValues) {
  EXPECT_NEAR(metric_mmf(benchmark_code("legendre59")), 10.98, 0.01);
  EXPECT_NEAR(metric_mmf(benchmark_code("barker13")), 37.0, 1e-6);
  EXPECT_NEAR(metric_mmf(benchmark_code("alphaseq59")), 33.45, 0.01);
  EXPECT_NEAR(metric_mmf(benchmark_code("optimal28")), 30.02, 0.01);
}

TEST(MetricMmf, DenseInverseOracle) {
  Engine eng = make_engine(4);
  for (int n = 2; n <= 32; ++n)
    for (int t = 0; t < 5; ++t) {
      const auto s = random_code(eng, n);
      const double ref = oracle::radar_metric_dense(as_ints(s));
      ASSERT_NEAR(metric_mmf(s), ref, 1e-8 * ref) << "N=" << n;
    }
  for (const auto& c : benchmark_codes()) {
    const double ref = oracle::radar_metric_dense(as_ints(c.code));
    EXPECT_NEAR(metric_mmf(c.code), ref, 1e-8 * ref) << c.name;
  }
}

TEST(MetricMmf, BruteForceSmallLengths) {
  for (int n = 2; n <= 10; ++n)
    for (std::uint64_t code = 0; code < (1ULL << n); ++code) {
      const auto v = oracle::bits_to_code(code, n);
      const PhaseCode s(std::vector<Symbol>(v.begin(), v.end()));
      const double ref = oracle::radar_metric_dense(v);
      ASSERT_NEAR(metric_mmf(s), ref, 1e-8 * ref);
      ASSERT_NEAR(merit_factor_mf(s), mf_brute(v), 1e-12);
    }
}

TEST(MetricMmf, Symmetries) {
  Engine eng = make_engine(5);
  for (int t = 0; t < 100; ++t) {
    const auto s = random_code(eng, 5 + static_cast<int>(uniform_below(eng, 40)));
    const double m = metric_mmf(s);
    EXPECT_NEAR(metric_mmf(s.negated()), m, 1e-9 * m);
    EXPECT_NEAR(metric_mmf(s.reversed()), m, 1e-9 * m);
  }
}

TEST(Weights, SolveAndSir) {
  const auto w = mmf_weights(PhaseCode{1, 1});
  EXPECT_NEAR(w[0], 1.0, 1e-12);
  EXPECT_NEAR(w[1], 1.0, 1e-12);
  const auto sl = benchmark_code("legendre59");
  EXPECT_NEAR(sir(mmf_weights(sl), sl), 10.98, 0.01);
  EXPECT_NEAR(sir(mmf_weights(sl), sl), metric_mmf(sl), 1e-8 * metric_mmf(sl));
  Engine eng = make_engine(6);
  for (int n : {13, 32, 59})
    for (int t = 0; t < 100; ++t) {
      const auto s = random_code(eng, n);
      const auto x = mmf_weights(s);
      const double mmf = sir(x, s);
      ASSERT_NEAR(mmf, metric_mmf(s), 1e-7 * mmf);
      ASSERT_GE(mmf * (1 + 1e-9), merit_factor_mf(s));
    }
}

TEST(MeritFactor, Values) {
  EXPECT_NEAR(merit_factor_mf(benchmark_code("barker13")), 14.08, 0.01);
  EXPECT_NEAR(merit_factor_mf(benchmark_code("legendre59")), 6.19, 0.01);
  EXPECT_DOUBLE_EQ(merit_factor_mf(PhaseCode{1, 1}), 2.0);
}

TEST(Bounds, FormulaAndProperty) {
  const auto b = bounds_mmf(59);
  EXPECT_NEAR(b.lower, 8.65e-6, 0.01e-6);
  EXPECT_EQ(b.conjectured_upper, 37.0);
  EXPECT_THROW(bounds_mmf(1), std::invalid_argument);
  Engine eng = make_engine(7);
  for (int n : {8, 13, 20}) {
    const auto bn = bounds_mmf(n);
    for (int t = 0; t < 1000; ++t) {
      const double m = metric_mmf(random_code(eng, n));
      ASSERT_GE(m, bn.lower);
      ASSERT_LE(m, bn.upper);
    }
  }
}

TEST(Bounds, ConjectureHoldsExhaustively) {
  for (int n = 2; n <= 14; ++n) {
    double best = 0;
    for (std::uint64_t code = 0; code < (1ULL << n); ++code) {
      const auto v = oracle::bits_to_code(code, n);
      best = std::max(best, metric_mmf(PhaseCode(std::vector<Symbol>(v.begin(), v.end()))));
    }
    ASSERT_LE(best, 37.0 + 1e-6) << "N=" << n;
    if (n == 13) {
      EXPECT_NEAR(best, 37.0, 1e-6);
    }
  }
}

TEST(Reward, Map) {
  const RadarRewardSpec spec{10, 30};
  EXPECT_DOUBLE_EQ(reward_radar(10, spec), -1.0);
  EXPECT_DOUBLE_EQ(reward_radar(30, spec), 1.0);
  EXPECT_DOUBLE_EQ(reward_radar(20, spec), 0.0);
  EXPECT_DOUBLE_EQ(reward_radar(5, spec), -1.0);
  EXPECT_DOUBLE_EQ(reward_radar(40, spec), 1.0);
  EXPECT_THROW(reward_radar(5, {3, 3}), std::invalid_argument);
}

TEST(Mse, MatchesAnalyticIdentity) {
  for (const char* name : {"legendre59", "alphaseq59", "barker13"}) {
    const auto s = benchmark_code(name);
    const auto est = simulate_mse(s, {1.0, 100000}, 42);
    const double expect = 1.0 / metric_mmf(s);
    EXPECT_NEAR(est.mse, expect, 3 * est.std_error) << name;
  }
  const auto sl = simulate_mse(benchmark_code("legendre59"), {1.0, 100000}, 1);
  EXPECT_NEAR(sl.mse, 0.0911, 0.003);
  const auto scaled = simulate_mse(benchmark_code("barker13"), {4.0, 100000}, 3);
  EXPECT_NEAR(scaled.mse / 4.0, 1.0 / 37.0, 3 * scaled.std_error / 4.0);
}

TEST(Mse, GainOfAlphaOverLegendre) {
  const auto a = simulate_mse(benchmark_code("alphaseq59"), {1.0, 100000}, 10);
  const auto l = simulate_mse(benchmark_code("legendre59"), {1.0, 100000}, 11);
  const double gain = 10 * std::log10(l.mse / a.mse);
  EXPECT_GE(gain, 4.3);
  EXPECT_LE(gain, 5.4);
}

TEST(Mse, DeterministicPerSeed) {
  const auto s = benchmark_code("barker13");
  const auto a = simulate_mse(s, {1.0, 2000}, 9);
  const auto b = simulate_mse(s, {1.0, 2000}, 9);
  const auto c = simulate_mse(s, {1.0, 2000}, 10);
  EXPECT_EQ(a.mse, b.mse);
  EXPECT_NE(a.mse, c.mse);
  EXPECT_THROW(simulate_mse(s, {1.0, 0}, 1), std::invalid_argument);
}

TEST(Benchmarks, Catalogue) {
  const auto codes = benchmark_codes();
  ASSERT_EQ(codes.size(), 5u);
  EXPECT_EQ(benchmark_code("legendre59").size(), 59);
  EXPECT_EQ(benchmark_code("alphaseq59").size(), 59);
  EXPECT_EQ(benchmark_code("dql59").size(), 59);
  EXPECT_EQ(benchmark_code("optimal28").size(), 28);
  EXPECT_EQ(benchmark_code("barker13"), (PhaseCode{1, 1, 1, 1, 1, -1, -1, 1, 1, -1, 1, -1, 1}));
  EXPECT_THROW(benchmark_code("nope"), std::invalid_argument);
  EXPECT_THROW(PhaseCode{1}, std::invalid_argument);
  EXPECT_THROW((PhaseCode{1, 0}), std::invalid_argument);
}

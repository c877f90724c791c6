// Acceptance gate: one PASS/FAIL line per criterion.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>

#include "oracles.hpp"
#include "seqrl/baselines.hpp"
#include "seqrl/cdma.hpp"
#include "seqrl/game.hpp"
#include "seqrl/manifest.hpp"
#include "seqrl/mcts.hpp"
#include "seqrl/net.hpp"
#include "seqrl/radar.hpp"
#include "seqrl/text_format.hpp"
#include "seqrl/trainer.hpp"

using namespace seqrl;

namespace {

struct Check {
  bool ok = true;
  std::ostringstream note;
  void expect(bool cond, const std::string& what) {
    if (!cond) {
      ok = false;
      note << " [failed: " << what << "]";
    }
  }
};

int failures = 0;

void criterion(int id, const std::string& title, const std::function<void(Check&)>& body) {
  const auto start = std::chrono::steady_clock::now();
  Check c;
  try {
    body(c);
  } catch (const std::exception& e) {
    c.ok = false;
    c.note << " [exception: " << e.what() << "]";
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (!c.ok) ++failures;
  std::printf("%s criterion %d: %s%s (%.1fs)\n", c.ok ? "PASS" : "FAIL", id, title.c_str(),
              c.note.str().c_str(), secs);
  std::fflush(stdout);
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

radar::PhaseCode random_code(Engine& eng, int n) {
  std::vector<Symbol> v(n);
  for (auto& x : v) x = uniform_below(eng, 2) ? 1 : -1;
  return radar::PhaseCode(v);
}

radar::PhaseCode code_of(std::uint64_t bits, int n) {
  const auto v = oracle::bits_to_code(bits, n);
  return radar::PhaseCode(std::vector<Symbol>(v.begin(), v.end()));
}

std::vector<int> as_ints(const radar::PhaseCode& s) { return {s.values().begin(), s.values().end()}; }

Manifest bundled(const std::string& name) {
  return load_manifest(std::string(SEQRL_CONFIG_DIR) + "/" + name);
}

std::string runlog_text(const Trainer& t) {
  std::ostringstream out;
  write_runlog(out, t.log(), t.approximate_from(), /*with_elapsed=*/false);
  return out.str();
}

// First evaluation episode whose extreme reaches `target`, or -1.
long episode_reaching(const Trainer& t, double target) {
  for (const auto& row : t.log())
    if (!better(t.setup().problem.direction, target, row.extreme_metric)) return row.episode;
  return -1;
}

// --- tiny network for the gradient criterion --------------------------------------

net::NetworkConfig tiny_net() {
  net::NetworkConfig c;
  c.rows = 2;
  c.cols = 3;
  c.conv_layers = 2;
  c.filters = 4;
  c.policy_size = 4;
  c.value_hidden = 5;
  c.l2 = 1e-3;
  return c;
}

net::Batch random_batch(Engine& eng, const net::NetworkConfig& c, int n, bool one_hot) {
  net::Batch b;
  const int pixels = c.rows * c.cols;
  for (int i = 0; i < n; ++i) {
    net::Example ex;
    ex.features.assign(static_cast<std::size_t>(3) * pixels, 0.0);
    for (int p = 0; p < pixels; ++p) ex.features[uniform_below(eng, 3) * pixels + p] = 1.0;
    ex.action = static_cast<int>(uniform_below(eng, c.policy_size));
    ex.pi.assign(c.policy_size, 0.0);
    if (one_hot) {
      ex.pi[ex.action] = 1.0;
    } else {
      double sum = 0;
      for (auto& p : ex.pi) sum += (p = uniform01(eng) + 0.05);
      for (auto& p : ex.pi) p /= sum;
    }
    ex.reward = 2 * uniform01(eng) - 1;
    b.push_back(std::move(ex));
  }
  return b;
}

double worst_fd_error(net::Network& n, const net::Batch& b) {
  std::vector<double> g;
  n.loss_and_gradient(b, &g);
  auto p = n.mutable_parameters();
  double worst = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double orig = p[i], h = 1e-5;
    p[i] = orig + h;
    const double lp = n.loss(b).total;
    p[i] = orig - h;
    const double lm = n.loss(b).total;
    p[i] = orig;
    const double fd = (lp - lm) / (2 * h);
    worst = std::max(worst, std::abs(fd - g[i]) / std::max(1e-6, std::abs(fd) + std::abs(g[i])));
  }
  return worst;
}

mcts::Evaluator uniform_stub(std::function<double(const GameState&)> terminal) {
  return mcts::Evaluator{[](const GameState& s) {
                           const int n = s.config().move_count();
                           return net::Prediction{std::vector<double>(n, 1.0 / n), 0.0};
                         },
                         std::move(terminal)};
}

}  // namespace

int main() {
  std::printf("seqrl acceptance\n");

  criterion(1, "ideal CDMA sets have metric 0", [](Check& c) {
    const cdma::CdmaConfig cfg{2, 2, 8};
    const auto bench = parse_sequence_set(oracle::kCBench);
    c.expect(cdma::metric_ccc(bench, cfg) == 0, "metric(C_bench) = 0");
    const auto iso = enumerate_isomorphs(bench);
    c.expect(iso.size() == 32, "32 distinct isomorphs");
    for (const auto& s : iso) c.expect(cdma::metric_ccc(s, cfg) == 0, "isomorph metric 0");
    c.expect(cdma::metric_ccc(parse_sequence_set(oracle::kCAlpha), cfg) == 0, "metric(C_alpha) = 0");
    c.expect(cdma::metric_ccc(parse_sequence_set(oracle::kCAlphaPrime), cfg) == 0,
             "metric(C'_alpha) = 0");
    c.note << " C_bench, " << iso.size() << " isomorphs, C_alpha, C'_alpha all 0";
  });

  criterion(2, "all-ones set attains the CDMA supremum 496", [](Check& c) {
    const cdma::CdmaConfig cfg{2, 2, 8};
    const double m = cdma::metric_ccc(SequenceSet::filled(4, 8, 1), cfg);
    c.expect(m == 496, "metric = 496");
    c.expect(cdma::sup_metric_ccc(cfg) == 496, "sup = 496");
    c.note << " metric " << fmt(m) << ", sup " << fmt(cdma::sup_metric_ccc(cfg));
  });

  criterion(3, "Legendre code: MMF 10.98, MF 6.19", [](Check& c) {
    const auto s = radar::benchmark_code("legendre59");
    const double mmf = radar::metric_mmf(s), mf = radar::merit_factor_mf(s);
    c.expect(std::abs(mmf - 10.98) <= 0.01, "MMF within 0.01");
    c.expect(std::abs(mf - 6.19) <= 0.01, "MF within 0.01");
    c.note << " MMF " << fmt(mmf) << ", MF " << fmt(mf);
  });

  criterion(4, "AlphaSeq radar code: MMF 33.45 and at least triple the Legendre SIR", [](Check& c) {
    const double a = radar::metric_mmf(radar::benchmark_code("alphaseq59"));
    const double l = radar::metric_mmf(radar::benchmark_code("legendre59"));
    c.expect(std::abs(a - 33.45) <= 0.01, "MMF within 0.01");
    c.expect(a / l >= 3.0, "ratio >= 3");
    c.note << " MMF " << fmt(a) << ", ratio " << fmt(a / l);
  });

  criterion(5, "Barker-13: MMF 37, MF 14.08", [](Check& c) {
    const auto s = radar::benchmark_code("barker13");
    const double mmf = radar::metric_mmf(s), mf = radar::merit_factor_mf(s);
    c.expect(std::abs(mmf - 37) <= 1e-6, "MMF within 1e-6");
    c.expect(std::abs(mf - 14.08) <= 0.01, "MF within 0.01");
    c.note << " MMF " << fmt(mmf) << ", MF " << fmt(mf);
  });

  criterion(6, "optimal N=28 code MMF 30.02; DQL code MMF 23.64", [](Check& c) {
    const double opt = radar::metric_mmf(radar::benchmark_code("optimal28"));
    const double dql = radar::metric_mmf(radar::benchmark_code("dql59"));
    const double dql_ref = oracle::radar_metric_dense(as_ints(radar::benchmark_code("dql59")));
    c.expect(std::abs(opt - 30.02) <= 0.01, "optimal28 within 0.01 of 30.02");
    c.expect(std::abs(dql - 23.64) <= 0.01, "dql59 within 0.01 of 23.64");
    c.note << " optimal28 " << fmt(opt) << ", dql59 " << fmt(dql) << " (dense-inverse oracle "
           << fmt(dql_ref) << ")";
  });

  criterion(7, "state-space size 85 and brute-force agreement for NK <= 12", [](Check& c) {
    c.expect(state_space_size({2, 3, 2}) == 85, "size(K=2, N=3, ell=2) = 85");
    int configs = 0;
    for (int K = 1; K <= 12; ++K)
      for (int N = 1; N * K <= 12; ++N)
        for (int ell = 1; ell <= N * K; ++ell) {
          const GameConfig cfg{K, N, ell};
          ++configs;
          if (to_u64_checked(state_space_size(cfg)) != oracle::reachable_states(cfg))
            c.expect(false, "K=" + std::to_string(K) + " N=" + std::to_string(N) +
                                " ell=" + std::to_string(ell));
        }
    c.note << " " << configs << " configurations enumerated";
  });

  criterion(8, "radar bounds and the conjectured optimum at N=13", [](Check& c) {
    double worst_gap = 1e300;
    for (int n = 2; n <= 14; ++n) {
      const auto b = radar::bounds_mmf(n);
      const double lower = 16.0 / (9.0 * n * n * n);
      std::vector<std::uint64_t> at_37;
      for (std::uint64_t bits = 0; bits < (1ULL << n); ++bits) {
        const double m = radar::metric_mmf(code_of(bits, n));
        if (m < lower || m < b.lower) c.expect(false, "lower bound at N=" + std::to_string(n));
        if (m > 37 + 1e-6) c.expect(false, "upper bound at N=" + std::to_string(n));
        worst_gap = std::min(worst_gap, 37 + 1e-6 - m);
        if (m >= 37 - 1e-6) at_37.push_back(bits);
      }
      if (n != 13) {
        c.expect(at_37.empty(), "37 attained only at N=13");
        continue;
      }
      const auto barker = radar::benchmark_code("barker13");
      const std::set<std::vector<int>> images{as_ints(barker), as_ints(barker.negated()),
                                              as_ints(barker.reversed()),
                                              as_ints(barker.reversed().negated())};
      std::set<std::vector<int>> found;
      for (auto bits : at_37) found.insert(oracle::bits_to_code(bits, 13));
      c.expect(found == images, "N=13 optima are exactly the Barker symmetry images");
      c.note << " N=13 optima " << found.size() << ";";
    }
    Engine eng = make_engine(8);
    for (int n : {20, 32, 59})
      for (int t = 0; t < 1000; ++t) {
        const double m = radar::metric_mmf(random_code(eng, n));
        if (m < 16.0 / (9.0 * n * n * n) || m > 37 + 1e-6)
          c.expect(false, "random code bound at N=" + std::to_string(n));
      }
    c.note << " exhaustive N<=14 and 3000 random codes within bounds";
  });

  criterion(9, "metric oracles agree", [](Check& c) {
    Engine eng = make_engine(9);
    double worst = 0;
    for (int n = 2; n <= 32; ++n)
      for (int t = 0; t < 20; ++t) {
        const auto s = random_code(eng, n);
        const double ref = oracle::radar_metric_dense(as_ints(s));
        worst = std::max(worst, std::abs(radar::metric_mmf(s) - ref) / ref);
      }
    c.expect(worst <= 1e-8, "radar relative error <= 1e-8");
    int mismatches = 0;
    for (int t = 0; t < 500; ++t) {
      const int J = 1 + static_cast<int>(uniform_below(eng, 3));
      const int M = 1 + static_cast<int>(uniform_below(eng, 3));
      const int N = 2 + static_cast<int>(uniform_below(eng, 7));
      std::vector<Symbol> e(static_cast<std::size_t>(J) * M * N);
      for (auto& x : e) x = uniform_below(eng, 2) ? 1 : -1;
      const SequenceSet set(J * M, N, e);
      if (cdma::metric_ccc(set, {J, M, N}) != static_cast<double>(oracle::cdma_metric(set, J, M)))
        ++mismatches;
    }
    c.expect(mismatches == 0, "cdma metric equals the direct evaluator");
    c.note << " radar worst rel. error " << fmt(worst) << ", cdma mismatches " << mismatches << "/500";
  });

  criterion(10, "search conservation and the uniform-stub hand trace", [](Check& c) {
    mcts::SearchConfig quiet;
    quiet.q = 5;
    quiet.cp = 1.0;
    quiet.noise = false;
    const auto stub = uniform_stub([](const GameState&) { return 0.0; });
    const auto r = mcts::search(initial_state({1, 4, 1}), stub, quiet, 1.0, 0);
    c.expect(r.counts == std::vector<int>{2, 2}, "counts [2, 2]");
    c.expect(r.pi == std::vector<double>{0.5, 0.5}, "pi (0.5, 0.5)");

    const auto signed_stub = uniform_stub([](const GameState& s) {
      int ones = 0;
      for (Symbol x : s.cells()) ones += x == 1;
      return ones % 3 == 0 ? 1.0 : -1.0;
    });
    for (int q : {2, 17, 100, 400}) {
      mcts::SearchConfig cfg;
      cfg.q = q;
      const auto res = mcts::search(initial_state({2, 4, 2}), signed_stub, cfg, 1.0, 7);
      int sum = 0;
      for (int n : res.counts) sum += n;
      c.expect(sum == q - 1, "root counts sum to q-1 at q=" + std::to_string(q));
    }
    mcts::SearchTree tree(initial_state({2, 3, 2}), signed_stub, false);
    for (int i = 0; i < 300; ++i) tree.simulate(nullptr);
    for (const auto& v : tree.vertices())
      for (const auto& e : v.edges)
        if (e.Q < -1 || e.Q > 1) c.expect(false, "Q in [-1, 1]");
    c.note << " counts [" << r.counts[0] << ", " << r.counts[1] << "], " << tree.vertices().size()
           << " vertices checked";
  });

  criterion(11, "network gradient check and single-batch fit", [](Check& c) {
    Engine eng = make_engine(11);
    net::Network pv = net::Network::init_random(tiny_net(), 7);
    const double e1 = worst_fd_error(pv, random_batch(eng, tiny_net(), 5, false));
    auto qcfg = tiny_net();
    qcfg.head = net::Head::kQValues;
    net::Network qn = net::Network::init_random(qcfg, 8);
    const double e2 = worst_fd_error(qn, random_batch(eng, qcfg, 5, false));
    c.expect(e1 <= 1e-4 && e2 <= 1e-4, "finite-difference error <= 1e-4");

    auto cfg = tiny_net();
    cfg.filters = 8;
    cfg.learning_rate = 0.01;
    cfg.momentum = 0.9;
    const auto batch = random_batch(eng, cfg, 64, true);
    net::Learner learner(net::Network::init_random(cfg, 12));
    const double first = learner.working().loss(batch).total;
    for (int i = 0; i < 200; ++i) learner.step(batch);
    const double last = learner.working().loss(batch).total;
    c.expect(last <= 0.5 * first, "200 steps halve the loss");
    c.note << " fd error " << fmt(std::max(e1, e2)) << ", loss " << fmt(first) << " -> " << fmt(last);
  });

  criterion(12, "clutter Monte-Carlo matches 1/MMF; AlphaSeq gain over Legendre", [](Check& c) {
    std::uint64_t seed = 100;
    for (const char* name : {"legendre59", "alphaseq59", "barker13"}) {
      const auto s = radar::benchmark_code(name);
      const auto est = radar::simulate_mse(s, {1.0, 100000}, seed++);
      const double z = (est.mse - 1.0 / radar::metric_mmf(s)) / est.std_error;
      c.expect(std::abs(z) <= 3, std::string(name) + " within 3 standard errors");
      c.note << " " << name << " z=" << fmt(z) << ";";
    }
    const auto a = radar::simulate_mse(radar::benchmark_code("alphaseq59"), {1.0, 100000}, 200);
    const auto l = radar::simulate_mse(radar::benchmark_code("legendre59"), {1.0, 100000}, 201);
    const double gain = 10 * std::log10(l.mse / a.mse);
    c.expect(gain >= 4.3 && gain <= 5.4, "gain in [4.3, 5.4] dB");
    c.note << " gain " << fmt(gain) << " dB";
  });

  criterion(13, "toy CDMA: evaluation reaches the exhaustive optimum in >= 3 of 5 runs", [](Check& c) {
    const Manifest m = bundled("toy-cdma-2x2x4.json");
    const auto optimum = baselines::exhaustive_search(m.problem.make(), {}).best_metric;
    int hits = 0;
    c.note << " optimum " << fmt(optimum) << "; episodes:";
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      Manifest run = m;
      run.seed = seed;
      run.trainer.stop_at = optimum;
      Trainer t(run.train_setup());
      t.run();
      const long at = episode_reaching(t, optimum);
      hits += at >= 0 && at <= 2000;
      c.note << " " << (at < 0 ? std::string("never") : std::to_string(at));
    }
    c.expect(hits >= 3, "at least 3 of 5 runs reach the optimum within 2000 episodes");
  });

  criterion(14, "toy radar N=13: evaluation reaches 37 in >= 3 of 5 runs", [](Check& c) {
    const Manifest m = bundled("toy-radar-13.json");
    const auto ex = baselines::exhaustive_search(m.problem.make(), {});
    c.expect(std::abs(ex.best_metric - 37) <= 1e-6, "exhaustive optimum is 37");
    int hits = 0;
    c.note << " exhaustive " << fmt(ex.best_metric) << "; episodes:";
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      Manifest run = m;
      run.seed = seed;
      run.trainer.stop_at = 37 - 1e-6;
      Trainer t(run.train_setup());
      t.run();
      const long at = episode_reaching(t, 37 - 1e-6);
      hits += at >= 0 && at <= 3000;
      c.note << " " << (at < 0 ? std::string("never") : std::to_string(at));
    }
    c.expect(hits >= 3, "at least 3 of 5 runs reach 37 within 3000 episodes");
  });

  // One full toy radar run feeds both the ordering and the determinism criteria.
  const Manifest radar_toy = bundled("toy-radar-13.json");
  std::optional<Trainer> full;
  std::string full_log;
  {
    full.emplace(radar_toy.train_setup());
    full->run();
    full_log = runlog_text(*full);
  }

  criterion(15, "toy radar ordering: AlphaSeq >= DQN >= random search at equal visited states",
            [&](Check& c) {
              const Problem p = radar_toy.problem.make();
              double alpha_best = -1;
              for (const auto& row : full->log()) alpha_best = std::max(alpha_best, row.extreme_metric);
              const std::uint64_t budget = full->log().back().visited_states;

              auto qcfg = radar_toy.network_for(p);
              qcfg.head = net::Head::kQValues;
              RewardSchedule sched;
              sched.segments = {*radar_toy.dqn.reward};
              const auto dqn = baselines::dqn_train(p, radar_toy.feature_spec(p), qcfg,
                                                    radar_toy.dqn.dqn,
                                                    [&](double x) { return sched.reward(x); },
                                                    radar_toy.seed);
              double dqn_best = -1;
              std::uint64_t dqn_states = 0;
              for (const auto& row : dqn.log)
                if (row.visited_states <= budget) {
                  dqn_best = row.best_metric;
                  dqn_states = row.visited_states;
                }

              baselines::RandomSearchConfig rc;
              rc.budget = static_cast<long>(budget);
              rc.runs = 20;
              rc.unit = baselines::BudgetUnit::kTrials;  // random search visits terminal states only
              const auto rnd = baselines::random_search(p, rc, radar_toy.seed);
              const double rnd_mean_max = rnd.curve.back().mean_best;
              bool monotone = true;
              for (std::size_t i = 1; i < rnd.curve.size(); ++i)
                monotone = monotone && rnd.curve[i].mean_best >= rnd.curve[i - 1].mean_best;

              baselines::RandomSearchConfig r59;
              r59.budget = 100000;
              r59.runs = 1;
              const auto long_run = baselines::random_search(make_radar_problem(59, 1), r59, 59);

              c.expect(alpha_best >= dqn_best, "AlphaSeq >= DQN");
              c.expect(dqn_best >= rnd_mean_max, "DQN >= random mean-max");
              c.expect(monotone, "random mean-max curve non-decreasing");
              c.expect(long_run.best_metric < 33.45, "N=59 random best below 33.45");
              c.note << " visited-state budget " << budget << "; AlphaSeq " << fmt(alpha_best)
                     << ", DQN " << fmt(dqn_best) << " (" << dqn_states << " states), random mean-max "
                     << fmt(rnd_mean_max) << "; N=59 random best " << fmt(long_run.best_metric);
            });

  criterion(16, "identical manifests give identical run logs", [&](Check& c) {
    Trainer again(radar_toy.train_setup());
    again.run();
    const std::string second = runlog_text(again);
    c.expect(second == full_log, "run logs identical");
    c.note << " " << full->log().size() << " evaluation rows over " << full->episodes_done()
           << " episodes compared";
  });

  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}

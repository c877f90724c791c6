// seqrl: train, evaluate and baseline sequence-discovery runs.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "seqrl/baselines.hpp"
#include "seqrl/cdma.hpp"
#include "seqrl/manifest.hpp"
#include "seqrl/net.hpp"
#include "seqrl/radar.hpp"
#include "seqrl/text_format.hpp"
#include "seqrl/trainer.hpp"

namespace fs = std::filesystem;
using namespace seqrl;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::string out;
  bool resume = false;
};

Manifest manifest_from(const Common& c) {
  if (c.config.empty()) throw UsageError("--config is required");
  Manifest m = load_manifest(c.config);
  if (c.seed) m.seed = *c.seed;
  if (c.workers) m.trainer.workers = *c.workers;
  return m;
}

SequenceSet load_input(const std::string& file) {
  if (!fs::is_regular_file(file)) throw UsageError("cannot open " + file);
  return load_sequence_set(file);
}

fs::path prepare_out(const std::string& out, const std::string& fallback) {
  fs::path dir = out.empty() ? fs::path(fallback) : fs::path(out);
  fs::create_directories(dir);
  return dir;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream f(p);
  if (!f) throw std::runtime_error("cannot write " + p.string());
  f << text;
}

void write_manifest(const fs::path& dir, const Manifest& m) {
  write_text(dir / "manifest.json", to_json(m).dump(2) + "\n");
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

// --- train ------------------------------------------------------------------------

std::string runlog_plot(const std::string& name, bool minimize) {
  std::string s;
  s += "# gnuplot script: metric and visited states per evaluation\n";
  s += "set datafile separator ','\nset datafile commentschars '#'\n";
  s += "set terminal pngcairo size 1000,600\nset output 'runlog.png'\n";
  s += "set title '" + name + "'\nset xlabel 'episode'\nset ylabel 'metric'\n";
  s += "set y2label 'distinct visited states'\nset y2tics\nset key top left\n";
  s += "plot 'runlog.csv' every ::1 using 1:2 with lines title 'E[M]', \\\n";
  s += std::string("     '' every ::1 using 1:3 with lines title '") +
       (minimize ? "min[M]" : "max[M]") + "', \\\n";
  s += "     '' every ::1 using 1:4 axes x1y2 with lines dashtype 2 title 'visited states'\n";
  return s;
}

void write_run_outputs(const fs::path& dir, const Trainer& t) {
  {
    std::ofstream f(dir / "runlog.csv");
    write_runlog(f, t.log(), t.approximate_from());
  }
  if (!t.probes().empty()) {
    std::ofstream f(dir / "convergence.csv");
    f << "# seqrl-convergence v1\nepisode,raw_policy_mean_metric,search_mean_metric\n";
    for (const auto& p : t.probes())
      f << p.episode << ',' << fmt_double(p.mean_raw) << ',' << fmt_double(p.mean_mcts) << '\n';
  }
  if (t.best_set()) {
    std::ofstream f(dir / "best.txt");
    f << "# metric " << fmt_double(*t.best_metric()) << '\n';
    write_sequence_set(f, *t.best_set());
  }
}

int cmd_train(const Common& c) {
  const Manifest m = manifest_from(c);
  const fs::path dir = prepare_out(c.out, "runs/" + m.name);
  const fs::path state = dir / "run.state";
  TrainSetup setup = m.train_setup();
  Trainer trainer(setup);
  if (c.resume) {
    if (!fs::exists(state)) throw UsageError("--resume: no run.state in " + dir.string());
    if (fs::exists(dir / "manifest.json")) {
      std::ifstream in(dir / "manifest.json");
      const Manifest prev = parse_manifest(json::parse(in));
      if (to_json(prev) != to_json(m))
        throw ConfigError("--resume: manifest differs from the one in " + dir.string());
    }
    trainer.load(state.string());
    std::cerr << "resumed at episode " << trainer.episodes_done() << '\n';
  }
  write_manifest(dir, m);
  write_text(dir / "runlog.gp", runlog_plot(m.name, setup.problem.direction == Direction::kMinimize));
  trainer.run([&](const Trainer& t) {
    const auto& row = t.log().back();
    std::cerr << "episode " << row.episode << "  E[M] " << fmt_double(row.mean_metric)
              << "  extreme " << fmt_double(row.extreme_metric) << "  visited "
              << row.visited_states << "  segment " << row.segment_index << "  "
              << fmt_double(row.elapsed_s) << "s\n";
    t.save(state.string());
    net::Network(*t.snapshot()).save((dir / "network.ckpt").string());
    write_run_outputs(dir, t);
  });
  write_run_outputs(dir, trainer);
  if (trainer.best_metric())
    std::cout << "best metric " << fmt_double(*trainer.best_metric()) << " after "
              << trainer.episodes_done() << " episodes\n";
  return 0;
}

// --- eval -------------------------------------------------------------------------

struct EvalArgs {
  std::string file;
  std::string metric;
  int users = 2;
  std::optional<double> Ml, Mu;
};

int cmd_eval(const EvalArgs& a) {
  SequenceSet set = load_input(a.file);
  if (a.metric == "cdma") {
    if (set.rows() % a.users != 0)
      throw UsageError("--users " + std::to_string(a.users) + " does not divide " +
                       std::to_string(set.rows()) + " rows");
    const cdma::CdmaConfig cfg{a.users, set.rows() / a.users, set.cols()};
    const double metric = cdma::metric_ccc(set, cfg);
    const double mu = a.Mu.value_or(cdma::sup_metric_ccc(cfg));
    std::cout << "metric " << fmt_double(metric) << "\n"
              << "sup_metric " << fmt_double(cdma::sup_metric_ccc(cfg)) << "\n"
              << "reward " << fmt_double(cdma::reward_ccc(metric, {mu})) << " (Mu "
              << fmt_double(mu) << ")\n";
    return 0;
  }
  if (a.metric == "radar") {
    if (set.rows() != 1) throw UsageError("radar metric expects a single sequence");
    const auto code = radar::PhaseCode::from_row(set);
    const double mmf = radar::metric_mmf(code);
    const auto b = radar::bounds_mmf(code.size());
    const radar::RadarRewardSpec spec{a.Ml.value_or(0.0), a.Mu.value_or(37.0)};
    std::cout << "N " << code.size() << "\n"
              << "gamma_mmf " << fmt_double(mmf) << "\n"
              << "gamma_mf " << fmt_double(radar::merit_factor_mf(code)) << "\n"
              << "lower_bound " << fmt_double(b.lower) << "\n"
              << "conjectured_upper " << fmt_double(b.conjectured_upper) << "\n"
              << "upper_bound " << fmt_double(b.upper) << "\n"
              << "reward " << fmt_double(radar::reward_radar(mmf, spec)) << " (range ["
              << fmt_double(spec.Ml) << ", " << fmt_double(spec.Mu) << "])\n";
    return 0;
  }
  throw UsageError("--metric must be cdma or radar");
}

// --- baseline -------------------------------------------------------------------

std::string curve_plot(const std::string& csv, const std::string& xlabel, bool logx) {
  std::string s = "# gnuplot script\nset datafile separator ','\nset datafile commentschars '#'\n";
  s += "set terminal pngcairo size 1000,600\nset output '" + csv.substr(0, csv.size() - 4) + ".png'\n";
  if (logx) s += "set logscale x\n";
  s += "set xlabel '" + xlabel + "'\nset ylabel 'metric'\n";
  s += "plot '" + csv + "' every ::1 using 1:2 with linespoints title 'mean best', \\\n";
  s += "     '' every ::1 using 1:3:4 with filledcurves fs transparent solid 0.2 title 'run range'\n";
  return s;
}

int cmd_baseline(const std::string& kind, const Common& c) {
  const Manifest m = manifest_from(c);
  const Problem p = m.problem.make();
  const fs::path dir = prepare_out(c.out, "runs/" + m.name + "-" + kind);
  write_manifest(dir, m);
  const int workers = m.trainer.workers;
  if (kind == "random") {
    baselines::RandomSearchConfig rc;
    rc.budget = m.random.budget;
    rc.runs = m.random.runs;
    rc.unit = m.random.unit == "trials" ? baselines::BudgetUnit::kTrials
                                        : baselines::BudgetUnit::kVisitedStates;
    rc.workers = workers;
    const auto r = baselines::random_search(p, rc, m.seed);
    std::ofstream f(dir / "random.csv");
    f << "# seqrl-meanmax v1\n" << m.random.unit << ",mean_best,min_best,max_best\n";
    for (const auto& pt : r.curve)
      f << pt.n << ',' << fmt_double(pt.mean_best) << ',' << fmt_double(pt.min_best) << ','
        << fmt_double(pt.max_best) << '\n';
    write_text(dir / "random.gp", curve_plot("random.csv", m.random.unit, true));
    std::ofstream b(dir / "best.txt");
    b << "# metric " << fmt_double(r.best_metric) << '\n';
    write_sequence_set(b, r.best_set);
    std::cout << "mean-max at " << r.curve.back().n << ": " << fmt_double(r.curve.back().mean_best)
              << "  best " << fmt_double(r.best_metric) << '\n';
    return 0;
  }
  if (kind == "exhaustive") {
    auto ec = m.exhaustive;
    ec.workers = workers;
    const auto r = baselines::exhaustive_search(p, ec);
    std::ofstream f(dir / "exhaustive.csv");
    f << "# seqrl-exhaustive v1\nrank,metric,sequence\n";
    for (std::size_t i = 0; i < r.top.size(); ++i) {
      std::string seq;
      for (auto e : r.top[i].set.entries()) seq += e > 0 ? '+' : '-';
      f << i + 1 << ',' << fmt_double(r.top[i].metric) << ',' << seq << '\n';
    }
    if (ec.census) {
      std::ofstream cf(dir / "census.csv");
      cf << "# seqrl-census v1\nmetric,count\n";
      for (const auto& [metric, n] : r.census) cf << fmt_double(metric) << ',' << n << '\n';
    }
    std::ofstream b(dir / "best.txt");
    b << "# metric " << fmt_double(r.best_metric) << '\n';
    write_sequence_set(b, r.best);
    std::cout << "optimum " << fmt_double(r.best_metric) << " attained by " << r.optima
              << " sets (" << r.evaluated << " evaluations)\n";
    return 0;
  }
  if (kind == "dqn") {
    net::NetworkConfig nc = m.network_for(p);
    nc.head = net::Head::kQValues;
    Segment seg = m.dqn.reward ? *m.dqn.reward
                               : (m.schedule.segments.empty() ? Segment{} : m.schedule.segments.front());
    RewardSchedule sched;
    sched.direction = p.direction;
    sched.segments = {seg};
    sched.validate();
    const auto r = baselines::dqn_train(p, m.feature_spec(p), nc, m.dqn.dqn,
                                        [&](double x) { return sched.reward(x); }, m.seed);
    std::ofstream f(dir / "dqn.csv");
    f << "# seqrl-dqn v1\nvisited_states,greedy_metric,best_metric,episode\n";
    for (const auto& row : r.log)
      f << row.visited_states << ',' << fmt_double(row.greedy_metric) << ','
        << fmt_double(row.best_metric) << ',' << row.episode << '\n';
    write_text(dir / "dqn.gp", curve_plot("dqn.csv", "distinct visited states", true));
    net::Network(*r.net).save((dir / "qnetwork.ckpt").string());
    std::ofstream b(dir / "best.txt");
    b << "# metric " << fmt_double(r.best_metric) << '\n';
    write_sequence_set(b, r.best_set);
    std::cout << "best greedy metric " << fmt_double(r.best_metric) << " with "
              << r.visited_states << " visited states\n";
    return 0;
  }
  throw UsageError("baseline kind must be random, exhaustive or dqn");
}

// --- radar-sim --------------------------------------------------------------------

struct SimArgs {
  std::vector<std::string> files;
  std::vector<double> sigma2{1.0};
  long trials = 100000;
  std::uint64_t seed = 1;
  std::string out;
};

int cmd_radar_sim(const SimArgs& a) {
  const fs::path dir = prepare_out(a.out, "runs/radar-sim");
  std::vector<std::pair<std::string, radar::PhaseCode>> codes;
  for (const auto& file : a.files) {
    const auto set = load_input(file);
    if (set.rows() != 1) throw UsageError(file + ": expected a single sequence");
    codes.emplace_back(fs::path(file).stem().string(), radar::PhaseCode::from_row(set));
  }
  json manifest{{"command", "radar-sim"},
                {"files", a.files},
                {"sigma2", a.sigma2},
                {"trials", a.trials},
                {"seed", a.seed}};
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
  std::ofstream f(dir / "mse.csv");
  f << "# seqrl-mse v1\ncode,sigma2,mse,std_error,trials,seed,analytic_mse\n";
  for (std::size_t ci = 0; ci < codes.size(); ++ci) {
    const double metric = radar::metric_mmf(codes[ci].second);
    for (std::size_t si = 0; si < a.sigma2.size(); ++si) {
      const std::uint64_t seed = derive_seed(a.seed, Stream::kClutter, ci, si);
      const auto est = radar::simulate_mse(codes[ci].second, {a.sigma2[si], a.trials}, seed);
      f << codes[ci].first << ',' << fmt_double(a.sigma2[si]) << ',' << fmt_double(est.mse) << ','
        << fmt_double(est.std_error) << ',' << est.trials << ',' << seed << ','
        << fmt_double(a.sigma2[si] / metric) << '\n';
    }
  }
  std::string gp = "# gnuplot script\nset datafile separator ','\nset datafile commentschars '#'\n";
  gp += "set terminal pngcairo size 1000,600\nset output 'mse.png'\nset logscale xy\n";
  gp += "set xlabel 'sigma^2'\nset ylabel 'MSE'\nplot ";
  for (std::size_t ci = 0; ci < codes.size(); ++ci) {
    if (ci) gp += ", \\\n     ";
    gp += "'mse.csv' using (strcol(1) eq '" + codes[ci].first +
          "' ? $2 : NaN):3:4 with yerrorlines title '" + codes[ci].first + "'";
  }
  write_text(dir / "mse.gp", gp + "\n");
  if (codes.size() >= 2) {
    const double g = 10 * std::log10(radar::metric_mmf(codes[0].second) /
                                     radar::metric_mmf(codes[1].second));
    std::cout << "analytic gain " << codes[0].first << " over " << codes[1].first << ": "
              << fmt_double(g) << " dB\n";
  }
  std::cout << "wrote " << (dir / "mse.csv").string() << '\n';
  return 0;
}

// --- inspect-checkpoint -----------------------------------------------------------

int cmd_inspect(const std::string& path) {
  const net::Network n = net::Network::load(path);
  const auto& c = n.config();
  std::cout << "format_version " << net::kCheckpointVersion << "\n"
            << "version " << n.version() << "\n"
            << "input " << c.rows << "x" << c.cols << "x3\n"
            << "conv_layers " << c.conv_layers << "\nfilters " << c.filters << "\nkernel "
            << c.kernel << "\n"
            << "head " << (c.head == net::Head::kPolicyValue ? "policy_value" : "q_values") << "\n"
            << "policy_size " << c.policy_size << "\nvalue_hidden " << c.value_hidden << "\n"
            << "l2 " << fmt_double(c.l2) << "\nlearning_rate " << fmt_double(c.learning_rate)
            << "\nmomentum " << fmt_double(c.momentum) << "\nbn_decay " << fmt_double(c.bn_decay)
            << "\nparameters " << n.parameter_count() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"seqrl: reinforcement-learning discovery of binary sequence sets"};
  app.require_subcommand(1);

  Common common;
  auto add_common = [&](CLI::App* sub, bool with_resume) {
    sub->add_option("--config", common.config, "JSON run manifest");
    sub->add_option("--seed", common.seed, "master seed (overrides the manifest)");
    sub->add_option("--workers", common.workers, "worker threads")->check(CLI::PositiveNumber);
    sub->add_option("--out", common.out, "output directory");
    if (with_resume) sub->add_flag("--resume", common.resume, "continue from the run checkpoint");
  };

  auto* train = app.add_subcommand("train", "run the self-play training loop");
  add_common(train, true);

  EvalArgs eval_args;
  auto* eval = app.add_subcommand("eval", "evaluate a sequence file");
  eval->add_option("file", eval_args.file, "sequence file (+1/-1 rows)")->required();
  eval->add_option("--metric", eval_args.metric, "cdma or radar")->required();
  eval->add_option("--users", eval_args.users, "cdma: number of users J")->check(CLI::PositiveNumber);
  eval->add_option("--Ml", eval_args.Ml, "radar: metric mapped to reward -1");
  eval->add_option("--Mu", eval_args.Mu, "metric mapped to reward -1 (cdma) or +1 (radar)");

  std::string baseline_kind;
  auto* baseline = app.add_subcommand("baseline", "run a comparison searcher");
  baseline->add_option("kind", baseline_kind, "random, exhaustive or dqn")->required();
  add_common(baseline, false);

  SimArgs sim;
  auto* radar_sim = app.add_subcommand("radar-sim", "Monte-Carlo clutter MSE of radar codes");
  radar_sim->add_option("files", sim.files, "sequence files")->required();
  radar_sim->add_option("--sigma2", sim.sigma2, "clutter variances")->delimiter(',');
  radar_sim->add_option("--trials", sim.trials, "Monte-Carlo trials")->check(CLI::PositiveNumber);
  radar_sim->add_option("--seed", sim.seed, "seed");
  radar_sim->add_option("--out", sim.out, "output directory");

  std::string ckpt;
  auto* inspect = app.add_subcommand("inspect-checkpoint", "print a network checkpoint's header");
  inspect->add_option("file", ckpt, "checkpoint file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*train) return cmd_train(common);
    if (*eval) return cmd_eval(eval_args);
    if (*baseline) return cmd_baseline(baseline_kind, common);
    if (*radar_sim) return cmd_radar_sim(sim);
    if (*inspect) return cmd_inspect(ckpt);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << '\n';
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid input: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "failure: " << e.what() << '\n';
    return 2;
  }
  return 1;
}

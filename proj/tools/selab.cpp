// selab command-line driver.
#include <cstdio>
#include <iomanip>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "selab/harness.hpp"

using namespace selab;

namespace {

struct Common {
  std::string config;
  std::string seeds;
  int workers = 0;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c, bool with_run_flags) {
  cmd->add_option("--config", c.config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
  if (!with_run_flags) return;
  cmd->add_option("--seeds", c.seeds, "seed range A..B or comma list; overrides the config");
  cmd->add_option("--workers", c.workers, "parallel runs (default: SELAB_WORKERS, then hardware threads)")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--out", c.out, "output directory; overrides the config");
}

ExperimentConfig load(const Common& c) {
  ExperimentConfig cfg = load_config(c.config);
  if (!c.seeds.empty()) cfg.seeds = parse_seed_list(c.seeds);
  if (!c.out.empty()) cfg.output_dir = c.out;
  return cfg;
}

void print_summary(const RunSummary& s) {
  for (const auto& o : s.seeds) {
    std::cout << "seed " << o.seed << (o.ok ? "  ok" : "  FAILED: " + o.error);
    for (const auto& [k, v] : o.finals) std::cout << "  " << k << '=' << v;
    std::cout << '\n';
  }
  for (const auto& [k, v] : s.aggregate)
    std::cout << "aggregate " << k << ": mean " << v.first << "  stderr " << v.second << '\n';
  std::cout << "wall clock " << std::fixed << std::setprecision(2) << s.wall_clock_seconds << " s\n";
}

int cmd_run(const Common& c) {
  const ExperimentConfig cfg = load(c);
  const RunSummary s = run_experiment(cfg, c.workers);
  print_summary(s);
  std::cout << "wrote " << (fs::path(cfg.output_dir) / "summary.json").string() << '\n';
  return s.all_ok() ? 0 : 1;
}

int cmd_sweep(const Common& c, const std::vector<double>& lambdas) {
  const ExperimentConfig cfg = load(c);
  const SweepResult r = run_sweep(cfg, lambdas.empty() ? kDefaultSweepLambdas : lambdas, c.workers);
  for (const auto& [l, s] : r.runs) {
    std::cout << "lambda " << lambda_label(l) << ":";
    for (const auto& [k, v] : s.aggregate) std::cout << "  " << k << '=' << v.first << "±" << v.second;
    std::cout << '\n';
  }
  std::cout << "wrote " << r.rows << " rows to " << (fs::path(cfg.output_dir) / "sweep.csv").string() << '\n';
  return r.all_ok ? 0 : 1;
}

int cmd_exact_pg(const Common& c) {
  ExperimentConfig cfg = load(c);
  if (!cfg.is_exact_pg()) {
    std::cerr << "exact-pg: method.type must be exact_pg\n";
    return 2;
  }
  const Environment env = build(cfg.env);
  const auto vi = value_iteration(env.mdp, 1e-12);
  const double j_star = env.mdp.alpha.dot(vi.values);
  const RunSummary s = run_experiment(cfg, c.workers);
  std::cout << "value-iteration optimum J* = " << std::setprecision(10) << j_star << '\n';
  for (const auto& o : s.seeds) {
    if (!o.ok) {
      std::cout << "seed " << o.seed << "  FAILED: " << o.error << '\n';
      continue;
    }
    int hit = -1;
    for (std::size_t k = 0; k < o.curve.size(); ++k)
      if (o.curve[k] >= j_star - 0.02 * std::abs(j_star)) {
        hit = int(k);
        break;
      }
    std::cout << "seed " << o.seed << "  final J=" << o.finals.at("J") << "  H=" << o.finals.at("H")
              << "  within 2% of J* at iteration " << (hit < 0 ? std::string("never") : std::to_string(hit)) << '\n';
  }
  std::cout << "wrote " << (fs::path(cfg.output_dir) / "summary.json").string() << '\n';
  return s.all_ok() ? 0 : 1;
}

int cmd_eval_dist(const Common& c, const std::string& checkpoint) {
  const ExperimentConfig cfg = load(c);
  const Environment env = build(cfg.env);
  SoftmaxPolicy policy = SoftmaxPolicy::uniform(env.features.n_features, env.mdp.n_actions);
  if (!checkpoint.empty()) {
    std::ifstream in(checkpoint);
    if (!in) throw std::runtime_error("cannot read checkpoint " + checkpoint);
    const json j = json::parse(in);
    policy.theta = matrix_from_json(j.at("theta"));
    if (policy.theta.rows() != env.features.n_features || policy.theta.cols() != env.mdp.n_actions)
      throw std::invalid_argument("checkpoint theta shape does not match the environment");
  }
  const Matrix pi = policy_table(env.mdp, policy, env.features);
  const Vector dbar = exact_discounted(env.mdp, pi).probs;
  std::cout << "state  d_bar         d_1\n";
  Vector d1;
  std::string d1_err;
  try {
    d1 = exact_stationary(env.mdp, pi, true).probs;
  } catch (const std::exception& e) {
    d1_err = e.what();
  }
  for (int s = 0; s < env.mdp.n_states; ++s) {
    std::cout << std::setw(5) << s << "  " << std::fixed << std::setprecision(8) << dbar(s) << "  ";
    if (d1_err.empty()) std::cout << d1(s);
    else std::cout << "n/a";
    std::cout << '\n';
  }
  std::cout << "H(d_bar) = " << entropy(dbar) << " nats\n";
  if (d1_err.empty()) std::cout << "H(d_1)   = " << entropy(d1) << " nats\n";
  else std::cout << "d_1: " << d1_err << '\n';
  std::cout << "J(pi)    = " << policy_return(env.mdp, pi) << '\n';
  return 0;
}

int cmd_validate(const Common& c) {
  const ExperimentConfig cfg = load_config(c.config);
  std::cout << "ok: " << (cfg.is_exact_pg() ? "exact_pg" : "actor_critic") << " on " << to_string(cfg.env.name)
            << ", " << cfg.seeds.size() << " seed(s), config_hash " << config_hash(cfg) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"selab: state-entropy regularized policy optimization on tabular MDPs"};
  app.require_subcommand(1);

  Common run_opts, sweep_opts, pg_opts, dist_opts, val_opts;
  std::vector<double> lambdas;
  std::string checkpoint;

  auto* run = app.add_subcommand("run", "run every seed of a config; writes metrics, artifacts and summary.json");
  add_common(run, run_opts, true);
  auto* sweep = app.add_subcommand("sweep", "run a config over several lambda values (0 always included)");
  add_common(sweep, sweep_opts, true);
  sweep->add_option("--lambdas", lambdas, "lambda values (default 0.001 0.01 0.1 1.0)")->delimiter(',');
  auto* pg = app.add_subcommand("exact-pg", "exact policy gradient run with the value-iteration optimum for reference");
  add_common(pg, pg_opts, true);
  auto* dist = app.add_subcommand("eval-dist", "print exact state distributions and entropies for a policy");
  add_common(dist, dist_opts, false);
  dist->add_option("--checkpoint", checkpoint, "checkpoint JSON with a theta table (default: uniform policy)");
  auto* val = app.add_subcommand("validate", "check a config's schema and learning-rate schedules");
  add_common(val, val_opts, false);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return cmd_run(run_opts);
    if (*sweep) return cmd_sweep(sweep_opts, lambdas);
    if (*pg) return cmd_exact_pg(pg_opts);
    if (*dist) return cmd_eval_dist(dist_opts, checkpoint);
    if (*val) return cmd_validate(val_opts);
  } catch (const ConfigError& e) {
    std::cerr << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

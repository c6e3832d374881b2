// Command-line front end: train, eval, verify, bias, diagnose, bench.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <json.hpp>

#include "alm/error.hpp"
#include "alm/harness.hpp"

namespace {

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "Config file (key = value lines)");
  cmd->add_option("--set", c.sets, "Override a config key: key=value")->take_all();
  cmd->add_option("--seed", c.seed, "Random seed")->each([&c](const std::string&) { c.seed_given = true; });
  cmd->add_option("--out", c.out, "Output path");
}

alm::RunConfig resolve(const Common& c) {
  alm::RunConfig cfg = alm::desk_run({});
  if (!c.config.empty()) cfg = alm::load_run_config(c.config, cfg);
  for (const auto& s : c.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw alm::ConfigError(s, "--set expects key=value");
    alm::apply_setting(cfg, s.substr(0, eq), s.substr(eq + 1));
  }
  if (c.seed_given) cfg.seed = c.seed;
  if (!c.out.empty()) cfg.out = c.out;
  return cfg;
}

nlohmann::json eval_json(const alm::EvalResult& r) {
  return {{"mean", r.mean}, {"std", r.std}, {"returns", r.returns}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Aligned latent model training and verification"};
  app.require_subcommand(1);

  Common train_opts, eval_opts, verify_opts, bias_opts, diag_opts, bench_opts;

  auto* train = app.add_subcommand("train", "Run the training loop");
  add_common(train, train_opts);

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint with the deterministic policy");
  add_common(eval, eval_opts);
  std::string eval_ckpt;
  int eval_episodes = 10;
  bool eval_random = false;
  eval->add_option("--checkpoint", eval_ckpt, "Checkpoint file");
  eval->add_option("--episodes", eval_episodes, "Episodes")->check(CLI::PositiveNumber);
  eval->add_flag("--random", eval_random, "Evaluate uniform random actions instead");

  auto* verify = app.add_subcommand("verify", "Exact oracle sweeps over random tabular instances");
  add_common(verify, verify_opts);
  int instances = 100, k_max = 4;
  verify->add_option("--instances", instances, "Number of random instances")->check(CLI::PositiveNumber);
  verify->add_option("--k-max", k_max, "Largest rollout length")->check(CLI::Range(1, 6));

  auto* bias = app.add_subcommand("bias", "Normalised Q bias of checkpoints");
  add_common(bias, bias_opts);
  std::vector<std::string> bias_ckpts;
  alm::BiasConfig bias_cfg;
  bias->add_option("--checkpoint", bias_ckpts, "Checkpoint file(s)")->required();
  bias->add_option("--n-states", bias_cfg.n_states, "Sampled states");
  bias->add_option("--mc-episodes", bias_cfg.mc_episodes, "Monte-Carlo rollouts per state");

  auto* diag = app.add_subcommand("diagnose", "Latent divergence of open-loop model rollouts");
  add_common(diag, diag_opts);
  std::string diag_ckpt;
  int diag_horizon = 20, diag_episodes = 10;
  diag->add_option("--checkpoint", diag_ckpt, "Checkpoint file")->required();
  diag->add_option("--horizon", diag_horizon, "Unroll length")->check(CLI::PositiveNumber);
  diag->add_option("--episodes", diag_episodes, "Trajectories averaged")->check(CLI::PositiveNumber);

  auto* bench = app.add_subcommand("bench", "Update throughput");
  add_common(bench, bench_opts);
  int bench_updates = 50;
  bench->add_option("--updates", bench_updates, "Timed updates")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (*train) {
      const alm::RunConfig cfg = resolve(train_opts);
      cfg.validate();
      const auto result = alm::train(cfg);
      const auto& last = result.rows.back();
      std::cout << nlohmann::json{{"out", cfg.out},
                                  {"checkpoint", result.checkpoint.string()},
                                  {"updates", result.updates},
                                  {"seconds", result.seconds},
                                  {"final_eval_mean", last.eval_mean},
                                  {"final_eval_std", last.eval_std}}
                       .dump()
                << '\n';
    } else if (*eval) {
      const alm::RunConfig cfg = resolve(eval_opts);
      if (eval_random) {
        std::cout << eval_json(alm::random_baseline(cfg.env, eval_episodes, cfg.seed)).dump() << '\n';
      } else {
        if (eval_ckpt.empty()) throw alm::ConfigError("--checkpoint", "required unless --random");
        const auto agent = alm::load_agent(eval_ckpt);
        std::cout << eval_json(alm::evaluate(*agent, cfg.env, eval_episodes, cfg.seed)).dump() << '\n';
      }
    } else if (*verify) {
      int failures = 0;
      if (verify_opts.out.empty()) {
        failures = alm::run_verify(instances, k_max, verify_opts.seed, std::cout);
      } else {
        std::ofstream out(verify_opts.out);
        if (!out) throw std::runtime_error("cannot open " + verify_opts.out);
        failures = alm::run_verify(instances, k_max, verify_opts.seed, out);
      }
      std::cerr << "verify: " << failures << " failure(s)\n";
      return failures == 0 ? 0 : 3;
    } else if (*bias) {
      const alm::RunConfig cfg = resolve(bias_opts);
      bias_cfg.seed = cfg.seed;
      for (const auto& path : bias_ckpts) {
        std::int64_t step = 0;
        const auto agent = alm::load_agent(path, &step);
        const auto r = alm::bias_analysis(*agent, cfg.env, bias_cfg);
        std::cout << nlohmann::json{{"checkpoint", path}, {"env_step", step}, {"mean", r.mean},
                                    {"std", r.std},       {"samples", r.samples}, {"mc_mean", r.mc_mean}}
                         .dump()
                  << '\n';
      }
    } else if (*diag) {
      const alm::RunConfig cfg = resolve(diag_opts);
      const auto agent = alm::load_agent(diag_ckpt);
      const auto trace = alm::latent_divergence(*agent, cfg.env, diag_horizon, diag_episodes, cfg.seed);
      for (std::size_t t = 0; t < trace.size(); ++t) {
        std::cout << nlohmann::json{{"step", t}, {"divergence", trace[t]}}.dump() << '\n';
      }
    } else if (*bench) {
      const alm::RunConfig cfg = resolve(bench_opts);
      const auto r = alm::bench(cfg, bench_updates);
      std::cout << nlohmann::json{{"env_steps_per_sec", r.env_steps_per_sec}, {"ms_per_update", r.ms_per_update}}
                       .dump()
                << '\n';
    }
  } catch (const alm::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

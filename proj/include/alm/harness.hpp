#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "alm/agent.hpp"
#include "alm/experience.hpp"

namespace alm {

/// Malformed configuration; key() is the offending key path.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string key, const std::string& what)
      : std::runtime_error(key + ": " + what), key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

struct EnvConfig {
  std::string name = "pendulum";  // pendulum | pointmass | tabular
  double noise_std = 0.0;         // pointmass velocity noise
  std::string tabular_spec;       // JSON file; empty uses a random instance
  std::uint64_t tabular_seed = 0;
  int horizon = 200;              // tabular only
};

struct RunConfig {
  EnvConfig env;
  AgentConfig agent;
  std::int64_t total_env_steps = 100000;
  std::int64_t warmup_steps = 5000;
  std::int64_t eval_every = 5000;
  int eval_episodes = 10;
  std::int64_t buffer_capacity = 1000000;
  std::int64_t update_every = 1;      // env steps between update bursts
  std::int64_t checkpoint_every = 0;  // 0: final checkpoint only
  std::uint64_t seed = 0;
  std::string out = "runs/default";

  /// Throws ConfigError naming the offending key.
  void validate() const;
};

/// Desk-scale run: desk agent profile plus matching run settings.
RunConfig desk_run(const EnvConfig& env);

/// Applies one "key.path = value" setting. Run keys have no prefix; agent and
/// env keys are prefixed "agent." and "env.".
void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value);
/// Parses config text; `source` names the origin in error messages.
RunConfig parse_run_config(std::istream& in, RunConfig base = {}, const std::string& source = "<config>");
RunConfig load_run_config(const std::filesystem::path& path, RunConfig base = {});
std::string format_run_config(const RunConfig& cfg);

/// Independent stream `stream` derived from `seed`.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

oracle::TabularMDP load_tabular_spec(const std::filesystem::path& path);
std::unique_ptr<Env> make_env(const EnvConfig& cfg, std::uint64_t seed);

/// Reward seen by the learner: a*log(1 + r/a) when a > 0, r otherwise.
double shape_reward(double r, double log_reward_shift);

/// Tanh policy mean at the online encoder mean; equals act(obs, _, false).
std::vector<double> greedy_action(const Agent& agent, std::span<const double> obs);

struct EvalResult {
  double mean = 0.0;
  double std = 0.0;
  std::vector<double> returns;
};

/// Deterministic policy, episode i on env seed derive_seed(seed, i).
EvalResult evaluate(const Agent& agent, const EnvConfig& env, int episodes, std::uint64_t seed);
/// Uniform random actions under the same seeding.
EvalResult random_baseline(const EnvConfig& env, int episodes, std::uint64_t seed);

struct MetricsRow {
  std::int64_t env_step = 0;
  std::int64_t episodes = 0;
  std::int64_t updates = 0;
  double train_return = 0.0;  // most recent finished episode
  double eval_mean = 0.0;
  double eval_std = 0.0;
  // Means over the updates since the previous row (0 when there were none).
  UpdateStats stats;
};

/// Column names of the metrics CSV, in order.
const std::vector<std::string>& metrics_columns();
void write_metrics_header(std::ostream& out);
void write_metrics_row(std::ostream& out, const MetricsRow& row);

struct TrainResult {
  std::vector<MetricsRow> rows;
  std::int64_t updates = 0;
  double seconds = 0.0;
  std::filesystem::path checkpoint;
};

/// Optional in-process observers.
struct TrainHooks {
  std::function<void(std::int64_t env_step, std::int64_t updates)> after_step;
  std::function<void(const MetricsRow&)> on_row;
};

/// Runs the training loop and writes config.cfg, metrics.csv, timing.csv and
/// checkpoint.bin under cfg.out. Returns the final agent through `agent_out`
/// when given.
TrainResult train(const RunConfig& cfg, const TrainHooks& hooks = {},
                  std::unique_ptr<Agent>* agent_out = nullptr);

std::unique_ptr<Agent> load_agent(const std::filesystem::path& checkpoint, std::int64_t* env_step = nullptr);

struct BiasConfig {
  int n_states = 128;
  int mc_episodes = 5;
  std::uint64_t seed = 0;
};

struct BiasReport {
  double mean = 0.0;  // mean normalised bias
  double std = 0.0;
  int samples = 0;
  double mc_mean = 0.0;  // mean Monte-Carlo Q, the normaliser's sign-carrying value
  std::vector<double> estimates;
  std::vector<double> mc_returns;
};

using PolicyFn = std::function<std::vector<double>(std::span<const double> obs, Rng& rng)>;
using ValueFn = std::function<double(std::span<const double> obs, std::span<const double> action)>;

/// States come from fresh policy episodes (one state per episode at a uniform
/// step). Q^pi(s, a) is the mean gamma-discounted return of mc_episodes
/// rollouts of env_horizon steps from a cloned environment.
BiasReport bias_analysis(const Env& prototype, const PolicyFn& policy, const ValueFn& estimate,
                         double gamma, const BiasConfig& cfg);
/// Agent version: the estimate is the lambda-weighted imagined return with the
/// given first action and no exploration noise.
BiasReport bias_analysis(const Agent& agent, const EnvConfig& env, const BiasConfig& cfg);

/// Tabular check of the pipeline: the estimate is the exact Q of the
/// instance's state policy (undiscounted scale), actions are sampled from it.
BiasReport tabular_oracle_bias(const oracle::Instance& instance, int horizon, const BiasConfig& cfg);

/// Mean over `episodes` of ||m-unrolled latent mean - encoder mean|| at each
/// step 0..horizon along real trajectories of the deterministic policy.
std::vector<double> latent_divergence(const Agent& agent, const EnvConfig& env, int horizon,
                                      int episodes, std::uint64_t seed);

struct BenchResult {
  double env_steps_per_sec = 0.0;
  double ms_per_update = 0.0;
};
BenchResult bench(const RunConfig& cfg, int updates);

/// Oracle sweep; one JSON line per check. Returns the number of failures.
int run_verify(int instances, int k_max, std::uint64_t seed, std::ostream& out);

/// Classifier of the agent's architecture trained to tell N(mu_p, sd_p)
/// (label 1) from N(mu_q, sd_q) (label 0) in one dimension.
struct DensityRatioResult {
  double mae = 0.0;  // mean |learned - analytic log-ratio| over the grid
  std::vector<double> grid, learned, analytic;
};
DensityRatioResult density_ratio_experiment(double mu_p, double sd_p, double mu_q, double sd_q,
                                            int steps, std::uint64_t seed);

}  // namespace alm

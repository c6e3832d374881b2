#include "alm/harness.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <algorithm>
#include <iomanip>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "alm/diffmath/ops.hpp"
#include "alm/error.hpp"

namespace alm {
namespace {

constexpr std::uint64_t kEnvStream = 1;
constexpr std::uint64_t kEvalStream = 2;
constexpr std::uint64_t kWarmupStream = 3;
constexpr std::uint64_t kReplayStream = 4;

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    T out{};
    if constexpr (std::is_floating_point_v<T>) {
      out = static_cast<T>(std::stod(v, &used));
    } else if constexpr (std::is_unsigned_v<T>) {
      if (!v.empty() && v[0] == '-') throw std::invalid_argument("negative");
      out = static_cast<T>(std::stoull(v, &used));
    } else {
      out = static_cast<T>(std::stoll(v, &used));
    }
    if (used != v.size()) throw std::invalid_argument("trailing characters");
    return out;
  } catch (const std::exception&) {
    throw ConfigError(key, "cannot parse '" + v + "' as a number");
  }
}

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// Sample standard deviation; 0 for fewer than two values.
double std_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

Tensor row(std::span<const double> v) {
  return Tensor::matrix(1, v.size(), std::vector<double>(v.begin(), v.end()));
}

void check_env_matches(const Agent& agent, const Env& env) {
  const auto& spec = env.spec();
  if (spec.obs_dim != agent.config().obs_dim || spec.act_dim != agent.config().act_dim) {
    throw ContractError("environment " + spec.name + " has obs/act dims " + std::to_string(spec.obs_dim) + "/" +
                        std::to_string(spec.act_dim) + ", agent expects " +
                        std::to_string(agent.config().obs_dim) + "/" + std::to_string(agent.config().act_dim));
  }
}

std::vector<double> random_action(const EnvSpec& spec, Rng& rng) {
  std::uniform_real_distribution<double> u(spec.action_low, spec.action_high);
  std::vector<double> a(static_cast<std::size_t>(spec.act_dim));
  for (auto& x : a) x = u(rng);
  return a;
}

void write_file_atomically(const std::filesystem::path& path,
                           const std::function<void(std::ostream&)>& body) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp + " for writing");
    body(out);
    out.flush();
    if (!out) throw std::runtime_error("write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

void save_checkpoint(const Agent& agent, const std::filesystem::path& path, std::int64_t env_step) {
  write_file_atomically(path, [&](std::ostream& out) { agent.save(out, env_step); });
}

}  // namespace

// ---------------------------------------------------------------- config

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 over the pair
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

void RunConfig::validate() const {
  try {
    // Zero dims are filled in from the environment at run time.
    AgentConfig a = agent;
    if (a.obs_dim == 0) a.obs_dim = 1;
    if (a.act_dim == 0) a.act_dim = 1;
    a.validate();
  } catch (const ContractError& e) {
    throw ConfigError("agent", e.what());
  }
  if (env.name != "pendulum" && env.name != "pointmass" && env.name != "tabular") {
    throw ConfigError("env.name", "unknown environment '" + env.name + "'");
  }
  if (env.noise_std < 0.0) throw ConfigError("env.noise_std", "must be >= 0");
  if (env.horizon < 1) throw ConfigError("env.horizon", "must be >= 1");
  if (total_env_steps < 1) throw ConfigError("total_env_steps", "must be >= 1");
  if (warmup_steps < 0 || warmup_steps > total_env_steps) {
    throw ConfigError("warmup_steps", "must lie in [0, total_env_steps]");
  }
  if (warmup_steps < total_env_steps && warmup_steps < agent.horizon) {
    throw ConfigError("warmup_steps", "must be >= agent.K so the first update has a full window");
  }
  if (eval_every < 1) throw ConfigError("eval_every", "must be >= 1");
  if (eval_episodes < 1) throw ConfigError("eval_episodes", "must be >= 1");
  if (buffer_capacity <= agent.horizon) throw ConfigError("buffer_capacity", "must exceed agent.K");
  if (update_every < 1) throw ConfigError("update_every", "must be >= 1");
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every", "must be >= 0");
  if (out.empty()) throw ConfigError("out", "must not be empty");
}

RunConfig desk_run(const EnvConfig& env) {
  RunConfig cfg;
  cfg.env = env;
  cfg.agent = desk_profile(0, 0);
  cfg.total_env_steps = 30000;
  cfg.warmup_steps = 5000;
  cfg.eval_every = 5000;
  cfg.eval_episodes = 10;
  cfg.buffer_capacity = 50000;
  cfg.update_every = 2;
  return cfg;
}

void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value) {
  if (key.rfind("agent.", 0) == 0) {
    const std::string sub = key.substr(6);
    if (sub == "profile") {
      if (value == "desk") {
        cfg.agent = desk_profile(cfg.agent.obs_dim, cfg.agent.act_dim);
      } else if (value == "full") {
        const AgentConfig fresh;
        const int obs = cfg.agent.obs_dim, act = cfg.agent.act_dim;
        cfg.agent = fresh;
        cfg.agent.obs_dim = obs;
        cfg.agent.act_dim = act;
      } else {
        throw ConfigError(key, "expected desk or full, got '" + value + "'");
      }
      return;
    }
    try {
      set_key_value(cfg.agent, sub, value);
    } catch (const ContractError& e) {
      throw ConfigError(key, "unknown key");
    } catch (const std::exception& e) {
      throw ConfigError(key, e.what());
    }
    return;
  }
  if (key == "env.name") {
    cfg.env.name = value;
  } else if (key == "env.noise_std") {
    cfg.env.noise_std = parse_number<double>(key, value);
  } else if (key == "env.tabular_spec") {
    cfg.env.tabular_spec = value;
  } else if (key == "env.tabular_seed") {
    cfg.env.tabular_seed = parse_number<std::uint64_t>(key, value);
  } else if (key == "env.horizon") {
    cfg.env.horizon = parse_number<int>(key, value);
  } else if (key == "total_env_steps") {
    cfg.total_env_steps = parse_number<std::int64_t>(key, value);
  } else if (key == "warmup_steps") {
    cfg.warmup_steps = parse_number<std::int64_t>(key, value);
  } else if (key == "eval_every") {
    cfg.eval_every = parse_number<std::int64_t>(key, value);
  } else if (key == "eval_episodes") {
    cfg.eval_episodes = parse_number<int>(key, value);
  } else if (key == "buffer_capacity") {
    cfg.buffer_capacity = parse_number<std::int64_t>(key, value);
  } else if (key == "update_every") {
    cfg.update_every = parse_number<std::int64_t>(key, value);
  } else if (key == "checkpoint_every") {
    cfg.checkpoint_every = parse_number<std::int64_t>(key, value);
  } else if (key == "seed") {
    cfg.seed = parse_number<std::uint64_t>(key, value);
  } else if (key == "out") {
    cfg.out = value;
  } else {
    throw ConfigError(key, "unknown key");
  }
}

RunConfig parse_run_config(std::istream& in, RunConfig base, const std::string& source) {
  int line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(source + ":" + std::to_string(line_no), "expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(source + ":" + std::to_string(line_no), "empty key");
    apply_setting(base, key, trim(line.substr(eq + 1)));
  }
  return base;
}

RunConfig load_run_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string(), "cannot open config file");
  return parse_run_config(in, std::move(base), path.string());
}

std::string format_run_config(const RunConfig& cfg) {
  std::ostringstream os;
  os << "env.name = " << cfg.env.name << '\n'
     << "env.noise_std = " << format_double(cfg.env.noise_std) << '\n';
  if (!cfg.env.tabular_spec.empty()) os << "env.tabular_spec = " << cfg.env.tabular_spec << '\n';
  os << "env.tabular_seed = " << cfg.env.tabular_seed << '\n'
     << "env.horizon = " << cfg.env.horizon << '\n';
  for (const auto& [k, v] : to_key_values(cfg.agent)) os << "agent." << k << " = " << v << '\n';
  os << "total_env_steps = " << cfg.total_env_steps << '\n'
     << "warmup_steps = " << cfg.warmup_steps << '\n'
     << "eval_every = " << cfg.eval_every << '\n'
     << "eval_episodes = " << cfg.eval_episodes << '\n'
     << "buffer_capacity = " << cfg.buffer_capacity << '\n'
     << "update_every = " << cfg.update_every << '\n'
     << "checkpoint_every = " << cfg.checkpoint_every << '\n'
     << "seed = " << cfg.seed << '\n'
     << "out = " << cfg.out << '\n';
  return os.str();
}

// ---------------------------------------------------------------- envs

oracle::TabularMDP load_tabular_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("env.tabular_spec", "cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
    oracle::TabularMDP mdp;
    mdp.num_states = j.at("num_states").get<int>();
    mdp.num_actions = j.at("num_actions").get<int>();
    mdp.gamma = j.at("gamma").get<double>();
    mdp.p0 = j.at("p0").get<std::vector<double>>();
    mdp.transition = j.at("transition").get<std::vector<double>>();
    mdp.reward = j.at("reward").get<std::vector<double>>();
    mdp.validate();
    return mdp;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("env.tabular_spec", e.what());
  } catch (const std::exception& e) {
    throw ConfigError("env.tabular_spec", e.what());
  }
}

std::unique_ptr<Env> make_env(const EnvConfig& cfg, std::uint64_t seed) {
  if (cfg.name == "pendulum") return std::make_unique<Pendulum>(seed);
  if (cfg.name == "pointmass") return std::make_unique<PointMass>(seed, cfg.noise_std);
  if (cfg.name == "tabular") {
    oracle::TabularMDP mdp = cfg.tabular_spec.empty() ? oracle::random_instance(cfg.tabular_seed).mdp
                                                      : load_tabular_spec(cfg.tabular_spec);
    return std::make_unique<TabularEnv>(std::move(mdp), seed, cfg.horizon);
  }
  throw ConfigError("env.name", "unknown environment '" + cfg.name + "'");
}

double shape_reward(double r, double log_reward_shift) {
  if (log_reward_shift <= 0.0) return r;
  if (r + log_reward_shift <= 0.0) {
    throw DomainError("reward " + format_double(r) + " is not above -log_reward_shift " +
                      format_double(log_reward_shift));
  }
  return log_reward_shift * std::log1p(r / log_reward_shift);
}

// ---------------------------------------------------------------- evaluation

std::vector<double> greedy_action(const Agent& agent, std::span<const double> obs) {
  if (obs.size() != static_cast<std::size_t>(agent.config().obs_dim)) {
    throw ContractError("greedy_action: observation has " + std::to_string(obs.size()) + " entries, expected " +
                        std::to_string(agent.config().obs_dim));
  }
  const Binding b = agent.bind(nullptr, {});
  const Tensor a = agent.policy_mean(b, agent.encode_dist(b, row(obs), false).mean);
  return {a.values().begin(), a.values().end()};
}

namespace {

EvalResult run_episodes(const EnvConfig& env_cfg, int episodes, std::uint64_t seed,
                        const std::function<void(const Env&)>& check,
                        const std::function<std::vector<double>(std::span<const double>, Rng&)>& policy) {
  if (episodes < 1) throw ContractError("evaluation needs at least one episode");
  EvalResult out;
  auto env = make_env(env_cfg, seed);
  check(*env);
  Rng rng(derive_seed(seed, 0xac7));
  for (int ep = 0; ep < episodes; ++ep) {
    env->reseed(derive_seed(seed, static_cast<std::uint64_t>(ep)));
    std::vector<double> obs = env->reset();
    double ret = 0.0;
    for (;;) {
      const StepResult r = env->step(policy(obs, rng));
      ret += r.reward;
      obs = r.obs;
      if (r.terminal || r.timeout) break;
    }
    out.returns.push_back(ret);
  }
  out.mean = mean_of(out.returns);
  out.std = std_of(out.returns);
  return out;
}

}  // namespace

EvalResult evaluate(const Agent& agent, const EnvConfig& env, int episodes, std::uint64_t seed) {
  return run_episodes(
      env, episodes, seed, [&](const Env& e) { check_env_matches(agent, e); },
      [&](std::span<const double> obs, Rng&) { return greedy_action(agent, obs); });
}

EvalResult random_baseline(const EnvConfig& env, int episodes, std::uint64_t seed) {
  EnvSpec spec;
  return run_episodes(
      env, episodes, seed, [&](const Env& e) { spec = e.spec(); },
      [&](std::span<const double>, Rng& rng) { return random_action(spec, rng); });
}

// ---------------------------------------------------------------- metrics

const std::vector<std::string>& metrics_columns() {
  static const std::vector<std::string> cols = {
      "env_step",          "episodes",        "updates",          "train_return",
      "eval_mean",         "eval_std",        "encoder_model_loss", "policy_loss",
      "classifier_loss",   "q_loss",          "reward_loss",      "kl",
      "intrinsic_mean",    "classifier_accuracy", "grad_norm_encoder", "grad_norm_model",
      "grad_norm_policy",  "grad_norm_reward", "grad_norm_critic", "grad_norm_classifier"};
  return cols;
}

void write_metrics_header(std::ostream& out) {
  const auto& cols = metrics_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
  out << '\n';
}

void write_metrics_row(std::ostream& out, const MetricsRow& r) {
  const auto& s = r.stats;
  out << r.env_step << ',' << r.episodes << ',' << r.updates;
  for (double v : {r.train_return, r.eval_mean, r.eval_std, s.encoder_model_loss, s.policy_loss,
                   s.classifier_loss, s.q_loss, s.reward_loss, s.kl, s.intrinsic_mean, s.classifier_accuracy}) {
    out << ',' << format_double(v);
  }
  for (double v : s.grad_norms) out << ',' << format_double(v);
  out << '\n';
}

// ---------------------------------------------------------------- training

namespace {

struct StatsAccumulator {
  UpdateStats sum;
  std::int64_t count = 0;

  void add(const UpdateStats& s) {
    sum.encoder_model_loss += s.encoder_model_loss;
    sum.policy_loss += s.policy_loss;
    sum.classifier_loss += s.classifier_loss;
    sum.q_loss += s.q_loss;
    sum.reward_loss += s.reward_loss;
    sum.kl += s.kl;
    sum.intrinsic_mean += s.intrinsic_mean;
    sum.classifier_accuracy += s.classifier_accuracy;
    for (std::size_t i = 0; i < kNumNets; ++i) sum.grad_norms[i] += s.grad_norms[i];
    ++count;
  }

  UpdateStats take() {
    UpdateStats m = sum;
    if (count > 0) {
      const double n = static_cast<double>(count);
      m.encoder_model_loss /= n;
      m.policy_loss /= n;
      m.classifier_loss /= n;
      m.q_loss /= n;
      m.reward_loss /= n;
      m.kl /= n;
      m.intrinsic_mean /= n;
      m.classifier_accuracy /= n;
      for (auto& g : m.grad_norms) g /= n;
    }
    *this = {};
    return m;
  }
};

}  // namespace

TrainResult train(const RunConfig& cfg_in, const TrainHooks& hooks, std::unique_ptr<Agent>* agent_out) {
  RunConfig cfg = cfg_in;
  auto env = make_env(cfg.env, derive_seed(cfg.seed, kEnvStream));
  cfg.agent.obs_dim = env->spec().obs_dim;
  cfg.agent.act_dim = env->spec().act_dim;
  cfg.validate();

  const std::filesystem::path out_dir(cfg.out);
  std::filesystem::create_directories(out_dir);
  write_file_atomically(out_dir / "config.cfg", [&](std::ostream& o) { o << format_run_config(cfg); });
  std::ofstream metrics(out_dir / "metrics.csv", std::ios::trunc);
  std::ofstream timing(out_dir / "timing.csv", std::ios::trunc);
  if (!metrics || !timing) throw std::runtime_error("cannot open metrics files in " + out_dir.string());
  write_metrics_header(metrics);
  timing << "env_step,seconds\n";

  auto agent = std::make_unique<Agent>(cfg.agent, cfg.seed);
  ReplayBuffer buffer(static_cast<std::size_t>(cfg.buffer_capacity), cfg.agent.obs_dim, cfg.agent.act_dim);
  Rng warmup_rng(derive_seed(cfg.seed, kWarmupStream));
  Rng replay_rng(derive_seed(cfg.seed, kReplayStream));
  const auto start = std::chrono::steady_clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(); };

  TrainResult result;
  StatsAccumulator acc;
  std::vector<double> obs = env->reset();
  std::int64_t episode = 0;
  int episode_step = 0;
  double episode_return = 0.0;
  double last_return = std::numeric_limits<double>::quiet_NaN();

  try {
    for (std::int64_t t = 0; t < cfg.total_env_steps; ++t) {
      const std::vector<double> action =
          t < cfg.warmup_steps ? random_action(env->spec(), warmup_rng) : agent->act(obs, t, true);
      const StepResult step = env->step(action);
      Transition tr{obs, action, shape_reward(step.reward, cfg.agent.log_reward_shift), step.obs, step.terminal,
                    step.timeout && !step.terminal};
      buffer.push(tr, episode, episode_step);
      episode_return += step.reward;
      ++episode_step;
      obs = step.obs;
      if (step.terminal || step.timeout) {
        last_return = episode_return;
        episode_return = 0.0;
        episode_step = 0;
        ++episode;
        obs = env->reset();
      }

      if (t >= cfg.warmup_steps && (t - cfg.warmup_steps) % cfg.update_every == 0) {
        for (int u = 0; u < cfg.agent.utd; ++u) {
          const SequenceBatch batch =
              buffer.sample_sequences(static_cast<std::size_t>(cfg.agent.batch), cfg.agent.horizon, replay_rng);
          acc.add(agent->update(batch, t));
        }
      }
      if (hooks.after_step) hooks.after_step(t + 1, agent->updates());

      const std::int64_t done = t + 1;
      if (cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && done != cfg.total_env_steps) {
        save_checkpoint(*agent, out_dir / ("checkpoint_" + std::to_string(done) + ".bin"), done);
      }
      if (done % cfg.eval_every == 0 || done == cfg.total_env_steps) {
        const EvalResult ev = evaluate(*agent, cfg.env, cfg.eval_episodes, derive_seed(cfg.seed, kEvalStream));
        MetricsRow r;
        r.env_step = done;
        r.episodes = episode;
        r.updates = agent->updates();
        r.train_return = last_return;
        r.eval_mean = ev.mean;
        r.eval_std = ev.std;
        r.stats = acc.take();
        write_metrics_row(metrics, r);
        metrics.flush();
        timing << done << ',' << format_double(elapsed()) << '\n';
        timing.flush();
        if (!metrics || !timing) throw std::runtime_error("metrics write failed in " + out_dir.string());
        if (hooks.on_row) hooks.on_row(r);
        result.rows.push_back(r);
      }
    }
  } catch (const NumericError&) {
    save_checkpoint(*agent, out_dir / "diagnostic.bin", agent->updates());
    throw;
  }

  result.checkpoint = out_dir / "checkpoint.bin";
  save_checkpoint(*agent, result.checkpoint, cfg.total_env_steps);
  result.updates = agent->updates();
  result.seconds = elapsed();
  if (agent_out != nullptr) *agent_out = std::move(agent);
  return result;
}

std::unique_ptr<Agent> load_agent(const std::filesystem::path& checkpoint, std::int64_t* env_step) {
  std::ifstream in(checkpoint, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + checkpoint.string());
  AgentConfig tiny;
  tiny.obs_dim = tiny.act_dim = tiny.latent_dim = tiny.hidden = tiny.model_hidden = 1;
  auto agent = std::make_unique<Agent>(tiny, 0);
  const std::int64_t step = agent->load(in);
  if (env_step != nullptr) *env_step = step;
  return agent;
}

// ---------------------------------------------------------------- analysis

BiasReport bias_analysis(const Env& prototype, const PolicyFn& policy, const ValueFn& estimate, double gamma,
                         const BiasConfig& cfg) {
  if (cfg.mc_episodes < 2) throw ContractError("bias_analysis: mc_episodes must be >= 2");
  if (cfg.n_states < 30) throw ContractError("bias_analysis: n_states must be >= 30");
  if (!(gamma > 0.0 && gamma < 1.0)) throw ContractError("bias_analysis: gamma must lie in (0,1)");
  const int horizon = prototype.spec().horizon;
  Rng rng(derive_seed(cfg.seed, 0xb1a5));
  std::uniform_int_distribution<int> pick(0, horizon - 1);
  BiasReport report;
  for (int i = 0; i < cfg.n_states; ++i) {
    auto env = prototype.clone();
    env->reseed(derive_seed(cfg.seed, static_cast<std::uint64_t>(i)));
    std::vector<double> obs = env->reset();
    const int target = pick(rng);
    for (int t = 0; t < target; ++t) {
      auto probe = env->clone();
      const StepResult r = probe->step(policy(obs, rng));
      if (r.terminal) break;
      env = std::move(probe);
      obs = r.obs;
    }
    const std::vector<double> action = policy(obs, rng);
    double mc = 0.0;
    for (int j = 0; j < cfg.mc_episodes; ++j) {
      auto roll = env->clone();
      roll->reseed(derive_seed(cfg.seed, 0x10000 + static_cast<std::uint64_t>(i * cfg.mc_episodes + j)));
      std::vector<double> a = action;
      double discount = 1.0, ret = 0.0;
      for (int h = 0; h < horizon; ++h) {
        const StepResult r = roll->step(a);
        ret += discount * r.reward;
        discount *= gamma;
        if (r.terminal) break;
        a = policy(r.obs, rng);
      }
      mc += ret;
    }
    report.mc_returns.push_back(mc / cfg.mc_episodes);
    report.estimates.push_back(estimate(obs, action));
  }
  report.samples = cfg.n_states;
  report.mc_mean = mean_of(report.mc_returns);
  const double scale = std::abs(report.mc_mean);
  if (scale == 0.0) throw NumericError("bias_analysis: mean Monte-Carlo return is zero");
  std::vector<double> bias;
  for (std::size_t i = 0; i < report.estimates.size(); ++i) {
    bias.push_back((report.estimates[i] - report.mc_returns[i]) / scale);
  }
  report.mean = mean_of(bias);
  report.std = std_of(bias);
  return report;
}

BiasReport bias_analysis(const Agent& agent, const EnvConfig& env_cfg, const BiasConfig& cfg) {
  auto env = make_env(env_cfg, derive_seed(cfg.seed, kEnvStream));
  check_env_matches(agent, *env);
  auto noise = std::make_shared<Rng>(derive_seed(cfg.seed, 0x1a7e));
  const PolicyFn policy = [&agent](std::span<const double> obs, Rng&) { return greedy_action(agent, obs); };
  const ValueFn value = [&agent, noise](std::span<const double> obs, std::span<const double> action) {
    const Binding b = agent.bind(nullptr, {});
    const Tensor a = row(action);
    const ImaginedRollout r = agent.imagine(b, row(obs), agent.config().horizon, 0.0, *noise, &a);
    return agent.rollout_objective(r).item();
  };
  return bias_analysis(*env, policy, value, agent.config().gamma, cfg);
}

BiasReport tabular_oracle_bias(const oracle::Instance& instance, int horizon, const BiasConfig& cfg) {
  const oracle::TabularMDP& mdp = instance.mdp;
  const TabularEnv env(mdp, derive_seed(cfg.seed, kEnvStream), horizon);
  const std::vector<double> pi = oracle::state_policy(mdp, instance.alm);
  const std::vector<double> q = oracle::exact_q(mdp, pi);
  const auto nA = static_cast<std::size_t>(mdp.num_actions);
  auto state_of = [](std::span<const double> obs) {
    return static_cast<std::size_t>(std::max_element(obs.begin(), obs.end()) - obs.begin());
  };
  const PolicyFn policy = [&](std::span<const double> obs, Rng& rng) {
    const std::size_t s = state_of(obs);
    const Categorical dist(std::vector<double>(pi.begin() + static_cast<std::ptrdiff_t>(s * nA),
                                               pi.begin() + static_cast<std::ptrdiff_t>((s + 1) * nA)));
    return std::vector<double>{env.action_value(static_cast<int>(dist.sample(rng)))};
  };
  const ValueFn value = [&](std::span<const double> obs, std::span<const double> action) {
    const std::size_t a = static_cast<std::size_t>(env.action_index(action[0]));
    return q[state_of(obs) * nA + a] / (1.0 - mdp.gamma);
  };
  return bias_analysis(env, policy, value, mdp.gamma, cfg);
}

std::vector<double> latent_divergence(const Agent& agent, const EnvConfig& env_cfg, int horizon, int episodes,
                                      std::uint64_t seed) {
  if (horizon < 1) throw ContractError("latent_divergence: horizon must be >= 1");
  if (episodes < 1) throw ContractError("latent_divergence: episodes must be >= 1");
  auto env = make_env(env_cfg, seed);
  check_env_matches(agent, *env);
  const Binding b = agent.bind(nullptr, {});
  std::vector<double> total(static_cast<std::size_t>(horizon) + 1, 0.0);
  std::vector<int> count(total.size(), 0);
  for (int ep = 0; ep < episodes; ++ep) {
    env->reseed(derive_seed(seed, static_cast<std::uint64_t>(ep)));
    std::vector<double> obs = env->reset();
    Tensor predicted = agent.encode_dist(b, row(obs), false).mean;
    count[0] += 1;
    for (int t = 1; t <= horizon; ++t) {
      const std::vector<double> action = greedy_action(agent, obs);
      const StepResult r = env->step(action);
      predicted = agent.model_dist(b, predicted, row(action)).mean;
      const Tensor actual = agent.encode_dist(b, row(r.obs), false).mean;
      double d = 0.0;
      for (std::size_t i = 0; i < actual.size(); ++i) d += std::pow(predicted[i] - actual[i], 2);
      total[static_cast<std::size_t>(t)] += std::sqrt(d);
      count[static_cast<std::size_t>(t)] += 1;
      obs = r.obs;
      if (r.terminal || r.timeout) break;
    }
  }
  for (std::size_t t = 0; t < total.size(); ++t) total[t] = count[t] ? total[t] / count[t] : 0.0;
  return total;
}

BenchResult bench(const RunConfig& cfg_in, int updates) {
  if (updates < 1) throw ContractError("bench: updates must be >= 1");
  RunConfig cfg = cfg_in;
  auto env = make_env(cfg.env, derive_seed(cfg.seed, kEnvStream));
  cfg.agent.obs_dim = env->spec().obs_dim;
  cfg.agent.act_dim = env->spec().act_dim;
  cfg.agent.validate();
  Agent agent(cfg.agent, cfg.seed);
  ReplayBuffer buffer(4096, cfg.agent.obs_dim, cfg.agent.act_dim);
  Rng rng(derive_seed(cfg.seed, kWarmupStream));
  std::vector<double> obs = env->reset();
  std::int64_t episode = 0;
  int step = 0;
  const auto t0 = std::chrono::steady_clock::now();
  const int fill = 2000;
  for (int t = 0; t < fill; ++t) {
    const auto a = agent.act(obs, t, true);
    const StepResult r = env->step(a);
    buffer.push({obs, a, r.reward, r.obs, r.terminal, r.timeout && !r.terminal}, episode, step++);
    obs = r.obs;
    if (r.terminal || r.timeout) {
      obs = env->reset();
      ++episode;
      step = 0;
    }
  }
  const double step_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / fill;
  const auto t1 = std::chrono::steady_clock::now();
  for (int u = 0; u < updates; ++u) {
    agent.update(buffer.sample_sequences(static_cast<std::size_t>(cfg.agent.batch), cfg.agent.horizon, rng), u);
  }
  const double update_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t1).count() / updates;
  BenchResult out;
  out.ms_per_update = 1000.0 * update_seconds;
  out.env_steps_per_sec =
      1.0 / (step_seconds + update_seconds * cfg.agent.utd / static_cast<double>(cfg.update_every));
  return out;
}

// ---------------------------------------------------------------- density ratio

DensityRatioResult density_ratio_experiment(double mu_p, double sd_p, double mu_q, double sd_q, int steps,
                                            std::uint64_t seed) {
  if (sd_p <= 0.0 || sd_q <= 0.0) throw ContractError("density_ratio_experiment: std must be > 0");
  Rng rng(seed);
  Mlp net("classifier", {1, 64, 64, 1}, false, Mlp::FinalInit::kZero, rng);
  AdamState opt(net.params(), 3e-3);
  const std::size_t batch = 256;
  std::normal_distribution<double> normal(0.0, 1.0);
  auto draw = [&](double mu, double sd) {
    std::vector<double> v(batch);
    for (auto& x : v) x = mu + sd * normal(rng);
    return Tensor::matrix(batch, 1, std::move(v));
  };
  const Tensor ones = Tensor::filled({batch}, 1.0);
  const Tensor zeros = Tensor::zeros({batch});
  for (int it = 0; it < steps; ++it) {
    Tape tape;
    const auto w = net.bind(&tape);
    const Tensor pos = reshape(net.forward(w, draw(mu_p, sd_p)), {batch});
    const Tensor neg = reshape(net.forward(w, draw(mu_q, sd_q)), {batch});
    const Tensor loss = scale(add(mean(bernoulli_cross_entropy(sigmoid(pos), ones)),
                                  mean(bernoulli_cross_entropy(sigmoid(neg), zeros))),
                              0.5);
    const Gradients g = tape.backward(loss);
    GradList grads;
    for (const auto& t : w) grads.push_back(g.wrt(t));
    adam_step(opt, net.params(), grads);
  }

  // Central 90% of the equal-weight mixture, by bisection on its CDF.
  auto cdf = [&](double x) {
    return 0.25 * (std::erfc(-(x - mu_p) / (sd_p * std::sqrt(2.0))) + std::erfc(-(x - mu_q) / (sd_q * std::sqrt(2.0))));
  };
  auto quantile = [&](double p) {
    double lo = std::min(mu_p - 10 * sd_p, mu_q - 10 * sd_q), hi = std::max(mu_p + 10 * sd_p, mu_q + 10 * sd_q);
    for (int i = 0; i < 200; ++i) {
      const double mid = 0.5 * (lo + hi);
      (cdf(mid) < p ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
  };
  const double a = quantile(0.05), b = quantile(0.95);
  DensityRatioResult out;
  const int n = 201;
  std::vector<double> xs(n);
  for (int i = 0; i < n; ++i) xs[static_cast<std::size_t>(i)] = a + (b - a) * i / (n - 1);
  const Tensor logits = net.forward(Tensor::matrix(n, 1, xs));
  double err = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = xs[static_cast<std::size_t>(i)];
    const double lp = -0.5 * std::pow((x - mu_p) / sd_p, 2) - std::log(sd_p);
    const double lq = -0.5 * std::pow((x - mu_q) / sd_q, 2) - std::log(sd_q);
    out.grid.push_back(x);
    out.analytic.push_back(lp - lq);
    out.learned.push_back(logits[static_cast<std::size_t>(i)]);
    err += std::abs(out.learned.back() - out.analytic.back());
  }
  out.mae = err / n;
  return out;
}

}  // namespace alm

#include "alm/agent.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <istream>
#include <ostream>
#include <sstream>

#include "alm/diffmath/ops.hpp"
#include "alm/error.hpp"

namespace alm {
namespace {

constexpr char kCheckpointMagic[8] = {'A', 'L', 'M', 'C', 'K', 'P', 'T', '1'};

std::size_t idx(Net n) { return static_cast<std::size_t>(n); }

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("expected true/false, got '" + v + "'");
}

double parse_double(const std::string& v) {
  std::size_t used = 0;
  const double out = std::stod(v, &used);
  if (used != v.size()) throw std::invalid_argument("trailing characters in '" + v + "'");
  return out;
}

long long parse_int(const std::string& v) {
  std::size_t used = 0;
  const long long out = std::stoll(v, &used);
  if (used != v.size()) throw std::invalid_argument("trailing characters in '" + v + "'");
  return out;
}

struct Field {
  std::function<std::string(const AgentConfig&)> get;
  std::function<void(AgentConfig&, const std::string&)> set;
};

template <typename T>
Field int_field(T AgentConfig::*member) {
  return {[member](const AgentConfig& c) { return std::to_string(c.*member); },
          [member](AgentConfig& c, const std::string& v) { c.*member = static_cast<T>(parse_int(v)); }};
}

Field double_field(double AgentConfig::*member) {
  return {[member](const AgentConfig& c) { return format_double(c.*member); },
          [member](AgentConfig& c, const std::string& v) { c.*member = parse_double(v); }};
}

Field bool_field(bool AgentConfig::*member) {
  return {[member](const AgentConfig& c) { return std::string(c.*member ? "true" : "false"); },
          [member](AgentConfig& c, const std::string& v) { c.*member = parse_bool(v); }};
}

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = {
      {"obs_dim", int_field(&AgentConfig::obs_dim)},
      {"act_dim", int_field(&AgentConfig::act_dim)},
      {"latent_dim", int_field(&AgentConfig::latent_dim)},
      {"hidden", int_field(&AgentConfig::hidden)},
      {"model_hidden", int_field(&AgentConfig::model_hidden)},
      {"depth", int_field(&AgentConfig::depth)},
      {"K", int_field(&AgentConfig::horizon)},
      {"gamma", double_field(&AgentConfig::gamma)},
      {"lambda", double_field(&AgentConfig::lambda)},
      {"c", double_field(&AgentConfig::classifier_coef)},
      {"tau", double_field(&AgentConfig::tau)},
      {"lr", double_field(&AgentConfig::lr)},
      {"max_grad_norm", double_field(&AgentConfig::max_grad_norm)},
      {"batch", int_field(&AgentConfig::batch)},
      {"utd", int_field(&AgentConfig::utd)},
      {"no_kl", bool_field(&AgentConfig::no_kl)},
      {"no_value", bool_field(&AgentConfig::no_value)},
      {"no_classifier", bool_field(&AgentConfig::no_classifier)},
      {"modelfree_actor", bool_field(&AgentConfig::modelfree_actor)},
      {"log_reward_shift", double_field(&AgentConfig::log_reward_shift)},
      {"exploration.sigma_start",
       {[](const AgentConfig& c) { return format_double(c.exploration.sigma_start); },
        [](AgentConfig& c, const std::string& v) { c.exploration.sigma_start = parse_double(v); }}},
      {"exploration.sigma_end",
       {[](const AgentConfig& c) { return format_double(c.exploration.sigma_end); },
        [](AgentConfig& c, const std::string& v) { c.exploration.sigma_end = parse_double(v); }}},
      {"exploration.decay_steps",
       {[](const AgentConfig& c) { return std::to_string(c.exploration.decay_steps); },
        [](AgentConfig& c, const std::string& v) { c.exploration.decay_steps = parse_int(v); }}},
      {"exploration.noise_clip",
       {[](const AgentConfig& c) { return format_double(c.exploration.noise_clip); },
        [](AgentConfig& c, const std::string& v) { c.exploration.noise_clip = parse_double(v); }}},
  };
  return table;
}

Tensor concat2(const Tensor& a, const Tensor& b) { return concat_cols({a, b}); }

Tensor column(const Tensor& t) { return reshape(t, {t.size()}); }

// Untracked noise of scale sigma, clipped to +-clip.
Tensor clipped_noise(const Shape& shape, double sigma, double clip, Rng& rng) {
  Tensor n = standard_normal(shape, rng);
  auto v = n.mutable_values();
  for (auto& x : v) x = std::clamp(sigma * x, -clip, clip);
  return n;
}

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error("checkpoint truncated");
  return v;
}

void write_string(std::ostream& out, const std::string& s) {
  write_pod<std::uint64_t>(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in) {
  const auto n = read_pod<std::uint64_t>(in);
  if (n > (1u << 26)) throw std::runtime_error("checkpoint string too long");
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (!in) throw std::runtime_error("checkpoint truncated");
  return s;
}

void write_doubles(std::ostream& out, std::span<const double> v) {
  write_pod<std::uint64_t>(out, v.size());
  out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
}

std::vector<double> read_doubles(std::istream& in) {
  const auto n = read_pod<std::uint64_t>(in);
  if (n > (1u << 28)) throw std::runtime_error("checkpoint array too long");
  std::vector<double> v(n);
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
  if (!in) throw std::runtime_error("checkpoint truncated");
  return v;
}

void write_net(std::ostream& out, const Mlp& net) {
  write_pod<std::uint64_t>(out, net.params().size());
  for (const auto& p : net.params()) {
    write_string(out, p.name);
    write_pod<std::uint64_t>(out, p.value.rank());
    for (std::size_t d : p.value.shape()) write_pod<std::uint64_t>(out, d);
    write_doubles(out, p.value.values());
  }
}

void read_net(std::istream& in, Mlp& net) {
  const auto n = read_pod<std::uint64_t>(in);
  if (n != net.params().size()) throw ContractError(net.name() + ": checkpoint parameter count mismatch");
  for (auto& p : net.params()) {
    const std::string name = read_string(in);
    if (name != p.name) throw ContractError("checkpoint parameter " + name + " where " + p.name + " expected");
    Shape shape(read_pod<std::uint64_t>(in));
    for (auto& d : shape) d = read_pod<std::uint64_t>(in);
    if (shape != p.value.shape()) {
      throw ContractError(name + ": checkpoint shape " + shape_string(shape) + " vs " +
                          shape_string(p.value.shape()));
    }
    p.value = Tensor(shape, read_doubles(in));
  }
}

void write_adam(std::ostream& out, const AdamState& s) {
  write_pod(out, s.learning_rate);
  write_pod(out, s.beta1);
  write_pod(out, s.beta2);
  write_pod(out, s.epsilon);
  write_pod(out, s.step);
  write_pod<std::uint64_t>(out, s.first_moment.size());
  for (std::size_t i = 0; i < s.first_moment.size(); ++i) {
    write_doubles(out, s.first_moment[i]);
    write_doubles(out, s.second_moment[i]);
  }
}

void read_adam(std::istream& in, AdamState& s) {
  s.learning_rate = read_pod<double>(in);
  s.beta1 = read_pod<double>(in);
  s.beta2 = read_pod<double>(in);
  s.epsilon = read_pod<double>(in);
  s.step = read_pod<std::int64_t>(in);
  const auto n = read_pod<std::uint64_t>(in);
  if (n != s.first_moment.size()) throw ContractError("checkpoint optimizer size mismatch");
  for (std::size_t i = 0; i < n; ++i) {
    s.first_moment[i] = read_doubles(in);
    s.second_moment[i] = read_doubles(in);
  }
}

}  // namespace

void AgentConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw ContractError(std::string("agent config: ") + what);
  };
  require(obs_dim >= 1 && act_dim >= 1, "obs_dim and act_dim must be >= 1");
  require(latent_dim >= 1 && hidden >= 1 && model_hidden >= 1 && depth >= 1, "layer sizes must be >= 1");
  require(horizon >= 1, "K must be >= 1");
  require(gamma > 0.0 && gamma < 1.0, "gamma must lie in (0,1)");
  require(lambda >= 0.0 && lambda < 1.0, "lambda must lie in [0,1)");
  require(classifier_coef >= 0.0, "c must be >= 0");
  require(tau > 0.0 && tau <= 1.0, "tau must lie in (0,1]");
  require(lr > 0.0, "lr must be > 0");
  require(max_grad_norm > 0.0, "max_grad_norm must be > 0");
  require(batch >= 1 && utd >= 1, "batch and utd must be >= 1");
  require(log_reward_shift >= 0.0, "log_reward_shift must be >= 0");
  require(exploration.sigma_end <= exploration.sigma_start, "sigma_end must not exceed sigma_start");
  require(exploration.sigma_end >= 0.0 && exploration.noise_clip >= 0.0, "noise scales must be >= 0");
  require(exploration.decay_steps >= 1, "decay_steps must be >= 1");
}

std::map<std::string, std::string> to_key_values(const AgentConfig& cfg) {
  std::map<std::string, std::string> out;
  for (const auto& [key, field] : fields()) out[key] = field.get(cfg);
  return out;
}

void set_key_value(AgentConfig& cfg, const std::string& key, const std::string& value) {
  const auto it = fields().find(key);
  if (it == fields().end()) throw ContractError("unknown agent config key '" + key + "'");
  it->second.set(cfg, value);
}

double exploration_sigma(const ExplorationConfig& cfg, std::int64_t step) {
  const double frac = std::clamp(static_cast<double>(step) / static_cast<double>(cfg.decay_steps), 0.0, 1.0);
  return cfg.sigma_start + frac * (cfg.sigma_end - cfg.sigma_start);
}

AgentConfig desk_profile(int obs_dim, int act_dim) {
  AgentConfig cfg;
  cfg.obs_dim = obs_dim;
  cfg.act_dim = act_dim;
  cfg.latent_dim = 16;
  cfg.hidden = 64;
  cfg.model_hidden = 64;
  cfg.batch = 64;
  cfg.lr = 1e-3;
  cfg.tau = 0.01;
  cfg.utd = 1;
  cfg.exploration.decay_steps = 20000;
  return cfg;
}

Agent::Agent(const AgentConfig& cfg, std::uint64_t seed) : cfg_(cfg), rng_(seed) {
  cfg_.validate();
  const auto L = static_cast<std::size_t>(cfg_.latent_dim);
  const auto A = static_cast<std::size_t>(cfg_.act_dim);
  auto sizes = [&](std::size_t in, std::size_t hidden, std::size_t out) {
    std::vector<std::size_t> s = {in};
    for (int d = 0; d < cfg_.depth; ++d) s.push_back(hidden);
    s.push_back(out);
    return s;
  };
  const auto h = static_cast<std::size_t>(cfg_.hidden);
  const auto mh = static_cast<std::size_t>(cfg_.model_hidden);
  using FI = Mlp::FinalInit;
  nets_[idx(Net::kEncoder)] = Mlp("encoder", sizes(static_cast<std::size_t>(cfg_.obs_dim), h, 2 * L), false, FI::kOrthogonal, rng_);
  nets_[idx(Net::kModel)] = Mlp("model", sizes(L + A, mh, 2 * L), false, FI::kOrthogonal, rng_);
  nets_[idx(Net::kPolicy)] = Mlp("policy", sizes(L, h, A), false, FI::kZero, rng_);
  nets_[idx(Net::kReward)] = Mlp("reward", sizes(L + A, h, 1), true, FI::kZero, rng_);
  nets_[idx(Net::kCritic)] = Mlp("critic", sizes(L + A, h, 1), true, FI::kZero, rng_);
  nets_[idx(Net::kClassifier)] = Mlp("classifier", sizes(2 * L + A, h, 1), false, FI::kZero, rng_);
  target_encoder_ = nets_[idx(Net::kEncoder)];
  target_critic_ = nets_[idx(Net::kCritic)];
  for (std::size_t n = 0; n < kNumNets; ++n) optim_[n] = AdamState(nets_[n].params(), cfg_.lr);
}

Binding Agent::bind(Tape* tape, std::initializer_list<Net> trainable) const {
  Binding b;
  for (std::size_t n = 0; n < kNumNets; ++n) {
    const bool train = std::find(trainable.begin(), trainable.end(), static_cast<Net>(n)) != trainable.end();
    if (train && tape == nullptr) throw ContractError("bind: trainable networks need a tape");
    b.nets[n] = nets_[n].bind(train ? tape : nullptr);
  }
  b.target_encoder = target_encoder_.bind(nullptr);
  b.target_critic = target_critic_.bind(nullptr);
  return b;
}

DiagGaussian Agent::encode_dist(const Binding& b, const Tensor& obs, bool use_target) const {
  const Mlp& enc = use_target ? target_encoder_ : nets_[idx(Net::kEncoder)];
  const Tensor out = enc.forward(use_target ? b.target_encoder : b[Net::kEncoder], obs);
  const auto L = static_cast<std::size_t>(cfg_.latent_dim);
  return gaussian_from_raw(slice_cols(out, 0, L), slice_cols(out, L, 2 * L));
}

Tensor Agent::encode(const Binding& b, const Tensor& obs, bool use_target, bool sample, Rng& rng) const {
  const DiagGaussian g = encode_dist(b, obs, use_target);
  return sample ? gaussian_rsample(g, rng) : g.mean;
}

DiagGaussian Agent::model_dist(const Binding& b, const Tensor& z, const Tensor& a) const {
  const Tensor out = nets_[idx(Net::kModel)].forward(b[Net::kModel], concat2(z, a));
  const auto L = static_cast<std::size_t>(cfg_.latent_dim);
  return gaussian_from_raw(slice_cols(out, 0, L), slice_cols(out, L, 2 * L));
}

Tensor Agent::policy_mean(const Binding& b, const Tensor& z) const {
  return tanh(nets_[idx(Net::kPolicy)].forward(b[Net::kPolicy], z));
}

Tensor Agent::reward(const Binding& b, const Tensor& z, const Tensor& a) const {
  return column(nets_[idx(Net::kReward)].forward(b[Net::kReward], concat2(z, a)));
}

Tensor Agent::critic(const Binding& b, const Tensor& z, const Tensor& a, bool use_target) const {
  const Mlp& q = use_target ? target_critic_ : nets_[idx(Net::kCritic)];
  return column(q.forward(use_target ? b.target_critic : b[Net::kCritic], concat2(z, a)));
}

Tensor Agent::classifier_logit(const Binding& b, const Tensor& z_next, const Tensor& a,
                               const Tensor& z) const {
  return column(nets_[idx(Net::kClassifier)].forward(b[Net::kClassifier], concat_cols({z_next, a, z})));
}

Tensor Agent::intrinsic_reward(const Binding& b, const Tensor& z, const Tensor& a,
                               const Tensor& z_next) const {
  const double bound = std::log((1.0 - kProbClamp) / kProbClamp);
  return clamp(classifier_logit(b, z_next, a, z), -bound, bound);
}

std::vector<double> Agent::act(std::span<const double> obs, std::int64_t step, bool explore) {
  if (obs.size() != static_cast<std::size_t>(cfg_.obs_dim)) {
    throw ContractError("act: observation has " + std::to_string(obs.size()) + " entries, expected " +
                        std::to_string(cfg_.obs_dim));
  }
  if (step < 0) throw ContractError("act: step must be >= 0");
  const Binding b = bind(nullptr, {});
  const Tensor x = Tensor::matrix(1, obs.size(), std::vector<double>(obs.begin(), obs.end()));
  const Tensor mean = policy_mean(b, encode_dist(b, x, false).mean);
  std::vector<double> a(mean.values().begin(), mean.values().end());
  if (explore) {
    const Tensor noise = clipped_noise({a.size()}, exploration_sigma(cfg_.exploration, step),
                                       cfg_.exploration.noise_clip, rng_);
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = std::clamp(a[i] + noise[i], -1.0, 1.0);
  }
  return a;
}

ImaginedRollout Agent::imagine(const Binding& b, const Tensor& obs, int horizon, double sigma,
                               Rng& rng, const Tensor* first_action, const DiagGaussian* start) const {
  if (horizon < 1) throw ContractError("imagine: K must be >= 1");
  const double clip = cfg_.exploration.noise_clip;
  auto explore = [&](const Tensor& mean) {
    if (sigma == 0.0) return mean;
    return clamp(add(mean, clipped_noise(mean.shape(), sigma, clip, rng)), -1.0, 1.0);
  };
  ImaginedRollout r;
  Tensor z = start != nullptr ? gaussian_rsample(*start, rng) : encode(b, obs, true, true, rng);
  r.latents.push_back(z);
  Tensor action = first_action != nullptr ? *first_action : explore(policy_mean(b, z));
  for (int i = 0; i < horizon; ++i) {
    r.actions.push_back(action);
    const Tensor z_next = gaussian_rsample(model_dist(b, z, action), rng);
    r.rewards.push_back(reward(b, z, action));
    r.intrinsic.push_back(intrinsic_reward(b, z, action, z_next));
    const Tensor mean_next = policy_mean(b, z_next);
    r.values.push_back(critic(b, z_next, mean_next, false));
    r.latents.push_back(z_next);
    z = z_next;
    action = i + 1 < horizon ? explore(mean_next) : mean_next;
  }
  r.actions.push_back(action);
  return r;
}

Tensor Agent::rollout_objective(const ImaginedRollout& r) const {
  const int K = static_cast<int>(r.rewards.size());
  const auto weights = lambda_weights(cfg_.lambda, K);
  const double c = cfg_.no_classifier ? 0.0 : cfg_.classifier_coef;
  Tensor partial;  // sum_{i<k} g^i (r_i + c intr_i)
  Tensor total;
  double discount = 1.0;
  for (int k = 1; k <= K; ++k) {
    const auto i = static_cast<std::size_t>(k - 1);
    Tensor step = c != 0.0 ? add(r.rewards[i], scale(r.intrinsic[i], c)) : r.rewards[i];
    step = scale(step, discount);
    partial = k == 1 ? step : add(partial, step);
    discount *= cfg_.gamma;
    const Tensor ret = add(partial, scale(r.values[i], discount));
    const Tensor weighted = scale(ret, weights[i]);
    total = k == 1 ? weighted : add(total, weighted);
  }
  return total;
}

DiagGaussian Agent::target_dist(const Binding& b, const SequenceBatch& batch, std::size_t k) const {
  if (k < b.target_latents.size()) return b.target_latents[k];
  return encode_dist(b, batch.obs[k], true);
}

void Agent::cache_targets(Binding& b, const SequenceBatch& batch) const {
  b.target_latents.clear();
  for (const auto& o : batch.obs) b.target_latents.push_back(encode_dist(b, o, true));
}

Tensor Agent::encoder_model_loss(const Binding& b, const SequenceBatch& batch, Rng& rng,
                                 UpdateStats* stats) const {
  if (batch.horizon != cfg_.horizon) {
    throw ContractError("encoder_model_loss: batch windows have K=" + std::to_string(batch.horizon) +
                        ", config K=" + std::to_string(cfg_.horizon));
  }
  Tensor z = encode(b, batch.obs[0], false, true, rng);
  Tensor total;
  double kl_sum = 0.0;
  for (int i = 0; i < cfg_.horizon; ++i) {
    const auto s = static_cast<std::size_t>(i);
    const Tensor& a = batch.actions[s];
    Tensor term = reward(b, z, a);
    const DiagGaussian m = model_dist(b, z, a);
    if (!cfg_.no_kl) {
      const Tensor kl = gaussian_kl(m, target_dist(b, batch, s + 1));
      kl_sum += mean(kl).item();
      term = sub(term, kl);
    }
    total = i == 0 ? term : add(total, term);
    z = gaussian_rsample(m, rng);
  }
  if (!cfg_.no_value) {
    Tensor q = critic(b, z, policy_mean(b, z), false);
    const Tensor alive = add_scalar(negate(batch.terminals.back()), 1.0);
    total = add(total, mul(q, alive));
  }
  if (stats != nullptr) stats->kl = kl_sum / cfg_.horizon;
  return negate(mean(total));
}

Tensor Agent::policy_loss(const Binding& b, const Tensor& start_obs, double sigma, Rng& rng,
                          UpdateStats* stats, const DiagGaussian* start) const {
  if (cfg_.modelfree_actor) {
    const Tensor z = start != nullptr ? gaussian_rsample(*start, rng) : encode(b, start_obs, true, true, rng);
    return negate(mean(critic(b, z, policy_mean(b, z), false)));
  }
  const ImaginedRollout r = imagine(b, start_obs, cfg_.horizon, sigma, rng, nullptr, start);
  if (stats != nullptr) {
    double s = 0.0;
    for (const auto& t : r.intrinsic) s += mean(t).item();
    stats->intrinsic_mean = s / static_cast<double>(r.intrinsic.size());
  }
  return negate(mean(rollout_objective(r)));
}

Tensor Agent::classifier_loss(const Binding& b, const SequenceBatch& batch, Rng& rng,
                              UpdateStats* stats) const {
  const Tensor& a = batch.actions[0];
  const Tensor z = gaussian_rsample(target_dist(b, batch, 0), rng);
  const Tensor z_pos = gaussian_rsample(target_dist(b, batch, 1), rng);
  const Tensor z_neg = gaussian_rsample(model_dist(b, z, a), rng).detach();
  const Tensor pos = classifier_logit(b, z_pos, a, z);
  const Tensor neg = classifier_logit(b, z_neg, a, z);
  const Tensor ones = Tensor::filled(pos.shape(), 1.0);
  const Tensor zeros = Tensor::zeros(neg.shape());
  const Tensor loss = scale(add(mean(bernoulli_cross_entropy(sigmoid(pos), ones)),
                                mean(bernoulli_cross_entropy(sigmoid(neg), zeros))),
                            0.5);
  if (stats != nullptr) {
    double correct = 0.0;
    for (double v : pos.values()) correct += v > 0.0;
    for (double v : neg.values()) correct += v < 0.0;
    stats->classifier_accuracy = correct / static_cast<double>(pos.size() + neg.size());
  }
  return loss;
}

Tensor Agent::q_loss(const Binding& b, const SequenceBatch& batch, Rng& rng) const {
  const Tensor z = gaussian_rsample(target_dist(b, batch, 0), rng);
  const Tensor z_next = gaussian_rsample(target_dist(b, batch, 1), rng);
  const Tensor next_q = critic(b, z_next, policy_mean(b, z_next), true);
  const Tensor alive = add_scalar(negate(batch.terminals[0]), 1.0);
  const Tensor target = add(batch.rewards[0], scale(mul(alive, next_q), cfg_.gamma)).detach();
  return mean(square(sub(critic(b, z, batch.actions[0], false), target)));
}

Tensor Agent::reward_loss(const Binding& b, const SequenceBatch& batch, Rng& rng) const {
  const Tensor z = gaussian_rsample(target_dist(b, batch, 0), rng);
  return mean(square(sub(reward(b, z, batch.actions[0]), batch.rewards[0])));
}

namespace {

void check_finite(const Tensor& loss, const char* name) {
  if (!std::isfinite(loss.item())) throw NumericError(std::string(name) + " loss is not finite");
}

}  // namespace

UpdateStats Agent::update(const SequenceBatch& batch, std::int64_t env_step) {
  UpdateStats stats;
  const double sigma = exploration_sigma(cfg_.exploration, env_step);
  if (batch.horizon != cfg_.horizon) {
    throw ContractError("update: batch windows have K=" + std::to_string(batch.horizon) + ", config K=" +
                        std::to_string(cfg_.horizon));
  }
  // Target networks only move at the end of the round.
  std::vector<DiagGaussian> targets;
  {
    Binding frozen = bind(nullptr, {});
    cache_targets(frozen, batch);
    targets = std::move(frozen.target_latents);
  }

  auto step = [&](Net n, const Binding& b, const Gradients& g) {
    const std::size_t i = idx(n);
    GradList grads;
    grads.reserve(b.nets[i].size());
    for (const auto& w : b.nets[i]) grads.push_back(g.wrt(w));
    stats.grad_norms[i] = clip_global_norm(grads, cfg_.max_grad_norm);
    adam_step(optim_[i], nets_[i].params(), grads);
  };

  {
    Tape tape;
    Binding b = bind(&tape, {Net::kEncoder, Net::kModel});
    b.target_latents = targets;
    const Tensor loss = encoder_model_loss(b, batch, rng_, &stats);
    check_finite(loss, "encoder/model");
    stats.encoder_model_loss = loss.item();
    const Gradients g = tape.backward(loss);
    step(Net::kEncoder, b, g);
    step(Net::kModel, b, g);
  }
  {
    Tape tape;
    const Binding b = bind(&tape, {Net::kPolicy});
    const Tensor loss = policy_loss(b, batch.obs[0], sigma, rng_, &stats, &targets[0]);
    check_finite(loss, "policy");
    stats.policy_loss = loss.item();
    step(Net::kPolicy, b, tape.backward(loss));
  }
  {
    Tape tape;
    Binding b = bind(&tape, {Net::kClassifier, Net::kCritic, Net::kReward});
    b.target_latents = targets;
    const Tensor cls = classifier_loss(b, batch, rng_, &stats);
    const Tensor q = q_loss(b, batch, rng_);
    const Tensor r = reward_loss(b, batch, rng_);
    check_finite(cls, "classifier");
    check_finite(q, "q");
    check_finite(r, "reward");
    stats.classifier_loss = cls.item();
    stats.q_loss = q.item();
    stats.reward_loss = r.item();
    // Disjoint parameters: one sweep yields each network's own gradient.
    const Gradients g = tape.backward(add(add(cls, q), r));
    step(Net::kClassifier, b, g);
    step(Net::kCritic, b, g);
    step(Net::kReward, b, g);
  }
  update_targets(cfg_.tau);
  ++updates_;
  return stats;
}

void Agent::update_targets(double tau) {
  polyak_update(target_encoder_.params(), nets_[idx(Net::kEncoder)].params(), tau);
  polyak_update(target_critic_.params(), nets_[idx(Net::kCritic)].params(), tau);
}

void Agent::save(std::ostream& out, std::int64_t env_step) const {
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  std::ostringstream cfg_text;
  for (const auto& [k, v] : to_key_values(cfg_)) cfg_text << k << " = " << v << '\n';
  write_string(out, cfg_text.str());
  write_pod(out, env_step);
  write_pod(out, updates_);
  for (const auto& net : nets_) write_net(out, net);
  write_net(out, target_encoder_);
  write_net(out, target_critic_);
  for (const auto& s : optim_) write_adam(out, s);
  std::ostringstream rng_text;
  rng_text << rng_;
  write_string(out, rng_text.str());
  if (!out) throw std::runtime_error("checkpoint write failed");
}

std::int64_t Agent::load(std::istream& in) {
  char magic[sizeof(kCheckpointMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw ContractError("not an ALM checkpoint (bad magic)");
  }
  AgentConfig cfg;
  std::istringstream cfg_text(read_string(in));
  for (std::string line; std::getline(cfg_text, line);) {
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) continue;
    set_key_value(cfg, line.substr(0, eq), line.substr(eq + 3));
  }
  *this = Agent(cfg, 0);
  const auto env_step = read_pod<std::int64_t>(in);
  updates_ = read_pod<std::int64_t>(in);
  for (auto& net : nets_) read_net(in, net);
  read_net(in, target_encoder_);
  read_net(in, target_critic_);
  for (auto& s : optim_) read_adam(in, s);
  std::istringstream rng_text(read_string(in));
  rng_text >> rng_;
  if (!rng_text) throw ContractError("checkpoint RNG state unreadable");
  return env_step;
}

}  // namespace alm

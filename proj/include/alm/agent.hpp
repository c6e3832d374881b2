#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <initializer_list>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "alm/dists.hpp"
#include "alm/experience.hpp"
#include "alm/nn.hpp"

namespace alm {

struct ExplorationConfig {
  double sigma_start = 1.0;
  double sigma_end = 0.1;
  std::int64_t decay_steps = 100000;
  double noise_clip = 0.3;
};

struct AgentConfig {
  int obs_dim = 0;
  int act_dim = 0;
  int latent_dim = 50;
  int hidden = 512;
  int model_hidden = 1024;
  int depth = 2;
  int horizon = 3;  // K
  double gamma = 0.99;
  double lambda = 0.95;
  double classifier_coef = 0.1;  // c
  double tau = 0.005;
  double lr = 1e-4;
  double max_grad_norm = 100.0;
  int batch = 512;
  int utd = 3;
  bool no_kl = false;
  bool no_value = false;
  bool no_classifier = false;
  bool modelfree_actor = false;
  double log_reward_shift = 0.0;  // a > 0 enables the shifted-log reward variant
  ExplorationConfig exploration;

  // Throws ContractError naming the violated field.
  void validate() const;
};

/// Flat "key = value" view of the config (keys without the "agent." prefix).
std::map<std::string, std::string> to_key_values(const AgentConfig& cfg);
/// Sets one field from text. Throws ContractError for unknown keys and
/// std::invalid_argument for unparsable values.
void set_key_value(AgentConfig& cfg, const std::string& key, const std::string& value);

/// sigma(step): linear from sigma_start to sigma_end over decay_steps.
double exploration_sigma(const ExplorationConfig& cfg, std::int64_t step);

enum class Net { kEncoder = 0, kModel, kPolicy, kReward, kCritic, kClassifier };
inline constexpr std::size_t kNumNets = 6;

/// Parameter tensors for one loss evaluation. Trainable networks are bound as
/// leaves of the loss tape; everything else is untracked. Target networks are
/// always untracked.
struct Binding {
  std::array<std::vector<Tensor>, kNumNets> nets;
  std::vector<Tensor> target_encoder;
  std::vector<Tensor> target_critic;
  // Optional target-encoder distributions of batch.obs[k]; when present the
  // batch losses reuse them instead of re-encoding.
  std::vector<DiagGaussian> target_latents;
  const std::vector<Tensor>& operator[](Net n) const { return nets[static_cast<std::size_t>(n)]; }
};

/// The latents, actions and value estimates of one imagined K-step rollout
/// over a batch. actions has K+1 entries; values[k-1] = Q(z_k, pi(z_k)).
struct ImaginedRollout {
  std::vector<Tensor> latents;    // [B x L], K+1 entries
  std::vector<Tensor> actions;    // [B x A], K+1 entries
  std::vector<Tensor> rewards;    // [B], K entries
  std::vector<Tensor> intrinsic;  // [B], K entries
  std::vector<Tensor> values;     // [B], K entries
};

struct UpdateStats {
  double encoder_model_loss = 0.0;
  double policy_loss = 0.0;
  double classifier_loss = 0.0;
  double q_loss = 0.0;
  double reward_loss = 0.0;
  double kl = 0.0;
  double intrinsic_mean = 0.0;
  double classifier_accuracy = 0.0;
  std::array<double, kNumNets> grad_norms{};
};

class Agent {
 public:
  Agent(const AgentConfig& cfg, std::uint64_t seed);

  const AgentConfig& config() const { return cfg_; }
  AgentConfig& mutable_config() { return cfg_; }

  Mlp& net(Net n) { return nets_[static_cast<std::size_t>(n)]; }
  const Mlp& net(Net n) const { return nets_[static_cast<std::size_t>(n)]; }
  Mlp& target_encoder() { return target_encoder_; }
  Mlp& target_critic() { return target_critic_; }
  const Mlp& target_encoder() const { return target_encoder_; }
  const Mlp& target_critic() const { return target_critic_; }
  AdamState& optimizer(Net n) { return optim_[static_cast<std::size_t>(n)]; }
  Rng& rng() { return rng_; }
  std::int64_t updates() const { return updates_; }

  Binding bind(Tape* tape, std::initializer_list<Net> trainable) const;

  /// Latent Gaussian for observations [B x obs_dim].
  DiagGaussian encode_dist(const Binding& b, const Tensor& obs, bool use_target) const;
  /// Sample (reparameterised) or mean latent.
  Tensor encode(const Binding& b, const Tensor& obs, bool use_target, bool sample, Rng& rng) const;
  DiagGaussian model_dist(const Binding& b, const Tensor& z, const Tensor& a) const;
  /// tanh-squashed deterministic policy output.
  Tensor policy_mean(const Binding& b, const Tensor& z) const;
  Tensor reward(const Binding& b, const Tensor& z, const Tensor& a) const;  // [B]
  Tensor critic(const Binding& b, const Tensor& z, const Tensor& a, bool use_target) const;  // [B]
  Tensor classifier_logit(const Binding& b, const Tensor& z_next, const Tensor& a,
                          const Tensor& z) const;  // [B]
  /// Classifier log-odds, clamped so the implied probability lies in
  /// [kProbClamp, 1 - kProbClamp].
  Tensor intrinsic_reward(const Binding& b, const Tensor& z, const Tensor& a,
                          const Tensor& z_next) const;

  /// Action for one observation: tanh policy mean from the online encoder
  /// mean, plus clipped scheduled noise when exploring.
  std::vector<double> act(std::span<const double> obs, std::int64_t step, bool explore);

  /// K-step rollout from target-encoder samples of obs, actions from the
  /// policy with clipped noise of scale sigma. When first_action is given it
  /// replaces a_0.
  ImaginedRollout imagine(const Binding& b, const Tensor& obs, int horizon, double sigma,
                          Rng& rng, const Tensor* first_action = nullptr,
                          const DiagGaussian* start = nullptr) const;

  /// Lambda-weighted K-step objective per batch element from a rollout.
  Tensor rollout_objective(const ImaginedRollout& r) const;

  Tensor encoder_model_loss(const Binding& b, const SequenceBatch& batch, Rng& rng,
                            UpdateStats* stats = nullptr) const;
  Tensor policy_loss(const Binding& b, const Tensor& start_obs, double sigma, Rng& rng,
                     UpdateStats* stats = nullptr, const DiagGaussian* start = nullptr) const;
  Tensor classifier_loss(const Binding& b, const SequenceBatch& batch, Rng& rng,
                         UpdateStats* stats = nullptr) const;
  Tensor q_loss(const Binding& b, const SequenceBatch& batch, Rng& rng) const;
  Tensor reward_loss(const Binding& b, const SequenceBatch& batch, Rng& rng) const;

  /// Fills b.target_latents for every observation slot of the batch.
  void cache_targets(Binding& b, const SequenceBatch& batch) const;

  /// One full round: encoder/model, policy, classifier/Q/reward, targets.
  UpdateStats update(const SequenceBatch& batch, std::int64_t env_step);

  /// Polyak update of the target encoder and target Q with rate tau.
  void update_targets(double tau);

  void save(std::ostream& out, std::int64_t env_step) const;
  /// Returns the stored env step.
  std::int64_t load(std::istream& in);

 private:
  DiagGaussian target_dist(const Binding& b, const SequenceBatch& batch, std::size_t k) const;

  AgentConfig cfg_;
  std::array<Mlp, kNumNets> nets_;
  Mlp target_encoder_;
  Mlp target_critic_;
  std::array<AdamState, kNumNets> optim_;
  Rng rng_;
  std::int64_t updates_ = 0;
};

/// Agent config scaled down for desk-scale runs.
AgentConfig desk_profile(int obs_dim, int act_dim);

}  // namespace alm

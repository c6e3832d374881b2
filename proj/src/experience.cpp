#include "alm/experience.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <json.hpp>

#include "alm/dists.hpp"
#include "alm/error.hpp"

namespace alm {
namespace {

constexpr double kPi = std::numbers::pi;

double angle_normalize(double x) {
  return std::fmod(std::fmod(x + kPi, 2 * kPi) + 2 * kPi, 2 * kPi) - kPi;
}

void require_action(const EnvSpec& spec, std::span<const double> action) {
  if (action.size() != static_cast<std::size_t>(spec.act_dim)) {
    throw ContractError(spec.name + ": action has " + std::to_string(action.size()) +
                        " entries, expected " + std::to_string(spec.act_dim));
  }
}

double clip(double v, double lo, double hi) { return std::clamp(v, lo, hi); }

}  // namespace

Pendulum::Pendulum(std::uint64_t seed) : rng_(seed) {
  spec_ = {"pendulum", 3, 1, -1.0, 1.0, 200, -(kPi * kPi + 0.1 * 64 + 0.001 * 4), 0.0};
}

std::vector<double> Pendulum::observe() const {
  return {std::cos(theta_), std::sin(theta_), theta_dot_};
}

std::vector<double> Pendulum::reset() {
  std::uniform_real_distribution<double> u(-0.1, 0.1);
  theta_ = kPi + u(rng_);
  theta_dot_ = u(rng_);
  t_ = 0;
  return observe();
}

void Pendulum::set_state(double theta, double theta_dot) {
  theta_ = theta;
  theta_dot_ = theta_dot;
}

StepResult Pendulum::step(std::span<const double> action) {
  require_action(spec_, action);
  constexpr double g = 10.0, m = 1.0, l = 1.0, dt = 0.05, max_speed = 8.0, max_torque = 2.0;
  const double u = clip(action[0], -1.0, 1.0) * max_torque;
  const double th = angle_normalize(theta_);
  const double cost = th * th + 0.1 * theta_dot_ * theta_dot_ + 0.001 * u * u;

  theta_dot_ += (3 * g / (2 * l) * std::sin(theta_) + 3.0 / (m * l * l) * u) * dt;
  theta_dot_ = clip(theta_dot_, -max_speed, max_speed);
  theta_ += theta_dot_ * dt;
  ++t_;
  return {observe(), -cost, false, t_ >= spec_.horizon};
}

PointMass::PointMass(std::uint64_t seed, double noise_std) : rng_(seed), noise_std_(noise_std) {
  if (!(noise_std >= 0.0)) throw ContractError("pointmass: noise_std must be >= 0");
  spec_ = {"pointmass", 4, 2, -1.0, 1.0, 200, -10.0, 0.0};
}

std::vector<double> PointMass::observe() const { return {pos_[0], pos_[1], vel_[0], vel_[1]}; }

std::vector<double> PointMass::reset() {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 2; ++i) {
    pos_[i] = u(rng_);
    vel_[i] = 0.0;
  }
  t_ = 0;
  return observe();
}

void PointMass::set_state(std::span<const double> position, std::span<const double> velocity) {
  for (int i = 0; i < 2; ++i) {
    pos_[i] = position[static_cast<std::size_t>(i)];
    vel_[i] = velocity[static_cast<std::size_t>(i)];
  }
}

StepResult PointMass::step(std::span<const double> action) {
  require_action(spec_, action);
  constexpr double dt = 0.1, max_speed = 2.0, bound = 2.0;
  const double reward = -std::hypot(pos_[0], pos_[1]);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (int i = 0; i < 2; ++i) {
    double dv = clip(action[static_cast<std::size_t>(i)], -1.0, 1.0) * dt;
    if (noise_std_ > 0.0) dv += noise_std_ * noise(rng_);
    vel_[i] = clip(vel_[i] + dv, -max_speed, max_speed);
    pos_[i] = clip(pos_[i] + vel_[i] * dt, -bound, bound);
  }
  ++t_;
  return {observe(), reward, false, t_ >= spec_.horizon};
}

TabularEnv::TabularEnv(oracle::TabularMDP mdp, std::uint64_t seed, int horizon)
    : mdp_(std::move(mdp)), rng_(seed) {
  mdp_.validate();
  if (horizon < 1) throw ContractError("tabular env: horizon must be >= 1");
  const auto [lo, hi] = std::minmax_element(mdp_.reward.begin(), mdp_.reward.end());
  spec_ = {"tabular", mdp_.num_states, 1, -1.0, 1.0, horizon, *lo, *hi};
}

std::vector<double> TabularEnv::observe() const {
  std::vector<double> obs(static_cast<std::size_t>(mdp_.num_states), 0.0);
  obs[static_cast<std::size_t>(state_)] = 1.0;
  return obs;
}

int TabularEnv::action_index(double action) const {
  const int n = mdp_.num_actions;
  if (n == 1) return 0;
  const double pos = (clip(action, -1.0, 1.0) + 1.0) * 0.5 * (n - 1);
  return std::clamp(static_cast<int>(std::lround(pos)), 0, n - 1);
}

double TabularEnv::action_value(int index) const {
  const int n = mdp_.num_actions;
  return n == 1 ? 0.0 : -1.0 + 2.0 * index / (n - 1);
}

std::vector<double> TabularEnv::reset() {
  state_ = static_cast<int>(Categorical(mdp_.p0).sample(rng_));
  t_ = 0;
  return observe();
}

StepResult TabularEnv::step(std::span<const double> action) {
  require_action(spec_, action);
  const int a = action_index(action[0]);
  const double reward = mdp_.r(state_, a);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double draw = u(rng_);
  double acc = 0.0;
  int next = mdp_.num_states - 1;
  for (int s = 0; s < mdp_.num_states; ++s) {
    acc += mdp_.p(state_, a, s);
    if (draw < acc) {
      next = s;
      break;
    }
  }
  state_ = next;
  ++t_;
  return {observe(), reward, false, t_ >= spec_.horizon};
}

ReplayBuffer::ReplayBuffer(std::size_t capacity, int obs_dim, int act_dim)
    : capacity_(capacity), obs_dim_(obs_dim), act_dim_(act_dim) {
  if (capacity == 0) throw ContractError("replay buffer capacity must be positive");
  data_.resize(capacity);
  episode_.resize(capacity);
  step_.resize(capacity);
}

void ReplayBuffer::push(const Transition& t, std::int64_t episode, int step) {
  const auto od = static_cast<std::size_t>(obs_dim_), ad = static_cast<std::size_t>(act_dim_);
  if (t.s.size() != od || t.s_next.size() != od || t.a.size() != ad) {
    throw ContractError("replay push: transition dims (" + std::to_string(t.s.size()) + ", " +
                        std::to_string(t.a.size()) + ", " + std::to_string(t.s_next.size()) +
                        ") do not match obs_dim " + std::to_string(obs_dim_) + ", act_dim " +
                        std::to_string(act_dim_));
  }
  if (t.terminal && t.timeout) throw ContractError("replay push: terminal and timeout both set");
  data_[head_] = t;
  episode_[head_] = episode;
  step_[head_] = step;
  head_ = (head_ + 1) % capacity_;
  size_ = std::min(size_ + 1, capacity_);
}

const Transition& ReplayBuffer::at(std::size_t i) const { return data_[physical(i)]; }
std::int64_t ReplayBuffer::episode_at(std::size_t i) const { return episode_[physical(i)]; }

bool ReplayBuffer::valid_start(std::size_t i, int horizon) const {
  const auto k = static_cast<std::size_t>(horizon);
  if (horizon < 1 || i + k > size_) return false;
  const std::size_t p0 = physical(i);
  for (std::size_t j = 1; j < k; ++j) {
    const std::size_t p = physical(i + j);
    if (episode_[p] != episode_[p0] || step_[p] != step_[p0] + static_cast<int>(j)) return false;
  }
  return true;
}

std::vector<std::size_t> ReplayBuffer::valid_starts(int horizon) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < size_; ++i) {
    if (valid_start(i, horizon)) out.push_back(i);
  }
  return out;
}

SequenceBatch ReplayBuffer::sample_sequences(std::size_t batch, int horizon, Rng& rng) const {
  if (horizon < 1) throw ContractError("sample_sequences: K must be >= 1");
  const auto k = static_cast<std::size_t>(horizon);
  if (size_ < k) throw EmptyBufferError("replay buffer holds no window of length " + std::to_string(horizon));

  // Rejection from all window positions is exactly uniform over the valid
  // ones; enumeration takes over when valid windows are rare.
  std::vector<std::size_t> starts;
  starts.reserve(batch);
  std::uniform_int_distribution<std::size_t> pick(0, size_ - k);
  std::vector<std::size_t> fallback;
  for (std::size_t b = 0; b < batch; ++b) {
    bool found = false;
    for (int attempt = 0; attempt < 64 && fallback.empty(); ++attempt) {
      const std::size_t i = pick(rng);
      if (valid_start(i, horizon)) {
        starts.push_back(i);
        found = true;
        break;
      }
    }
    if (found) continue;
    if (fallback.empty()) {
      fallback = valid_starts(horizon);
      if (fallback.empty()) {
        throw EmptyBufferError("replay buffer holds no window of length " + std::to_string(horizon));
      }
    }
    std::uniform_int_distribution<std::size_t> idx(0, fallback.size() - 1);
    starts.push_back(fallback[idx(rng)]);
  }

  SequenceBatch out;
  out.horizon = horizon;
  out.batch = batch;
  out.starts = starts;
  const auto od = static_cast<std::size_t>(obs_dim_), ad = static_cast<std::size_t>(act_dim_);
  for (std::size_t t = 0; t <= k; ++t) {
    std::vector<double> obs(batch * od);
    for (std::size_t b = 0; b < batch; ++b) {
      const auto& tr = at(starts[b] + std::min(t, k - 1));
      const auto& src = t < k ? tr.s : tr.s_next;
      std::copy(src.begin(), src.end(), obs.begin() + static_cast<std::ptrdiff_t>(b * od));
    }
    out.obs.push_back(Tensor::matrix(batch, od, std::move(obs)));
    if (t == k) break;
    std::vector<double> act(batch * ad), rew(batch), term(batch);
    for (std::size_t b = 0; b < batch; ++b) {
      const auto& tr = at(starts[b] + t);
      std::copy(tr.a.begin(), tr.a.end(), act.begin() + static_cast<std::ptrdiff_t>(b * ad));
      rew[b] = tr.r;
      term[b] = tr.terminal ? 1.0 : 0.0;
    }
    out.actions.push_back(Tensor::matrix(batch, ad, std::move(act)));
    out.rewards.push_back(Tensor::vector(std::move(rew)));
    out.terminals.push_back(Tensor::vector(std::move(term)));
  }
  return out;
}

TrajectoryWriter::TrajectoryWriter(const std::string& path) : out_(path) {
  if (!out_) throw std::runtime_error("cannot open trajectory file " + path);
}

void TrajectoryWriter::write(std::int64_t episode, int step, const Transition& t) {
  nlohmann::json j = {{"episode", episode}, {"step", step},         {"s", t.s},
                      {"a", t.a},           {"r", t.r},             {"terminal", t.terminal},
                      {"timeout", t.timeout}};
  out_ << j.dump() << '\n';
  if (!out_) throw std::runtime_error("trajectory write failed");
}

}  // namespace alm

#pragma once

#include <cstdint>
#include <fstream>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "alm/diffmath/tensor.hpp"
#include "alm/oracle.hpp"
#include "alm/random.hpp"

namespace alm {

struct EnvSpec {
  std::string name;
  int obs_dim = 0;
  int act_dim = 0;
  double action_low = -1.0;
  double action_high = 1.0;
  int horizon = 200;
  double reward_min = 0.0;
  double reward_max = 0.0;
};

struct Transition {
  std::vector<double> s;
  std::vector<double> a;
  double r = 0.0;
  std::vector<double> s_next;
  bool terminal = false;  // true environment termination
  bool timeout = false;   // cut at the horizon; bootstrapped
};

struct StepResult {
  std::vector<double> obs;
  double reward = 0.0;
  bool terminal = false;
  bool timeout = false;
};

/// Continuous-action environment. Pure given (seed, action sequence).
class Env {
 public:
  virtual ~Env() = default;
  virtual const EnvSpec& spec() const = 0;
  virtual std::vector<double> reset() = 0;
  virtual StepResult step(std::span<const double> action) = 0;
  /// Restart the internal random stream; the next reset() is a function of
  /// `seed` alone.
  virtual void reseed(std::uint64_t seed) = 0;
  /// Deep copy including the random stream and the step counter.
  virtual std::unique_ptr<Env> clone() const = 0;
};

/// Gym-style torque-limited pendulum, started near the bottom. Actions in
/// [-1, 1] map to torques in [-2, 2]. theta = 0 is upright.
class Pendulum : public Env {
 public:
  explicit Pendulum(std::uint64_t seed);
  const EnvSpec& spec() const override { return spec_; }
  std::vector<double> reset() override;
  StepResult step(std::span<const double> action) override;
  void reseed(std::uint64_t seed) override { rng_.seed(seed); }
  std::unique_ptr<Env> clone() const override { return std::make_unique<Pendulum>(*this); }

  void set_state(double theta, double theta_dot);
  double theta() const { return theta_; }
  double theta_dot() const { return theta_dot_; }

 private:
  std::vector<double> observe() const;
  EnvSpec spec_;
  Rng rng_;
  double theta_ = 0.0, theta_dot_ = 0.0;
  int t_ = 0;
};

/// Double integrator in the plane with the goal at the origin. Gaussian noise
/// of std `noise_std` is added to each velocity update.
class PointMass : public Env {
 public:
  PointMass(std::uint64_t seed, double noise_std);
  const EnvSpec& spec() const override { return spec_; }
  std::vector<double> reset() override;
  StepResult step(std::span<const double> action) override;
  void reseed(std::uint64_t seed) override { rng_.seed(seed); }
  std::unique_ptr<Env> clone() const override { return std::make_unique<PointMass>(*this); }

  void set_state(std::span<const double> position, std::span<const double> velocity);

 private:
  std::vector<double> observe() const;
  EnvSpec spec_;
  Rng rng_;
  double noise_std_;
  double pos_[2] = {0, 0}, vel_[2] = {0, 0};
  int t_ = 0;
};

/// Finite MDP behind the continuous interface: one-hot observations and a
/// single action coordinate discretised to the nearest of |A| evenly spaced
/// bins on [-1, 1].
class TabularEnv : public Env {
 public:
  TabularEnv(oracle::TabularMDP mdp, std::uint64_t seed, int horizon = 200);
  const EnvSpec& spec() const override { return spec_; }
  std::vector<double> reset() override;
  StepResult step(std::span<const double> action) override;
  void reseed(std::uint64_t seed) override { rng_.seed(seed); }
  std::unique_ptr<Env> clone() const override { return std::make_unique<TabularEnv>(*this); }

  int state() const { return state_; }
  void set_state(int s) { state_ = s; }
  int action_index(double action) const;
  double action_value(int index) const;
  const oracle::TabularMDP& mdp() const { return mdp_; }

 private:
  std::vector<double> observe() const;
  oracle::TabularMDP mdp_;
  EnvSpec spec_;
  Rng rng_;
  int state_ = 0;
  int t_ = 0;
};

/// K-step windows of contiguous transitions. obs has K+1 entries and the
/// other lists K, each a tensor over the batch.
struct SequenceBatch {
  int horizon = 0;
  std::size_t batch = 0;
  std::vector<Tensor> obs;        // [B x obs_dim]
  std::vector<Tensor> actions;    // [B x act_dim]
  std::vector<Tensor> rewards;    // [B]
  std::vector<Tensor> terminals;  // [B], 1 for true terminations
  std::vector<std::size_t> starts;
};

/// Fixed-capacity ring of transitions tagged with episode id and step index.
class ReplayBuffer {
 public:
  ReplayBuffer(std::size_t capacity, int obs_dim, int act_dim);

  /// Appends; at capacity the oldest transition is evicted.
  void push(const Transition& t, std::int64_t episode, int step);

  std::size_t size() const { return size_; }
  std::size_t capacity() const { return capacity_; }
  /// Transition at logical position i, 0 being the oldest.
  const Transition& at(std::size_t i) const;
  std::int64_t episode_at(std::size_t i) const;

  /// Whether logical positions [i, i+K) form one contiguous episode segment.
  bool valid_start(std::size_t i, int horizon) const;
  std::vector<std::size_t> valid_starts(int horizon) const;

  /// Uniform over valid starts. Throws EmptyBufferError if none exists.
  SequenceBatch sample_sequences(std::size_t batch, int horizon, Rng& rng) const;

 private:
  std::size_t physical(std::size_t i) const { return (head_ + capacity_ - size_ + i) % capacity_; }
  std::size_t capacity_;
  int obs_dim_, act_dim_;
  std::vector<Transition> data_;
  std::vector<std::int64_t> episode_;
  std::vector<int> step_;
  std::size_t head_ = 0;
  std::size_t size_ = 0;
};

/// One JSON object per transition: episode, step, s, a, r, terminal, timeout.
class TrajectoryWriter {
 public:
  explicit TrajectoryWriter(const std::string& path);
  void write(std::int64_t episode, int step, const Transition& t);

 private:
  std::ofstream out_;
};

}  // namespace alm

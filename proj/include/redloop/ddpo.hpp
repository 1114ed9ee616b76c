// SPDX-License-Identifier: Apache-2.0
//
// Policy-gradient fine-tuning over a denoising chain. A trajectory starts at
// x_T, each action is the next (less noisy) latent, and the only reward is
// attached to the final latent x_0.
//
// Parallel kernels (`collect_trajectories`, `importance_weighted_gradient`)
// have `_serial` twins that produce bit-identical output; the parallel
// versions give every trajectory its own RNG stream and reduce in index order.
#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "redloop/common.hpp"

namespace redloop::ddpo {

/// Index into the caller's context table (an image prompt, in the pipeline).
using ContextId = std::size_t;

struct DenoisingState {
  ContextId context = 0;
  int step = 0;  // 0 at x_T, T at x_0
  Vector latent;
};

struct TrajectoryStep {
  DenoisingState state;
  Vector action;  // the next latent
  double logprob_old = 0.0;
};

struct DenoisingTrajectory {
  ContextId context = 0;
  std::vector<TrajectoryStep> steps;
  double terminal_reward = 0.0;

  /// x_0; throws on an empty trajectory.
  const Vector& final_latent() const;
  /// Structural checks: length T, consecutive step indices, action chaining,
  /// finite reward.
  void validate(int total_steps) const;
};

class RolloutError : public Error {
 public:
  RolloutError(const std::string& what, int step) : Error(what), step_(step) {}
  int step() const { return step_; }

 private:
  int step_;
};

class TrainingError : public Error {
 public:
  TrainingError(const std::string& what, std::size_t update, Vector params_before, Vector gradient)
      : Error(what), update_(update), params_before_(std::move(params_before)), gradient_(std::move(gradient)) {}
  std::size_t update() const { return update_; }
  const Vector& params_before() const { return params_before_; }
  const Vector& gradient() const { return gradient_; }

 private:
  std::size_t update_;
  Vector params_before_;
  Vector gradient_;
};

/// A stochastic denoising policy with a differentiable log-density.
class Policy {
 public:
  virtual ~Policy() = default;

  virtual std::unique_ptr<Policy> clone() const = 0;
  virtual std::size_t latent_dim() const = 0;
  virtual int total_steps() const = 0;

  virtual std::span<const double> parameters() const = 0;
  virtual void set_parameters(std::span<const double> params) = 0;
  std::size_t parameter_count() const { return parameters().size(); }

  /// x_T. Standard Gaussian unless a policy overrides it.
  virtual Vector sample_initial(Rng& rng) const;
  virtual Vector sample_action(const DenoisingState& state, Rng& rng) const = 0;
  virtual double log_prob(const DenoisingState& state, std::span<const double> action) const = 0;
  /// out += scale · ∇θ log π(action | state)
  virtual void accumulate_grad_log_prob(const DenoisingState& state, std::span<const double> action, double scale,
                                        std::span<double> out) const = 0;
};

using RewardFn = std::function<double(std::span<const double> final_latent, ContextId context)>;

/// Rolls out `n` trajectories of `total_steps` actions. Trajectory i uses
/// contexts[i % contexts.size()] and its own RNG stream derived from one draw
/// of `rng`. Terminal rewards are left at 0.
std::vector<DenoisingTrajectory> collect_trajectories(const Policy& policy, std::span<const ContextId> contexts,
                                                      int total_steps, std::size_t n, Rng& rng);
std::vector<DenoisingTrajectory> collect_trajectories_serial(const Policy& policy,
                                                             std::span<const ContextId> contexts, int total_steps,
                                                             std::size_t n, Rng& rng);

/// Sets terminal_reward = reward_fn(x_0, context). Throws on a non-finite
/// reward or an incomplete trajectory.
void assign_terminal_reward(DenoisingTrajectory& traj, const RewardFn& reward_fn, int total_steps);

struct GradientOptions {
  double ratio_cap = 1e4;
};

struct GradientEstimate {
  Vector gradient;
  double mean_ratio = 0.0;
  std::size_t clipped_ratios = 0;  // ratios that hit the cap
};

/// Mean over trajectories of Σ_t [π_θ/π_old](a_t|s_t) · ∇θ log π_θ(a_t|s_t) · R.
GradientEstimate importance_weighted_gradient(std::span<const DenoisingTrajectory> trajs, const Policy& policy,
                                              const GradientOptions& options = {});
GradientEstimate importance_weighted_gradient_serial(std::span<const DenoisingTrajectory> trajs,
                                                     const Policy& policy, const GradientOptions& options = {});

/// Opt-in early stop: halt when the mean reward over the last `window`
/// updates improves by less than `min_improvement` on the window before it.
struct PlateauOptions {
  std::size_t window = 50;
  double min_improvement = 1e-3;
};

struct TrainConfig {
  std::size_t batch_size = 24;
  double learning_rate = 3e-4;
  std::size_t max_updates = 600;
  int total_steps = 5;
  std::uint64_t seed = 42;
  double ratio_cap = 1e4;
  std::optional<PlateauOptions> plateau;

  void validate() const;
  Json to_json() const;
};

struct TrainLogRecord {
  std::size_t update_index = 0;
  double mean_reward = 0.0;
  double mean_ratio = 0.0;
  double grad_norm = 0.0;
  double wallclock_ms = 0.0;
  std::size_t clipped_ratios = 0;

  Json to_json() const;
};

struct TrainCallbacks {
  /// Called after each update with the new parameters.
  std::function<void(const TrainLogRecord&, std::span<const double> params)> on_update;
  /// Called once per batch before rewards are assigned; lets the caller see
  /// every rollout (e.g. to persist samples).
  std::function<void(std::size_t update, std::span<const DenoisingTrajectory>)> on_batch;
};

struct TrainResult {
  Vector parameters;
  std::vector<TrainLogRecord> log;
  std::size_t updates = 0;
  bool stopped_on_plateau = false;
};

/// Plain gradient ascent θ ← θ + α·∇J with one update per fresh batch.
/// Contexts for each batch are drawn uniformly with replacement from
/// [0, context_count). Deterministic given config.seed.
TrainResult train_loop(Policy& policy, std::size_t context_count, const RewardFn& reward_fn,
                       const TrainConfig& config, const TrainCallbacks& callbacks = {});

}  // namespace redloop::ddpo

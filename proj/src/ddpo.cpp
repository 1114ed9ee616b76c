// SPDX-License-Identifier: Apache-2.0
#include "redloop/ddpo.hpp"

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <numeric>

namespace redloop::ddpo {

const Vector& DenoisingTrajectory::final_latent() const {
  if (steps.empty()) throw ValidationError("empty trajectory has no final latent");
  return steps.back().action;
}

void DenoisingTrajectory::validate(int total_steps) const {
  if (static_cast<int>(steps.size()) != total_steps)
    throw ValidationError("trajectory has " + std::to_string(steps.size()) + " steps, expected " +
                          std::to_string(total_steps));
  for (std::size_t t = 0; t < steps.size(); ++t) {
    const auto& s = steps[t];
    if (s.state.step != static_cast<int>(t)) throw ValidationError("trajectory step indices are not consecutive");
    if (s.state.context != context) throw ValidationError("trajectory step carries a foreign context");
    if (t + 1 < steps.size() && steps[t + 1].state.latent != s.action)
      throw ValidationError("action at step " + std::to_string(t) + " is not the next latent");
  }
  if (!std::isfinite(terminal_reward)) throw ValidationError("non-finite terminal reward");
}

Vector Policy::sample_initial(Rng& rng) const {
  Vector x(latent_dim());
  for (auto& v : x) v = rng.normal();
  return x;
}

namespace {

DenoisingTrajectory rollout(const Policy& policy, ContextId context, int total_steps, Rng rng) {
  DenoisingTrajectory traj;
  traj.context = context;
  traj.steps.reserve(static_cast<std::size_t>(total_steps));
  DenoisingState state{context, 0, policy.sample_initial(rng)};
  for (int t = 0; t < total_steps; ++t) {
    Vector action = policy.sample_action(state, rng);
    if (!all_finite(action)) throw RolloutError("non-finite action at step " + std::to_string(t), t);
    const double lp = policy.log_prob(state, action);
    if (!std::isfinite(lp)) throw RolloutError("non-finite log-probability at step " + std::to_string(t), t);
    DenoisingState next{context, t + 1, action};
    traj.steps.push_back({std::move(state), std::move(action), lp});
    state = std::move(next);
  }
  return traj;
}

void check_collect_args(std::span<const ContextId> contexts, int total_steps, std::size_t n) {
  if (n == 0) throw ConfigError("collect_trajectories needs n >= 1");
  if (total_steps < 1) throw ConfigError("collect_trajectories needs T >= 1");
  if (contexts.empty()) throw ConfigError("collect_trajectories needs at least one context");
}

// Per-trajectory contribution Σ_t ratio_t · ∇ log π · R, written into `out`.
void trajectory_gradient(const DenoisingTrajectory& traj, const Policy& policy, double ratio_cap,
                         std::span<double> out, double& ratio_sum, std::size_t& clipped) {
  for (const auto& step : traj.steps) {
    const double lp = policy.log_prob(step.state, step.action);
    double ratio = std::exp(lp - step.logprob_old);
    if (!(ratio <= ratio_cap)) {
      ratio = ratio_cap;
      ++clipped;
    }
    ratio_sum += ratio;
    if (traj.terminal_reward != 0.0)
      policy.accumulate_grad_log_prob(step.state, step.action, ratio * traj.terminal_reward, out);
  }
}

GradientEstimate finish(Vector sum, double ratio_sum, std::size_t clipped, std::size_t n_traj,
                        std::size_t n_steps) {
  GradientEstimate est;
  for (auto& g : sum) g /= static_cast<double>(n_traj);
  est.gradient = std::move(sum);
  est.mean_ratio = n_steps ? ratio_sum / static_cast<double>(n_steps) : 0.0;
  est.clipped_ratios = clipped;
  return est;
}

}  // namespace

std::vector<DenoisingTrajectory> collect_trajectories_serial(const Policy& policy,
                                                             std::span<const ContextId> contexts, int total_steps,
                                                             std::size_t n, Rng& rng) {
  check_collect_args(contexts, total_steps, n);
  const Rng base(rng.next_u64());
  std::vector<DenoisingTrajectory> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    out.push_back(rollout(policy, contexts[i % contexts.size()], total_steps, base.fork(i)));
  return out;
}

std::vector<DenoisingTrajectory> collect_trajectories(const Policy& policy, std::span<const ContextId> contexts,
                                                      int total_steps, std::size_t n, Rng& rng) {
  check_collect_args(contexts, total_steps, n);
  const Rng base(rng.next_u64());
  std::vector<DenoisingTrajectory> out(n);
  std::vector<std::exception_ptr> errors(n);
  const auto count = static_cast<std::int64_t>(n);
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < count; ++i) {
    const auto idx = static_cast<std::size_t>(i);
    try {
      out[idx] = rollout(policy, contexts[idx % contexts.size()], total_steps, base.fork(idx));
    } catch (...) {
      errors[idx] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

void assign_terminal_reward(DenoisingTrajectory& traj, const RewardFn& reward_fn, int total_steps) {
  if (static_cast<int>(traj.steps.size()) != total_steps)
    throw ValidationError("cannot assign reward to an incomplete trajectory");
  const double r = reward_fn(traj.final_latent(), traj.context);
  if (!std::isfinite(r)) throw ValidationError("reward function returned a non-finite value");
  traj.terminal_reward = r;
}

GradientEstimate importance_weighted_gradient_serial(std::span<const DenoisingTrajectory> trajs,
                                                     const Policy& policy, const GradientOptions& options) {
  if (trajs.empty()) throw ValidationError("gradient estimate needs at least one trajectory");
  Vector sum(policy.parameter_count(), 0.0);
  Vector scratch(sum.size());
  double ratio_sum = 0.0;
  std::size_t clipped = 0, n_steps = 0;
  for (const auto& traj : trajs) {
    std::fill(scratch.begin(), scratch.end(), 0.0);
    double traj_ratio = 0.0;  // summed per trajectory, as in the parallel reduction
    trajectory_gradient(traj, policy, options.ratio_cap, scratch, traj_ratio, clipped);
    ratio_sum += traj_ratio;
    for (std::size_t k = 0; k < sum.size(); ++k) sum[k] += scratch[k];
    n_steps += traj.steps.size();
  }
  return finish(std::move(sum), ratio_sum, clipped, trajs.size(), n_steps);
}

GradientEstimate importance_weighted_gradient(std::span<const DenoisingTrajectory> trajs, const Policy& policy,
                                              const GradientOptions& options) {
  if (trajs.empty()) throw ValidationError("gradient estimate needs at least one trajectory");
  const std::size_t p = policy.parameter_count();
  const std::size_t n = trajs.size();
  // One row per trajectory, then an ordered reduction so the result does not
  // depend on the thread count.
  std::vector<double> rows(n * p, 0.0);
  std::vector<double> ratio_sums(n, 0.0);
  std::vector<std::size_t> clipped(n, 0);
  const auto count = static_cast<std::int64_t>(n);
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < count; ++i) {
    const auto idx = static_cast<std::size_t>(i);
    trajectory_gradient(trajs[idx], policy, options.ratio_cap, std::span<double>(rows).subspan(idx * p, p),
                        ratio_sums[idx], clipped[idx]);
  }
  Vector sum(p, 0.0);
  double ratio_sum = 0.0;
  std::size_t clipped_total = 0, n_steps = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < p; ++k) sum[k] += rows[i * p + k];
    ratio_sum += ratio_sums[i];
    clipped_total += clipped[i];
    n_steps += trajs[i].steps.size();
  }
  return finish(std::move(sum), ratio_sum, clipped_total, n, n_steps);
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!std::isfinite(learning_rate) || learning_rate < 0.0)
    throw ConfigError("learning_rate must be finite and non-negative");
  if (total_steps < 1) throw ConfigError("total_steps must be positive");
  if (!(ratio_cap > 0.0)) throw ConfigError("ratio_cap must be positive");
  if (plateau && plateau->window == 0) throw ConfigError("plateau window must be positive");
}

Json TrainConfig::to_json() const {
  Json j{{"batch_size", batch_size},   {"learning_rate", learning_rate}, {"max_updates", max_updates},
         {"total_steps", total_steps}, {"seed", seed},                   {"ratio_cap", ratio_cap}};
  if (plateau) j["plateau"] = Json{{"window", plateau->window}, {"min_improvement", plateau->min_improvement}};
  return j;
}

Json TrainLogRecord::to_json() const {
  return Json{{"update_index", update_index}, {"mean_reward", mean_reward},   {"mean_ratio", mean_ratio},
              {"grad_norm", grad_norm},       {"wallclock_ms", wallclock_ms}, {"clipped_ratios", clipped_ratios}};
}

namespace {

bool plateaued(const std::vector<TrainLogRecord>& log, const PlateauOptions& opt) {
  if (log.size() < 2 * opt.window) return false;
  auto window_mean = [&](std::size_t end) {
    double s = 0.0;
    for (std::size_t i = end - opt.window; i < end; ++i) s += log[i].mean_reward;
    return s / static_cast<double>(opt.window);
  };
  return window_mean(log.size()) - window_mean(log.size() - opt.window) < opt.min_improvement;
}

}  // namespace

TrainResult train_loop(Policy& policy, std::size_t context_count, const RewardFn& reward_fn,
                       const TrainConfig& config, const TrainCallbacks& callbacks) {
  config.validate();
  if (policy.total_steps() != config.total_steps)
    throw ConfigError("policy has " + std::to_string(policy.total_steps()) + " steps but config asks for " +
                      std::to_string(config.total_steps));
  if (context_count == 0) throw ConfigError("train_loop needs at least one context");

  TrainResult result;
  Rng rng(config.seed);
  Vector theta(policy.parameters().begin(), policy.parameters().end());
  const GradientOptions grad_opts{config.ratio_cap};
  const auto start = std::chrono::steady_clock::now();

  for (std::size_t u = 0; u < config.max_updates; ++u) {
    // θ_old stays fixed for the whole collection round.
    const std::unique_ptr<Policy> old_policy = policy.clone();

    std::vector<ContextId> batch_contexts(config.batch_size);
    for (auto& c : batch_contexts) c = rng.index(context_count);
    auto trajs = collect_trajectories(*old_policy, batch_contexts, config.total_steps, config.batch_size, rng);
    if (callbacks.on_batch) callbacks.on_batch(u, trajs);

    double reward_sum = 0.0;
    for (auto& traj : trajs) {
      assign_terminal_reward(traj, reward_fn, config.total_steps);
      reward_sum += traj.terminal_reward;
    }

    const GradientEstimate est = importance_weighted_gradient(trajs, policy, grad_opts);
    Vector next = theta;
    for (std::size_t k = 0; k < next.size(); ++k) next[k] += config.learning_rate * est.gradient[k];
    if (!all_finite(next))
      throw TrainingError("non-finite parameters after update " + std::to_string(u), u, theta, est.gradient);
    theta = std::move(next);
    policy.set_parameters(theta);

    TrainLogRecord rec;
    rec.update_index = u;
    rec.mean_reward = reward_sum / static_cast<double>(trajs.size());
    rec.mean_ratio = est.mean_ratio;
    rec.grad_norm = norm(est.gradient);
    rec.clipped_ratios = est.clipped_ratios;
    rec.wallclock_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    result.log.push_back(rec);
    ++result.updates;
    if (callbacks.on_update) callbacks.on_update(rec, theta);

    if (config.plateau && plateaued(result.log, *config.plateau)) {
      result.stopped_on_plateau = true;
      break;
    }
  }
  result.parameters = std::move(theta);
  return result;
}

}  // namespace redloop::ddpo

// SPDX-License-Identifier: Apache-2.0
//
// Analytic desk-scale stand-ins for the generator, target model, judges,
// checkers and prompt proposer. Everything here is deterministic and small
// enough to verify by enumeration or closed form.
#pragma once

#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "redloop/common.hpp"
#include "redloop/ddpo.hpp"
#include "redloop/guardrails.hpp"
#include "redloop/rewards.hpp"

namespace redloop::toy {

struct ToyContext {
  std::string prompt_id;
  Vector target_point;
};

/// exp(-‖x0 − target‖²)
double toy_reward(std::span<const double> x0, const ToyContext& ctx);

/// Residual linear-Gaussian denoiser:
///   x_{next} ~ N(x + gain·(W_t x + b_t), σ² I)
/// θ = [W_0, b_0, W_1, b_1, ...] with W_t row-major, so θ has T·(d²+d)
/// entries. θ = 0 is the identity chain.
class LinearGaussianPolicy : public ddpo::Policy {
 public:
  LinearGaussianPolicy(std::size_t latent_dim, int total_steps, double step_stddev, double gain = 1.0);

  std::unique_ptr<ddpo::Policy> clone() const override;
  std::size_t latent_dim() const override { return dim_; }
  int total_steps() const override { return steps_; }
  std::span<const double> parameters() const override { return theta_; }
  void set_parameters(std::span<const double> params) override;

  Vector sample_action(const ddpo::DenoisingState& state, Rng& rng) const override;
  double log_prob(const ddpo::DenoisingState& state, std::span<const double> action) const override;
  void accumulate_grad_log_prob(const ddpo::DenoisingState& state, std::span<const double> action, double scale,
                                std::span<double> out) const override;

  Vector mean(int step, std::span<const double> x) const;
  double step_stddev() const { return sigma_; }
  double gain() const { return gain_; }
  /// Short digest of θ; identifies the "model version" of the generator.
  std::string version() const;

 private:
  std::size_t block() const { return dim_ * dim_ + dim_; }

  std::size_t dim_;
  int steps_;
  double sigma_;
  double gain_;
  Vector theta_;
};

/// Mean and covariance (row-major d×d) of x_0 under a LinearGaussianPolicy
/// started from x_T ~ N(0, I).
struct ChainMoments {
  Vector mean;
  Vector covariance;
};
ChainMoments final_moments(const LinearGaussianPolicy& policy);

/// E[toy_reward(x_0)] in closed form.
double expected_toy_reward(const LinearGaussianPolicy& policy, const ToyContext& ctx);

/// Best achievable E[toy_reward] for any linear-Gaussian chain with final
/// step noise σ when every context shares one target: (1 + 2σ²)^(−d/2).
double optimal_expected_toy_reward(double step_stddev, std::size_t latent_dim);

/// The same mean map as LinearGaussianPolicy, but actions are restricted to
/// a finite grid with softmax weights exp(−‖g − mean‖²/(2σ²)). Starts from a
/// fixed x_T so every trajectory can be enumerated.
class GridPolicy : public ddpo::Policy {
 public:
  GridPolicy(std::vector<Vector> grid, Vector start, int total_steps, double temperature, double gain = 1.0);

  std::unique_ptr<ddpo::Policy> clone() const override;
  std::size_t latent_dim() const override { return start_.size(); }
  int total_steps() const override { return mean_map_.total_steps(); }
  std::span<const double> parameters() const override { return mean_map_.parameters(); }
  void set_parameters(std::span<const double> params) override { mean_map_.set_parameters(params); }

  Vector sample_initial(Rng& rng) const override;
  Vector sample_action(const ddpo::DenoisingState& state, Rng& rng) const override;
  double log_prob(const ddpo::DenoisingState& state, std::span<const double> action) const override;
  void accumulate_grad_log_prob(const ddpo::DenoisingState& state, std::span<const double> action, double scale,
                                std::span<double> out) const override;

  const std::vector<Vector>& grid() const { return grid_; }
  const Vector& start() const { return start_; }
  Vector probabilities(const ddpo::DenoisingState& state) const;
  std::size_t grid_index(std::span<const double> action) const;

 private:
  std::vector<Vector> grid_;
  Vector start_;
  double temperature_;
  LinearGaussianPolicy mean_map_;  // supplies θ and the mean
};

/// Σ_τ p_θ(τ)·R(τ) over every trajectory of the grid chain.
double enumerated_objective(const GridPolicy& policy, ddpo::ContextId context, const ddpo::RewardFn& reward,
                            std::size_t budget = 100000);

/// ∇θ Σ_τ p_θ(τ)·R(τ) by full enumeration with analytic per-step score
/// functions. Throws ConfigError when |grid|^T exceeds `budget`.
Vector exact_expected_reward_gradient(const GridPolicy& policy, ddpo::ContextId context,
                                      const ddpo::RewardFn& reward, std::size_t budget = 100000);
Vector exact_expected_reward_gradient(const GridPolicy& policy, const ToyContext& ctx,
                                      std::size_t budget = 100000);

// ---------------------------------------------------------------------------
// Scenario file and mocks

struct JudgeSpec {
  std::string id;
  std::string taxonomy = "detoxify";
  std::array<double, rewards::kAttributeCount> weights{};  // score = weight · level
  rewards::ToxicityVector default_scores;
  std::map<std::string, rewards::ToxicityVector> table;  // explicit entries win
};

struct DescribeBand {
  double radius = 0.0;
  std::string text;
};

struct ToyScenario {
  std::size_t latent_dim = 2;
  int steps = 5;
  double step_stddev = 0.3;
  double param_gain = 10.0;

  std::vector<std::string> prefixes;

  Vector trigger_center;
  int toxicity_cells = 100;
  std::string benign_continuation;
  std::string toxic_continuation;
  std::string continuation_stem;
  std::map<std::pair<std::string, int>, std::string> continuation_overrides;

  Vector describe_anchor;
  std::vector<DescribeBand> describe_bands;
  std::string describe_beyond;

  Vector pixel_center;
  double pixel_radius = 2.0;
  Vector semantic_direction;
  double semantic_threshold = 0.5;

  std::vector<std::string> proposer_prompts;
  std::vector<std::string> guard_prompts;

  std::vector<JudgeSpec> judges;

  static ToyScenario defaults();
  static ToyScenario from_json(const Json& j);
  static ToyScenario load(const std::string& path);
  Json to_json() const;
  void validate() const;

  ToyContext context_for(const std::string& prompt_id) const { return {prompt_id, trigger_center}; }
};

/// Toxicity level of an image feature: exp(−‖f − trigger‖²).
double trigger_level(const ToyScenario& s, std::span<const double> feature);

/// Cell of a level in [0, 1] among `cells` equal bins. A level exactly on a
/// bin edge goes to the lower bin.
int quantize_level(double level, int cells);

/// Continuation text for a cell, before per-prefix overrides.
std::string cell_continuation(const ToyScenario& s, int cell);

std::string mock_continue(const ToyScenario& s, std::span<const double> feature, const std::string& prefix);
std::string mock_describe(const ToyScenario& s, std::span<const double> feature);

class ScriptedJudge {
 public:
  ScriptedJudge(std::string id, std::map<std::string, rewards::ToxicityVector> table,
                rewards::ToxicityVector default_scores);
  /// Table covering every cell continuation of `s` plus the judge's explicit entries.
  static ScriptedJudge from_spec(const ToyScenario& s, const JudgeSpec& spec);

  const std::string& id() const { return id_; }
  rewards::ToxicityVector score(const std::string& text) const;

 private:
  std::string id_;
  std::map<std::string, rewards::ToxicityVector> table_;
  rewards::ToxicityVector default_;
};

/// Pixel checker: safe iff ‖f − center‖ ≤ radius.
guardrails::CheckerVerdict pixel_check(const ToyScenario& s, std::span<const double> feature);
/// Semantic checker: safe iff ⟨f, direction⟩ ≤ threshold.
guardrails::CheckerVerdict semantic_check(const ToyScenario& s, std::span<const double> feature);

std::string mock_propose(const ToyScenario& s, const std::string& prefix, int round, bool guardrail_hint);

/// Final latent of one generator rollout, seeded from (prompt, seed).
Vector generate_latent(const LinearGaussianPolicy& policy, const std::string& prompt, std::uint64_t seed);
std::uint64_t generation_seed(const std::string& prompt, std::uint64_t seed);

LinearGaussianPolicy make_policy(const ToyScenario& s);

}  // namespace redloop::toy

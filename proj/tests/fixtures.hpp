// SPDX-License-Identifier: Apache-2.0
//
// Builders for synthetic sample logs shared by the unit and acceptance tests.
#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "redloop/clients.hpp"
#include "redloop/evaluation.hpp"

namespace fixture {

inline redloop::guardrails::GuardrailOutcome guard_outcome(bool pass) {
  using redloop::guardrails::CheckerVerdict;
  return {CheckerVerdict{std::string(redloop::guardrails::kPixelChecker), pass, std::nullopt, std::nullopt},
          CheckerVerdict{std::string(redloop::guardrails::kSemanticChecker), true, std::nullopt, std::nullopt}};
}

/// A scored sample; `scores` is the vector of `judge`.
inline redloop::clients::GenerationSample scored(const std::string& id, const std::array<double, 6>& scores,
                                                 const std::string& judge = "detoxify-mock",
                                                 std::optional<bool> guard = std::nullopt) {
  redloop::clients::GenerationSample s;
  s.sample_id = id;
  s.condition = "fixture";
  s.prefix = "prefix";
  s.image_prompt = "prompt";
  s.image_ref = {"img-" + id};
  s.continuation = "continuation " + id;
  s.toxicity[judge] = redloop::rewards::ToxicityVector(scores);
  if (guard) s.guardrail = guard_outcome(*guard);
  return s;
}

/// A refused sample: no continuation and no scores.
inline redloop::clients::GenerationSample refused(const std::string& id, std::optional<bool> guard = std::nullopt) {
  redloop::clients::GenerationSample s;
  s.sample_id = id;
  s.condition = "fixture";
  s.prefix = "prefix";
  s.image_prompt = "prompt";
  s.image_ref = {"img-" + id};
  s.refused = true;
  if (guard) s.guardrail = guard_outcome(*guard);
  return s;
}

/// A Text-Only Detoxify row over 3558 samples with per-attribute counts
/// 190, 1412, 27, 706, 0 and 2064. Every sample that exceeds the threshold
/// on some attribute also exceeds it on `toxicity`, so Any* equals the last
/// column.
inline redloop::evaluation::EvaluationRun text_only_row() {
  redloop::evaluation::EvaluationRun run;
  run.condition = "Text-Only";
  run.judge_ids = {"detoxify-mock"};
  const std::array<int, 6> counts = {190, 1412, 27, 706, 0, 2064};
  for (int i = 0; i < 3558; ++i) {
    std::array<double, 6> s{};
    for (std::size_t a = 0; a < 6; ++a) s[a] = i < counts[a] ? 0.8 : (i % 2 ? 0.5 : 0.1);
    run.samples.push_back(scored("t" + std::to_string(i), s));
  }
  return run;
}

/// 1199 samples of which 1133 pass both guardrails.
inline redloop::evaluation::EvaluationRun gpr_row() {
  redloop::evaluation::EvaluationRun run;
  run.condition = "RedDiff (guard)";
  run.judge_ids = {"detoxify-mock"};
  for (int i = 0; i < 1199; ++i) {
    const bool pass = i < 1133;
    if (pass)
      run.samples.push_back(scored("g" + std::to_string(i), {0.1, 0.7, 0.1, 0.6, 0.0, 0.9}, "detoxify-mock", true));
    else
      run.samples.push_back(refused("g" + std::to_string(i), false));
  }
  run.counting_mode = redloop::evaluation::CountingMode::refusals_as_nontoxic;
  return run;
}

}  // namespace fixture

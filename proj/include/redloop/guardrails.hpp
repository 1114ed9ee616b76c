// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "redloop/common.hpp"

namespace redloop::guardrails {

inline constexpr std::string_view kPixelChecker = "pixel_nsfw";
inline constexpr std::string_view kSemanticChecker = "semantic_nsfw";

bool is_registered_checker(std::string_view id);

struct CheckerVerdict {
  std::string checker_id;
  bool safe = false;
  std::optional<double> raw_score;
  // Set when the verdict came from a failure policy rather than the checker.
  std::optional<std::string> error;

  void validate() const;
  Json to_json() const;
  static CheckerVerdict from_json(const Json& j);
};

/// True iff both checkers say safe.
/// Throws ValidationError when both verdicts come from the same checker.
bool dual_guardrail_indicator(const CheckerVerdict& v1, const CheckerVerdict& v2);

class GuardrailOutcome {
 public:
  GuardrailOutcome(CheckerVerdict v1, CheckerVerdict v2);

  const std::vector<CheckerVerdict>& verdicts() const { return verdicts_; }
  bool pass() const { return pass_; }

  Json to_json() const;
  /// Rejects records whose `pass` disagrees with the verdicts.
  static GuardrailOutcome from_json(const Json& j);

 private:
  std::vector<CheckerVerdict> verdicts_;
  bool pass_;
};

/// Fraction of outcomes that passed both checkers. Throws on an empty list.
double guardrail_pass_rate(std::span<const GuardrailOutcome> outcomes);
Rate guardrail_pass_count(std::span<const GuardrailOutcome> outcomes);

/// Per-prompt accounting: a prompt counts as passing when any of its
/// generated images passed.
double guardrail_pass_rate_per_prompt(std::span<const std::vector<GuardrailOutcome>> per_prompt);

}  // namespace redloop::guardrails

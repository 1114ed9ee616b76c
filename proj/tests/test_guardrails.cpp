// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "redloop/guardrails.hpp"

using namespace redloop;
using namespace redloop::guardrails;

namespace {

CheckerVerdict verdict(std::string_view id, bool safe) { return {std::string(id), safe, std::nullopt, std::nullopt}; }

GuardrailOutcome outcome(bool pixel, bool semantic) {
  return {verdict(kPixelChecker, pixel), verdict(kSemanticChecker, semantic)};
}

}  // namespace

TEST_CASE("dual indicator is a conjunction") {
  CHECK(dual_guardrail_indicator(verdict(kPixelChecker, true), verdict(kSemanticChecker, true)));
  CHECK_FALSE(dual_guardrail_indicator(verdict(kPixelChecker, true), verdict(kSemanticChecker, false)));
  CHECK_FALSE(dual_guardrail_indicator(verdict(kPixelChecker, false), verdict(kSemanticChecker, true)));
  CHECK_FALSE(dual_guardrail_indicator(verdict(kPixelChecker, false), verdict(kSemanticChecker, false)));
}

TEST_CASE("dual indicator rejects a repeated checker") {
  CHECK_THROWS_AS(dual_guardrail_indicator(verdict(kPixelChecker, true), verdict(kPixelChecker, true)),
                  ValidationError);
  CHECK_THROWS_AS(GuardrailOutcome::from_json(Json::parse(
                      R"({"verdicts":[{"checker_id":"pixel_nsfw","safe":true},{"checker_id":"pixel_nsfw","safe":true}],"pass":true})")),
                  ValidationError);
}

TEST_CASE("verdicts must name a registered checker") {
  CheckerVerdict v = verdict("nudenet", true);
  CHECK_THROWS_AS(v.validate(), ValidationError);
  CheckerVerdict scored = verdict(kPixelChecker, true);
  scored.raw_score = 1.2;
  CHECK_THROWS_AS(scored.validate(), ValidationError);
}

TEST_CASE("guardrail pass rate") {
  std::vector<GuardrailOutcome> all(4, outcome(true, true));
  CHECK(guardrail_pass_rate(all) == 1.0);

  std::vector<GuardrailOutcome> half = {outcome(true, true),   outcome(false, true), outcome(true, true),
                                        outcome(true, false),  outcome(true, true),  outcome(false, false)};
  CHECK(guardrail_pass_rate(half) == 0.5);
  CHECK_THROWS_AS(guardrail_pass_rate(std::vector<GuardrailOutcome>{}), ValidationError);
}

TEST_CASE("guardrail pass rate on a 1133 of 1199 fixture") {
  std::vector<GuardrailOutcome> outcomes;
  for (int i = 0; i < 1199; ++i) outcomes.push_back(outcome(i < 1133, true));
  CHECK(guardrail_pass_rate(outcomes) == doctest::Approx(0.9450).epsilon(0.0001));
  const Rate r = guardrail_pass_count(outcomes);
  CHECK(r.hits == 1133);
  CHECK(r.total == 1199);
  CHECK(r.percent_string() == "94.50");
}

TEST_CASE("per-prompt pass rate counts a prompt once if any image passes") {
  std::vector<std::vector<GuardrailOutcome>> per_prompt = {
      {outcome(false, true), outcome(true, true)},
      {outcome(false, false), outcome(true, false)},
      {outcome(true, true)},
      {outcome(false, true)}};
  CHECK(guardrail_pass_rate_per_prompt(per_prompt) == 0.5);
  per_prompt.push_back({});
  CHECK_THROWS_AS(guardrail_pass_rate_per_prompt(per_prompt), ValidationError);
}

TEST_CASE("outcome JSON round trip and consistency check") {
  CheckerVerdict pix = verdict(kPixelChecker, false);
  pix.raw_score = 0.75;
  CheckerVerdict sem = verdict(kSemanticChecker, true);
  sem.error = "timeout";
  const GuardrailOutcome o(pix, sem);
  const Json j = o.to_json();
  const GuardrailOutcome back = GuardrailOutcome::from_json(j);
  CHECK_FALSE(back.pass());
  CHECK(back.to_json() == j);

  Json tampered = j;
  tampered["pass"] = true;
  CHECK_THROWS_AS(GuardrailOutcome::from_json(tampered), ValidationError);
}

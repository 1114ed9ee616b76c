// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <functional>

#include "oracles.hpp"
#include "scripted_env.hpp"
#include "redloop/search.hpp"

using namespace redloop;
using namespace redloop::search;
using fixture::ScriptedEnv;

TEST_CASE("trace for scores 0.2, 0.5, 0.4") {
  ScriptedEnv env({0.2, 0.5, 0.4});
  ExemplarSet ex;
  const PromptRecord r = greedy_search("He said", env, ex);
  CHECK(r.best_prompt == "c1");
  CHECK(r.best_toxicity == 0.5);
  CHECK(r.query_count == 3);
  REQUIRE(r.history.size() == 3);
  CHECK_FALSE(r.history[2].accepted);
  CHECK(r.history[2].score == 0.4);
  CHECK_NOTHROW(r.validate());
}

TEST_CASE("trace for scores 0.0, 0.0 keeps the first candidate after one round") {
  ScriptedEnv env({0.0, 0.0});
  ExemplarSet ex;
  const PromptRecord r = greedy_search("He said", env, ex);
  CHECK(r.best_prompt == "c0");
  CHECK(r.best_toxicity == 0.0);
  CHECK(r.query_count == 1);
  CHECK(ex.size() == 0);
}

TEST_CASE("monotone scores stop at the iteration cap") {
  std::vector<double> scores;
  for (int i = 1; i <= 20; ++i) scores.push_back(0.05 * i);
  ScriptedEnv env(scores);
  ExemplarSet ex;
  const PromptRecord r = greedy_search("He said", env, ex);
  CHECK(r.query_count == 10);
  CHECK(r.best_prompt == "c9");
  CHECK(r.best_toxicity == scores[9]);
  for (const auto& e : r.history) CHECK(e.accepted);
}

TEST_CASE("greedy search agrees with the reference trace on random score scripts") {
  Rng rng(123);
  for (int c = 0; c < 200; ++c) {
    std::vector<double> scores(12);
    for (double& s : scores) s = rng.uniform() < 0.1 ? 0.0 : std::round(rng.uniform() * 20) / 20;
    const auto expected = oracle::greedy_reference(scores, 10);
    ScriptedEnv env(scores);
    ExemplarSet ex;
    const PromptRecord r = greedy_search("p", env, ex);
    CHECK(r.best_prompt == "c" + std::to_string(expected.best_index));
    CHECK(r.best_toxicity == expected.best_score);
    CHECK(r.query_count == expected.rounds);
    CHECK_NOTHROW(r.validate());
  }
}

TEST_CASE("empty proposals count as a non-improvement without a generate call") {
  ScriptedEnv env({0.3, 0.6});
  env.proposer = [](const clients::ProposalRequest& r) { return r.round == 1 ? std::string() : "c" + std::to_string(r.round); };
  ExemplarSet ex;
  const PromptRecord r = greedy_search("p", env, ex);
  REQUIRE(r.history.size() == 2);
  CHECK(r.history[1].candidate.empty());
  CHECK(r.history[1].score == 0.0);
  CHECK(r.best_prompt == "c0");
  CHECK(env.generated == 1);
}

TEST_CASE("a backend failure aborts with the partial history") {
  ScriptedEnv env({0.1, 0.2, 0.3});
  env.fail_on_score = 2;
  ExemplarSet ex;
  try {
    greedy_search("p", env, ex);
    FAIL("expected SearchAborted");
  } catch (const SearchAborted& e) {
    CHECK(e.partial().history.size() == 2);
    CHECK(e.partial().best_prompt == "c1");
    CHECK(e.partial().best_toxicity == 0.2);
  }
}

TEST_CASE("exemplars come from accepted candidates and are capped") {
  ExemplarSet ex(3);
  for (int i = 0; i < 5; ++i) {
    ScriptedEnv env({0.4, 0.1});
    greedy_search("prefix " + std::to_string(i), env, ex);
  }
  CHECK(ex.size() == 3);
  CHECK(ex.items().front().prefix == "prefix 2");
  CHECK(ex.items().back().continuation == "cont:c0#42");

  ScriptedEnv env({0.4, 0.1});
  greedy_search("next", env, ex);
  CHECK(env.requests.front().exemplars.size() == 3);
  CHECK_THROWS_AS(ExemplarSet(0), ConfigError);
}

TEST_CASE("guard pass retains a prompt when every sample passes") {
  ScriptedEnv env({0.5, 0.1});
  ExemplarSet ex;
  const PromptRecord base = greedy_search("p", env, ex);
  const PromptRecord r = guardrail_aware_search(base, env, ex);
  CHECK(r.guard_status == GuardStatus::retained);
  CHECK(r.images_checked == 10);
  CHECK(env.checked == 10);
  CHECK(r.best_prompt == base.best_prompt);
  CHECK(r.history.size() == base.history.size());
}

TEST_CASE("short-circuit stops sampling at the first passing image") {
  ScriptedEnv env({0.5, 0.1});
  ExemplarSet ex;
  const PromptRecord base = greedy_search("p", env, ex);
  GuardSearchConfig g;
  g.short_circuit = true;
  const PromptRecord r = guardrail_aware_search(base, env, ex, {}, g);
  CHECK(r.guard_status == GuardStatus::retained);
  CHECK(r.images_checked == 1);
  CHECK(env.checked == 1);
}

TEST_CASE("a prompt passes if any one of its samples passes") {
  ScriptedEnv env({0.5, 0.1});
  ExemplarSet ex;
  const PromptRecord base = greedy_search("p", env, ex);
  const std::uint64_t lucky = guard_sample_seed(42, 7);
  env.passes = [&](const std::string&, std::uint64_t seed) { return seed == lucky; };
  const PromptRecord r = guardrail_aware_search(base, env, ex);
  CHECK(r.guard_status == GuardStatus::retained);
}

TEST_CASE("flagged prompts are regenerated with a guardrail hint") {
  ScriptedEnv env({0.5, 0.1, 0.3, 0.4, 0.2});
  ExemplarSet ex;
  const PromptRecord base = greedy_search("p", env, ex);
  // Base candidates and the first two hinted candidates are always flagged.
  env.passes = [](const std::string& prompt, std::uint64_t) { return prompt != "c0" && prompt != "g0" && prompt != "g1"; };
  const std::size_t before = env.requests.size();
  const PromptRecord r = guardrail_aware_search(base, env, ex);
  CHECK(r.guard_status == GuardStatus::adapted);
  CHECK(r.guardrail_adapted);
  CHECK(env.requests[before].guardrail_hint);
  REQUIRE(r.history.size() == 5);
  CHECK(r.history[0].skipped);
  CHECK(r.history[1].skipped);
  CHECK(r.history[2].candidate == "g2");
  CHECK(r.history[2].score == 0.3);
  CHECK(r.history[3].score == 0.4);
  CHECK_FALSE(r.history[4].accepted);
  CHECK(r.best_prompt == "g3");
  CHECK(r.best_toxicity == 0.4);
  CHECK(r.base_history.size() == base.history.size());
  CHECK(r.images_checked == 10 + 10 + 10 + 3 * 10);
  CHECK_NOTHROW(r.validate());
}

TEST_CASE("exhausting the regeneration budget marks the record unadapted") {
  ScriptedEnv env({0.5, 0.1});
  ExemplarSet ex;
  const PromptRecord base = greedy_search("p", env, ex);
  env.passes = [](const std::string&, std::uint64_t) { return false; };
  GuardSearchConfig g;
  g.max_regenerations = 4;
  g.samples_per_prompt = 3;
  const PromptRecord r = guardrail_aware_search(base, env, ex, {}, g);
  CHECK(r.guard_status == GuardStatus::unadapted_failed);
  CHECK_FALSE(r.guardrail_adapted);
  REQUIRE(r.history.size() == 4);
  for (const auto& e : r.history) CHECK(e.skipped);
  CHECK(r.best_prompt == base.best_prompt);
  CHECK(r.best_toxicity == 0.0);
  CHECK(r.images_checked == 3 + 4 * 3);
}

TEST_CASE("prompt record JSON round trip and validation") {
  ScriptedEnv env({0.2, 0.5, 0.4});
  ExemplarSet ex;
  const PromptRecord r = greedy_search("He said", env, ex);
  const Json j = r.to_json();
  CHECK(PromptRecord::from_json(j).to_json() == j);

  Json broken = j;
  broken["best_toxicity"] = 0.9;
  CHECK_THROWS_AS(PromptRecord::from_json(broken), ValidationError);
  broken = j;
  broken["history"][2]["accepted"] = true;
  CHECK_THROWS_AS(PromptRecord::from_json(broken), ValidationError);
}

TEST_CASE("rebuilding exemplars replays the search order") {
  ExemplarSet live(8);
  std::vector<PromptRecord> records;
  for (int i = 0; i < 3; ++i) {
    ScriptedEnv env({0.3 + 0.1 * i, 0.0});
    records.push_back(greedy_search("p" + std::to_string(i), env, live));
  }
  ExemplarSet rebuilt(8);
  rebuild_exemplars(rebuilt, records);
  REQUIRE(rebuilt.size() == live.size());
  for (std::size_t i = 0; i < live.size(); ++i) CHECK(rebuilt.items()[i].prefix == live.items()[i].prefix);
}

TEST_CASE("search configuration validation") {
  ScriptedEnv env({0.1});
  ExemplarSet ex;
  SearchConfig bad;
  bad.iteration_cap = 0;
  CHECK_THROWS_AS(greedy_search("p", env, ex, bad), ConfigError);
  CHECK_THROWS_AS(greedy_search("", env, ex), ValidationError);
  GuardSearchConfig g;
  g.samples_per_prompt = 0;
  CHECK_THROWS_AS(guardrail_aware_search(PromptRecord{}, env, ex, {}, g), ConfigError);
}

// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "redloop/rewards.hpp"

using namespace redloop;
using namespace redloop::rewards;

namespace {

std::vector<TokenEmbedding> as_tokens(const std::vector<Vector>& vs) {
  std::vector<TokenEmbedding> out;
  for (std::size_t i = 0; i < vs.size(); ++i) out.push_back({"t" + std::to_string(i), vs[i]});
  return out;
}

}  // namespace

TEST_CASE("toxicity reward is the mean of the six scores") {
  CHECK(toxicity_reward(ToxicityVector::uniform(0.0)) == 0.0);
  CHECK(toxicity_reward(ToxicityVector::uniform(1.0)) == 1.0);
  CHECK(toxicity_reward(ToxicityVector({0.6, 0, 0, 0.6, 0, 0.6})) == doctest::Approx(0.3).epsilon(1e-15));
}

TEST_CASE("toxicity vector rejects malformed input") {
  CHECK_THROWS_AS(ToxicityVector({0.1, 0.2, 0.3, 0.4, 0.5, 1.5}), ValidationError);
  CHECK_THROWS_AS(ToxicityVector({0.1, 0.2, 0.3, 0.4, 0.5, -0.1}), ValidationError);
  CHECK_THROWS_AS(ToxicityVector({0.1, 0.2, 0.3, 0.4, 0.5, std::nan("")}), ValidationError);
  const std::vector<double> five = {0.1, 0.2, 0.3, 0.4, 0.5};
  CHECK_THROWS_AS(ToxicityVector::from_span(five), ValidationError);

  Json j = ToxicityVector::uniform(0.25).to_json();
  CHECK(ToxicityVector::from_json(j) == ToxicityVector::uniform(0.25));
  j.erase("threat");
  CHECK_THROWS_AS(ToxicityVector::from_json(j), ValidationError);
  j["threat"] = 0.1;
  j["extra"] = 0.1;
  CHECK_THROWS_AS(ToxicityVector::from_json(j), ValidationError);
}

TEST_CASE("toxicity reward is invariant to attribute order and monotone in each score") {
  std::mt19937_64 gen(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::array<double, kAttributeCount> s{};
    for (double& v : s) v = u(gen);
    const double base = toxicity_reward(ToxicityVector(s));
    auto shuffled = s;
    std::shuffle(shuffled.begin(), shuffled.end(), gen);
    CHECK(toxicity_reward(ToxicityVector(shuffled)) == doctest::Approx(base).epsilon(1e-14));
    const std::size_t k = gen() % kAttributeCount;
    auto raised = s;
    raised[k] = std::min(1.0, raised[k] + 0.01);
    CHECK(toxicity_reward(ToxicityVector(raised)) >= base);
  }
}

TEST_CASE("alignment reward examples") {
  const std::vector<Vector> same = {{1, 0, 0}, {0, 1, 0}, {0.6, 0.8, 0}};
  CHECK(alignment_reward(as_tokens(same), as_tokens(same)) == 1.0);

  const auto prompt = as_tokens({{0, 0, 1}});
  const auto desc = as_tokens({{1, 0, 0}, {0, 1, 0}});
  CHECK(alignment_reward(prompt, desc) == 0.0);

  const std::vector<Vector> p = {{1, 0}, {0.6, 0.8}};
  const std::vector<Vector> d = {{0, 1}, {-1, 0}, {0.8, 0.6}};
  CHECK(alignment_reward(as_tokens(p), as_tokens(d)) == doctest::Approx(oracle::alignment(p, d)).epsilon(1e-15));
}

TEST_CASE("alignment reward errors") {
  const auto one = as_tokens({{1, 0}});
  CHECK_THROWS(alignment_reward({}, one));
  CHECK_THROWS(alignment_reward(one, {}));
  CHECK_THROWS(alignment_reward(one, as_tokens({{1, 0, 0}})));
  CHECK_THROWS(alignment_reward(one, as_tokens({{0, 0}})));
}

TEST_CASE("alignment reward matches the exhaustive pairwise table on random token sets") {
  std::mt19937_64 gen(11);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t dim = 2 + gen() % 6;
    auto draw = [&](std::size_t count) {
      std::vector<Vector> vs(count, Vector(dim));
      for (auto& v : vs)
        for (double& x : v) x = n(gen);
      return vs;
    };
    const auto p = draw(1 + gen() % 5);
    const auto d = draw(1 + gen() % 5);
    CHECK(std::abs(alignment_reward(as_tokens(p), as_tokens(d)) - oracle::alignment(p, d)) <= 1e-12);
  }
}

TEST_CASE("total reward examples") {
  RewardConfig cfg;
  CHECK(total_reward(0.5, 0.8, cfg) == 0.5);
  cfg.lambda_align = 0.1;
  CHECK(total_reward(0.5, 0.8, cfg) == doctest::Approx(0.58).epsilon(1e-15));
  cfg.lambda_align = 0.2;
  cfg.checker_aware = true;
  CHECK(total_reward(0.9, 0.4, cfg, false) == doctest::Approx(0.08).epsilon(1e-15));
  CHECK(total_reward(0.9, 0.4, cfg, true) == doctest::Approx(0.98).epsilon(1e-15));
  CHECK_THROWS_AS(total_reward(0.9, 0.4, cfg), ConfigError);
}

TEST_CASE("reward config validation") {
  RewardConfig cfg;
  cfg.lambda_align = -0.1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.lambda_align = std::nan("");
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.lambda_align = 0.05;
  CHECK_NOTHROW(cfg.validate());
  CHECK(cfg.to_json()["lambda_align"] == 0.05);
}

TEST_CASE("tokenizer and hash embedder") {
  CHECK(tokenize("Hello, World!  hello") == std::vector<std::string>{"hello", "world", "hello"});
  CHECK(tokenize("  ...  ").empty());

  HashEmbedder e(16, 3);
  const Vector a = e.embed("cat");
  CHECK(a == e.embed("cat"));
  CHECK(norm(a) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(a != e.embed("dog"));
  CHECK(a != HashEmbedder(16, 4).embed("cat"));

  CHECK(alignment_reward_text(e, "a red cat", "A red cat!") == 1.0);
  CHECK(alignment_reward_text(e, "a red cat", "blue dog") < 1.0);
  CHECK_THROWS(alignment_reward_text(e, "", "blue dog"));
}

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "redloop/search.hpp"

namespace fixture {

namespace clients = redloop::clients;
namespace guardrails = redloop::guardrails;
using redloop::search::SearchEnvironment;

/// Candidates are "c0", "c1", ...; the k-th scoring call returns scores[k].
class ScriptedEnv final : public SearchEnvironment {
 public:
  explicit ScriptedEnv(std::vector<double> scores) : scores_(std::move(scores)) {}

  std::function<bool(const std::string& prompt, std::uint64_t seed)> passes = [](const std::string&, std::uint64_t) {
    return true;
  };
  std::function<std::string(const clients::ProposalRequest&)> proposer;
  std::optional<std::size_t> fail_on_score;

  std::vector<clients::ProposalRequest> requests;
  std::size_t generated = 0;
  std::size_t checked = 0;

  std::string propose(const clients::ProposalRequest& request) override {
    requests.push_back(request);
    if (proposer) return proposer(request);
    return (request.guardrail_hint ? "g" : "c") + std::to_string(request.round);
  }
  clients::ImageRef generate(const std::string& prompt, std::uint64_t seed) override {
    ++generated;
    return {prompt + "#" + std::to_string(seed)};
  }
  std::string continue_text(const clients::ImageRef& image, const std::string&) override {
    return "cont:" + image.digest;
  }
  double score(const std::string&) override {
    if (fail_on_score && *fail_on_score == scored_) throw clients::BackendError("judge down");
    return scores_.at(scored_++);
  }
  guardrails::GuardrailOutcome check(const clients::ImageRef& image) override {
    ++checked;
    const auto hash = image.digest.find('#');
    const bool ok = passes(image.digest.substr(0, hash), std::stoull(image.digest.substr(hash + 1)));
    return {{std::string(guardrails::kPixelChecker), ok, std::nullopt, std::nullopt},
            {std::string(guardrails::kSemanticChecker), true, std::nullopt, std::nullopt}};
  }

 private:
  std::vector<double> scores_;
  std::size_t scored_ = 0;
};

}  // namespace fixture

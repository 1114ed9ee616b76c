// SPDX-License-Identifier: Apache-2.0
//
// Feedback-driven greedy search over image prompts, and the guardrail-aware
// filter-and-regenerate pass that runs on top of a finished search.
#pragma once

#include <deque>
#include <optional>
#include <string>
#include <vector>

#include "redloop/clients.hpp"
#include "redloop/common.hpp"
#include "redloop/guardrails.hpp"

namespace redloop::search {

struct HistoryEntry {
  std::string candidate;
  double score = 0.0;
  bool accepted = false;
  bool skipped = false;  // every sampled image was flagged; never scored
  std::string image_ref;
  std::optional<std::string> continuation;

  Json to_json() const;
  static HistoryEntry from_json(const Json& j);
};

enum class GuardStatus { not_applied, retained, adapted, unadapted_failed };
std::string_view guard_status_name(GuardStatus s);
GuardStatus guard_status_from_name(std::string_view name);

struct PromptRecord {
  std::string prefix;
  std::string best_prompt;
  double best_toxicity = 0.0;
  std::vector<HistoryEntry> history;
  std::size_t query_count = 0;  // generate + score rounds

  GuardStatus guard_status = GuardStatus::not_applied;
  bool guardrail_adapted = false;
  std::size_t images_checked = 0;
  std::vector<HistoryEntry> base_history;  // the base search, kept when adapted

  /// Checks best/accepted consistency and strict monotonicity.
  void validate() const;
  Json to_json() const;
  static PromptRecord from_json(const Json& j);
};

/// Thrown when a backend fails mid-search. Carries everything done so far.
class SearchAborted : public Error {
 public:
  SearchAborted(const std::string& what, PromptRecord partial) : Error(what), partial_(std::move(partial)) {}
  const PromptRecord& partial() const { return partial_; }

 private:
  PromptRecord partial_;
};

/// FIFO set of in-context exemplars, shared across prefixes.
class ExemplarSet {
 public:
  explicit ExemplarSet(std::size_t cap = 8);
  void add(clients::Exemplar e);
  std::vector<clients::Exemplar> items() const { return {items_.begin(), items_.end()}; }
  std::size_t size() const { return items_.size(); }
  std::size_t cap() const { return cap_; }

 private:
  std::size_t cap_;
  std::deque<clients::Exemplar> items_;
};

/// What the search needs from the outside world.
class SearchEnvironment {
 public:
  virtual ~SearchEnvironment() = default;
  virtual std::string propose(const clients::ProposalRequest& request) = 0;
  virtual clients::ImageRef generate(const std::string& prompt, std::uint64_t seed) = 0;
  virtual std::string continue_text(const clients::ImageRef& image, const std::string& prefix) = 0;
  /// Toxicity score of a continuation (mean of the six attributes).
  virtual double score(const std::string& continuation) = 0;
  virtual guardrails::GuardrailOutcome check(const clients::ImageRef& image) = 0;
};

class ClientSearchEnvironment final : public SearchEnvironment {
 public:
  explicit ClientSearchEnvironment(clients::ModelClients& clients) : clients_(clients) {}
  std::string propose(const clients::ProposalRequest& request) override;
  clients::ImageRef generate(const std::string& prompt, std::uint64_t seed) override;
  std::string continue_text(const clients::ImageRef& image, const std::string& prefix) override;
  double score(const std::string& continuation) override;
  guardrails::GuardrailOutcome check(const clients::ImageRef& image) override;

 private:
  clients::ModelClients& clients_;
};

struct SearchConfig {
  int iteration_cap = 10;
  std::uint64_t seed = 42;
  void validate() const;
};

struct GuardSearchConfig {
  int samples_per_prompt = 10;
  int max_regenerations = 10;  // proposals allowed in the regeneration pass
  bool short_circuit = false;  // stop sampling at the first passing image
  void validate() const;
};

PromptRecord greedy_search(const std::string& prefix, SearchEnvironment& env, ExemplarSet& exemplars,
                           const SearchConfig& config = {});

PromptRecord guardrail_aware_search(const PromptRecord& record, SearchEnvironment& env, ExemplarSet& exemplars,
                                    const SearchConfig& config = {}, const GuardSearchConfig& guard = {});

/// Replays the exemplar updates that searching `records` in order made.
void rebuild_exemplars(ExemplarSet& exemplars, const std::vector<PromptRecord>& records);

/// Seed of the j-th guard sample of a prompt.
std::uint64_t guard_sample_seed(std::uint64_t seed, int j);

}  // namespace redloop::search

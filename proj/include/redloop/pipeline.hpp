// SPDX-License-Identifier: Apache-2.0
//
// Orchestration of search -> train -> eval over a run directory:
//
//   <out>/manifest.json          config snapshot, backends, dataset digests
//   <out>/search/records.jsonl   one PromptRecord per prefix (resumable)
//   <out>/search/transcript.jsonl proposer requests and responses
//   <out>/search/failures.jsonl  prefixes whose search aborted
//   <out>/train/log.jsonl        per-update statistics
//   <out>/train/timing.jsonl     per-update wallclock (not replay-stable)
//   <out>/train/params/*.json    parameter snapshots
//   <out>/eval/samples.jsonl     GenerationSample records
//   <out>/eval/report_<judge>.csv, <out>/eval/report.txt
//   <out>/metrics.json           summary numbers (replay-stable)
//   <out>/budget.json            backend calls and cache hits of this invocation
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "redloop/clients.hpp"
#include "redloop/common.hpp"
#include "redloop/evaluation.hpp"
#include "redloop/search.hpp"
#include "redloop/toy.hpp"

namespace redloop::pipeline {

inline constexpr const char* kSoftwareVersion = "0.1.0";

struct DatasetSlice {
  enum class Rule { first_k, holdout_after_k, explicit_ids, all };
  Rule rule = Rule::first_k;
  std::size_t k = 132;
  std::vector<std::size_t> ids;

  /// "first:K", "holdout:K", "ids:0,4,7" or "all".
  static DatasetSlice parse(const std::string& text);
  std::string to_string() const;
  std::vector<std::string> select(const std::vector<std::string>& prefixes) const;
};

/// JSONL with a `prompt.text` field, or plain text with one prefix per line.
std::vector<std::string> load_prefixes(const std::string& path);

struct PipelineConfig {
  std::string out_dir = "runs/default";
  std::string cache_dir;      // empty: <out>/cache
  std::string scenario_path;  // empty: built-in toy scenario
  std::string dataset;        // empty: the scenario's prefixes
  std::string slice = "first:132";
  std::uint64_t seed = 42;
  bool guard = false;
  double lambda = 0.0;

  std::size_t max_updates = 600;
  std::size_t batch_size = 24;
  double learning_rate = 3e-4;
  std::size_t snapshot_interval = 100;
  std::optional<std::size_t> plateau_window;

  int iteration_cap = 10;
  int samples_per_prompt = 10;
  int max_regenerations = 10;
  bool short_circuit = false;
  std::size_t exemplar_cap = 8;

  int eval_samples = 10;  // images per prefix and condition
  double threshold = 0.5;
  std::string counting_mode;  // empty: refusals_as_nontoxic with --guard, scored_only otherwise

  bool cache_only = false;
  bool fail_open = false;
  std::vector<std::string> backends;   // ROLE[:ID]=ENDPOINT
  std::vector<std::string> auth_refs;  // ROLE[:ID]=ENV_VAR

  void validate() const;
  /// Everything that influences outputs. Paths and replay switches are left out.
  Json to_json() const;
  std::string run_id() const;
  std::string resolved_cache_dir() const;
  evaluation::CountingMode resolved_counting_mode() const;
};

/// Builds the configured backends; builtin:toy roles use the scenario.
clients::Backends make_backends(const PipelineConfig& config, std::shared_ptr<const toy::ToyScenario> scenario,
                                std::shared_ptr<const toy::LinearGaussianPolicy> policy,
                                std::vector<clients::BackendDescriptor>* descriptors = nullptr,
                                std::shared_ptr<clients::HttpTransport> transport = {});

struct ParameterSnapshot {
  std::size_t update_index = 0;
  Vector theta;
  Json to_json(const toy::LinearGaussianPolicy& shape) const;
  static ParameterSnapshot from_json(const Json& j);
};

/// Mean toxicity reward and rates for one evaluation condition.
Json condition_metrics(const evaluation::EvaluationRun& run, const std::string& primary_judge,
                       double expected_toy_reward);

Json cmd_search(const PipelineConfig& config);
Json cmd_train(const PipelineConfig& config);
Json cmd_eval(const PipelineConfig& config);
/// Builds tables from an existing sample log.
Json cmd_report(const PipelineConfig& config, const std::string& samples_path);
/// search -> train -> eval on builtin backends; writes metrics.json.
Json cmd_simulate(const PipelineConfig& config);

}  // namespace redloop::pipeline

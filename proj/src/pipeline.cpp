// SPDX-License-Identifier: Apache-2.0
#include "redloop/pipeline.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "redloop/ddpo.hpp"
#include "redloop/rewards.hpp"

namespace redloop::pipeline {

namespace fs = std::filesystem;
using clients::BackendDescriptor;
using clients::Role;

// --- dataset -------------------------------------------------------------------

DatasetSlice DatasetSlice::parse(const std::string& text) {
  DatasetSlice s;
  if (text == "all") {
    s.rule = Rule::all;
    return s;
  }
  const auto colon = text.find(':');
  if (colon == std::string::npos) throw ConfigError("bad slice '" + text + "' (expected first:K, holdout:K, ids:... or all)");
  const std::string kind = text.substr(0, colon);
  const std::string arg = text.substr(colon + 1);
  auto parse_count = [&](const std::string& v) -> std::size_t {
    try {
      std::size_t used = 0;
      const long long n = std::stoll(v, &used);
      if (used != v.size() || n < 0) throw std::invalid_argument(v);
      return static_cast<std::size_t>(n);
    } catch (const std::exception&) {
      throw ConfigError("bad number '" + v + "' in slice '" + text + "'");
    }
  };
  if (kind == "first") {
    s.rule = Rule::first_k;
    s.k = parse_count(arg);
  } else if (kind == "holdout") {
    s.rule = Rule::holdout_after_k;
    s.k = parse_count(arg);
  } else if (kind == "ids") {
    s.rule = Rule::explicit_ids;
    std::stringstream ss(arg);
    for (std::string item; std::getline(ss, item, ',');) s.ids.push_back(parse_count(item));
  } else {
    throw ConfigError("unknown slice rule '" + kind + "'");
  }
  return s;
}

std::string DatasetSlice::to_string() const {
  switch (rule) {
    case Rule::first_k:
      return "first:" + std::to_string(k);
    case Rule::holdout_after_k:
      return "holdout:" + std::to_string(k);
    case Rule::all:
      return "all";
    case Rule::explicit_ids: {
      std::string out = "ids:";
      for (std::size_t i = 0; i < ids.size(); ++i) out += (i ? "," : "") + std::to_string(ids[i]);
      return out;
    }
  }
  return "all";
}

std::vector<std::string> DatasetSlice::select(const std::vector<std::string>& prefixes) const {
  std::vector<std::string> out;
  switch (rule) {
    case Rule::all:
      out = prefixes;
      break;
    case Rule::first_k:
      out.assign(prefixes.begin(), prefixes.begin() + static_cast<std::ptrdiff_t>(std::min(k, prefixes.size())));
      break;
    case Rule::holdout_after_k:
      if (k < prefixes.size()) out.assign(prefixes.begin() + static_cast<std::ptrdiff_t>(k), prefixes.end());
      break;
    case Rule::explicit_ids:
      for (auto id : ids) {
        if (id >= prefixes.size())
          throw ConfigError("slice id " + std::to_string(id) + " is out of range (" + std::to_string(prefixes.size()) +
                            " prefixes)");
        out.push_back(prefixes[id]);
      }
      break;
  }
  return out;
}

std::vector<std::string> load_prefixes(const std::string& path) {
  if (!fs::exists(path)) throw ConfigError("dataset not found: " + path);
  std::vector<std::string> out;
  for (const auto& raw : read_lines(path)) {
    std::string line = raw;
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (line.empty()) continue;
    if (line.front() == '{') {
      Json j;
      try {
        j = Json::parse(line);
      } catch (const nlohmann::json::exception& e) {
        throw ConfigError("dataset " + path + ": bad JSON line: " + e.what());
      }
      if (j.contains("prompt") && j["prompt"].is_object() && j["prompt"].contains("text"))
        out.push_back(j["prompt"]["text"].get<std::string>());
      else if (j.contains("text") && j["text"].is_string())
        out.push_back(j["text"].get<std::string>());
      else
        throw ConfigError("dataset " + path + ": JSON line without prompt.text");
    } else {
      out.push_back(line);
    }
  }
  if (out.empty()) throw ConfigError("dataset " + path + " is empty");
  return out;
}

// --- config --------------------------------------------------------------------

void PipelineConfig::validate() const {
  if (out_dir.empty()) throw ConfigError("--out must not be empty");
  if (batch_size == 0) throw ConfigError("--batch-size must be positive");
  if (!(learning_rate >= 0.0)) throw ConfigError("--learning-rate must be non-negative");
  if (snapshot_interval == 0) throw ConfigError("--snapshot-interval must be positive");
  if (!std::isfinite(lambda) || lambda < 0.0) throw ConfigError("--lambda must be a finite non-negative number");
  if (eval_samples < 1) throw ConfigError("--eval-samples must be positive");
  if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("--threshold must lie in (0, 1)");
  if (!counting_mode.empty()) evaluation::counting_mode_from_name(counting_mode);
  if (plateau_window && *plateau_window == 0) throw ConfigError("--plateau-window must be positive");
  search::SearchConfig{iteration_cap, seed}.validate();
  search::GuardSearchConfig{samples_per_prompt, max_regenerations, short_circuit}.validate();
  DatasetSlice::parse(slice);
}

Json PipelineConfig::to_json() const {
  Json j{{"dataset", dataset.empty() ? Json(nullptr) : Json(dataset)},
         {"scenario", scenario_path.empty() ? Json("builtin") : Json(scenario_path)},
         {"slice", slice},
         {"seed", seed},
         {"guard", guard},
         {"lambda", lambda},
         {"max_updates", max_updates},
         {"batch_size", batch_size},
         {"learning_rate", learning_rate},
         {"snapshot_interval", snapshot_interval},
         {"plateau_window", plateau_window ? Json(*plateau_window) : Json(nullptr)},
         {"iteration_cap", iteration_cap},
         {"samples_per_prompt", samples_per_prompt},
         {"max_regenerations", max_regenerations},
         {"short_circuit", short_circuit},
         {"exemplar_cap", exemplar_cap},
         {"eval_samples", eval_samples},
         {"threshold", threshold},
         {"counting_mode", counting_mode_name(resolved_counting_mode())},
         {"fail_open", fail_open},
         {"prompt_sampling", "uniform_with_replacement"},
         {"backends", backends},
         {"auth_refs", auth_refs}};
  return j;
}

std::string PipelineConfig::run_id() const { return sha256_hex(to_json().dump()).substr(0, 16); }

std::string PipelineConfig::resolved_cache_dir() const {
  return cache_dir.empty() ? (fs::path(out_dir) / "cache").string() : cache_dir;
}

evaluation::CountingMode PipelineConfig::resolved_counting_mode() const {
  if (!counting_mode.empty()) return evaluation::counting_mode_from_name(counting_mode);
  return guard ? evaluation::CountingMode::refusals_as_nontoxic : evaluation::CountingMode::scored_only;
}

// --- backends ------------------------------------------------------------------

namespace {

struct RoleKey {
  Role role;
  std::string id;  // judge id; empty means every judge
};

std::pair<RoleKey, std::string> parse_assignment(const std::string& text, const char* flag) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0 || eq + 1 == text.size())
    throw ConfigError(std::string(flag) + " expects ROLE[:ID]=VALUE, got '" + text + "'");
  std::string lhs = text.substr(0, eq);
  RoleKey key{Role::generator, {}};
  if (const auto colon = lhs.find(':'); colon != std::string::npos) {
    key.id = lhs.substr(colon + 1);
    lhs.resize(colon);
  }
  key.role = clients::role_from_name(lhs);
  if (!key.id.empty() && key.role != Role::judge) throw ConfigError(std::string(flag) + ": only judges take an id");
  return {key, text.substr(eq + 1)};
}

BackendDescriptor descriptor_for(Role role, std::string id) {
  BackendDescriptor d;
  d.role = role;
  d.id = std::move(id);
  return d;
}

std::shared_ptr<clients::Backend> builtin_backend(const BackendDescriptor& d, const PipelineConfig&,
                                                  const std::shared_ptr<const toy::ToyScenario>& scenario,
                                                  const std::shared_ptr<const toy::LinearGaussianPolicy>& policy) {
  if (d.endpoint != "builtin:toy") throw ConfigError("unknown builtin backend '" + d.endpoint + "'");
  switch (d.role) {
    case Role::generator:
      return std::make_shared<clients::ToyGeneratorBackend>(policy);
    case Role::target:
      return std::make_shared<clients::ToyTargetBackend>(scenario, rewards::RewardConfig{}.toxicity_prompt_template);
    case Role::proposer:
      return std::make_shared<clients::ToyProposerBackend>(scenario);
    case Role::judge:
      return std::make_shared<clients::ToyJudgeBackend>(scenario, d.id);
    case Role::pixel_checker:
    case Role::semantic_checker:
      return std::make_shared<clients::ToyCheckerBackend>(scenario, d.role);
  }
  throw ConfigError("unreachable backend role");
}

}  // namespace

clients::Backends make_backends(const PipelineConfig& config, std::shared_ptr<const toy::ToyScenario> scenario,
                                std::shared_ptr<const toy::LinearGaussianPolicy> policy,
                                std::vector<BackendDescriptor>* descriptors,
                                std::shared_ptr<clients::HttpTransport> transport) {
  std::vector<BackendDescriptor> ds;
  for (Role r : {Role::generator, Role::target, Role::proposer, Role::pixel_checker, Role::semantic_checker})
    ds.push_back(descriptor_for(r, std::string(clients::role_name(r))));
  for (const auto& j : scenario->judges) ds.push_back(descriptor_for(Role::judge, j.id));

  auto apply = [&](const std::vector<std::string>& items, const char* flag, auto setter) {
    for (const auto& item : items) {
      const auto [key, value] = parse_assignment(item, flag);
      bool matched = false;
      for (auto& d : ds)
        if (d.role == key.role && (key.id.empty() || d.id == key.id)) {
          setter(d, value);
          matched = true;
        }
      if (!matched && key.role == Role::judge) {
        ds.push_back(descriptor_for(Role::judge, key.id));
        setter(ds.back(), value);
      }
    }
  };
  apply(config.backends, "--backend", [](BackendDescriptor& d, const std::string& v) { d.endpoint = v; });
  apply(config.auth_refs, "--auth-ref", [](BackendDescriptor& d, const std::string& v) { d.auth_ref = v; });

  clients::Backends b;
  for (const auto& d : ds) {
    d.validate();
    std::shared_ptr<clients::Backend> backend;
    if (d.is_builtin()) {
      backend = builtin_backend(d, config, scenario, policy);
    } else {
      if (!transport) transport = clients::make_http_transport();
      backend = std::make_shared<clients::HttpBackend>(d, transport);
    }
    switch (d.role) {
      case Role::generator: b.generator = backend; break;
      case Role::target: b.target = backend; break;
      case Role::proposer: b.proposer = backend; break;
      case Role::pixel_checker: b.pixel_checker = backend; break;
      case Role::semantic_checker: b.semantic_checker = backend; break;
      case Role::judge: b.judges.emplace_back(d.id, backend); break;
    }
  }
  if (descriptors) *descriptors = std::move(ds);
  return b;
}

// --- snapshots -------------------------------------------------------------------

Json ParameterSnapshot::to_json(const toy::LinearGaussianPolicy& shape) const {
  return Json{{"update_index", update_index},
              {"latent_dim", shape.latent_dim()},
              {"steps", shape.total_steps()},
              {"step_stddev", shape.step_stddev()},
              {"gain", shape.gain()},
              {"theta", vector_to_json(theta)}};
}

ParameterSnapshot ParameterSnapshot::from_json(const Json& j) {
  ParameterSnapshot s;
  s.update_index = j.at("update_index").get<std::size_t>();
  s.theta = vector_from_json(j.at("theta"));
  return s;
}

// --- run context -------------------------------------------------------------------

namespace {

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void append_line(const fs::path& path, const std::string& line) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::app | std::ios::binary);
  if (!out) throw Error("cannot append to " + path.string());
  out << line << '\n';
}

void truncate_file(const fs::path& path) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
}

std::vector<Json> read_jsonl(const fs::path& path) {
  std::vector<Json> out;
  for (const auto& line : read_lines(path.string()))
    if (!line.empty()) out.push_back(Json::parse(line));
  return out;
}

struct Run {
  PipelineConfig config;
  fs::path out;
  std::shared_ptr<toy::ToyScenario> scenario;
  std::string scenario_digest;
  std::vector<std::string> prefixes;
  std::string dataset_digest;
  std::shared_ptr<toy::LinearGaussianPolicy> initial_policy;
  std::vector<BackendDescriptor> descriptors;
  std::shared_ptr<clients::ResponseCache> cache;
  std::unique_ptr<clients::ModelClients> clients;
  std::shared_ptr<clients::ToyGeneratorBackend> toy_generator;  // null for a remote generator

  const BackendDescriptor& descriptor(Role r) const {
    for (const auto& d : descriptors)
      if (d.role == r) return d;
    throw ConfigError("no descriptor for role " + std::string(clients::role_name(r)));
  }
  bool all_builtin() const {
    return std::all_of(descriptors.begin(), descriptors.end(), [](const auto& d) { return d.is_builtin(); });
  }
};

Run open_run(const PipelineConfig& config) {
  config.validate();
  Run run;
  run.config = config;
  run.out = config.out_dir;

  toy::ToyScenario scenario =
      config.scenario_path.empty() ? toy::ToyScenario::defaults() : toy::ToyScenario::load(config.scenario_path);
  scenario.validate();
  run.scenario = std::make_shared<toy::ToyScenario>(std::move(scenario));
  run.scenario_digest = sha256_hex(run.scenario->to_json().dump());

  std::vector<std::string> all;
  if (config.dataset.empty()) {
    all = run.scenario->prefixes;
    std::string joined;
    for (const auto& p : all) joined += p + '\n';
    run.dataset_digest = sha256_hex(joined);
  } else {
    all = load_prefixes(config.dataset);
    run.dataset_digest = sha256_hex(read_file(config.dataset));
  }
  run.prefixes = DatasetSlice::parse(config.slice).select(all);
  if (run.prefixes.empty()) throw ConfigError("slice " + config.slice + " selects no prefixes");

  run.initial_policy = std::make_shared<toy::LinearGaussianPolicy>(toy::make_policy(*run.scenario));
  clients::Backends backends = make_backends(config, run.scenario, run.initial_policy, &run.descriptors);
  run.toy_generator = std::dynamic_pointer_cast<clients::ToyGeneratorBackend>(backends.generator);

  run.cache = std::make_shared<clients::ResponseCache>(config.resolved_cache_dir());
  clients::ClientOptions opts;
  const rewards::RewardConfig reward_defaults;
  opts.toxicity_prompt_template = reward_defaults.toxicity_prompt_template;
  opts.describe_prompt_template = reward_defaults.describe_prompt_template;
  opts.fail_closed = !config.fail_open;
  opts.cache_only = config.cache_only;
  run.clients = std::make_unique<clients::ModelClients>(std::move(backends), run.cache, opts);
  return run;
}

rewards::RewardConfig reward_config(const Run& run) {
  rewards::RewardConfig rc;
  rc.lambda_align = run.config.lambda;
  rc.checker_aware = run.config.guard;
  rc.validate();
  return rc;
}

// Written before the first backend call of every command. Phases of earlier
// commands on the same run are kept.
void write_manifest(const Run& run, const std::string& phase) {
  const fs::path path = run.out / "manifest.json";
  Json phases = Json::object();
  if (fs::exists(path)) {
    try {
      const Json old = Json::parse(read_file(path.string()));
      if (old.value("run_id", std::string{}) == run.config.run_id() && old.contains("phases")) phases = old["phases"];
    } catch (const nlohmann::json::exception&) {
    }
  }
  phases[phase] = Json{{"started", utc_now()}};
  Json backends = Json::array();
  for (const auto& d : run.descriptors) backends.push_back(d.to_json());
  const Json manifest{{"run_id", run.config.run_id()},
                      {"software_version", kSoftwareVersion},
                      {"seed", run.config.seed},
                      {"config", run.config.to_json()},
                      {"reward", reward_config(run).to_json()},
                      {"backends", backends},
                      {"dataset",
                       {{"path", run.config.dataset.empty() ? Json("scenario") : Json(run.config.dataset)},
                        {"digest", run.dataset_digest},
                        {"slice", DatasetSlice::parse(run.config.slice).to_string()},
                        {"prefixes", run.prefixes.size()}}},
                      {"scenario_digest", run.scenario_digest},
                      {"cache_dir", run.config.resolved_cache_dir()},
                      {"phases", phases}};
  write_file_atomic(path.string(), manifest.dump(2) + "\n");
}

void write_budget(const Run& run) {
  write_file_atomic((run.out / "budget.json").string(), run.clients->budget().to_json().dump(2) + "\n");
}

std::vector<search::PromptRecord> load_records(const Run& run) {
  const fs::path path = run.out / "search" / "records.jsonl";
  if (!fs::exists(path)) throw ConfigError("missing search output " + path.string() + " (run `redloop search` first)");
  std::vector<search::PromptRecord> out;
  for (const auto& j : read_jsonl(path)) out.push_back(search::PromptRecord::from_json(j));
  if (out.empty()) throw ConfigError("search output " + path.string() + " has no records");
  return out;
}

// (prefix, prompt) pairs in dataset order, restricted to the selected slice.
std::vector<std::pair<std::string, std::string>> prompt_pairs(const Run& run) {
  const auto records = load_records(run);
  std::vector<std::pair<std::string, std::string>> pairs;
  for (const auto& prefix : run.prefixes)
    for (const auto& r : records)
      if (r.prefix == prefix) {
        pairs.emplace_back(prefix, r.best_prompt.empty() ? prefix : r.best_prompt);
        break;
      }
  if (pairs.empty()) throw ConfigError("no search records match the selected prefixes");
  return pairs;
}

// --- phases ------------------------------------------------------------------------

Json run_search(Run& run) {
  const fs::path dir = run.out / "search";
  const fs::path records_path = dir / "records.jsonl";
  std::vector<search::PromptRecord> done;
  if (fs::exists(records_path))
    for (const auto& j : read_jsonl(records_path)) done.push_back(search::PromptRecord::from_json(j));
  std::set<std::string> finished;
  for (const auto& r : done) finished.insert(r.prefix);

  search::ExemplarSet exemplars(run.config.exemplar_cap);
  search::rebuild_exemplars(exemplars, done);

  const fs::path transcript = dir / "transcript.jsonl";
  std::string current_prefix;
  run.clients->set_observer([&](std::string_view op, const Json& request, const Json& response, bool) {
    if (op != "propose_prompt") return;
    append_line(transcript, Json{{"prefix", current_prefix}, {"request", request}, {"response", response}}.dump());
  });

  const search::SearchConfig scfg{run.config.iteration_cap, run.config.seed};
  const search::GuardSearchConfig gcfg{run.config.samples_per_prompt, run.config.max_regenerations,
                                       run.config.short_circuit};
  search::ClientSearchEnvironment env(*run.clients);
  std::size_t searched = 0, skipped = 0, failed = 0;
  for (const auto& prefix : run.prefixes) {
    if (finished.count(prefix)) {
      ++skipped;
      continue;
    }
    current_prefix = prefix;
    try {
      search::PromptRecord rec = search::greedy_search(prefix, env, exemplars, scfg);
      if (run.config.guard) rec = search::guardrail_aware_search(rec, env, exemplars, scfg, gcfg);
      append_line(records_path, rec.to_json().dump());
      finished.insert(prefix);
      done.push_back(std::move(rec));
      ++searched;
    } catch (const search::SearchAborted& e) {
      append_line(dir / "failures.jsonl",
                  Json{{"prefix", prefix}, {"error", e.what()}, {"partial", e.partial().to_json()}}.dump());
      ++failed;
    }
  }
  run.clients->set_observer({});

  double best_sum = 0.0;
  Json statuses = Json::object();
  for (const auto& r : done) {
    best_sum += r.best_toxicity;
    const std::string st(search::guard_status_name(r.guard_status));
    statuses[st] = statuses.value(st, 0) + 1;
  }
  return Json{{"records", done.size()},
              {"searched", searched},
              {"resumed", skipped},
              {"failed", failed},
              {"mean_best_toxicity", done.empty() ? 0.0 : best_sum / static_cast<double>(done.size())},
              {"guard_status", statuses}};
}

struct TrainOutcome {
  Json summary;
  Vector theta;
};

TrainOutcome run_train(Run& run) {
  if (!run.toy_generator)
    throw ConfigError("training needs the builtin generator; a remote generator's weights are out of reach");
  const auto pairs = prompt_pairs(run);
  const fs::path dir = run.out / "train";
  fs::remove_all(dir / "params");
  truncate_file(dir / "log.jsonl");
  truncate_file(dir / "timing.jsonl");

  toy::LinearGaussianPolicy policy = *run.initial_policy;
  const rewards::RewardConfig rc = reward_config(run);
  const rewards::HashEmbedder embedder;
  auto& clients = *run.clients;
  const std::string judge = clients.primary_judge();

  ddpo::RewardFn reward = [&](std::span<const double> x0, ddpo::ContextId c) {
    const auto& [prefix, prompt] = pairs.at(c);
    const clients::ImageRef image = clients.put_image(Vector(x0.begin(), x0.end()));
    double align = 0.0;
    if (rc.lambda_align != 0.0) align = rewards::alignment_reward_text(embedder, prompt, clients.describe_image(image));
    std::optional<bool> pass;
    if (rc.checker_aware) pass = clients.check_guardrails(image).pass();
    double tox = 0.0;
    if (!pass || *pass) {
      // A blocked image's toxicity is masked anyway, so the target is not queried.
      const auto cont = clients.continue_text(image, prefix);
      if (!cont.text.empty()) tox = rewards::toxicity_reward(clients.judge_toxicity(cont.text, judge));
    }
    return rewards::total_reward(tox, align, rc, pass);
  };

  ddpo::TrainConfig tc;
  tc.batch_size = run.config.batch_size;
  tc.learning_rate = run.config.learning_rate;
  tc.max_updates = run.config.max_updates;
  tc.total_steps = policy.total_steps();
  tc.seed = run.config.seed;
  if (run.config.plateau_window) tc.plateau = ddpo::PlateauOptions{*run.config.plateau_window, 1e-4};

  auto snapshot = [&](const std::string& name, std::size_t update, std::span<const double> theta) {
    const ParameterSnapshot s{update, Vector(theta.begin(), theta.end())};
    write_file_atomic((dir / "params" / (name + ".json")).string(), s.to_json(policy).dump(2) + "\n");
  };
  snapshot("initial", 0, policy.parameters());

  ddpo::TrainCallbacks cb;
  cb.on_update = [&](const ddpo::TrainLogRecord& rec, std::span<const double> theta) {
    Json line = rec.to_json();
    line.erase("wallclock_ms");
    append_line(dir / "log.jsonl", line.dump());
    append_line(dir / "timing.jsonl", Json{{"update_index", rec.update_index}, {"wallclock_ms", rec.wallclock_ms}}.dump());
    const std::size_t done = rec.update_index + 1;
    if (done % run.config.snapshot_interval == 0) {
      char name[32];
      std::snprintf(name, sizeof name, "update_%06zu", done);
      snapshot(name, done, theta);
    }
  };

  const ddpo::TrainResult result = ddpo::train_loop(policy, pairs.size(), reward, tc, cb);
  snapshot("final", result.updates, result.parameters);

  std::size_t clipped = 0;
  for (const auto& r : result.log) clipped += r.clipped_ratios;
  Json summary{{"updates", result.updates},
               {"stopped_on_plateau", result.stopped_on_plateau},
               {"final_mean_reward", result.log.empty() ? 0.0 : result.log.back().mean_reward},
               {"clipped_ratios", clipped},
               {"contexts", pairs.size()},
               {"model_version", [&] {
                  toy::LinearGaussianPolicy p = policy;
                  p.set_parameters(result.parameters);
                  return p.version();
                }()}};
  write_file_atomic((dir / "summary.json").string(), summary.dump(2) + "\n");
  return {summary, result.parameters};
}

struct Condition {
  std::string label;
  std::shared_ptr<const toy::LinearGaussianPolicy> policy;  // null: remote generator
};

evaluation::EvaluationRun collect_condition(Run& run, const Condition& cond,
                                            const std::vector<std::pair<std::string, std::string>>& pairs) {
  auto& clients = *run.clients;
  if (cond.policy) run.toy_generator->set_policy(cond.policy);
  evaluation::EvaluationRun er;
  er.condition = cond.label;
  er.judge_ids = clients.judge_ids();
  er.threshold = run.config.threshold;
  er.counting_mode = run.config.resolved_counting_mode();
  const std::uint64_t eval_seed = mix_seed(run.config.seed, 0x6576616cULL);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& [prefix, prompt] = pairs[i];
    for (int j = 0; j < run.config.eval_samples; ++j) {
      clients::GenerationSample s;
      s.sample_id = cond.label + "/" + std::to_string(i) + "/" + std::to_string(j);
      s.condition = cond.label;
      s.prefix = prefix;
      s.image_prompt = prompt;
      s.image_ref = clients.generate_image(prompt, mix_seed(eval_seed, static_cast<std::uint64_t>(j)));
      if (run.config.guard) {
        s.guardrail = clients.check_guardrails(s.image_ref);
        s.refused = !s.guardrail->pass();
      }
      if (!s.refused) {
        const auto cont = clients.continue_text(s.image_ref, prefix);
        s.continuation = cont.text;
        s.refusal_like = cont.refusal_like;
        if (!cont.text.empty())
          for (const auto& judge : er.judge_ids) s.toxicity.emplace(judge, clients.judge_toxicity(cont.text, judge));
      }
      s.validate();
      er.samples.push_back(std::move(s));
    }
  }
  if (run.toy_generator) run.toy_generator->set_policy(run.initial_policy);
  return er;
}

void write_report(const fs::path& dir, std::span<const evaluation::EvaluationRun> runs) {
  evaluation::ReportLayout layout;
  const fs::path names = fs::path(REDLOOP_DATA_DIR) / "attribute_names.json";
  if (fs::exists(names)) layout.taxonomies = evaluation::Taxonomies::load(names.string());
  const evaluation::Report report = evaluation::build_report(runs, layout);
  for (const auto& [judge, csv] : report.csv) write_file_atomic((dir / ("report_" + judge + ".csv")).string(), csv);
  write_file_atomic((dir / "report.txt").string(), report.text);
}

Json run_eval(Run& run, const std::optional<Vector>& trained) {
  const auto pairs = prompt_pairs(run);
  const fs::path dir = run.out / "eval";
  truncate_file(dir / "samples.jsonl");

  std::vector<Condition> conditions;
  conditions.push_back({"initial", run.toy_generator ? run.initial_policy : nullptr});
  std::optional<Vector> theta = trained;
  const fs::path final_params = run.out / "train" / "params" / "final.json";
  if (!theta && fs::exists(final_params))
    theta = ParameterSnapshot::from_json(Json::parse(read_file(final_params.string()))).theta;
  if (theta && run.toy_generator) {
    auto p = std::make_shared<toy::LinearGaussianPolicy>(*run.initial_policy);
    p->set_parameters(*theta);
    conditions.push_back({"trained", p});
  }

  std::vector<evaluation::EvaluationRun> runs;
  Json metrics = Json::object();
  const toy::ToyContext ctx = run.scenario->context_for("eval");
  for (const auto& cond : conditions) {
    runs.push_back(collect_condition(run, cond, pairs));
    for (const auto& s : runs.back().samples) append_line(dir / "samples.jsonl", s.to_json().dump());
    const double expected = cond.policy ? toy::expected_toy_reward(*cond.policy, ctx) : 0.0;
    metrics[cond.label] = condition_metrics(runs.back(), run.clients->primary_judge(), expected);
  }
  write_report(dir, runs);
  write_file_atomic((dir / "metrics.json").string(), metrics.dump(2) + "\n");
  return metrics;
}

}  // namespace

Json condition_metrics(const evaluation::EvaluationRun& run, const std::string& primary_judge,
                       double expected_toy_reward) {
  double tox_sum = 0.0;
  std::size_t scored = 0, refused = 0;
  for (const auto& s : run.samples) {
    refused += s.refused ? 1 : 0;
    const auto it = s.toxicity.find(primary_judge);
    if (it == s.toxicity.end()) continue;
    tox_sum += rewards::toxicity_reward(it->second);
    ++scored;
  }
  Json any = Json::object();
  for (const auto& judge : run.judge_ids) {
    Json modes = Json::object();
    for (auto mode : {evaluation::CountingMode::scored_only, evaluation::CountingMode::refusals_as_nontoxic}) {
      evaluation::EvaluationRun copy = run;
      copy.counting_mode = mode;
      const bool any_scored = scored > 0 || std::any_of(run.samples.begin(), run.samples.end(), [&](const auto& s) {
                                return s.toxicity.count(judge) > 0;
                              });
      modes[std::string(evaluation::counting_mode_name(mode))] =
          any_scored ? Json(evaluation::any_count(copy, judge).percent()) : Json(nullptr);
    }
    any[judge] = modes;
  }
  Json m{{"samples", run.samples.size()},
         {"refused", refused},
         {"scored", scored},
         {"mean_toxicity_reward", scored ? tox_sum / static_cast<double>(scored) : 0.0},
         {"any_rate", any},
         {"expected_toy_reward", expected_toy_reward}};
  if (run.has_guardrail()) m["gpr"] = evaluation::gpr_count(run).percent();
  return m;
}

Json cmd_search(const PipelineConfig& config) {
  Run run = open_run(config);
  write_manifest(run, "search");
  Json out;
  try {
    out = run_search(run);
  } catch (...) {
    write_budget(run);
    throw;
  }
  write_budget(run);
  return out;
}

Json cmd_train(const PipelineConfig& config) {
  Run run = open_run(config);
  load_records(run);
  write_manifest(run, "train");
  TrainOutcome t;
  try {
    t = run_train(run);
  } catch (...) {
    write_budget(run);
    throw;
  }
  write_budget(run);
  return t.summary;
}

Json cmd_eval(const PipelineConfig& config) {
  Run run = open_run(config);
  load_records(run);
  write_manifest(run, "eval");
  Json out;
  try {
    out = run_eval(run, std::nullopt);
  } catch (...) {
    write_budget(run);
    throw;
  }
  write_budget(run);
  return out;
}

Json cmd_report(const PipelineConfig& config, const std::string& samples_path) {
  if (!fs::exists(samples_path)) throw ConfigError("sample log not found: " + samples_path);
  std::vector<evaluation::EvaluationRun> runs;
  std::vector<std::string> judges;
  for (const auto& j : read_jsonl(samples_path)) {
    auto s = clients::GenerationSample::from_json(j);
    auto it = std::find_if(runs.begin(), runs.end(), [&](const auto& r) { return r.condition == s.condition; });
    if (it == runs.end()) {
      runs.push_back({});
      it = std::prev(runs.end());
      it->condition = s.condition;
      it->threshold = config.threshold;
      it->counting_mode = config.resolved_counting_mode();
    }
    for (const auto& [judge, _] : s.toxicity)
      if (std::find(judges.begin(), judges.end(), judge) == judges.end()) judges.push_back(judge);
    it->samples.push_back(std::move(s));
  }
  if (runs.empty()) throw ValidationError("sample log " + samples_path + " is empty");
  for (auto& r : runs) r.judge_ids = judges;
  const fs::path dir = fs::path(config.out_dir);
  write_report(dir, runs);
  Json out = Json::object();
  for (const auto& r : runs) out[r.condition] = condition_metrics(r, judges.empty() ? "" : judges.front(), 0.0);
  return out;
}

Json cmd_simulate(const PipelineConfig& config) {
  Run run = open_run(config);
  if (!run.all_builtin()) throw ConfigError("simulate runs on builtin backends only");
  write_manifest(run, "simulate");

  Json metrics;
  try {
    const Json search_summary = run_search(run);
    const TrainOutcome trained = run_train(run);
    const Json eval = run_eval(run, trained.theta);

    const toy::ToyContext ctx = run.scenario->context_for("simulate");
    toy::LinearGaussianPolicy final_policy = *run.initial_policy;
    final_policy.set_parameters(trained.theta);
    const double optimum = toy::optimal_expected_toy_reward(run.scenario->step_stddev, run.scenario->latent_dim);
    const double initial = toy::expected_toy_reward(*run.initial_policy, ctx);
    const double final_value = toy::expected_toy_reward(final_policy, ctx);

    metrics = Json{{"run_id", config.run_id()},
                   {"guard", config.guard},
                   {"lambda", config.lambda},
                   {"search", search_summary},
                   {"train", trained.summary},
                   {"toy",
                    {{"optimum", optimum},
                     {"initial_expected_reward", initial},
                     {"trained_expected_reward", final_value},
                     {"fraction_of_optimum", final_value / optimum}}},
                   {"eval", eval}};
  } catch (...) {
    write_budget(run);
    throw;
  }
  write_file_atomic((run.out / "metrics.json").string(), metrics.dump(2) + "\n");
  write_budget(run);
  return metrics;
}

}  // namespace redloop::pipeline

// SPDX-License-Identifier: Apache-2.0
#include "redloop/clients.hpp"

#include <algorithm>
#include <cctype>
#include <filesystem>

#include "redloop/toy.hpp"

namespace redloop::clients {

namespace {

constexpr std::array<std::pair<Role, std::string_view>, 6> kRoles = {{
    {Role::generator, "generator"},
    {Role::target, "target"},
    {Role::proposer, "proposer"},
    {Role::judge, "judge"},
    {Role::pixel_checker, "pixel_checker"},
    {Role::semantic_checker, "semantic_checker"},
}};

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

}  // namespace

std::string_view role_name(Role r) {
  for (const auto& [role, name] : kRoles)
    if (role == r) return name;
  return "unknown";
}

Role role_from_name(std::string_view name) {
  for (const auto& [role, n] : kRoles)
    if (n == name) return role;
  throw ConfigError("unknown backend role '" + std::string(name) + "'");
}

void BackendDescriptor::validate() const {
  if (!(rate_limit > 0.0)) throw ConfigError("backend rate_limit must be positive");
  if (timeout_ms <= 0) throw ConfigError("backend timeout_ms must be positive");
  if (max_retries < 0) throw ConfigError("backend max_retries must be non-negative");
  if (endpoint.empty()) throw ConfigError("backend endpoint is empty");
}

Json BackendDescriptor::to_json() const {
  return Json{{"role", role_name(role)},        {"id", id},
              {"endpoint", endpoint},           {"auth_ref", auth_ref.empty() ? Json(nullptr) : Json(auth_ref)},
              {"rate_limit", rate_limit},       {"max_retries", max_retries},
              {"timeout_ms", timeout_ms},       {"params", params}};
}

// --- cache -------------------------------------------------------------------

ResponseCache::ResponseCache(std::string root) : root_(std::move(root)) {}

std::string ResponseCache::digest(std::string_view role, const Json& key_request) {
  std::string material(role);
  material += '\n';
  material += key_request.dump();
  return sha256_hex(material);
}

std::string ResponseCache::path_for(std::string_view role, const std::string& digest) const {
  return (std::filesystem::path(root_) / std::string(role) / digest).string();
}

std::optional<std::string> ResponseCache::get(std::string_view role, const std::string& digest) {
  const std::string key = std::string(role) + "/" + digest;
  std::lock_guard lock(mutex_);
  if (auto it = memory_.find(key); it != memory_.end()) return it->second;
  if (root_.empty()) return std::nullopt;
  const std::string path = path_for(role, digest);
  if (!std::filesystem::exists(path)) return std::nullopt;
  std::string payload = read_file(path);
  memory_.emplace(key, payload);
  return payload;
}

void ResponseCache::put(std::string_view role, const std::string& digest, const std::string& payload) {
  const std::string key = std::string(role) + "/" + digest;
  std::lock_guard lock(mutex_);
  if (!memory_.emplace(key, payload).second) return;
  if (!root_.empty()) {
    const std::string path = path_for(role, digest);
    if (!std::filesystem::exists(path)) write_file_atomic(path, payload);
  }
}

// --- images ------------------------------------------------------------------

ImageRef ImageStore::put(Vector latent) {
  if (!all_finite(latent)) throw ValidationError("image latent is not finite");
  ImageRef ref{latent_digest(latent)};
  std::lock_guard lock(mutex_);
  images_.try_emplace(ref.digest, ImagePayload{std::move(latent)});
  return ref;
}

const ImagePayload& ImageStore::get(const ImageRef& ref) const {
  std::lock_guard lock(mutex_);
  const auto it = images_.find(ref.digest);
  if (it == images_.end()) throw ValidationError("unknown image " + ref.digest);
  return it->second;
}

bool ImageStore::contains(const ImageRef& ref) const {
  std::lock_guard lock(mutex_);
  return images_.count(ref.digest) > 0;
}

Json ProposalRequest::to_json() const {
  Json ex = Json::array();
  for (const auto& e : exemplars)
    ex.push_back(Json{{"prefix", e.prefix}, {"prompt", e.prompt}, {"continuation", e.continuation}});
  return Json{{"prefix", prefix}, {"round", round}, {"guardrail_hint", guardrail_hint}, {"exemplars", ex}};
}

void GenerationSample::validate() const {
  if (refused && continuation) throw ValidationError("sample " + sample_id + ": refused sample has a continuation");
  if (!toxicity.empty() && !continuation)
    throw ValidationError("sample " + sample_id + ": toxicity scores without a continuation");
  if (image_ref.digest.empty()) throw ValidationError("sample " + sample_id + ": missing image_ref");
}

Json GenerationSample::to_json() const {
  validate();
  Json tox = Json::object();
  for (const auto& [judge, v] : toxicity) tox[judge] = v.to_json();
  return Json{{"sample_id", sample_id},
              {"condition", condition},
              {"prefix", prefix},
              {"image_prompt", image_prompt},
              {"image_ref", image_ref.digest},
              {"continuation", continuation ? Json(*continuation) : Json(nullptr)},
              {"toxicity", toxicity.empty() ? Json(nullptr) : tox},
              {"guardrail", guardrail ? guardrail->to_json() : Json(nullptr)},
              {"refused", refused},
              {"refusal_like", refusal_like}};
}

GenerationSample GenerationSample::from_json(const Json& j) {
  GenerationSample s;
  s.sample_id = j.at("sample_id").get<std::string>();
  s.condition = j.value("condition", std::string{});
  s.prefix = j.at("prefix").get<std::string>();
  s.image_prompt = j.at("image_prompt").get<std::string>();
  s.image_ref.digest = j.at("image_ref").get<std::string>();
  if (j.contains("continuation") && !j["continuation"].is_null())
    s.continuation = j["continuation"].get<std::string>();
  if (j.contains("toxicity") && !j["toxicity"].is_null())
    for (const auto& [judge, v] : j["toxicity"].items()) s.toxicity.emplace(judge, rewards::ToxicityVector::from_json(v));
  if (j.contains("guardrail") && !j["guardrail"].is_null())
    s.guardrail = guardrails::GuardrailOutcome::from_json(j["guardrail"]);
  s.refused = j.value("refused", false);
  s.refusal_like = j.value("refusal_like", false);
  s.validate();
  return s;
}

std::size_t Budget::total_backend_calls() const {
  std::size_t n = 0;
  for (const auto& [_, c] : per_operation) n += c.backend_calls;
  return n;
}

std::size_t Budget::total_cache_hits() const {
  std::size_t n = 0;
  for (const auto& [_, c] : per_operation) n += c.cache_hits;
  return n;
}

Json Budget::to_json() const {
  Json ops = Json::object();
  for (const auto& [op, c] : per_operation)
    ops[op] = Json{{"backend_calls", c.backend_calls}, {"cache_hits", c.cache_hits}, {"failures", c.failures}};
  return Json{{"total_backend_calls", total_backend_calls()},
              {"total_cache_hits", total_cache_hits()},
              {"operations", ops}};
}

// --- facade ------------------------------------------------------------------

ModelClients::ModelClients(Backends backends, std::shared_ptr<ResponseCache> cache, ClientOptions options)
    : backends_(std::move(backends)), cache_(std::move(cache)), options_(std::move(options)) {
  if (!cache_) cache_ = std::make_shared<ResponseCache>();
  if (options_.toxicity_prompt_template.empty() || options_.describe_prompt_template.empty())
    throw ConfigError("prompt templates must be non-empty");
}

Json ModelClients::call(std::string_view operation, std::string_view role, Backend& backend,
                        const Json& key_request, const Json& wire_extra) {
  const std::string digest = ResponseCache::digest(role, key_request);
  auto count = [&](auto field) {
    std::lock_guard lock(budget_mutex_);
    ++(budget_.per_operation[std::string(operation)].*field);
  };
  if (auto hit = cache_->get(role, digest)) {
    count(&OperationCounters::cache_hits);
    Json response;
    try {
      response = Json::parse(*hit);
    } catch (const nlohmann::json::exception&) {
      throw MalformedPayloadError("corrupt cache entry " + std::string(role) + "/" + digest, *hit);
    }
    if (observer_) observer_(operation, key_request, response, true);
    return response;
  }
  if (options_.cache_only)
    throw BackendError("cache miss for " + std::string(operation) + " in cache-only mode (" + digest + ")");

  Json wire = key_request;
  for (const auto& [k, v] : wire_extra.items()) wire[k] = v;
  count(&OperationCounters::backend_calls);
  Json response;
  try {
    response = backend.invoke(wire);
  } catch (...) {
    count(&OperationCounters::failures);
    throw;
  }
  cache_->put(role, digest, response.dump());
  if (observer_) observer_(operation, key_request, response, false);
  return response;
}

Json ModelClients::image_json(const ImageRef& image, bool with_payload) const {
  Json j{{"digest", image.digest}};
  if (with_payload) j["latent"] = vector_to_json(images_.get(image).latent);
  return j;
}

ImageRef ModelClients::generate_image(const std::string& prompt, std::uint64_t seed) {
  if (prompt.empty()) throw ValidationError("generate_image: empty prompt");
  if (!backends_.generator) throw ConfigError("no generator backend configured");
  const Json key{{"prompt", prompt}, {"seed", seed}, {"model_version", backends_.generator->version()}};
  const Json resp = call("generate_image", role_name(Role::generator), *backends_.generator, key, Json::object());
  if (!resp.contains("latent")) throw MalformedPayloadError("generator response lacks 'latent'", resp.dump());
  Vector latent;
  try {
    latent = vector_from_json(resp["latent"]);
  } catch (const ValidationError&) {
    throw MalformedPayloadError("generator 'latent' is not numeric", resp.dump());
  }
  return images_.put(std::move(latent));
}

namespace {

std::string text_field(const Json& resp, const char* who) {
  if (!resp.is_object() || !resp.contains("text") || !resp["text"].is_string())
    throw MalformedPayloadError(std::string(who) + " response lacks a 'text' string", resp.dump());
  return resp["text"].get<std::string>();
}

}  // namespace

ContinueResult ModelClients::continue_text(const ImageRef& image, const std::string& prefix) {
  if (!backends_.target) throw ConfigError("no target backend configured");
  const Json key{{"task", "continue"}, {"text", options_.toxicity_prompt_template + prefix},
                 {"image", image_json(image, false)}};
  const Json extra{{"image", image_json(image, true)}};
  ContinueResult out;
  out.text = text_field(call("continue_text", role_name(Role::target), *backends_.target, key, extra), "target");
  const std::string low = lower(out.text);
  for (const auto& p : options_.refusal_patterns)
    if (low.find(lower(p)) != std::string::npos) out.refusal_like = true;
  return out;
}

std::string ModelClients::describe_image(const ImageRef& image) {
  if (!backends_.target) throw ConfigError("no target backend configured");
  const Json key{{"task", "describe"}, {"text", options_.describe_prompt_template}, {"image", image_json(image, false)}};
  const Json extra{{"image", image_json(image, true)}};
  return text_field(call("describe_image", role_name(Role::target), *backends_.target, key, extra), "target");
}

Backend& ModelClients::judge_backend(const std::string& judge_id) {
  for (auto& [id, backend] : backends_.judges)
    if (id == judge_id) return *backend;
  throw ConfigError("no judge backend '" + judge_id + "'");
}

rewards::ToxicityVector ModelClients::judge_toxicity(const std::string& text, const std::string& judge_id) {
  if (text.empty()) throw ValidationError("judge_toxicity: empty text");
  Backend& backend = judge_backend(judge_id);
  const Json key{{"judge", judge_id}, {"text", text}};
  const Json resp = call("judge_toxicity", role_name(Role::judge), backend, key, Json::object());
  try {
    return rewards::ToxicityVector::from_json(resp.at("scores"));
  } catch (const std::exception& e) {
    throw MalformedPayloadError(std::string("judge '") + judge_id + "' payload: " + e.what(), resp.dump());
  }
}

guardrails::CheckerVerdict ModelClients::check_nsfw(const ImageRef& image, std::string_view checker_id) {
  if (!guardrails::is_registered_checker(checker_id))
    throw ValidationError("unregistered checker '" + std::string(checker_id) + "'");
  const Role role = checker_id == guardrails::kPixelChecker ? Role::pixel_checker : Role::semantic_checker;
  auto& backend = role == Role::pixel_checker ? backends_.pixel_checker : backends_.semantic_checker;
  if (!backend) throw ConfigError("no backend for checker '" + std::string(checker_id) + "'");
  const Json key{{"checker", checker_id}, {"image", image_json(image, false)}};
  const Json extra{{"image", image_json(image, true)}};
  try {
    const Json resp = call("check_nsfw", role_name(role), *backend, key, extra);
    guardrails::CheckerVerdict v;
    v.checker_id = std::string(checker_id);
    if (!resp.contains("safe") || !resp["safe"].is_boolean())
      throw MalformedPayloadError("checker response lacks a boolean 'safe'", resp.dump());
    v.safe = resp["safe"].get<bool>();
    if (resp.contains("score") && resp["score"].is_number()) v.raw_score = resp["score"].get<double>();
    v.validate();
    return v;
  } catch (const Error& e) {
    if (options_.cache_only) throw;  // a replay miss is not a checker failure
    guardrails::CheckerVerdict v;
    v.checker_id = std::string(checker_id);
    v.safe = !options_.fail_closed;
    v.error = e.what();
    return v;
  }
}

guardrails::GuardrailOutcome ModelClients::check_guardrails(const ImageRef& image) {
  return guardrails::GuardrailOutcome(check_nsfw(image, guardrails::kPixelChecker),
                                      check_nsfw(image, guardrails::kSemanticChecker));
}

std::string ModelClients::propose_prompt(const ProposalRequest& request) {
  if (!backends_.proposer) throw ConfigError("no proposer backend configured");
  const Json resp = call("propose_prompt", role_name(Role::proposer), *backends_.proposer, request.to_json(),
                         Json::object());
  if (!resp.contains("prompt") || !resp["prompt"].is_string())
    throw MalformedPayloadError("proposer response lacks a 'prompt' string", resp.dump());
  return resp["prompt"].get<std::string>();
}

std::vector<std::string> ModelClients::judge_ids() const {
  std::vector<std::string> ids;
  for (const auto& [id, _] : backends_.judges) ids.push_back(id);
  return ids;
}

const std::string& ModelClients::primary_judge() const {
  if (backends_.judges.empty()) throw ConfigError("no judge backend configured");
  return backends_.judges.front().first;
}

Budget ModelClients::budget() const {
  std::lock_guard lock(budget_mutex_);
  return budget_;
}

// --- builtin toy backends ----------------------------------------------------

Vector image_latent(const Json& request) {
  if (!request.contains("image") || !request["image"].contains("latent"))
    throw ValidationError("request carries no image latent");
  return vector_from_json(request["image"]["latent"]);
}

ToyGeneratorBackend::ToyGeneratorBackend(std::shared_ptr<const toy::LinearGaussianPolicy> policy)
    : policy_(std::move(policy)) {
  if (!policy_) throw ConfigError("toy generator needs a policy");
}

Json ToyGeneratorBackend::invoke(const Json& request) {
  const Vector x0 = toy::generate_latent(*policy_, request.at("prompt").get<std::string>(),
                                         request.at("seed").get<std::uint64_t>());
  return Json{{"latent", vector_to_json(x0)}};
}

std::string ToyGeneratorBackend::version() const { return "toy-" + policy_->version(); }

ToyTargetBackend::ToyTargetBackend(std::shared_ptr<const toy::ToyScenario> scenario, std::string toxicity_template)
    : scenario_(std::move(scenario)), template_(std::move(toxicity_template)) {}

Json ToyTargetBackend::invoke(const Json& request) {
  const Vector feature = image_latent(request);
  const std::string task = request.at("task").get<std::string>();
  if (task == "describe") return Json{{"text", toy::mock_describe(*scenario_, feature)}};
  if (task != "continue") throw BackendError("toy target: unknown task '" + task + "'");
  std::string text = request.at("text").get<std::string>();
  if (text.rfind(template_, 0) == 0) text.erase(0, template_.size());
  return Json{{"text", toy::mock_continue(*scenario_, feature, text)}};
}

Json ToyProposerBackend::invoke(const Json& request) {
  return Json{{"prompt", toy::mock_propose(*scenario_, request.at("prefix").get<std::string>(),
                                           request.at("round").get<int>(),
                                           request.value("guardrail_hint", false))}};
}

ToyJudgeBackend::ToyJudgeBackend(std::shared_ptr<const toy::ToyScenario> scenario, const std::string& judge_id)
    : scenario_(std::move(scenario)), judge_id_(judge_id) {
  for (const auto& spec : scenario_->judges) {
    if (spec.id != judge_id) continue;
    const auto judge = toy::ScriptedJudge::from_spec(*scenario_, spec);
    judge_id_ = judge.id();
    default_ = spec.default_scores;
    for (int k = 0; k < scenario_->toxicity_cells; ++k) {
      const std::string text = toy::cell_continuation(*scenario_, k);
      table_.insert_or_assign(text, judge.score(text));
    }
    for (const auto& [text, v] : spec.table) table_.insert_or_assign(text, v);
    return;
  }
  throw ConfigError("scenario has no judge '" + judge_id + "'");
}

Json ToyJudgeBackend::invoke(const Json& request) {
  const std::string text = request.at("text").get<std::string>();
  const auto it = table_.find(text);
  return Json{{"scores", (it == table_.end() ? default_ : it->second).to_json()}};
}

ToyCheckerBackend::ToyCheckerBackend(std::shared_ptr<const toy::ToyScenario> scenario, Role role)
    : scenario_(std::move(scenario)), role_(role) {
  if (role != Role::pixel_checker && role != Role::semantic_checker)
    throw ConfigError("toy checker backend needs a checker role");
}

Json ToyCheckerBackend::invoke(const Json& request) {
  const Vector feature = image_latent(request);
  const auto v = role_ == Role::pixel_checker ? toy::pixel_check(*scenario_, feature)
                                              : toy::semantic_check(*scenario_, feature);
  return Json{{"safe", v.safe}, {"score", *v.raw_score}};
}

}  // namespace redloop::clients

// SPDX-License-Identifier: Apache-2.0
#include "redloop/search.hpp"

#include <array>

#include "redloop/rewards.hpp"

namespace redloop::search {

Json HistoryEntry::to_json() const {
  return Json{{"candidate", candidate},
              {"score", score},
              {"accepted", accepted},
              {"skipped", skipped},
              {"image_ref", image_ref},
              {"continuation", continuation ? Json(*continuation) : Json(nullptr)}};
}

HistoryEntry HistoryEntry::from_json(const Json& j) {
  HistoryEntry e;
  e.candidate = j.at("candidate").get<std::string>();
  e.score = j.at("score").get<double>();
  e.accepted = j.at("accepted").get<bool>();
  e.skipped = j.value("skipped", false);
  e.image_ref = j.value("image_ref", std::string{});
  if (j.contains("continuation") && !j["continuation"].is_null())
    e.continuation = j["continuation"].get<std::string>();
  return e;
}

namespace {

constexpr std::array<std::pair<GuardStatus, std::string_view>, 4> kStatusNames = {{
    {GuardStatus::not_applied, "not_applied"},
    {GuardStatus::retained, "retained"},
    {GuardStatus::adapted, "adapted"},
    {GuardStatus::unadapted_failed, "unadapted_failed"},
}};

Json history_json(const std::vector<HistoryEntry>& h) {
  Json a = Json::array();
  for (const auto& e : h) a.push_back(e.to_json());
  return a;
}

std::vector<HistoryEntry> history_from_json(const Json& a) {
  std::vector<HistoryEntry> h;
  for (const auto& e : a) h.push_back(HistoryEntry::from_json(e));
  return h;
}

}  // namespace

std::string_view guard_status_name(GuardStatus s) {
  for (const auto& [st, name] : kStatusNames)
    if (st == s) return name;
  return "not_applied";
}

GuardStatus guard_status_from_name(std::string_view name) {
  for (const auto& [st, n] : kStatusNames)
    if (n == name) return st;
  throw ValidationError("unknown guard status '" + std::string(name) + "'");
}

void PromptRecord::validate() const {
  double last = 0.0;
  bool any_accepted = false;
  std::string last_accepted;
  for (const auto& e : history) {
    if (!e.accepted) continue;
    if (e.skipped) throw ValidationError("record for '" + prefix + "': a skipped candidate was accepted");
    if (any_accepted && !(e.score > last))
      throw ValidationError("record for '" + prefix + "': accepted scores are not strictly increasing");
    last = e.score;
    last_accepted = e.candidate;
    any_accepted = true;
  }
  if (best_toxicity != last) throw ValidationError("record for '" + prefix + "': best_toxicity is not the best accepted score");
  if (any_accepted && best_prompt != last_accepted)
    throw ValidationError("record for '" + prefix + "': best_prompt is not the best accepted candidate");
}

Json PromptRecord::to_json() const {
  Json j{{"prefix", prefix},
         {"best_prompt", best_prompt},
         {"best_toxicity", best_toxicity},
         {"query_count", query_count},
         {"history", history_json(history)},
         {"guard_status", guard_status_name(guard_status)},
         {"guardrail_adapted", guardrail_adapted},
         {"images_checked", images_checked}};
  if (!base_history.empty()) j["base_history"] = history_json(base_history);
  return j;
}

PromptRecord PromptRecord::from_json(const Json& j) {
  PromptRecord r;
  r.prefix = j.at("prefix").get<std::string>();
  r.best_prompt = j.at("best_prompt").get<std::string>();
  r.best_toxicity = j.at("best_toxicity").get<double>();
  r.query_count = j.at("query_count").get<std::size_t>();
  r.history = history_from_json(j.at("history"));
  r.guard_status = guard_status_from_name(j.value("guard_status", std::string("not_applied")));
  r.guardrail_adapted = j.value("guardrail_adapted", false);
  r.images_checked = j.value("images_checked", std::size_t{0});
  if (j.contains("base_history")) r.base_history = history_from_json(j["base_history"]);
  r.validate();
  return r;
}

ExemplarSet::ExemplarSet(std::size_t cap) : cap_(cap) {
  if (cap == 0) throw ConfigError("exemplar cap must be positive");
}

void ExemplarSet::add(clients::Exemplar e) {
  items_.push_back(std::move(e));
  while (items_.size() > cap_) items_.pop_front();
}

std::string ClientSearchEnvironment::propose(const clients::ProposalRequest& request) {
  return clients_.propose_prompt(request);
}

clients::ImageRef ClientSearchEnvironment::generate(const std::string& prompt, std::uint64_t seed) {
  return clients_.generate_image(prompt, seed);
}

std::string ClientSearchEnvironment::continue_text(const clients::ImageRef& image, const std::string& prefix) {
  return clients_.continue_text(image, prefix).text;
}

double ClientSearchEnvironment::score(const std::string& continuation) {
  if (continuation.empty()) return 0.0;
  return rewards::toxicity_reward(clients_.judge_toxicity(continuation, clients_.primary_judge()));
}

guardrails::GuardrailOutcome ClientSearchEnvironment::check(const clients::ImageRef& image) {
  return clients_.check_guardrails(image);
}

void SearchConfig::validate() const {
  if (iteration_cap < 1) throw ConfigError("iteration_cap must be at least 1");
}

void GuardSearchConfig::validate() const {
  if (samples_per_prompt < 1) throw ConfigError("samples_per_prompt must be at least 1");
  if (max_regenerations < 1) throw ConfigError("max_regenerations must be at least 1");
}

std::uint64_t guard_sample_seed(std::uint64_t seed, int j) {
  return mix_seed(seed, static_cast<std::uint64_t>(j) + 1);
}

namespace {

struct SampledImages {
  std::optional<clients::ImageRef> first_pass;
  std::size_t evaluated = 0;
};

SampledImages sample_and_check(SearchEnvironment& env, const std::string& prompt, std::uint64_t seed,
                               const GuardSearchConfig& guard) {
  SampledImages out;
  for (int j = 0; j < guard.samples_per_prompt; ++j) {
    const clients::ImageRef image = env.generate(prompt, guard_sample_seed(seed, j));
    const bool pass = env.check(image).pass();
    ++out.evaluated;
    if (pass && !out.first_pass) out.first_pass = image;
    if (out.first_pass && guard.short_circuit) break;
  }
  return out;
}

// One run of the greedy loop. Without `guard` this is the plain search: one
// image per candidate, proposals bounded by the iteration cap. With `guard`
// every candidate is sampled several times first and skipped when no image
// passes; skips consume the regeneration budget but do not end the loop.
PromptRecord run_greedy(const std::string& prefix, SearchEnvironment& env, const ExemplarSet& exemplars,
                        const SearchConfig& config, const GuardSearchConfig* guard, std::size_t& images_checked) {
  PromptRecord rec;
  rec.prefix = prefix;
  double t_max = 0.0;
  int proposals = 0;
  int scored_rounds = 0;
  bool initialised = false;
  const int proposal_budget = guard ? guard->max_regenerations : config.iteration_cap;

  try {
    while (proposals < proposal_budget && scored_rounds < config.iteration_cap) {
      clients::ProposalRequest req{prefix, proposals, guard != nullptr, exemplars.items()};
      ++proposals;
      HistoryEntry entry;
      entry.candidate = env.propose(req);

      std::optional<clients::ImageRef> image;
      if (guard) {
        if (!entry.candidate.empty()) {
          const SampledImages s = sample_and_check(env, entry.candidate, config.seed, *guard);
          images_checked += s.evaluated;
          image = s.first_pass;
        }
        if (!image) {
          entry.skipped = true;
          rec.history.push_back(std::move(entry));
          continue;
        }
      } else if (!entry.candidate.empty()) {
        image = env.generate(entry.candidate, config.seed);
      }

      if (image) {
        entry.image_ref = image->digest;
        entry.continuation = env.continue_text(*image, prefix);
        entry.score = env.score(*entry.continuation);
        ++rec.query_count;
      }
      ++scored_rounds;

      if (!initialised) {
        rec.best_prompt = entry.candidate;
        initialised = true;
      }
      const bool improved = entry.score > t_max;
      if (improved) {
        entry.accepted = true;
        t_max = entry.score;
        rec.best_prompt = entry.candidate;
        rec.best_toxicity = entry.score;
      }
      rec.history.push_back(std::move(entry));
      if (!improved) break;
    }
  } catch (const SearchAborted&) {
    throw;
  } catch (const Error& e) {
    throw SearchAborted(std::string("search for '") + prefix + "' aborted: " + e.what(), rec);
  }
  return rec;
}

// The last accepted entry is the best one; nothing is remembered when no
// candidate beat zero.
void remember(ExemplarSet& exemplars, const std::string& prefix, const std::vector<HistoryEntry>& history) {
  for (auto it = history.rbegin(); it != history.rend(); ++it)
    if (it->accepted && it->continuation) return exemplars.add({prefix, it->candidate, *it->continuation});
}

void remember(ExemplarSet& exemplars, const PromptRecord& rec) { remember(exemplars, rec.prefix, rec.history); }

}  // namespace

void rebuild_exemplars(ExemplarSet& exemplars, const std::vector<PromptRecord>& records) {
  for (const auto& rec : records) {
    if (rec.guard_status == GuardStatus::adapted || rec.guard_status == GuardStatus::unadapted_failed) {
      remember(exemplars, rec.prefix, rec.base_history);
      if (rec.guard_status == GuardStatus::adapted) remember(exemplars, rec);
    } else {
      remember(exemplars, rec);
    }
  }
}

PromptRecord greedy_search(const std::string& prefix, SearchEnvironment& env, ExemplarSet& exemplars,
                           const SearchConfig& config) {
  if (prefix.empty()) throw ValidationError("greedy_search: empty prefix");
  config.validate();
  std::size_t unused = 0;
  PromptRecord rec = run_greedy(prefix, env, exemplars, config, nullptr, unused);
  remember(exemplars, rec);
  return rec;
}

PromptRecord guardrail_aware_search(const PromptRecord& record, SearchEnvironment& env, ExemplarSet& exemplars,
                                    const SearchConfig& config, const GuardSearchConfig& guard) {
  config.validate();
  guard.validate();
  PromptRecord rec = record;
  std::size_t checked = 0;
  try {
    if (!record.best_prompt.empty()) {
      const SampledImages s = sample_and_check(env, record.best_prompt, config.seed, guard);
      checked += s.evaluated;
      if (s.first_pass) {
        rec.guard_status = GuardStatus::retained;
        rec.images_checked = checked;
        return rec;
      }
    }
  } catch (const Error& e) {
    rec.images_checked = checked;
    throw SearchAborted(std::string("guard check for '") + record.prefix + "' aborted: " + e.what(), rec);
  }

  PromptRecord adapted;
  try {
    adapted = run_greedy(record.prefix, env, exemplars, config, &guard, checked);
  } catch (const SearchAborted& e) {
    PromptRecord partial = e.partial();
    partial.base_history = record.history;
    partial.images_checked = checked;
    throw SearchAborted(e.what(), partial);
  }
  adapted.base_history = record.history;
  adapted.images_checked = checked;
  bool found = false;
  for (const auto& e : adapted.history) found = found || !e.skipped;
  if (found) {
    adapted.guard_status = GuardStatus::adapted;
    adapted.guardrail_adapted = true;
    remember(exemplars, adapted);
  } else {
    adapted.guard_status = GuardStatus::unadapted_failed;
    adapted.best_prompt = record.best_prompt;
    adapted.best_toxicity = 0.0;
  }
  return adapted;
}

}  // namespace redloop::search

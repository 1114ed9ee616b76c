// SPDX-License-Identifier: Apache-2.0
#include <CLI11.hpp>

#include <iostream>

#include "redloop/pipeline.hpp"

namespace {

using redloop::pipeline::PipelineConfig;

void add_options(CLI::App& app, PipelineConfig& c, std::string& samples) {
  app.add_option("--out", c.out_dir, "Run directory")->capture_default_str();
  app.add_option("--cache", c.cache_dir, "Response cache directory (default: <out>/cache)");
  app.add_option("--scenario", c.scenario_path, "Toy scenario JSON (default: built-in)");
  app.add_option("--dataset", c.dataset, "Prefix file: JSONL with prompt.text, or one prefix per line");
  app.add_option("--slice", c.slice, "first:K, holdout:K, ids:I,J,... or all")->capture_default_str();
  app.add_option("--seed", c.seed, "Base seed")->capture_default_str();
  app.add_flag("--guard", c.guard, "Guardrail-aware search and checker-aware reward");
  app.add_option("--lambda", c.lambda, "Alignment reward weight")->capture_default_str();
  app.add_option("--max-updates", c.max_updates, "Policy updates")->capture_default_str();
  app.add_option("--batch-size", c.batch_size, "Trajectories per update")->capture_default_str();
  app.add_option("--learning-rate", c.learning_rate, "Gradient ascent step")->capture_default_str();
  app.add_option("--snapshot-interval", c.snapshot_interval, "Updates between parameter snapshots")
      ->capture_default_str();
  app.add_option("--plateau-window", c.plateau_window, "Stop when the reward plateaus over this many updates");
  app.add_option("--iteration-cap", c.iteration_cap, "Greedy search round cap")->capture_default_str();
  app.add_option("--samples-per-prompt", c.samples_per_prompt, "Images sampled per prompt in the guard pass")
      ->capture_default_str();
  app.add_option("--max-regenerations", c.max_regenerations, "Proposals allowed in the guard regeneration pass")
      ->capture_default_str();
  app.add_flag("--short-circuit", c.short_circuit, "Stop sampling a prompt at its first passing image");
  app.add_option("--exemplar-cap", c.exemplar_cap, "In-context exemplars kept for the proposer")
      ->capture_default_str();
  app.add_option("--eval-samples", c.eval_samples, "Images per prefix and condition in eval")->capture_default_str();
  app.add_option("--threshold", c.threshold, "Toxicity threshold (strictly exceeded)")->capture_default_str();
  app.add_option("--counting-mode", c.counting_mode, "scored_only or refusals_as_nontoxic");
  app.add_flag("--cache-only", c.cache_only, "Fail on cache misses instead of calling backends (replay)");
  app.add_flag("--fail-open", c.fail_open, "Treat checker outages as safe");
  app.add_option("--backend", c.backends, "ROLE[:ID]=ENDPOINT (URL or builtin:toy)");
  app.add_option("--auth-ref", c.auth_refs, "ROLE[:ID]=ENV_VAR holding the bearer token");
  app.add_option("--samples", samples, "Sample log for `report` (default: <out>/eval/samples.jsonl)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"redloop: greedy image-prompt search, policy-gradient fine-tuning and toxicity evaluation"};
  app.set_config("--config", "", "Flat key=value file mirroring the long flag names");
  app.require_subcommand(1);

  PipelineConfig config;
  std::string samples;
  add_options(app, config, samples);

  auto* search = app.add_subcommand("search", "Greedy prompt search for every selected prefix");
  auto* train = app.add_subcommand("train", "Fine-tune the generator on the searched prompts");
  auto* eval = app.add_subcommand("eval", "Sample, judge and tabulate initial and trained generators");
  auto* simulate = app.add_subcommand("simulate", "search, train and eval on the builtin toy environment");
  auto* report = app.add_subcommand("report", "Rebuild tables from an existing sample log");
  for (auto* sub : {search, train, eval, simulate, report}) sub->fallthrough();

  CLI11_PARSE(app, argc, argv);

  try {
    redloop::Json out;
    if (search->parsed()) out = redloop::pipeline::cmd_search(config);
    if (train->parsed()) out = redloop::pipeline::cmd_train(config);
    if (eval->parsed()) out = redloop::pipeline::cmd_eval(config);
    if (simulate->parsed()) out = redloop::pipeline::cmd_simulate(config);
    if (report->parsed())
      out = redloop::pipeline::cmd_report(config, samples.empty() ? config.out_dir + "/eval/samples.jsonl" : samples);
    std::cout << out.dump(2) << '\n';
  } catch (const redloop::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const redloop::clients::BackendError& e) {
    std::cerr << "backend error: " << e.what() << '\n';
    for (const auto& a : e.attempts()) std::cerr << "  " << a << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

// Command-line front end. Talks to the library only through the C API.
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "seelab/seelab.h"

namespace {

void print_progress(const char* line, void*) { std::fprintf(stderr, "  %s\n", line); }

int report_error(seelab_status s) {
  std::fprintf(stderr, "error: %s\n", seelab_last_error());
  return static_cast<int>(s);
}

// Prints the summary (and JSON report when asked) and returns the exit code.
int emit(seelab_status s, seelab_result* r, bool json) {
  if (!r) return report_error(s);
  std::printf("%s\n", seelab_result_summary(r));
  if (json) std::printf("%s\n", seelab_result_report(r));
  const int code = seelab_result_exit_code(r);
  seelab_result_free(r);
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"seelab: entropy-regularized preference optimization for toy diffusion models"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  bool force = false;
  int jobs = 1;
  bool quiet = false;
  bool json = false;
  app.add_option("--config", config_path, "Experiment config (JSON)");
  app.add_option("--seed", seed, "Override the config seed");
  app.add_flag("--force", force, "Overwrite existing outputs / restart training");
  app.add_option("--jobs", jobs, "Worker threads for sweep")->check(CLI::PositiveNumber);
  app.add_flag("--quiet", quiet, "No progress lines");
  app.add_flag("--json", json, "Also print the machine-readable report");

  auto* pretrain = app.add_subcommand("pretrain", "Train the reference diffusion model");
  auto* train = app.add_subcommand("train", "Preference fine-tuning from the reference (resumes by default)");
  int stop_after = -1;
  train->add_option("--stop-after", stop_after, "Stop after this many iterations (checkpoint kept)");
  auto* sweep = app.add_subcommand("sweep", "gamma x beta sweep");
  auto* toy = app.add_subcommand("toy", "Bandit toy curves");
  auto* verify = app.add_subcommand("verify", "Run the property suite");
  std::string report_path, mutation = "none";
  verify->add_option("--report", report_path, "Write the JSON report here");
  verify->add_option("--mutation", mutation, "Inject a known bug: none | gamma-scaling");
  auto* init = app.add_subcommand("init-config", "Print a default config");
  std::string dataset = "mixture2d";
  init->add_option("--dataset", dataset, "mixture2d | blobs8x8");
  for (auto* sub : {pretrain, train, sweep, toy, verify, init}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : SEELAB_CONFIG_ERROR;
  }

  seelab_options opt;
  seelab_options_init(&opt);
  opt.has_seed = seed.has_value();
  opt.seed = seed.value_or(0);
  opt.force = force;
  opt.jobs = jobs;
  opt.iteration_limit = stop_after;
  opt.mutation = mutation.c_str();
  if (!quiet) opt.log = print_progress;

  if (init->parsed()) {
    seelab_config* cfg = nullptr;
    if (auto s = seelab_config_default(dataset.c_str(), &cfg); s != SEELAB_OK) return report_error(s);
    char* text = nullptr;
    const auto s = seelab_config_to_json(cfg, &text);
    seelab_config_free(cfg);
    if (s != SEELAB_OK) return report_error(s);
    std::fputs(text, stdout);
    seelab_string_free(text);
    return 0;
  }

  seelab_result* result = nullptr;
  if (verify->parsed()) {
    const auto s = seelab_verify(&opt, report_path.empty() ? nullptr : report_path.c_str(), &result);
    return emit(s, result, json || report_path.empty());
  }

  seelab_config* cfg = nullptr;
  seelab_status s;
  if (config_path.empty()) {
    if (!toy->parsed()) {
      std::fprintf(stderr, "error: --config is required for this command\n");
      return SEELAB_CONFIG_ERROR;
    }
    s = seelab_config_default("mixture2d", &cfg);
    if (s == SEELAB_OK && seed) s = seelab_config_set_seed(cfg, *seed);
  } else {
    s = seelab_config_load(config_path.c_str(), &opt, &cfg);
  }
  if (s != SEELAB_OK) return report_error(s);

  if (pretrain->parsed()) {
    s = seelab_pretrain(cfg, &opt, &result);
  } else if (train->parsed()) {
    s = seelab_train(cfg, &opt, &result);
  } else if (sweep->parsed()) {
    s = seelab_sweep(cfg, &opt, &result);
  } else {
    s = seelab_toy(cfg, &opt, &result);
  }
  seelab_config_free(cfg);
  return emit(s, result, json);
}

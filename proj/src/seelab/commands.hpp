#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>

#include "seelab/config.hpp"

namespace seelab {

/// Environment variable that replaces the output root (default ".").
inline constexpr const char* kOutputRootEnv = "SEELAB_OUTPUT_ROOT";

enum class Mutation {
  None,
  /// Form A applies the (1+gamma) factor to the reference term as well.
  FormAGammaScaling
};

Mutation parse_mutation(const std::string& name);
std::string to_string(Mutation m);

struct CommandOptions {
  std::optional<std::uint64_t> seed;
  bool force = false;
  int jobs = 1;
  /// Overrides both the environment variable and ".".
  std::string output_root;
  /// train only: stop once this many iterations are done (checkpoint kept).
  int iteration_limit = -1;
  Mutation mutation = Mutation::None;
  /// Progress lines; silent when empty.
  std::function<void(const std::string&)> log;
};

/// Reads and validates a config file, then applies the seed override.
ExperimentConfig load_config(const std::filesystem::path& path, const CommandOptions& options);

/// <root>/<config.output_dir>, root from options, then the environment, then ".".
std::filesystem::path output_directory(const ExperimentConfig& config, const CommandOptions& options);

struct CommandResult {
  int exit_code = 0;
  /// One-line human summary.
  std::string summary;
  /// Machine-readable details (JSON).
  std::string report;
};

// Each command throws ConfigError, MissingArtifact or NumericalAbort; use
// exit_code_for to map them.
CommandResult cmd_pretrain(const ExperimentConfig& config, const CommandOptions& options);
CommandResult cmd_train(const ExperimentConfig& config, const CommandOptions& options);
CommandResult cmd_sweep(const ExperimentConfig& config, const CommandOptions& options);
/// Config-free; `output_dir` empty means report to the result only.
CommandResult cmd_verify(const CommandOptions& options, const std::filesystem::path& report_path = {});
CommandResult cmd_toy(const ExperimentConfig& config, const CommandOptions& options);

/// 2 config, 3 missing artifact, 4 numerical abort, 5 anything else.
int exit_code_for(const std::exception& e);

}  // namespace seelab

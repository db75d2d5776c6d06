#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "seelab/config.hpp"
#include "seelab/diffusion.hpp"
#include "seelab/metrics.hpp"
#include "seelab/preference.hpp"
#include "seelab/trainer.hpp"

// JSON and CSV formats. Every JSON document carries "format" and "version";
// readers reject other formats and newer versions with ConfigError.
namespace seelab {

inline constexpr int kFormatVersion = 1;

std::string denoiser_to_json(const DenoiserParams& params, ScheduleKind schedule);
/// Returns the parameters; writes the stored schedule kind when non-null.
DenoiserParams denoiser_from_json(const std::string& text, ScheduleKind* schedule = nullptr);

std::string trajectory_to_json(const Trajectory& traj);
Trajectory trajectory_from_json(const std::string& text);

/// One JSON object per line: {"v":1,"c":[..],"x_w":[..],"x_l":[..],"confidence":p,"t":k}.
std::string pairs_to_jsonl(const std::vector<PreferencePair>& pairs);
std::vector<PreferencePair> pairs_from_jsonl(const std::string& text);

/// First line "# seelab-runlog v1", then a header row and one row per evaluation.
/// Columns: step,proxy_reward,true_reward,kl,kl_stderr,diversity,e2,coverage_0..coverage_{k-1}.
std::string runlog_to_csv(const RunLog& log);
std::string runlog_to_json(const RunLog& log);
RunLog runlog_from_json(const std::string& text);

std::string trainer_state_to_json(const TrainerState& state);
/// `reference` must match the checksum stored in the state document.
TrainerState trainer_state_from_json(const std::string& text, const DenoiserParams& reference);

std::string experiment_config_to_json(const ExperimentConfig& config);
/// Parses and validates. Errors name the offending field or the line and column.
ExperimentConfig experiment_config_from_json(const std::string& text);

std::string read_text_file(const std::filesystem::path& path);
/// Writes via a temporary file and rename so readers never see a partial file.
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace seelab

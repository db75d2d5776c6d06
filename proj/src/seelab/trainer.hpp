#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "seelab/diffusion.hpp"
#include "seelab/objectives.hpp"
#include "seelab/preference.hpp"

namespace seelab {

struct RewardModelSettings {
  int fit_pairs = 2000;
  int width = 32;
  int depth = 2;
  int epochs = 40;
  double learning_rate = 3e-3;
  /// Noisy copies per clean pair when fitting the per-step scorer.
  int noisy_copies = 4;
  bool operator==(const RewardModelSettings&) const = default;
};

struct RunConfig {
  LossConfig loss{LossVariant::SeeStep, 0.3, 0.0, 20, Pairing::Trajectory};
  int iterations = 200;
  int pairs_per_iteration = 16;
  /// Optimizer steps taken on each iteration's batch.
  int updates_per_iteration = 2;
  AdamSettings adam{3e-4, 0.9, 0.999, 1e-8};
  DatasetId dataset = DatasetId::Mixture2d;
  ScheduleKind schedule = ScheduleKind::Linear;
  std::uint64_t seed = 0;
  int eval_every = 5;
  int eval_samples = 512;
  int kl_samples = 64;
  /// Pairs are drawn from the current policy when true, from the reference otherwise.
  bool online = true;
  LabelMode labeling = LabelMode::Deterministic;
  /// Labels the reward-model fitting data.
  RewardSpec proxy;
  /// Ground truth used only for evaluation.
  RewardSpec truth;
  RewardModelSettings reward_model;

  /// Throws ConfigError naming the offending field.
  void validate() const;
  bool operator==(const RunConfig&) const = default;
};

/// Proxy and truth defaults for a dataset: an off-manifold mode-seeking target
/// beside mixture center 0 with mixture log-density as truth, or blob sharpness.
RewardSpec default_proxy(DatasetId id);
RewardSpec default_truth(DatasetId id);

struct RunLogRow {
  int step = 0;
  double proxy_reward = 0.0;
  double true_reward = 0.0;
  double kl = 0.0;
  double kl_stderr = 0.0;
  /// Coverage entropy in bits for the mixture, mean E1 for images.
  double diversity = 0.0;
  /// Mean E2 for images, 0 for the mixture.
  double e2 = 0.0;
  std::vector<double> coverage;

  bool operator==(const RunLogRow&) const = default;
};

struct RunLog {
  std::vector<RunLogRow> rows;

  /// Throws ContractViolation unless steps strictly increase.
  void append(RunLogRow row);
  bool operator==(const RunLog&) const = default;
};

struct TrainerState {
  RunConfig config;
  DiffusionSchedule schedule;
  DenoiserParams reference;
  std::uint64_t reference_checksum = 0;
  DenoiserParams policy;
  OptimizerState optimizer;
  RewardModelParams proxy_model;
  /// Only set for per-step pairing.
  std::optional<RewardModelParams> step_model;
  RewardFitReport proxy_fit;
  std::vector<PreferencePair> dataset;
  int iteration = 0;
  RunLog log;

  bool operator==(const TrainerState&) const = default;
};

/// Builds the initial state: copies the reference into the policy, fits the
/// proxy reward model(s) on labeled reference samples and logs step 0.
TrainerState init_trainer(const RunConfig& config, const DenoiserParams& reference);

/// One online iteration: sample pairs, label, append, optimize. Appends an
/// evaluation row when the new iteration count hits the cadence.
void run_online_iteration(TrainerState& state);

RunLogRow evaluate(const TrainerState& state, int step);

/// Called after each evaluation row; used for checkpointing.
using RowCallback = std::function<void(const TrainerState&)>;

/// Runs until config.iterations. On NumericalAbort the state is left at the
/// last completed iteration and the exception propagates. A non-negative
/// `stop_at` ends the run early at that iteration count.
void train(TrainerState& state, const RowCallback& on_row = {}, int stop_at = -1);

struct HackingReport {
  bool flagged = false;
  /// Index of the first row of the flagged window, -1 if none.
  int first_row = -1;
  /// Step index of that row, -1 if none.
  int first_step = -1;

  bool operator==(const HackingReport&) const = default;
};

struct DetectorSettings {
  int window = 20;
  /// Minimum |t-statistic| of a least-squares slope to count its sign.
  double min_t = 2.0;
};

/// Slope of y on x and its t-statistic (0 when undefined).
std::pair<double, double> ls_slope(std::span<const double> x, std::span<const double> y);

HackingReport detect_reward_hacking(const RunLog& log, const DetectorSettings& settings = {});

/// true reward + diversity of the last row.
double composite_score(const RunLogRow& row);

// Bandit toy --------------------------------------------------------------------

struct BanditToyConfig {
  std::vector<double> p_ref{0.3, 0.2, 0.15, 0.12, 0.1, 0.07, 0.05, 0.01};
  std::vector<double> rewards{0.0, 0.2, 0.4, 0.6, 0.8, 1.0, 1.2, 3.0};
  std::vector<double> gammas{0.0, 0.5, 1.0, 3.0, 5.0, 10.0};
  int steps = 300;
  int pairs_per_step = 16;
  double beta = 0.1;
  double learning_rate = 0.5;
  double clip = 5.0;
  std::uint64_t seed = 0;

  bool operator==(const BanditToyConfig&) const = default;
};

struct BanditCurve {
  double gamma = 0.0;
  /// Mass on the high-reward action at steps 0..steps.
  std::vector<double> mass;
};

/// The unique action with the largest reward; throws ConfigError otherwise.
int high_reward_action(const BanditToyConfig& config);

std::vector<BanditCurve> run_bandit_toy(const BanditToyConfig& config);

/// First step with mass >= threshold, or mass.size() if never.
int time_to_mass(const BanditCurve& curve, double threshold);

// Sweep ---------------------------------------------------------------------------

struct SweepCell {
  double gamma = 0.0;
  double beta = 0.0;
  bool ok = false;
  std::string error;
  RunLog log;
  HackingReport hacking;
};

struct SweepResult {
  std::vector<SweepCell> cells;  // gamma-major order
};

/// Runs the gamma x beta cross product with `jobs` worker threads. A failing
/// cell is recorded and the sweep continues. `on_cell` runs on the worker
/// thread that finished the cell.
SweepResult sweep(const RunConfig& base, const DenoiserParams& reference, const std::vector<double>& gammas,
                  const std::vector<double>& betas, int jobs,
                  const std::function<void(std::size_t, const SweepCell&, const TrainerState*)>& on_cell = {});

/// Variant used for a sweep cell: see-* variants keep theirs, base variants
/// switch to their see-* counterpart when gamma != 0.
LossVariant sweep_variant(LossVariant base, double gamma);

}  // namespace seelab

#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "seelab/denoiser.hpp"
#include "seelab/optim.hpp"
#include "seelab/rng.hpp"

namespace seelab {

enum class ScheduleKind { Linear, Cosine };

ScheduleKind parse_schedule_kind(const std::string& name);
std::string to_string(ScheduleKind kind);

/// Variance-preserving schedule sampled at t = 0..T.
struct DiffusionSchedule {
  int T = 0;
  ScheduleKind kind = ScheduleKind::Linear;
  std::vector<double> alpha;
  std::vector<double> sigma;
  std::vector<double> snr;

  bool operator==(const DiffusionSchedule&) const = default;
};

DiffusionSchedule make_schedule(int T, ScheduleKind kind);

/// Coefficients of the Gaussian reverse kernel for the step x_t -> x_{t-1}:
/// mean = mean_scale * (x_t - eps_coef * eps_hat), fixed variance.
struct StepKernel {
  double mean_scale = 0.0;
  double eps_coef = 0.0;
  double variance = 0.0;
};

StepKernel step_kernel(const DiffusionSchedule& sched, int t);

std::vector<double> forward_noise(const DiffusionSchedule& sched, std::span<const double> x0, int t,
                                  std::span<const double> eps);

struct StepRecord {
  std::vector<double> mean;
  double variance = 0.0;
  std::vector<double> noise;

  bool operator==(const StepRecord&) const = default;
};

/// A full reverse chain. states[t] holds x_t for t = 0..T; steps[t - 1]
/// describes the transition x_t -> x_{t-1}.
struct Trajectory {
  std::vector<double> condition;
  std::vector<std::vector<double>> states;
  std::vector<StepRecord> steps;

  int T() const { return static_cast<int>(steps.size()); }
  const std::vector<double>& x(int t) const { return states.at(static_cast<std::size_t>(t)); }
  const StepRecord& step(int t) const { return steps.at(static_cast<std::size_t>(t - 1)); }
  bool operator==(const Trajectory&) const = default;
};

struct TrajectoryPair {
  Trajectory winner;
  Trajectory loser;
};

std::vector<double> posterior_mean(const DiffusionSchedule& sched, std::span<const double> x_t, int t,
                                   std::span<const double> eps_hat);

/// One ancestral step with explicit injected noise.
std::pair<std::vector<double>, StepRecord> reverse_step_with_noise(const DiffusionSchedule& sched,
                                                                   const DenoiserParams& params,
                                                                   std::span<const double> x_t, int t,
                                                                   std::span<const double> c,
                                                                   std::span<const double> noise);

std::pair<std::vector<double>, StepRecord> reverse_step(const DiffusionSchedule& sched,
                                                        const DenoiserParams& params,
                                                        std::span<const double> x_t, int t,
                                                        std::span<const double> c, Rng& rng);

Trajectory sample_trajectory(const DiffusionSchedule& sched, const DenoiserParams& params,
                             std::span<const double> c, Rng& rng);

/// Samples one chain per condition. Item i draws from the i-th fork of `rng`,
/// so the result equals sample_trajectory with that fork.
std::vector<Trajectory> sample_trajectories(const DiffusionSchedule& sched,
                                            const DenoiserParams& params,
                                            std::span<const std::vector<double>> conditions,
                                            Rng& rng);

/// Same sampling process as sample_trajectories but only returns x_0.
std::vector<std::vector<double>> sample_final(const DiffusionSchedule& sched,
                                              const DenoiserParams& params,
                                              std::span<const std::vector<double>> conditions,
                                              Rng& rng);

/// Packs per-item condition vectors into a feature-major batch.
Batch conditions_batch(std::span<const std::vector<double>> conditions, int cond_dim);

double gaussian_logprob(std::span<const double> x, std::span<const double> mean, double var);

/// log p_theta(x_{t-1} | x_t) re-evaluated under `params`.
double step_logprob(const DiffusionSchedule& sched, const DenoiserParams& params,
                    const Trajectory& traj, int t);

struct LossValue {
  double value = 0.0;
  Gradients grad;
};

/// Draws behind one ELBO evaluation, kept explicit so the loss is a pure
/// function of (params, draws).
struct ElboDraw {
  int t = 1;
  std::vector<double> eps;
};

std::vector<ElboDraw> draw_elbo_noise(const DiffusionSchedule& sched, int batch, int dim, Rng& rng);

LossValue dm_pretrain_loss(const DiffusionSchedule& sched, const DenoiserParams& params,
                           std::span<const std::vector<double>> x0,
                           std::span<const std::vector<double>> conditions,
                           std::span<const ElboDraw> draws);

LossValue dm_pretrain_loss(const DiffusionSchedule& sched, const DenoiserParams& params,
                           std::span<const std::vector<double>> x0,
                           std::span<const std::vector<double>> conditions, Rng& rng);

// Toy datasets ------------------------------------------------------------

enum class DatasetId { Mixture2d, Blobs8x8 };

DatasetId parse_dataset_id(const std::string& name);
std::string to_string(DatasetId id);

class ToyDataset {
 public:
  explicit ToyDataset(DatasetId id);

  DatasetId id() const { return id_; }
  int data_dim() const;
  int cond_dim() const;
  /// Conditions the dataset is generated under; one entry for unconditional data.
  const std::vector<std::vector<double>>& prompts() const { return prompts_; }
  /// Mixture centers (2-D mixture only).
  const std::vector<std::vector<double>>& centers() const { return centers_; }
  double component_stddev() const { return 0.3; }

  std::vector<double> sample(Rng& rng, std::span<const double> c) const;
  std::vector<double> random_prompt(Rng& rng) const;

 private:
  DatasetId id_;
  std::vector<std::vector<double>> prompts_;
  std::vector<std::vector<double>> centers_;
};

/// Maps a 64-dim sample in diffusion space [-1, 1] to pixel values in [0, 1].
std::vector<double> to_pixels(std::span<const double> x);

struct PretrainSettings {
  int steps = 5000;
  int batch_size = 64;
  AdamSettings adam{2e-3, 0.9, 0.999, 1e-8};

  bool operator==(const PretrainSettings&) const = default;
};

struct PretrainReport {
  double initial_loss = 0.0;
  double final_loss = 0.0;
  std::vector<double> loss_curve;  // mean loss over each block of 100 steps
};

/// Trains a denoiser on `dataset` with the ELBO objective.
DenoiserParams pretrain_denoiser(const ToyDataset& dataset, const DiffusionSchedule& sched,
                                 const DenoiserSpec& spec, const PretrainSettings& settings,
                                 Rng& rng, PretrainReport* report = nullptr);

}  // namespace seelab

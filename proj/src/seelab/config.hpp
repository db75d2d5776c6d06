#pragma once

#include <string>
#include <vector>

#include "seelab/diffusion.hpp"
#include "seelab/trainer.hpp"

namespace seelab {

/// Everything one experiment directory is built from.
struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::string output_dir = "runs/default";
  DatasetId dataset = DatasetId::Mixture2d;
  ScheduleKind schedule = ScheduleKind::Linear;
  int T = 20;
  int width = 64;
  int depth = 3;
  PretrainSettings pretrain;
  RunConfig run;
  std::vector<double> sweep_gammas{-0.5, 0.0, 1.0, 3.0, 5.0};
  std::vector<double> sweep_betas{0.01, 0.1, 1.0, 4.0};
  BanditToyConfig toy;

  /// Copies the shared fields (seed, dataset, schedule, T) into run and toy.
  void propagate();
  /// Throws ConfigError naming the offending field.
  void validate() const;
  DenoiserSpec denoiser_spec() const;
  bool operator==(const ExperimentConfig&) const = default;
};

/// Config with the tuned defaults for a dataset (rewards included).
ExperimentConfig default_experiment(DatasetId dataset);

}  // namespace seelab

#include "seelab/config.hpp"

#include <cmath>

#include "seelab/errors.hpp"

namespace seelab {

void ExperimentConfig::propagate() {
  run.seed = seed;
  run.dataset = dataset;
  run.schedule = schedule;
  run.loss.T = T;
  toy.seed = seed;
}

void ExperimentConfig::validate() const {
  if (T < 2) throw ConfigError("schedule.T must be at least 2, got " + std::to_string(T));
  if (width < 1) throw ConfigError("model.width must be a positive integer");
  if (depth < 1) throw ConfigError("model.depth must be a positive integer");
  if (pretrain.steps < 1) throw ConfigError("pretrain.steps must be a positive integer");
  if (pretrain.batch_size < 1) throw ConfigError("pretrain.batch_size must be a positive integer");
  if (!(pretrain.adam.learning_rate > 0.0)) throw ConfigError("pretrain.learning_rate must be positive");
  if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
  if (run.seed != seed || run.dataset != dataset || run.loss.T != T || run.schedule != schedule) {
    throw ConfigError("run settings disagree with the top-level seed/dataset/schedule");
  }
  run.validate();
  if (sweep_gammas.empty()) throw ConfigError("sweep.gammas must be non-empty");
  if (sweep_betas.empty()) throw ConfigError("sweep.betas must be non-empty");
  for (double g : sweep_gammas) {
    if (!(g > -1.0) || !std::isfinite(g)) throw ConfigError("sweep.gammas entries must be finite and exceed -1");
  }
  for (double b : sweep_betas) {
    if (!(b > 0.0) || !std::isfinite(b)) throw ConfigError("sweep.betas entries must be positive");
  }
  high_reward_action(toy);
  if (toy.p_ref.size() < 2) throw ConfigError("toy.p_ref needs at least two actions");
  for (double p : toy.p_ref) {
    if (!(p > 0.0)) throw ConfigError("toy.p_ref entries must be positive");
  }
  for (double g : toy.gammas) {
    if (!(g > -1.0)) throw ConfigError("toy.gammas entries must exceed -1");
  }
  if (toy.steps < 0) throw ConfigError("toy.steps must be non-negative");
  if (toy.pairs_per_step < 1) throw ConfigError("toy.pairs_per_step must be a positive integer");
  if (!(toy.beta > 0.0)) throw ConfigError("toy.beta must be positive");
  if (!(toy.learning_rate >= 0.0)) throw ConfigError("toy.learning_rate must be non-negative");
}

DenoiserSpec ExperimentConfig::denoiser_spec() const {
  const ToyDataset ds(dataset);
  return DenoiserSpec{ds.data_dim(), ds.cond_dim(), T, width, depth};
}

ExperimentConfig default_experiment(DatasetId dataset) {
  ExperimentConfig cfg;
  cfg.dataset = dataset;
  cfg.run.proxy = default_proxy(dataset);
  cfg.run.truth = default_truth(dataset);
  cfg.propagate();
  return cfg;
}

}  // namespace seelab

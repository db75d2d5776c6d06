#pragma once

#include <span>
#include <string>
#include <vector>

#include "seelab/diffusion.hpp"
#include "seelab/mlp.hpp"
#include "seelab/optim.hpp"
#include "seelab/rng.hpp"

namespace seelab {

enum class RewardKind {
  ModeSeeking,    // -||x - m*||^2, parameters = m*
  BlobSharpness,  // mean squared pixel gradient of a square image
  CustomTable,    // parameters[round(x[0])]
  MixtureDensity  // log density of an equal-weight isotropic mixture, parameters = [stddev, centers...]
};

RewardKind parse_reward_kind(const std::string& name);
std::string to_string(RewardKind kind);

struct RewardSpec {
  RewardKind kind = RewardKind::ModeSeeking;
  std::vector<double> parameters;

  bool operator==(const RewardSpec&) const = default;
};

double true_reward(const RewardSpec& spec, std::span<const double> c, std::span<const double> x0);

/// sigma(r_w - r_l).
double bt_probability(double r_w, double r_l);

double sigmoid(double z);
/// log(1 + exp(z)) without overflow.
double softplus(double z);

struct PreferencePair {
  std::vector<double> c;
  std::vector<double> x_w;
  std::vector<double> x_l;
  double confidence = 1.0;
  /// Diffusion timestep of x_w and x_l; 0 for clean samples.
  int t = 0;

  bool operator==(const PreferencePair&) const = default;
};

enum class LabelMode { Deterministic, Stochastic };

LabelMode parse_label_mode(const std::string& name);
std::string to_string(LabelMode mode);

/// Labels (x_a, x_b) by `reward`. Deterministic ties go to the
/// lexicographically smaller sample.
PreferencePair label_pair(double reward_a, double reward_b, std::span<const double> c,
                          std::span<const double> x_a, std::span<const double> x_b, Rng& rng,
                          LabelMode mode);

PreferencePair sample_preference(const RewardSpec& spec, std::span<const double> c,
                                 std::span<const double> x_a, std::span<const double> x_b, Rng& rng,
                                 LabelMode mode);

struct RewardModelParams {
  int data_dim = 2;
  int cond_dim = 0;
  bool time_conditioned = false;
  int timesteps = 0;
  ParamBuffer net;

  int input_dim() const;
  bool operator==(const RewardModelParams&) const = default;
};

RewardModelParams init_reward_model(int data_dim, int cond_dim, bool time_conditioned, int timesteps,
                                    int width, int depth, Rng& rng);

double reward_score(const RewardModelParams& rm, std::span<const double> x, int t,
                    std::span<const double> c);

/// Scores a batch of samples that share nothing but the model.
std::vector<double> reward_scores(const RewardModelParams& rm, std::span<const std::vector<double>> xs,
                                  std::span<const int> ts, std::span<const std::vector<double>> cs);

double stepwise_score(const RewardModelParams& rm, std::span<const double> x_t, int t,
                      std::span<const double> c);

struct RmLossValue {
  double value = 0.0;
  Gradients grad;
};

/// Mean of -log sigma(r(x_w) - r(x_l)) with exact gradients.
RmLossValue bt_loss(const RewardModelParams& rm, std::span<const PreferencePair> batch);

struct RewardModelConfig {
  int width = 32;
  int depth = 2;
  bool time_conditioned = false;
  int timesteps = 0;
  int epochs = 60;
  int batch_size = 32;
  double learning_rate = 3e-3;
  double holdout_fraction = 0.2;
  std::uint64_t seed = 0;
};

struct RewardFitReport {
  double final_train_loss = 0.0;
  double heldout_accuracy = 0.0;
  int train_pairs = 0;
  int heldout_pairs = 0;

  bool operator==(const RewardFitReport&) const = default;
};

struct FittedRewardModel {
  RewardModelParams params;
  RewardFitReport report;
};

FittedRewardModel train_reward_model(std::span<const PreferencePair> pairs, const RewardModelConfig& config);

/// Fraction of pairs whose winner the model scores strictly higher.
double pairwise_accuracy(const RewardModelParams& rm, std::span<const PreferencePair> pairs);

/// Corrupts both samples of each clean pair to a uniformly drawn t in [0, T],
/// keeping the clean-sample label. `copies` noisy pairs per clean pair.
std::vector<PreferencePair> noisy_preference_pairs(const DiffusionSchedule& sched,
                                                   std::span<const PreferencePair> clean, int copies,
                                                   Rng& rng);

}  // namespace seelab

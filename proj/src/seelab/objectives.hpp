#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "seelab/diffusion.hpp"
#include "seelab/preference.hpp"

namespace seelab {

enum class LossVariant { DpoBandit, D3poStep, DiffusionDpoNoise, SpoStep, SeeStep, SeeNoiseA, SeeNoiseB };

LossVariant parse_loss_variant(const std::string& name);
std::string to_string(LossVariant variant);

/// How training pairs are formed for the step losses. Trajectory pairs two
/// whole chains and updates on their steps; PerStep branches two candidate
/// transitions from one shared state and ranks them with a per-step scorer.
enum class Pairing { Trajectory, PerStep };

Pairing parse_pairing(const std::string& name);
std::string to_string(Pairing pairing);

struct LossConfig {
  LossVariant variant = LossVariant::SeeStep;
  double beta = 0.1;
  double gamma = 0.0;
  int T = 50;
  Pairing pairing = Pairing::Trajectory;

  /// Throws ConfigError naming the offending field.
  void validate() const;
  bool is_noise_loss() const;
  bool is_step_loss() const;
  /// see-* with gamma = 0 maps to its base variant; other variants map to themselves.
  LossVariant equivalent_base() const;
  /// beta as it multiplies the log-ratio: beta * T for the noise losses.
  double effective_beta() const;
  bool operator==(const LossConfig&) const = default;
};

/// Pairing a variant uses when the config does not say.
Pairing default_pairing(LossVariant variant);

// Discrete closed forms ----------------------------------------------------

struct DiscretePolicy {
  std::vector<double> probs;
  std::string condition;

  /// Throws ContractViolation unless non-negative and summing to 1 within 1e-12.
  void validate() const;
  std::size_t size() const { return probs.size(); }
  bool operator==(const DiscretePolicy&) const = default;
};

DiscretePolicy uniform_policy(std::size_t n);
DiscretePolicy normalized(std::vector<double> weights);

double total_variation(std::span<const double> a, std::span<const double> b);
/// Shannon entropy in nats, 0 log 0 = 0.
double shannon_entropy(std::span<const double> p);

DiscretePolicy flatten_distribution(const DiscretePolicy& p, double gamma);

double log_partition_function(const DiscretePolicy& p_ref, std::span<const double> rewards, double beta);
double partition_function(const DiscretePolicy& p_ref, std::span<const double> rewards, double beta);

DiscretePolicy closed_form_policy(const DiscretePolicy& p_ref, std::span<const double> rewards, double beta,
                                  double gamma);

double implied_reward(const DiscretePolicy& p_theta, const DiscretePolicy& p_ref, double beta, int action,
                      double Z);

/// sum pi r - beta KL(pi || ref) - beta gamma sum pi log pi.
double regularized_objective(std::span<const double> pi, const DiscretePolicy& p_ref,
                             std::span<const double> rewards, double beta, double gamma);

using ActionPair = std::pair<int, int>;  // (winner, loser)

double dpo_bandit_loss(const DiscretePolicy& p_theta, const DiscretePolicy& p_ref,
                       std::span<const ActionPair> pairs, double beta);

struct VectorLoss {
  double value = 0.0;
  std::vector<double> grad;
};

/// Step loss on a tabular softmax policy, differentiated with respect to the
/// logits. At gamma = 0 it equals dpo_bandit_loss(softmax(logits)).
VectorLoss bandit_step_loss(std::span<const double> logits, const DiscretePolicy& p_ref,
                            std::span<const ActionPair> pairs, double beta, double gamma);

std::vector<double> softmax(std::span<const double> logits);

// Step losses --------------------------------------------------------------

/// One reverse transition x_t -> x_prev under condition c.
struct StepTransition {
  std::vector<double> condition;
  int t = 1;
  std::vector<double> x_t;
  std::vector<double> x_prev;
};

StepTransition transition_of(const Trajectory& traj, int t);

struct StepPair {
  StepTransition winner;
  StepTransition loser;
};

/// log p(x_prev | x_t) for each transition.
std::vector<double> transition_logprobs(const DiffusionSchedule& sched, const DenoiserParams& params,
                                        std::span<const StepTransition> items);

/// softplus(-z) with z = beta (1+gamma) [(lw - lrw/(1+gamma)) - (ll - lrl/(1+gamma))].
double step_loss_from_logprobs(double lw, double lrw, double ll, double lrl, double beta, double gamma);

/// Mean step loss over a batch of transition pairs with gradients for `params`.
LossValue step_pair_loss(const DiffusionSchedule& sched, const DenoiserParams& params,
                         const DenoiserParams& ref_params, std::span<const StepPair> pairs, double beta,
                         double gamma);

/// Step loss of trajectory pair at step k; gamma = 0 is the plain base loss.
LossValue d3po_step_loss(const DiffusionSchedule& sched, const TrajectoryPair& pair,
                         const DenoiserParams& params, const DenoiserParams& ref_params, int k, double beta,
                         double gamma);

/// Single-step estimate of the chain loss with beta folded to beta * T.
LossValue stepwise_bound_loss(const DiffusionSchedule& sched, const TrajectoryPair& pair,
                              const DenoiserParams& params, const DenoiserParams& ref_params, int t,
                              double beta);

/// softplus(-beta * sum_t [logratio_w(t) - logratio_l(t)]) over the whole chain.
double full_chain_dpo_loss(const DiffusionSchedule& sched, const TrajectoryPair& pair,
                           const DenoiserParams& params, const DenoiserParams& ref_params, double beta);

// Noise losses ---------------------------------------------------------------

/// Shared draws for one pair: one timestep, separate noise for winner and loser.
struct NoiseDraw {
  int t = 1;
  std::vector<double> eps_w;
  std::vector<double> eps_l;
};

std::vector<NoiseDraw> draw_noise_pairs(const DiffusionSchedule& sched, std::size_t count, int dim, Rng& rng);

/// Mean of softplus(beta T [s_policy * dtheta - s_reference * dref]) where
/// d* = ||eps_w - eps_*(x_t^w)||^2 - ||eps_l - eps_*(x_t^l)||^2.
LossValue noise_loss_scaled(const DiffusionSchedule& sched, std::span<const PreferencePair> batch,
                            const DenoiserParams& params, const DenoiserParams& ref_params,
                            std::span<const NoiseDraw> draws, double beta, double policy_scale,
                            double reference_scale);

LossValue diffusion_dpo_noise_loss(const DiffusionSchedule& sched, std::span<const PreferencePair> batch,
                                   const DenoiserParams& params, const DenoiserParams& ref_params,
                                   std::span<const NoiseDraw> draws, double beta);
LossValue see_noise_loss_A(const DiffusionSchedule& sched, std::span<const PreferencePair> batch,
                           const DenoiserParams& params, const DenoiserParams& ref_params,
                           std::span<const NoiseDraw> draws, double beta, double gamma);
LossValue see_noise_loss_B(const DiffusionSchedule& sched, std::span<const PreferencePair> batch,
                           const DenoiserParams& params, const DenoiserParams& ref_params,
                           std::span<const NoiseDraw> draws, double beta, double gamma);

LossValue diffusion_dpo_noise_loss(const DiffusionSchedule& sched, std::span<const PreferencePair> batch,
                                   const DenoiserParams& params, const DenoiserParams& ref_params, double beta,
                                   Rng& rng);
LossValue see_noise_loss_A(const DiffusionSchedule& sched, std::span<const PreferencePair> batch,
                           const DenoiserParams& params, const DenoiserParams& ref_params, double beta,
                           double gamma, Rng& rng);
LossValue see_noise_loss_B(const DiffusionSchedule& sched, std::span<const PreferencePair> batch,
                           const DenoiserParams& params, const DenoiserParams& ref_params, double beta,
                           double gamma, Rng& rng);

// KL ------------------------------------------------------------------------

struct KlEstimate {
  double mean = 0.0;
  double standard_error = 0.0;
  int samples = 0;
};

/// Per-step Gaussian KL between two equal-variance kernels.
double gaussian_kl_equal_variance(std::span<const double> mean_a, std::span<const double> mean_b,
                                  double variance);

/// Monte-Carlo estimate of the summed per-step KL along chains sampled from
/// `params`. Condition i of n uses conditions[i % size].
KlEstimate kl_to_reference(const DenoiserParams& params, const DenoiserParams& ref_params,
                           const DiffusionSchedule& sched, std::span<const std::vector<double>> conditions,
                           Rng& rng, int n);

}  // namespace seelab

#pragma once

#include <span>
#include <vector>

#include "seelab/diffusion.hpp"
#include "seelab/objectives.hpp"
#include "seelab/optim.hpp"
#include "seelab/preference.hpp"

// Random problem instances for property checks, grad checks and benchmarks.
namespace seelab::fixtures {

/// Denoiser with random weights; `jitter` perturbs every weight so that two
/// calls from one init differ as policy and reference.
DenoiserParams random_denoiser(const DenoiserSpec& spec, Rng& rng, double jitter = 0.0);

/// Copy of `base` with N(0, jitter^2) added to every weight.
DenoiserParams perturbed(const DenoiserParams& base, double jitter, Rng& rng);

/// Two chains sampled from `params` under a random condition.
TrajectoryPair random_trajectory_pair(const DiffusionSchedule& sched, const DenoiserParams& params, Rng& rng);

/// Random clean pairs with Gaussian samples and conditions.
std::vector<PreferencePair> random_pairs(int count, int data_dim, int cond_dim, Rng& rng);

/// Strictly positive distribution with entries spread over a few orders of magnitude.
DiscretePolicy random_distribution(int n, Rng& rng);

std::vector<double> random_vector(int n, Rng& rng, double scale = 1.0);

/// Exact maximizer of regularized_objective over the lattice {k / units}
/// (sum of k = units) by greedy marginal allocation; valid because the
/// objective is separable and concave in each coordinate for gamma > -1.
std::vector<double> lattice_argmax(const DiscretePolicy& p_ref, std::span<const double> rewards, double beta,
                                   double gamma, int units);

/// Brute-force enumeration of the same lattice (small n and units only).
std::vector<double> lattice_argmax_enumerate(const DiscretePolicy& p_ref, std::span<const double> rewards,
                                             double beta, double gamma, int units);

/// Largest |(log-ratio winner) - (log-ratio loser)| over the pairs. Low-noise
/// steps can make this 1e4 or more, which puts a step loss far outside the
/// range where finite differences are meaningful.
double max_logratio_gap(const DiffusionSchedule& sched, const DenoiserParams& params, const DenoiserParams& ref,
                        std::span<const StepPair> pairs);

/// beta shrunk so that beta * gap stays within `limit`.
double bounded_beta(double beta, double gap, double limit = 10.0);

/// Wraps a loss of denoiser parameters for grad_check.
LossWithGradient denoiser_loss(const DenoiserParams& at,
                               std::function<LossValue(const DenoiserParams&)> loss);

}  // namespace seelab::fixtures

#include "seelab/fixtures.hpp"

#include <cmath>
#include <queue>

#include "seelab/errors.hpp"

namespace seelab::fixtures {

DenoiserParams random_denoiser(const DenoiserSpec& spec, Rng& rng, double jitter) {
  DenoiserParams p = init_denoiser(spec, rng);
  return jitter > 0.0 ? perturbed(p, jitter, rng) : p;
}

DenoiserParams perturbed(const DenoiserParams& base, double jitter, Rng& rng) {
  DenoiserParams p = base;
  for (double& v : p.net.values) v += jitter * rng.normal();
  return p;
}

TrajectoryPair random_trajectory_pair(const DiffusionSchedule& sched, const DenoiserParams& params, Rng& rng) {
  const std::vector<double> c = random_vector(params.spec.cond_dim, rng);
  TrajectoryPair pair;
  pair.winner = sample_trajectory(sched, params, c, rng);
  pair.loser = sample_trajectory(sched, params, c, rng);
  return pair;
}

std::vector<PreferencePair> random_pairs(int count, int data_dim, int cond_dim, Rng& rng) {
  std::vector<PreferencePair> out(static_cast<std::size_t>(count));
  for (auto& p : out) {
    p.c = random_vector(cond_dim, rng);
    p.x_w = random_vector(data_dim, rng);
    p.x_l = random_vector(data_dim, rng);
  }
  return out;
}

DiscretePolicy random_distribution(int n, Rng& rng) {
  std::vector<double> w(static_cast<std::size_t>(n));
  for (double& v : w) v = std::exp(2.0 * rng.normal());
  return normalized(std::move(w));
}

std::vector<double> random_vector(int n, Rng& rng, double scale) {
  std::vector<double> v(static_cast<std::size_t>(n));
  for (double& x : v) x = scale * rng.normal();
  return v;
}

namespace {

// Per-coordinate term of regularized_objective at p = k / units.
double coordinate_value(double r, double ref, double beta, double gamma, int k, int units) {
  if (k == 0) return 0.0;
  const double p = static_cast<double>(k) / units;
  return p * r - beta * p * std::log(p / ref) - beta * gamma * p * std::log(p);
}

void check_lattice_args(const DiscretePolicy& p_ref, std::span<const double> rewards, double gamma, int units) {
  require(p_ref.size() == rewards.size(), "lattice: reward count does not match the reference");
  require(gamma > -1.0, "lattice: concavity needs gamma > -1");
  require(units >= 1, "lattice: units must be positive");
}

}  // namespace

std::vector<double> lattice_argmax(const DiscretePolicy& p_ref, std::span<const double> rewards, double beta,
                                   double gamma, int units) {
  check_lattice_args(p_ref, rewards, gamma, units);
  const std::size_t n = rewards.size();
  std::vector<int> k(n, 0);
  auto gain = [&](std::size_t i) {
    return coordinate_value(rewards[i], p_ref.probs[i], beta, gamma, k[i] + 1, units) -
           coordinate_value(rewards[i], p_ref.probs[i], beta, gamma, k[i], units);
  };
  // Ties resolve to the lower index.
  using Entry = std::pair<double, int>;
  auto worse = [](const Entry& a, const Entry& b) { return a.first < b.first || (a.first == b.first && a.second > b.second); };
  std::priority_queue<Entry, std::vector<Entry>, decltype(worse)> heap(worse);
  for (std::size_t i = 0; i < n; ++i) heap.emplace(gain(i), static_cast<int>(i));
  for (int u = 0; u < units; ++u) {
    const auto [g, i] = heap.top();
    heap.pop();
    ++k[static_cast<std::size_t>(i)];
    heap.emplace(gain(static_cast<std::size_t>(i)), i);
  }
  std::vector<double> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = static_cast<double>(k[i]) / units;
  return p;
}

std::vector<double> lattice_argmax_enumerate(const DiscretePolicy& p_ref, std::span<const double> rewards,
                                             double beta, double gamma, int units) {
  check_lattice_args(p_ref, rewards, gamma, units);
  const std::size_t n = rewards.size();
  require(n <= 4, "lattice_argmax_enumerate: at most 4 actions");
  std::vector<int> k(n, 0), best_k;
  double best = -std::numeric_limits<double>::infinity();
  auto rec = [&](auto&& self, std::size_t i, int left) -> void {
    if (i + 1 == n) {
      k[i] = left;
      double v = 0.0;
      for (std::size_t j = 0; j < n; ++j) v += coordinate_value(rewards[j], p_ref.probs[j], beta, gamma, k[j], units);
      if (v > best) {
        best = v;
        best_k = k;
      }
      return;
    }
    for (int a = 0; a <= left; ++a) {
      k[i] = a;
      self(self, i + 1, left - a);
    }
  };
  rec(rec, 0, units);
  std::vector<double> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = static_cast<double>(best_k[i]) / units;
  return p;
}

double max_logratio_gap(const DiffusionSchedule& sched, const DenoiserParams& params, const DenoiserParams& ref,
                        std::span<const StepPair> pairs) {
  std::vector<StepTransition> items;
  for (const auto& p : pairs) {
    items.push_back(p.winner);
    items.push_back(p.loser);
  }
  const auto cur = transition_logprobs(sched, params, items);
  const auto base = transition_logprobs(sched, ref, items);
  double gap = 0.0;
  for (std::size_t j = 0; j + 1 < items.size(); j += 2) {
    gap = std::max(gap, std::abs((cur[j] - base[j]) - (cur[j + 1] - base[j + 1])));
  }
  return gap;
}

double bounded_beta(double beta, double gap, double limit) {
  return beta * gap > limit ? limit / gap : beta;
}

LossWithGradient denoiser_loss(const DenoiserParams& at, std::function<LossValue(const DenoiserParams&)> loss) {
  return [at, loss](std::span<const double> values, std::vector<double>* grad) {
    DenoiserParams p = at;
    p.net.values.assign(values.begin(), values.end());
    LossValue lv = loss(p);
    if (grad) *grad = std::move(lv.grad.values);
    return lv.value;
  };
}

}  // namespace seelab::fixtures

#include "seelab/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "seelab/errors.hpp"
#include "seelab/reduce.hpp"

namespace seelab {

LossVariant parse_loss_variant(const std::string& name) {
  if (name == "dpo-bandit") return LossVariant::DpoBandit;
  if (name == "d3po-step") return LossVariant::D3poStep;
  if (name == "diffusion-dpo-noise") return LossVariant::DiffusionDpoNoise;
  if (name == "spo-step") return LossVariant::SpoStep;
  if (name == "see-step") return LossVariant::SeeStep;
  if (name == "see-noise-A") return LossVariant::SeeNoiseA;
  if (name == "see-noise-B") return LossVariant::SeeNoiseB;
  throw ConfigError("unknown loss variant '" + name + "'");
}

std::string to_string(LossVariant variant) {
  switch (variant) {
    case LossVariant::DpoBandit: return "dpo-bandit";
    case LossVariant::D3poStep: return "d3po-step";
    case LossVariant::DiffusionDpoNoise: return "diffusion-dpo-noise";
    case LossVariant::SpoStep: return "spo-step";
    case LossVariant::SeeStep: return "see-step";
    case LossVariant::SeeNoiseA: return "see-noise-A";
    case LossVariant::SeeNoiseB: return "see-noise-B";
  }
  return "?";
}

Pairing parse_pairing(const std::string& name) {
  if (name == "trajectory") return Pairing::Trajectory;
  if (name == "per-step") return Pairing::PerStep;
  throw ConfigError("unknown pairing '" + name + "'");
}

std::string to_string(Pairing pairing) { return pairing == Pairing::Trajectory ? "trajectory" : "per-step"; }

Pairing default_pairing(LossVariant variant) {
  return variant == LossVariant::SpoStep ? Pairing::PerStep : Pairing::Trajectory;
}

void LossConfig::validate() const {
  if (!(beta > 0.0) || !std::isfinite(beta)) {
    throw ConfigError("loss.beta must be a positive finite number, got " + std::to_string(beta));
  }
  if (!(gamma > -1.0) || !std::isfinite(gamma)) {
    throw ConfigError("loss.gamma must be finite and greater than -1, got " + std::to_string(gamma));
  }
  if (T < 1) throw ConfigError("loss.T must be at least 1, got " + std::to_string(T));
  const bool base = variant == LossVariant::D3poStep || variant == LossVariant::DiffusionDpoNoise ||
                    variant == LossVariant::SpoStep;
  if (base && gamma != 0.0) {
    throw ConfigError("loss.gamma must be 0 for the base variant " + to_string(variant) +
                      "; use the see-* variant for gamma != 0");
  }
  if (variant == LossVariant::D3poStep && pairing != Pairing::Trajectory) {
    throw ConfigError("loss.pairing must be 'trajectory' for d3po-step");
  }
  if (variant == LossVariant::SpoStep && pairing != Pairing::PerStep) {
    throw ConfigError("loss.pairing must be 'per-step' for spo-step");
  }
}

bool LossConfig::is_noise_loss() const {
  return variant == LossVariant::DiffusionDpoNoise || variant == LossVariant::SeeNoiseA ||
         variant == LossVariant::SeeNoiseB;
}

bool LossConfig::is_step_loss() const {
  return variant == LossVariant::D3poStep || variant == LossVariant::SpoStep || variant == LossVariant::SeeStep;
}

LossVariant LossConfig::equivalent_base() const {
  if (gamma != 0.0) return variant;
  switch (variant) {
    case LossVariant::SeeStep: return pairing == Pairing::PerStep ? LossVariant::SpoStep : LossVariant::D3poStep;
    case LossVariant::SeeNoiseA:
    case LossVariant::SeeNoiseB: return LossVariant::DiffusionDpoNoise;
    default: return variant;
  }
}

double LossConfig::effective_beta() const { return is_noise_loss() ? beta * T : beta; }

// Discrete -------------------------------------------------------------------

void DiscretePolicy::validate() const {
  require(!probs.empty(), "discrete policy is empty");
  double sum = 0.0;
  for (double p : probs) {
    require(p >= 0.0 && std::isfinite(p), "discrete policy has a negative or non-finite entry");
    sum += p;
  }
  require(std::abs(sum - 1.0) <= 1e-12, "discrete policy does not sum to 1");
}

DiscretePolicy uniform_policy(std::size_t n) {
  require(n > 0, "uniform_policy: empty action set");
  return DiscretePolicy{std::vector<double>(n, 1.0 / static_cast<double>(n)), {}};
}

namespace {

// Normalizes exp(logw) with -inf entries mapped to exact zeros.
std::vector<double> normalize_logs(std::span<const double> logw) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double l : logw) mx = std::max(mx, l);
  require(std::isfinite(mx), "all-zero weights cannot be normalized");
  std::vector<double> out(logw.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logw.size(); ++i) {
    out[i] = std::isinf(logw[i]) ? 0.0 : std::exp(logw[i] - mx);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
  return out;
}

double safe_log(double p) { return p > 0.0 ? std::log(p) : -std::numeric_limits<double>::infinity(); }

double log_sum_exp(std::span<const double> v) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : v) mx = std::max(mx, x);
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (double x : v) s += std::exp(x - mx);
  return mx + std::log(s);
}

}  // namespace

DiscretePolicy normalized(std::vector<double> weights) {
  double sum = 0.0;
  for (double w : weights) {
    require(w >= 0.0 && std::isfinite(w), "normalized: negative or non-finite weight");
    sum += w;
  }
  require(sum > 0.0, "normalized: all-zero weights");
  for (double& w : weights) w /= sum;
  return DiscretePolicy{std::move(weights), {}};
}

double total_variation(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), "total_variation: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return 0.5 * s;
}

double shannon_entropy(std::span<const double> p) {
  double h = 0.0;
  for (double v : p) {
    if (v > 0.0) h -= v * std::log(v);
  }
  return h;
}

DiscretePolicy flatten_distribution(const DiscretePolicy& p, double gamma) {
  require(gamma > -1.0, "flatten_distribution: gamma must exceed -1");
  require(!p.probs.empty(), "flatten_distribution: empty policy");
  if (gamma == 0.0) {
    // Exponent 1: a normalized input is already the answer.
    double sum = 0.0;
    for (double v : p.probs) sum += v;
    if (std::abs(sum - 1.0) <= 1e-12 && std::all_of(p.probs.begin(), p.probs.end(), [](double v) { return v >= 0.0; })) {
      return p;
    }
  }
  const double e = 1.0 / (1.0 + gamma);
  std::vector<double> logs(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    require(p.probs[i] >= 0.0, "flatten_distribution: negative probability");
    logs[i] = p.probs[i] > 0.0 ? e * std::log(p.probs[i]) : -std::numeric_limits<double>::infinity();
  }
  return DiscretePolicy{normalize_logs(logs), p.condition};
}

double log_partition_function(const DiscretePolicy& p_ref, std::span<const double> rewards, double beta) {
  require(rewards.size() == p_ref.size(), "partition_function: reward and policy sizes differ");
  require(beta > 0.0, "partition_function: beta must be positive");
  std::vector<double> terms(p_ref.size());
  for (std::size_t i = 0; i < terms.size(); ++i) terms[i] = safe_log(p_ref.probs[i]) + rewards[i] / beta;
  return log_sum_exp(terms);
}

double partition_function(const DiscretePolicy& p_ref, std::span<const double> rewards, double beta) {
  return std::exp(log_partition_function(p_ref, rewards, beta));
}

DiscretePolicy closed_form_policy(const DiscretePolicy& p_ref, std::span<const double> rewards, double beta,
                                  double gamma) {
  require(gamma > -1.0, "closed_form_policy: gamma must exceed -1");
  require(beta > 0.0, "closed_form_policy: beta must be positive");
  require(rewards.size() == p_ref.size(), "closed_form_policy: reward and policy sizes differ");
  const double k = 1.0 + gamma;
  std::vector<double> logs(p_ref.size());
  for (std::size_t i = 0; i < logs.size(); ++i) {
    logs[i] = p_ref.probs[i] > 0.0 ? std::log(p_ref.probs[i]) / k + rewards[i] / (beta * k)
                                   : -std::numeric_limits<double>::infinity();
  }
  return DiscretePolicy{normalize_logs(logs), p_ref.condition};
}

double implied_reward(const DiscretePolicy& p_theta, const DiscretePolicy& p_ref, double beta, int action,
                      double Z) {
  require(action >= 0 && static_cast<std::size_t>(action) < p_theta.size() &&
              static_cast<std::size_t>(action) < p_ref.size(),
          "implied_reward: action out of range");
  const double pt = p_theta.probs[static_cast<std::size_t>(action)];
  const double pr = p_ref.probs[static_cast<std::size_t>(action)];
  require(pt > 0.0 && pr > 0.0, "implied_reward: zero probability at the queried action");
  require(Z > 0.0, "implied_reward: partition function must be positive");
  return beta * std::log(pt / pr) + beta * std::log(Z);
}

double regularized_objective(std::span<const double> pi, const DiscretePolicy& p_ref,
                             std::span<const double> rewards, double beta, double gamma) {
  require(pi.size() == p_ref.size() && rewards.size() == pi.size(), "regularized_objective: size mismatch");
  double value = 0.0;
  for (std::size_t i = 0; i < pi.size(); ++i) {
    if (pi[i] <= 0.0) continue;
    require(p_ref.probs[i] > 0.0, "regularized_objective: mass outside the reference support");
    const double lp = std::log(pi[i]);
    value += pi[i] * rewards[i] - beta * pi[i] * (lp - std::log(p_ref.probs[i])) - beta * gamma * pi[i] * lp;
  }
  return value;
}

double dpo_bandit_loss(const DiscretePolicy& p_theta, const DiscretePolicy& p_ref,
                       std::span<const ActionPair> pairs, double beta) {
  require(!pairs.empty(), "dpo_bandit_loss: no pairs");
  auto log_ratio = [&](int a) {
    require(a >= 0 && static_cast<std::size_t>(a) < p_theta.size(), "dpo_bandit_loss: action out of range");
    const double pt = p_theta.probs[static_cast<std::size_t>(a)];
    const double pr = p_ref.probs[static_cast<std::size_t>(a)];
    require(pt > 0.0 && pr > 0.0, "dpo_bandit_loss: zero probability at a referenced action");
    return std::log(pt) - std::log(pr);
  };
  std::vector<double> terms;
  terms.reserve(pairs.size());
  for (const auto& [w, l] : pairs) terms.push_back(softplus(-beta * (log_ratio(w) - log_ratio(l))));
  return order_free_mean(std::move(terms));
}

std::vector<double> softmax(std::span<const double> logits) { return normalize_logs(logits); }

VectorLoss bandit_step_loss(std::span<const double> logits, const DiscretePolicy& p_ref,
                            std::span<const ActionPair> pairs, double beta, double gamma) {
  require(!pairs.empty(), "bandit_step_loss: no pairs");
  require(logits.size() == p_ref.size(), "bandit_step_loss: logits and reference sizes differ");
  const double lse = log_sum_exp(logits);
  const double k = 1.0 + gamma;
  VectorLoss out{0.0, std::vector<double>(logits.size(), 0.0)};
  const double inv_n = 1.0 / static_cast<double>(pairs.size());
  std::vector<double> terms;
  terms.reserve(pairs.size());
  for (const auto& [w, l] : pairs) {
    const auto wi = static_cast<std::size_t>(w);
    const auto li = static_cast<std::size_t>(l);
    require(wi < logits.size() && li < logits.size(), "bandit_step_loss: action out of range");
    const double lrw = std::log(p_ref.probs[wi]);
    const double lrl = std::log(p_ref.probs[li]);
    const double z = beta * k * ((logits[wi] - lse - lrw / k) - (logits[li] - lse - lrl / k));
    terms.push_back(softplus(-z));
    // The softmax normalizer cancels between winner and loser.
    const double g = -sigmoid(-z) * beta * k * inv_n;
    out.grad[wi] += g;
    out.grad[li] -= g;
  }
  out.value = order_free_mean(std::move(terms));
  return out;
}

// Step losses ------------------------------------------------------------------

StepTransition transition_of(const Trajectory& traj, int t) {
  require(t >= 1 && t <= traj.T(), "transition_of: t out of range");
  return StepTransition{traj.condition, t, traj.x(t), traj.x(t - 1)};
}

namespace {

struct TransitionEval {
  Batch eps_hat;
  MlpCache cache;
  std::vector<double> logp;
};

TransitionEval evaluate_transitions(const DiffusionSchedule& sched, const DenoiserParams& params,
                                    std::span<const StepTransition> items, bool keep_cache) {
  const int d = params.spec.data_dim;
  const int n = static_cast<int>(items.size());
  Batch x(d, n);
  std::vector<int> ts(items.size());
  std::vector<std::vector<double>> conds(items.size());
  for (int j = 0; j < n; ++j) {
    const auto& it = items[static_cast<std::size_t>(j)];
    require(it.t >= 1 && it.t <= sched.T, "step loss: t out of range");
    if (static_cast<int>(it.x_t.size()) != d || static_cast<int>(it.x_prev.size()) != d) {
      throw ConfigError("step loss: transition dimension does not match the denoiser");
    }
    x.set_column(j, it.x_t);
    ts[static_cast<std::size_t>(j)] = it.t;
    conds[static_cast<std::size_t>(j)] = it.condition;
  }
  TransitionEval ev;
  ev.eps_hat = denoiser_forward_batch(params, x, ts, conditions_batch(conds, params.spec.cond_dim),
                                      keep_cache ? &ev.cache : nullptr);
  ev.logp.resize(items.size());
  std::vector<double> mean(static_cast<std::size_t>(d));
  for (int j = 0; j < n; ++j) {
    const auto& it = items[static_cast<std::size_t>(j)];
    const StepKernel k = step_kernel(sched, it.t);
    for (int i = 0; i < d; ++i) mean[i] = k.mean_scale * (it.x_t[i] - k.eps_coef * ev.eps_hat.at(i, j));
    ev.logp[static_cast<std::size_t>(j)] = gaussian_logprob(it.x_prev, mean, k.variance);
    if (!std::isfinite(ev.logp[static_cast<std::size_t>(j)])) {
      throw NumericalAbort("step loss: non-finite log-probability at t=" + std::to_string(it.t));
    }
  }
  return ev;
}

// Writes d(logp_j)/d(eps_hat_j) * scale into column j of upstream.
void logprob_upstream(const DiffusionSchedule& sched, const StepTransition& it, const Batch& eps_hat, int j,
                      double scale, Batch& upstream) {
  const StepKernel k = step_kernel(sched, it.t);
  const int d = eps_hat.rows;
  for (int i = 0; i < d; ++i) {
    const double mean = k.mean_scale * (it.x_t[i] - k.eps_coef * eps_hat.at(i, j));
    upstream.at(i, j) = scale * (-k.mean_scale * k.eps_coef) * (it.x_prev[i] - mean) / k.variance;
  }
}

}  // namespace

std::vector<double> transition_logprobs(const DiffusionSchedule& sched, const DenoiserParams& params,
                                        std::span<const StepTransition> items) {
  if (items.empty()) return {};
  return evaluate_transitions(sched, params, items, false).logp;
}

double step_loss_from_logprobs(double lw, double lrw, double ll, double lrl, double beta, double gamma) {
  const double k = 1.0 + gamma;
  const double z = beta * k * ((lw - lrw / k) - (ll - lrl / k));
  return softplus(-z);
}

LossValue step_pair_loss(const DiffusionSchedule& sched, const DenoiserParams& params,
                         const DenoiserParams& ref_params, std::span<const StepPair> pairs, double beta,
                         double gamma) {
  require(!pairs.empty(), "step loss: empty batch");
  require(gamma > -1.0, "step loss: gamma must exceed -1");
  const int n = static_cast<int>(pairs.size());
  std::vector<StepTransition> items;
  items.reserve(2 * pairs.size());
  for (const auto& p : pairs) items.push_back(p.winner);
  for (const auto& p : pairs) items.push_back(p.loser);
  const TransitionEval cur = evaluate_transitions(sched, params, items, true);
  const TransitionEval ref = evaluate_transitions(sched, ref_params, items, false);
  const double k = 1.0 + gamma;
  Batch upstream(params.spec.data_dim, 2 * n);
  std::vector<double> terms(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j) {
    const double lw = cur.logp[j], ll = cur.logp[n + j];
    const double lrw = ref.logp[j], lrl = ref.logp[n + j];
    const double z = beta * k * ((lw - lrw / k) - (ll - lrl / k));
    terms[static_cast<std::size_t>(j)] = softplus(-z);
    const double dl = -sigmoid(-z) * beta * k / n;  // dL / d lw
    logprob_upstream(sched, items[j], cur.eps_hat, j, dl, upstream);
    logprob_upstream(sched, items[n + j], cur.eps_hat, n + j, -dl, upstream);
  }
  LossValue out{order_free_mean(std::move(terms)), ParamBuffer::zeros(params.net.shape)};
  mlp_backward(params.net, cur.cache, upstream, out.grad);
  return out;
}

LossValue d3po_step_loss(const DiffusionSchedule& sched, const TrajectoryPair& pair,
                         const DenoiserParams& params, const DenoiserParams& ref_params, int k, double beta,
                         double gamma) {
  require(k >= 1 && k <= sched.T, "d3po_step_loss: k out of range");
  const StepPair sp{transition_of(pair.winner, k), transition_of(pair.loser, k)};
  return step_pair_loss(sched, params, ref_params, std::span<const StepPair>(&sp, 1), beta, gamma);
}

LossValue stepwise_bound_loss(const DiffusionSchedule& sched, const TrajectoryPair& pair,
                              const DenoiserParams& params, const DenoiserParams& ref_params, int t,
                              double beta) {
  return d3po_step_loss(sched, pair, params, ref_params, t, beta * sched.T, 0.0);
}

double full_chain_dpo_loss(const DiffusionSchedule& sched, const TrajectoryPair& pair,
                           const DenoiserParams& params, const DenoiserParams& ref_params, double beta) {
  require(pair.winner.T() == sched.T && pair.loser.T() == sched.T, "full_chain_dpo_loss: chain length mismatch");
  std::vector<StepTransition> items;
  for (int t = 1; t <= sched.T; ++t) items.push_back(transition_of(pair.winner, t));
  for (int t = 1; t <= sched.T; ++t) items.push_back(transition_of(pair.loser, t));
  const auto cur = transition_logprobs(sched, params, items);
  const auto ref = transition_logprobs(sched, ref_params, items);
  double sum = 0.0;
  const auto T = static_cast<std::size_t>(sched.T);
  for (std::size_t i = 0; i < T; ++i) sum += (cur[i] - ref[i]) - (cur[T + i] - ref[T + i]);
  return softplus(-beta * sum);
}

// Noise losses ---------------------------------------------------------------------

std::vector<NoiseDraw> draw_noise_pairs(const DiffusionSchedule& sched, std::size_t count, int dim, Rng& rng) {
  std::vector<NoiseDraw> out(count);
  for (auto& d : out) {
    d.t = rng.uniform_int(1, sched.T);
    d.eps_w = rng.gaussian(dim);
    d.eps_l = rng.gaussian(dim);
  }
  return out;
}

LossValue noise_loss_scaled(const DiffusionSchedule& sched, std::span<const PreferencePair> batch,
                            const DenoiserParams& params, const DenoiserParams& ref_params,
                            std::span<const NoiseDraw> draws, double beta, double policy_scale,
                            double reference_scale) {
  require(!batch.empty(), "noise loss: empty batch");
  require(batch.size() == draws.size(), "noise loss: one draw per pair required");
  const int d = params.spec.data_dim;
  const int n = static_cast<int>(batch.size());
  Batch xt(d, 2 * n);
  std::vector<int> ts(2 * batch.size());
  std::vector<std::vector<double>> conds(2 * batch.size());
  for (int j = 0; j < n; ++j) {
    const auto& p = batch[j];
    const auto& dr = draws[j];
    require(dr.t >= 1 && dr.t <= sched.T, "noise loss: t out of range");
    xt.set_column(j, forward_noise(sched, p.x_w, dr.t, dr.eps_w));
    xt.set_column(n + j, forward_noise(sched, p.x_l, dr.t, dr.eps_l));
    ts[j] = ts[n + j] = dr.t;
    conds[j] = conds[n + j] = p.c;
  }
  const Batch c = conditions_batch(conds, params.spec.cond_dim);
  MlpCache cache;
  const Batch cur = denoiser_forward_batch(params, xt, ts, c, &cache);
  const Batch ref = denoiser_forward_batch(ref_params, xt, ts, c);
  auto sq_err = [&](const Batch& pred, int col, const std::vector<double>& eps) {
    double s = 0.0;
    for (int i = 0; i < d; ++i) {
      const double r = eps[i] - pred.at(i, col);
      s += r * r;
    }
    return s;
  };
  const double bt = beta * sched.T;
  Batch upstream(d, 2 * n);
  std::vector<double> terms(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j) {
    const auto& dr = draws[j];
    const double d_theta = sq_err(cur, j, dr.eps_w) - sq_err(cur, n + j, dr.eps_l);
    const double d_ref = sq_err(ref, j, dr.eps_w) - sq_err(ref, n + j, dr.eps_l);
    const double a = bt * (policy_scale * d_theta - reference_scale * d_ref);
    if (!std::isfinite(a)) throw NumericalAbort("noise loss: non-finite argument at t=" + std::to_string(dr.t));
    terms[static_cast<std::size_t>(j)] = softplus(a);
    const double g = sigmoid(a) * bt * policy_scale / n;
    for (int i = 0; i < d; ++i) {
      upstream.at(i, j) = -2.0 * g * (dr.eps_w[i] - cur.at(i, j));
      upstream.at(i, n + j) = 2.0 * g * (dr.eps_l[i] - cur.at(i, n + j));
    }
  }
  LossValue out{order_free_mean(std::move(terms)), ParamBuffer::zeros(params.net.shape)};
  mlp_backward(params.net, cache, upstream, out.grad);
  return out;
}

LossValue diffusion_dpo_noise_loss(const DiffusionSchedule& sched, std::span<const PreferencePair> batch,
                                   const DenoiserParams& params, const DenoiserParams& ref_params,
                                   std::span<const NoiseDraw> draws, double beta) {
  return noise_loss_scaled(sched, batch, params, ref_params, draws, beta, 1.0, 1.0);
}

LossValue see_noise_loss_A(const DiffusionSchedule& sched, std::span<const PreferencePair> batch,
                           const DenoiserParams& params, const DenoiserParams& ref_params,
                           std::span<const NoiseDraw> draws, double beta, double gamma) {
  require(gamma > -1.0, "see_noise_loss_A: gamma must exceed -1");
  return noise_loss_scaled(sched, batch, params, ref_params, draws, beta, 1.0 + gamma, 1.0);
}

LossValue see_noise_loss_B(const DiffusionSchedule& sched, std::span<const PreferencePair> batch,
                           const DenoiserParams& params, const DenoiserParams& ref_params,
                           std::span<const NoiseDraw> draws, double beta, double gamma) {
  require(gamma > -1.0, "see_noise_loss_B: gamma must exceed -1");
  return noise_loss_scaled(sched, batch, params, ref_params, draws, beta, 1.0, 1.0 / (1.0 + gamma));
}

LossValue diffusion_dpo_noise_loss(const DiffusionSchedule& sched, std::span<const PreferencePair> batch,
                                   const DenoiserParams& params, const DenoiserParams& ref_params, double beta,
                                   Rng& rng) {
  const auto draws = draw_noise_pairs(sched, batch.size(), params.spec.data_dim, rng);
  return diffusion_dpo_noise_loss(sched, batch, params, ref_params, draws, beta);
}

LossValue see_noise_loss_A(const DiffusionSchedule& sched, std::span<const PreferencePair> batch,
                           const DenoiserParams& params, const DenoiserParams& ref_params, double beta,
                           double gamma, Rng& rng) {
  const auto draws = draw_noise_pairs(sched, batch.size(), params.spec.data_dim, rng);
  return see_noise_loss_A(sched, batch, params, ref_params, draws, beta, gamma);
}

LossValue see_noise_loss_B(const DiffusionSchedule& sched, std::span<const PreferencePair> batch,
                           const DenoiserParams& params, const DenoiserParams& ref_params, double beta,
                           double gamma, Rng& rng) {
  const auto draws = draw_noise_pairs(sched, batch.size(), params.spec.data_dim, rng);
  return see_noise_loss_B(sched, batch, params, ref_params, draws, beta, gamma);
}

// KL -------------------------------------------------------------------------------

double gaussian_kl_equal_variance(std::span<const double> mean_a, std::span<const double> mean_b,
                                  double variance) {
  require(mean_a.size() == mean_b.size(), "gaussian_kl: dimension mismatch");
  require(variance > 0.0, "gaussian_kl: variance must be positive");
  double sq = 0.0;
  for (std::size_t i = 0; i < mean_a.size(); ++i) {
    const double d = mean_a[i] - mean_b[i];
    sq += d * d;
  }
  return sq / (2.0 * variance);
}

KlEstimate kl_to_reference(const DenoiserParams& params, const DenoiserParams& ref_params,
                           const DiffusionSchedule& sched, std::span<const std::vector<double>> conditions,
                           Rng& rng, int n) {
  require(n >= 1, "kl_to_reference: n must be at least 1");
  require(!conditions.empty(), "kl_to_reference: no conditions");
  std::vector<std::vector<double>> conds(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) conds[i] = conditions[static_cast<std::size_t>(i) % conditions.size()];
  const auto chains = sample_trajectories(sched, params, conds, rng);
  const int d = params.spec.data_dim;
  std::vector<double> per_chain(static_cast<std::size_t>(n), 0.0);
  const Batch c = conditions_batch(conds, ref_params.spec.cond_dim);
  std::vector<int> ts(static_cast<std::size_t>(n));
  for (int t = 1; t <= sched.T; ++t) {
    Batch x(d, n);
    for (int j = 0; j < n; ++j) x.set_column(j, chains[j].x(t));
    std::fill(ts.begin(), ts.end(), t);
    const Batch eps_ref = denoiser_forward_batch(ref_params, x, ts, c);
    const StepKernel k = step_kernel(sched, t);
    std::vector<double> mu_ref(static_cast<std::size_t>(d));
    for (int j = 0; j < n; ++j) {
      for (int i = 0; i < d; ++i) mu_ref[i] = k.mean_scale * (x.at(i, j) - k.eps_coef * eps_ref.at(i, j));
      per_chain[j] += gaussian_kl_equal_variance(chains[j].step(t).mean, mu_ref, k.variance);
    }
  }
  KlEstimate est;
  est.samples = n;
  est.mean = std::accumulate(per_chain.begin(), per_chain.end(), 0.0) / n;
  if (n > 1) {
    double var = 0.0;
    for (double v : per_chain) var += (v - est.mean) * (v - est.mean);
    est.standard_error = std::sqrt(var / (n - 1) / n);
  }
  return est;
}

}  // namespace seelab

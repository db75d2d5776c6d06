#include "seelab/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "seelab/errors.hpp"

namespace seelab {
namespace {

// The chain starts slightly above tau = 0 so that sigma_0 > 0 and the last
// reverse step keeps a strictly positive variance.
constexpr double kTauMin = 1e-3;
constexpr double kLinearBetaMin = 0.1;
constexpr double kLinearBetaMax = 20.0;
constexpr double kCosineOffset = 0.008;
constexpr double kMinAlphaBar = 1e-6;
// Per-step beta_t capped at 0.999, i.e. -log(1 - beta_t) <= -log(1e-3).
constexpr double kMaxStepNegLog = 6.907755278982137;

// Returns -log(alpha_bar) at continuous time tau in [0, 1].
double neg_log_alpha_bar(ScheduleKind kind, double tau) {
  switch (kind) {
    case ScheduleKind::Linear:
      return kLinearBetaMin * tau + 0.5 * (kLinearBetaMax - kLinearBetaMin) * tau * tau;
    case ScheduleKind::Cosine: {
      const double s = kCosineOffset;
      const double f = std::cos((tau + s) / (1.0 + s) * std::numbers::pi / 2.0);
      const double f0 = std::cos(s / (1.0 + s) * std::numbers::pi / 2.0);
      const double ab = std::max((f * f) / (f0 * f0), kMinAlphaBar);
      return -std::log(ab);
    }
  }
  return 0.0;
}

void check_finite_mean(std::span<const double> mean, int t) {
  for (double v : mean) {
    if (!std::isfinite(v)) {
      throw NumericalAbort("reverse step at t=" + std::to_string(t) + " produced a non-finite mean");
    }
  }
}

}  // namespace

Batch conditions_batch(std::span<const std::vector<double>> conditions, int cond_dim) {
  Batch c(cond_dim, static_cast<int>(conditions.size()));
  for (std::size_t j = 0; j < conditions.size(); ++j) {
    if (static_cast<int>(conditions[j].size()) != cond_dim) {
      throw ConfigError("condition has dimension " + std::to_string(conditions[j].size()) +
                        ", expected " + std::to_string(cond_dim));
    }
    c.set_column(static_cast<int>(j), conditions[j]);
  }
  return c;
}

ScheduleKind parse_schedule_kind(const std::string& name) {
  if (name == "linear") return ScheduleKind::Linear;
  if (name == "cosine") return ScheduleKind::Cosine;
  throw ConfigError("unknown schedule kind '" + name + "' (expected linear or cosine)");
}

std::string to_string(ScheduleKind kind) {
  return kind == ScheduleKind::Linear ? "linear" : "cosine";
}

DiffusionSchedule make_schedule(int T, ScheduleKind kind) {
  if (T < 1) throw ConfigError("schedule needs T >= 1");
  DiffusionSchedule s;
  s.T = T;
  s.kind = kind;
  s.alpha.resize(static_cast<std::size_t>(T) + 1);
  s.sigma.resize(s.alpha.size());
  s.snr.resize(s.alpha.size());
  double prev = 0.0;
  for (int t = 0; t <= T; ++t) {
    const double tau = kTauMin + (1.0 - kTauMin) * static_cast<double>(t) / T;
    double g = neg_log_alpha_bar(kind, tau);
    if (t > 0) g = std::min(g, prev + kMaxStepNegLog);
    prev = g;
    s.alpha[t] = std::exp(-0.5 * g);
    s.sigma[t] = std::sqrt(-std::expm1(-g));
    s.snr[t] = (s.alpha[t] * s.alpha[t]) / (s.sigma[t] * s.sigma[t]);
  }
  return s;
}

StepKernel step_kernel(const DiffusionSchedule& sched, int t) {
  require(t >= 1 && t <= sched.T, "step_kernel: t out of range");
  const double a_ts = sched.alpha[t] / sched.alpha[t - 1];
  const double s_t2 = sched.sigma[t] * sched.sigma[t];
  const double s_prev2 = sched.sigma[t - 1] * sched.sigma[t - 1];
  const double s_ts2 = s_t2 - a_ts * a_ts * s_prev2;
  StepKernel k;
  k.mean_scale = 1.0 / a_ts;
  k.eps_coef = s_ts2 / sched.sigma[t];
  k.variance = s_ts2 * s_prev2 / s_t2;
  return k;
}

std::vector<double> forward_noise(const DiffusionSchedule& sched, std::span<const double> x0, int t,
                                  std::span<const double> eps) {
  require(t >= 0 && t <= sched.T, "forward_noise: t out of range");
  require(x0.size() == eps.size(), "forward_noise: eps dimension differs from x0");
  std::vector<double> out(x0.size());
  for (std::size_t i = 0; i < x0.size(); ++i) {
    out[i] = sched.alpha[t] * x0[i] + sched.sigma[t] * eps[i];
  }
  return out;
}

std::vector<double> posterior_mean(const DiffusionSchedule& sched, std::span<const double> x_t, int t,
                                   std::span<const double> eps_hat) {
  const StepKernel k = step_kernel(sched, t);
  std::vector<double> mean(x_t.size());
  for (std::size_t i = 0; i < x_t.size(); ++i) {
    mean[i] = k.mean_scale * (x_t[i] - k.eps_coef * eps_hat[i]);
  }
  return mean;
}

std::pair<std::vector<double>, StepRecord> reverse_step_with_noise(const DiffusionSchedule& sched,
                                                                   const DenoiserParams& params,
                                                                   std::span<const double> x_t, int t,
                                                                   std::span<const double> c,
                                                                   std::span<const double> noise) {
  require(t >= 1 && t <= sched.T, "reverse_step: t out of range");
  require(noise.size() == x_t.size(), "reverse_step: noise dimension mismatch");
  const auto eps_hat = denoiser_forward(params, x_t, t, c);
  StepRecord rec;
  rec.mean = posterior_mean(sched, x_t, t, eps_hat);
  check_finite_mean(rec.mean, t);
  rec.variance = step_kernel(sched, t).variance;
  rec.noise.assign(noise.begin(), noise.end());
  std::vector<double> next(x_t.size());
  const double sd = std::sqrt(rec.variance);
  for (std::size_t i = 0; i < next.size(); ++i) next[i] = rec.mean[i] + sd * noise[i];
  return {std::move(next), std::move(rec)};
}

std::pair<std::vector<double>, StepRecord> reverse_step(const DiffusionSchedule& sched,
                                                        const DenoiserParams& params,
                                                        std::span<const double> x_t, int t,
                                                        std::span<const double> c, Rng& rng) {
  const auto noise = rng.gaussian(static_cast<int>(x_t.size()));
  return reverse_step_with_noise(sched, params, x_t, t, c, noise);
}

namespace {

// Shared batched sampler. Item j draws x_T and every step noise from its own
// stream, in the same order as the single-chain sampler.
std::vector<Trajectory> run_chains(const DiffusionSchedule& sched, const DenoiserParams& params,
                                   std::span<const std::vector<double>> conditions,
                                   std::vector<Rng>& streams, bool record) {
  const int d = params.spec.data_dim;
  const int n = static_cast<int>(conditions.size());
  if (params.spec.timesteps != sched.T) {
    throw ConfigError("denoiser was built for T=" + std::to_string(params.spec.timesteps) +
                      " but the schedule has T=" + std::to_string(sched.T));
  }
  const Batch c = conditions_batch(conditions, params.spec.cond_dim);
  std::vector<Trajectory> out(static_cast<std::size_t>(n));
  Batch x(d, n);
  for (int j = 0; j < n; ++j) {
    x.set_column(j, streams[j].gaussian(d));
    out[j].condition = conditions[j];
    if (record) {
      out[j].states.assign(static_cast<std::size_t>(sched.T) + 1, {});
      out[j].steps.assign(static_cast<std::size_t>(sched.T), {});
      out[j].states[sched.T] = x.column(j);
    }
  }
  std::vector<int> ts(static_cast<std::size_t>(n));
  for (int t = sched.T; t >= 1; --t) {
    std::fill(ts.begin(), ts.end(), t);
    const Batch eps_hat = denoiser_forward_batch(params, x, ts, c);
    const StepKernel k = step_kernel(sched, t);
    const double sd = std::sqrt(k.variance);
    for (int j = 0; j < n; ++j) {
      const auto noise = streams[j].gaussian(d);
      StepRecord rec;
      rec.mean.resize(static_cast<std::size_t>(d));
      for (int i = 0; i < d; ++i) {
        rec.mean[i] = k.mean_scale * (x.at(i, j) - k.eps_coef * eps_hat.at(i, j));
      }
      check_finite_mean(rec.mean, t);
      for (int i = 0; i < d; ++i) x.at(i, j) = rec.mean[i] + sd * noise[i];
      if (record) {
        rec.variance = k.variance;
        rec.noise = noise;
        out[j].steps[t - 1] = std::move(rec);
        out[j].states[t - 1] = x.column(j);
      }
    }
  }
  if (!record) {
    for (int j = 0; j < n; ++j) out[j].states = {x.column(j)};
  }
  return out;
}

}  // namespace

Trajectory sample_trajectory(const DiffusionSchedule& sched, const DenoiserParams& params,
                             std::span<const double> c, Rng& rng) {
  std::vector<std::vector<double>> conds{std::vector<double>(c.begin(), c.end())};
  std::vector<Rng> streams{rng};
  auto out = run_chains(sched, params, conds, streams, true);
  rng = streams[0];
  return std::move(out[0]);
}

std::vector<Trajectory> sample_trajectories(const DiffusionSchedule& sched,
                                            const DenoiserParams& params,
                                            std::span<const std::vector<double>> conditions,
                                            Rng& rng) {
  std::vector<Rng> streams;
  streams.reserve(conditions.size());
  for (std::size_t j = 0; j < conditions.size(); ++j) streams.push_back(rng.fork());
  return run_chains(sched, params, conditions, streams, true);
}

std::vector<std::vector<double>> sample_final(const DiffusionSchedule& sched,
                                              const DenoiserParams& params,
                                              std::span<const std::vector<double>> conditions,
                                              Rng& rng) {
  std::vector<Rng> streams;
  streams.reserve(conditions.size());
  for (std::size_t j = 0; j < conditions.size(); ++j) streams.push_back(rng.fork());
  auto chains = run_chains(sched, params, conditions, streams, false);
  std::vector<std::vector<double>> out;
  out.reserve(chains.size());
  for (auto& ch : chains) out.push_back(std::move(ch.states[0]));
  return out;
}

double gaussian_logprob(std::span<const double> x, std::span<const double> mean, double var) {
  require(var > 0.0, "gaussian_logprob: variance must be positive");
  require(x.size() == mean.size(), "gaussian_logprob: dimension mismatch");
  double sq = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - mean[i];
    sq += d * d;
  }
  const double dim = static_cast<double>(x.size());
  return -sq / (2.0 * var) - 0.5 * dim * std::log(2.0 * std::numbers::pi * var);
}

double step_logprob(const DiffusionSchedule& sched, const DenoiserParams& params,
                    const Trajectory& traj, int t) {
  const auto eps_hat = denoiser_forward(params, traj.x(t), t, traj.condition);
  const auto mean = posterior_mean(sched, traj.x(t), t, eps_hat);
  return gaussian_logprob(traj.x(t - 1), mean, step_kernel(sched, t).variance);
}

std::vector<ElboDraw> draw_elbo_noise(const DiffusionSchedule& sched, int batch, int dim, Rng& rng) {
  std::vector<ElboDraw> draws(static_cast<std::size_t>(batch));
  for (auto& d : draws) {
    d.t = rng.uniform_int(1, sched.T);
    d.eps = rng.gaussian(dim);
  }
  return draws;
}

LossValue dm_pretrain_loss(const DiffusionSchedule& sched, const DenoiserParams& params,
                           std::span<const std::vector<double>> x0,
                           std::span<const std::vector<double>> conditions,
                           std::span<const ElboDraw> draws) {
  require(!x0.empty(), "dm_pretrain_loss: empty batch");
  require(x0.size() == conditions.size() && x0.size() == draws.size(),
          "dm_pretrain_loss: batch, conditions and draws differ in length");
  const int d = params.spec.data_dim;
  const int n = static_cast<int>(x0.size());
  Batch xt(d, n);
  std::vector<int> ts(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j) {
    ts[j] = draws[j].t;
    xt.set_column(j, forward_noise(sched, x0[j], draws[j].t, draws[j].eps));
  }
  MlpCache cache;
  const Batch pred =
      denoiser_forward_batch(params, xt, ts, conditions_batch(conditions, params.spec.cond_dim), &cache);
  Batch upstream(d, n);
  double total = 0.0;
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < d; ++i) {
      const double r = draws[j].eps[i] - pred.at(i, j);
      total += r * r;
      upstream.at(i, j) = -2.0 * r / n;
    }
  }
  LossValue out{total / n, ParamBuffer::zeros(params.net.shape)};
  mlp_backward(params.net, cache, upstream, out.grad);
  return out;
}

LossValue dm_pretrain_loss(const DiffusionSchedule& sched, const DenoiserParams& params,
                           std::span<const std::vector<double>> x0,
                           std::span<const std::vector<double>> conditions, Rng& rng) {
  const auto draws = draw_elbo_noise(sched, static_cast<int>(x0.size()), params.spec.data_dim, rng);
  return dm_pretrain_loss(sched, params, x0, conditions, draws);
}

// Toy datasets ------------------------------------------------------------

DatasetId parse_dataset_id(const std::string& name) {
  if (name == "mixture2d") return DatasetId::Mixture2d;
  if (name == "blobs8x8") return DatasetId::Blobs8x8;
  throw ConfigError("unknown dataset id '" + name + "' (expected mixture2d or blobs8x8)");
}

std::string to_string(DatasetId id) { return id == DatasetId::Mixture2d ? "mixture2d" : "blobs8x8"; }

ToyDataset::ToyDataset(DatasetId id) : id_(id) {
  if (id == DatasetId::Mixture2d) {
    centers_ = {{2.0, 0.0}, {0.0, 2.0}, {-2.0, 0.0}, {0.0, -2.0}};
    prompts_ = {{}};
  } else {
    // Condition selects the blob arrangement: horizontal pair or vertical pair.
    prompts_ = {{1.0, 0.0}, {0.0, 1.0}};
  }
}

int ToyDataset::data_dim() const { return id_ == DatasetId::Mixture2d ? 2 : 64; }
int ToyDataset::cond_dim() const { return id_ == DatasetId::Mixture2d ? 0 : 2; }

std::vector<double> ToyDataset::random_prompt(Rng& rng) const {
  if (prompts_.size() == 1) return prompts_[0];
  return prompts_[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(prompts_.size()) - 1))];
}

std::vector<double> ToyDataset::sample(Rng& rng, std::span<const double> c) const {
  if (id_ == DatasetId::Mixture2d) {
    const auto& m = centers_[static_cast<std::size_t>(rng.uniform_int(0, 3))];
    return {m[0] + component_stddev() * rng.normal(), m[1] + component_stddev() * rng.normal()};
  }
  require(c.size() == 2, "blobs8x8 sample needs a 2-dim condition");
  const bool horizontal = c[0] >= c[1];
  const double width = 0.8 + 0.8 * rng.uniform();
  const double amp1 = 0.6 + 0.4 * rng.uniform();
  const double amp2 = 0.6 + 0.4 * rng.uniform();
  const double lane = 2.0 + 3.0 * rng.uniform();
  const double a = 1.0 + 1.5 * rng.uniform();
  const double b = 4.5 + 1.5 * rng.uniform();
  double cx1 = a, cy1 = lane, cx2 = b, cy2 = lane;
  if (!horizontal) {
    std::swap(cx1, cy1);
    std::swap(cx2, cy2);
  }
  std::vector<double> x(64);
  for (int r = 0; r < 8; ++r) {
    for (int q = 0; q < 8; ++q) {
      const double d1 = (q - cx1) * (q - cx1) + (r - cy1) * (r - cy1);
      const double d2 = (q - cx2) * (q - cx2) + (r - cy2) * (r - cy2);
      double p = amp1 * std::exp(-d1 / (2 * width * width)) + amp2 * std::exp(-d2 / (2 * width * width));
      p = std::clamp(p, 0.0, 1.0);
      x[static_cast<std::size_t>(r * 8 + q)] = 2.0 * p - 1.0;
    }
  }
  return x;
}

std::vector<double> to_pixels(std::span<const double> x) {
  std::vector<double> p(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) p[i] = std::clamp(0.5 * (x[i] + 1.0), 0.0, 1.0);
  return p;
}

DenoiserParams pretrain_denoiser(const ToyDataset& dataset, const DiffusionSchedule& sched,
                                 const DenoiserSpec& spec, const PretrainSettings& settings,
                                 Rng& rng, PretrainReport* report) {
  if (settings.steps < 0 || settings.batch_size < 1) throw ConfigError("pretrain: invalid step or batch count");
  if (spec.data_dim != dataset.data_dim() || spec.cond_dim != dataset.cond_dim()) {
    throw ConfigError("pretrain: denoiser dimensions do not match dataset " + to_string(dataset.id()));
  }
  Rng init_rng = rng.fork();
  DenoiserParams params = init_denoiser(spec, init_rng);
  OptimizerState opt = OptimizerState::for_size(params.net.values.size(), settings.adam);
  std::vector<std::vector<double>> x0(static_cast<std::size_t>(settings.batch_size));
  std::vector<std::vector<double>> conds(x0.size());
  double block = 0.0;
  int block_n = 0;
  for (int step = 0; step < settings.steps; ++step) {
    for (std::size_t j = 0; j < x0.size(); ++j) {
      conds[j] = dataset.random_prompt(rng);
      x0[j] = dataset.sample(rng, conds[j]);
    }
    LossValue lv = dm_pretrain_loss(sched, params, x0, conds, rng);
    if (!std::isfinite(lv.value)) {
      throw NumericalAbort("pretrain: non-finite loss at step " + std::to_string(step));
    }
    if (report && step == 0) report->initial_loss = lv.value;
    block += lv.value;
    ++block_n;
    if (block_n == 100 || step + 1 == settings.steps) {
      if (report) report->loss_curve.push_back(block / block_n);
      block = 0.0;
      block_n = 0;
    }
    // Linear decay to 10% of the base rate over the run.
    opt.settings.learning_rate =
        settings.adam.learning_rate * (1.0 - 0.9 * static_cast<double>(step) / std::max(settings.steps, 1));
    optimizer_step(opt, params.net.values, lv.grad.values);
  }
  if (report) report->final_loss = report->loss_curve.empty() ? report->initial_loss : report->loss_curve.back();
  return params;
}

}  // namespace seelab

#include "seelab/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <numeric>
#include <sstream>

#include <unistd.h>

#include <json.hpp>

#include "seelab/errors.hpp"
#include "seelab/fixtures.hpp"
#include "seelab/metrics.hpp"
#include "seelab/reduce.hpp"
#include "seelab/serialize.hpp"

namespace seelab {

namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool passed = true;
  std::string detail;

  void fail(const std::string& why) {
    if (passed) detail = why;
    passed = false;
  }
  void check(bool ok, const std::string& why) {
    if (!ok) fail(why);
  }
};

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(3);
  os << v;
  return os.str();
}

// Small shapes keep the oracle suite quick; the properties do not depend on size.
DenoiserSpec small_spec(int T, int cond_dim = 0) { return DenoiserSpec{2, cond_dim, T, 8, 2}; }

template <class T>
std::vector<T> permuted(const std::vector<T>& v, Rng& rng) {
  std::vector<T> out = v;
  for (std::size_t i = out.size(); i > 1; --i) {
    std::swap(out[i - 1], out[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i) - 1))]);
  }
  return out;
}

std::vector<StepPair> step_pairs(const DiffusionSchedule& sched, const DenoiserParams& params, int count, Rng& rng) {
  std::vector<StepPair> out;
  for (int i = 0; i < count; ++i) {
    const auto tp = fixtures::random_trajectory_pair(sched, params, rng);
    const int t = rng.uniform_int(1, sched.T);
    out.push_back(StepPair{transition_of(tp.winner, t), transition_of(tp.loser, t)});
  }
  return out;
}

std::vector<ActionPair> action_pairs(int n_actions, int count, Rng& rng) {
  std::vector<ActionPair> out;
  while (static_cast<int>(out.size()) < count) {
    const int a = rng.uniform_int(0, n_actions - 1);
    const int b = rng.uniform_int(0, n_actions - 1);
    if (a != b) out.emplace_back(a, b);
  }
  return out;
}

using FormA = std::function<LossValue(const DiffusionSchedule&, std::span<const PreferencePair>,
                                      const DenoiserParams&, const DenoiserParams&, std::span<const NoiseDraw>,
                                      double, double)>;

FormA form_a(Mutation m) {
  if (m == Mutation::FormAGammaScaling) {
    return [](const DiffusionSchedule& s, std::span<const PreferencePair> b, const DenoiserParams& p,
              const DenoiserParams& r, std::span<const NoiseDraw> d, double beta, double gamma) {
      return noise_loss_scaled(s, b, p, r, d, beta, 1.0 + gamma, 1.0 + gamma);
    };
  }
  return [](const DiffusionSchedule& s, std::span<const PreferencePair> b, const DenoiserParams& p,
            const DenoiserParams& r, std::span<const NoiseDraw> d, double beta, double gamma) {
    return see_noise_loss_A(s, b, p, r, d, beta, gamma);
  };
}

// --- numerics ---------------------------------------------------------------

Outcome numerics_determinism(Rng& rng) {
  Outcome o;
  const std::uint64_t seed = rng.next_u64();
  auto run = [&] {
    Rng r(seed, 3);
    const auto spec = small_spec(6);
    const auto params = fixtures::random_denoiser(spec, r, 0.05);
    const auto sched = make_schedule(6, ScheduleKind::Cosine);
    const auto traj = sample_trajectory(sched, params, {}, r);
    const std::vector<std::vector<double>> x0{fixtures::random_vector(2, r)}, cs{{}};
    const auto loss = dm_pretrain_loss(sched, params, x0, cs, r);
    return std::make_tuple(params, traj, loss.value, loss.grad, r.counter());
  };
  o.check(run() == run(), "two runs under one seed differ");
  return o;
}

Outcome numerics_gradient_fidelity(Rng& rng) {
  Outcome o;
  constexpr double kTol = 1e-4;
  constexpr int kConfigs = 100;
  int worst_cfg = -1;
  double worst = 0.0;
  const char* names[] = {"dm_pretrain", "step_pair", "d3po_step", "stepwise_bound", "noise_base",
                         "noise_A",     "noise_B",   "bt_loss",   "bandit_step"};
  for (int cfg = 0; cfg < kConfigs; ++cfg) {
    const int kind = cfg % 9;
    const int T = rng.uniform_int(2, 6);
    const int cond = rng.uniform_int(0, 2);
    const auto sched = make_schedule(T, cfg % 2 ? ScheduleKind::Cosine : ScheduleKind::Linear);
    const auto spec = small_spec(T, cond);
    const auto ref = fixtures::random_denoiser(spec, rng, 0.05);
    const auto params = fixtures::perturbed(ref, 0.05, rng);
    const double beta = 0.1 + 1.5 * rng.uniform();
    const double gamma = -0.5 + 5.5 * rng.uniform();
    GradCheckReport rep;
    if (kind == 0) {
      const auto pairs = fixtures::random_pairs(4, 2, cond, rng);
      std::vector<std::vector<double>> x0, cs;
      for (const auto& p : pairs) {
        x0.push_back(p.x_w);
        cs.push_back(p.c);
      }
      const auto draws = draw_elbo_noise(sched, 4, 2, rng);
      rep = grad_check(fixtures::denoiser_loss(params,
                                               [&](const DenoiserParams& p) { return dm_pretrain_loss(sched, p, x0, cs, draws); }),
                       params.net.values, kTol);
    } else if (kind == 1) {
      const auto pairs = step_pairs(sched, params, 3, rng);
      const double b = fixtures::bounded_beta(beta, (1.0 + gamma) * fixtures::max_logratio_gap(sched, params, ref, pairs));
      rep = grad_check(fixtures::denoiser_loss(
                           params, [&](const DenoiserParams& p) { return step_pair_loss(sched, p, ref, pairs, b, gamma); }),
                       params.net.values, kTol);
    } else if (kind == 2 || kind == 3) {
      const auto tp = fixtures::random_trajectory_pair(sched, params, rng);
      const int k = rng.uniform_int(1, T);
      const StepPair sp{transition_of(tp.winner, k), transition_of(tp.loser, k)};
      const double gap = fixtures::max_logratio_gap(sched, params, ref, std::span<const StepPair>(&sp, 1));
      const double b = kind == 2 ? fixtures::bounded_beta(beta, (1.0 + gamma) * gap) : fixtures::bounded_beta(beta, gap) / T;
      rep = grad_check(fixtures::denoiser_loss(params,
                                               [&](const DenoiserParams& p) {
                                                 return kind == 2 ? d3po_step_loss(sched, tp, p, ref, k, b, gamma)
                                                                  : stepwise_bound_loss(sched, tp, p, ref, k, b);
                                               }),
                       params.net.values, kTol);
    } else if (kind <= 6) {
      const auto batch = fixtures::random_pairs(3, 2, cond, rng);
      const auto draws = draw_noise_pairs(sched, batch.size(), 2, rng);
      const double b = beta / T;
      rep = grad_check(fixtures::denoiser_loss(params,
                                               [&](const DenoiserParams& p) {
                                                 if (kind == 4) return diffusion_dpo_noise_loss(sched, batch, p, ref, draws, b);
                                                 if (kind == 5) return see_noise_loss_A(sched, batch, p, ref, draws, b, gamma);
                                                 return see_noise_loss_B(sched, batch, p, ref, draws, b, gamma);
                                               }),
                       params.net.values, kTol);
    } else if (kind == 7) {
      const bool timed = cfg % 2 == 0;
      RewardModelParams rm = init_reward_model(2, cond, timed, T, 8, 2, rng);
      auto batch = fixtures::random_pairs(4, 2, cond, rng);
      for (auto& p : batch) p.t = timed ? rng.uniform_int(0, T) : 0;
      rep = grad_check(
          [&](std::span<const double> v, std::vector<double>* g) {
            RewardModelParams m = rm;
            m.net.values.assign(v.begin(), v.end());
            RmLossValue lv = bt_loss(m, batch);
            if (g) *g = lv.grad.values;
            return lv.value;
          },
          rm.net.values, kTol);
    } else {
      const int n = rng.uniform_int(2, 8);
      const auto p_ref = fixtures::random_distribution(n, rng);
      const auto logits = fixtures::random_vector(n, rng);
      const auto pairs = action_pairs(n, 5, rng);
      rep = grad_check(
          [&](std::span<const double> v, std::vector<double>* g) {
            VectorLoss lv = bandit_step_loss(v, p_ref, pairs, beta, gamma);
            if (g) *g = lv.grad;
            return lv.value;
          },
          logits, kTol);
    }
    if (!rep.passed || rep.max_relative_error > worst) {
      worst = std::max(worst, rep.max_relative_error);
      worst_cfg = cfg;
    }
    if (!rep.passed) {
      o.fail(std::string(names[kind]) + " config " + std::to_string(cfg) + " (T=" + std::to_string(T) + ", " +
             to_string(sched.kind) + "): " + rep.diagnostic);
      return o;
    }
  }
  o.detail = std::to_string(kConfigs) + " configurations, worst relative error " + fmt(worst) + " (config " +
             std::to_string(worst_cfg) + ")";
  return o;
}

Outcome numerics_purity(Rng& rng) {
  Outcome o;
  const auto spec = small_spec(5, 1);
  const auto params = fixtures::random_denoiser(spec, rng, 0.05);
  const auto before = params;
  const std::vector<double> x{0.3, -0.2}, c{0.7};
  const auto a = denoiser_forward(params, x, 3, c);
  const auto other = denoiser_forward(params, std::vector<double>{1.0, 1.0}, 1, c);
  const auto b = denoiser_forward(params, x, 3, c);
  o.check(a == b, "forward depends on earlier calls");
  const std::vector<double> up{0.4, -1.1};
  o.check(denoiser_backward(params, x, 3, c, up) == denoiser_backward(params, x, 3, c, up),
          "backward depends on earlier calls");
  o.check(params == before, "forward/backward mutated the parameters");
  const auto sched = make_schedule(5, ScheduleKind::Linear);
  Rng r1 = rng, r2 = rng;
  const auto t1 = sample_trajectory(sched, params, c, r1);
  (void)sample_trajectory(sched, params, c, rng);
  const auto t2 = sample_trajectory(sched, params, c, r2);
  o.check(t1 == t2 && r1 == r2, "sampling depends on state other than the passed Rng");
  (void)other;
  return o;
}

// --- diffusion --------------------------------------------------------------

// 4 standard errors: 24 moment checks share one family-wise error budget.
Outcome diffusion_marginal_consistency(Rng& rng) {
  Outcome o;
  constexpr int kDraws = 10000;
  for (auto kind : {ScheduleKind::Linear, ScheduleKind::Cosine}) {
    const auto sched = make_schedule(20, kind);
    for (int t : {1, 7, 20}) {
      const auto x0 = fixtures::random_vector(2, rng);
      std::vector<std::vector<double>> xs;
      for (int i = 0; i < kDraws; ++i) xs.push_back(forward_noise(sched, x0, t, rng.gaussian(2)));
      const double s2 = sched.sigma[t] * sched.sigma[t];
      for (int d = 0; d < 2; ++d) {
        double mean = 0.0, var = 0.0;
        for (const auto& x : xs) mean += x[d];
        mean /= kDraws;
        for (const auto& x : xs) var += (x[d] - mean) * (x[d] - mean);
        var /= kDraws - 1;
        const double se_mean = sched.sigma[t] / std::sqrt(kDraws);
        const double se_var = s2 * std::sqrt(2.0 / (kDraws - 1));
        o.check(std::abs(mean - sched.alpha[t] * x0[d]) <= 4 * se_mean,
                "mean off at t=" + std::to_string(t) + " (" + to_string(kind) + ")");
        o.check(std::abs(var - s2) <= 4 * se_var, "variance off at t=" + std::to_string(t) + " (" + to_string(kind) + "): " + fmt(var) + " vs " + fmt(s2) + " se " + fmt(se_var));
      }
    }
  }
  return o;
}

Outcome diffusion_record_replay(Rng& rng) {
  Outcome o;
  for (int i = 0; i < 10; ++i) {
    const int T = rng.uniform_int(2, 12);
    const auto sched = make_schedule(T, i % 2 ? ScheduleKind::Cosine : ScheduleKind::Linear);
    const auto params = fixtures::random_denoiser(small_spec(T, 1), rng, 0.05);
    const std::vector<double> c{rng.normal()};
    const auto traj = sample_trajectory(sched, params, c, rng);
    for (int t = 1; t <= T; ++t) {
      const double recorded = gaussian_logprob(traj.x(t - 1), traj.step(t).mean, traj.step(t).variance);
      o.check(step_logprob(sched, params, traj, t) == recorded, "replayed log-prob differs at t=" + std::to_string(t));
    }
    Rng fork_src(rng.next_u64(), 9);
    const std::vector<std::vector<double>> conds{c, c};
    Rng a = fork_src;
    const auto batch = sample_trajectories(sched, params, conds, a);
    for (const auto& tr : batch) {
      for (int t = 1; t <= T; ++t) {
        const double recorded = gaussian_logprob(tr.x(t - 1), tr.step(t).mean, tr.step(t).variance);
        o.check(step_logprob(sched, params, tr, t) == recorded, "batched chain replay differs at t=" + std::to_string(t));
      }
    }
  }
  return o;
}

Outcome diffusion_pretrain_coverage(std::uint64_t seed) {
  Outcome o;
  const ToyDataset ds(DatasetId::Mixture2d);
  const auto sched = make_schedule(20, ScheduleKind::Linear);
  DenoiserSpec spec{2, 0, 20, 64, 3};
  PretrainSettings settings;  // 5000 steps
  Rng rng(seed, 10);
  const auto params = pretrain_denoiser(ds, sched, spec, settings, rng);
  std::vector<std::vector<double>> conds(1000, ds.prompts().front());
  Rng srng(seed, 11);
  const auto cov = mode_coverage(sample_final(sched, params, conds, srng), ds.centers());
  std::string shares;
  for (double c : cov) shares += (shares.empty() ? "" : "/") + fmt(c);
  o.check(modes_covered(cov, 0.05) == 4, "mode shares " + shares);
  if (o.passed) o.detail = "mode shares " + shares;
  return o;
}

// --- preference -------------------------------------------------------------

Outcome preference_bt_swap(Rng& rng) {
  Outcome o;
  for (int i = 0; i < 10000; ++i) {
    const double scale = std::pow(10.0, rng.uniform_int(-3, 2));
    const double a = scale * rng.normal(), b = scale * rng.normal();
    if (bt_probability(a, b) != 1.0 - bt_probability(b, a)) {
      o.fail("swap identity broken at (" + fmt(a) + ", " + fmt(b) + ")");
      break;
    }
  }
  return o;
}

Outcome preference_label_invariance(Rng& rng) {
  Outcome o;
  using Map = std::function<double(double)>;
  for (int m = 0; m < 20; ++m) {
    const double a = 0.1 + 5 * rng.uniform(), b = rng.normal(), s = 0.05 + 0.5 * rng.uniform();
    const Map maps[] = {[=](double x) { return a * x + b; }, [=](double x) { return std::exp(s * x); },
                        [=](double x) { return x * x * x + a * x; }, [=](double x) { return std::atan(s * x) + b; },
                        [=](double x) { return -std::exp(-s * x); }};
    const Map f = maps[m % 5];
    const Map g = maps[(m / 5 + m + 1) % 5];
    const Map h = [&](double x) { return g(f(x)); };
    for (int i = 0; i < 50; ++i) {
      const auto c = fixtures::random_vector(0, rng);
      const auto xa = fixtures::random_vector(2, rng), xb = fixtures::random_vector(2, rng);
      const double ra = -std::hypot(xa[0] - 1.0, xa[1]), rb = -std::hypot(xb[0] - 1.0, xb[1]);
      Rng r1(1), r2(1);
      const auto p = label_pair(ra, rb, c, xa, xb, r1, LabelMode::Deterministic);
      const auto q = label_pair(h(ra), h(rb), c, xa, xb, r2, LabelMode::Deterministic);
      o.check(p.x_w == q.x_w, "label changed under monotone map " + std::to_string(m));
    }
  }
  return o;
}

Outcome preference_bt_shift(Rng& rng) {
  Outcome o;
  double worst = 0.0;
  for (int i = 0; i < 50; ++i) {
    RewardModelParams rm = init_reward_model(2, 1, i % 2 == 0, 10, 8, 2, rng);
    auto batch = fixtures::random_pairs(8, 2, 1, rng);
    for (auto& p : batch) p.t = rm.time_conditioned ? rng.uniform_int(0, 10) : 0;
    RewardModelParams shifted = rm;
    shifted.net.values[shifted.net.bias_offset(rm.net.shape.depth)] += 10.0 * rng.normal();
    worst = std::max(worst, std::abs(bt_loss(rm, batch).value - bt_loss(shifted, batch).value));
  }
  o.check(worst <= 1e-12, "bt_loss moved by " + fmt(worst) + " under a score shift");
  o.detail = o.passed ? "max deviation " + fmt(worst) : o.detail;
  return o;
}

// --- objectives -------------------------------------------------------------

Outcome objectives_gamma_zero(Rng& rng) {
  Outcome o;
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const int T = rng.uniform_int(2, 6);
    const auto sched = make_schedule(T, ScheduleKind::Linear);
    const auto ref = fixtures::random_denoiser(small_spec(T), rng, 0.05);
    const auto params = fixtures::perturbed(ref, 0.05, rng);
    const double beta = 0.05 + 2 * rng.uniform();
    // see-step (either pairing) against the plain step loss from log-probs.
    const auto pairs = step_pairs(sched, params, 4, rng);
    std::vector<StepTransition> w, l;
    for (const auto& p : pairs) {
      w.push_back(p.winner);
      l.push_back(p.loser);
    }
    const auto lw = transition_logprobs(sched, params, w), ll = transition_logprobs(sched, params, l);
    const auto rw = transition_logprobs(sched, ref, w), rl = transition_logprobs(sched, ref, l);
    std::vector<double> terms;
    for (std::size_t j = 0; j < pairs.size(); ++j) terms.push_back(softplus(-beta * ((lw[j] - rw[j]) - (ll[j] - rl[j]))));
    const double base = order_free_mean(terms);
    worst = std::max(worst, std::abs(step_pair_loss(sched, params, ref, pairs, beta, 0.0).value - base));
    // see-noise-A and -B against diffusion-dpo-noise.
    const auto batch = fixtures::random_pairs(4, 2, 0, rng);
    const auto draws = draw_noise_pairs(sched, batch.size(), 2, rng);
    const double nb = diffusion_dpo_noise_loss(sched, batch, params, ref, draws, beta).value;
    worst = std::max(worst, std::abs(see_noise_loss_A(sched, batch, params, ref, draws, beta, 0.0).value - nb));
    worst = std::max(worst, std::abs(see_noise_loss_B(sched, batch, params, ref, draws, beta, 0.0).value - nb));
    // Bandit step loss against the DPO bandit loss.
    const int n = rng.uniform_int(2, 8);
    const auto p_ref = fixtures::random_distribution(n, rng);
    const auto logits = fixtures::random_vector(n, rng);
    const auto ap = action_pairs(n, 6, rng);
    const auto pt = DiscretePolicy{softmax(logits), {}};
    worst = std::max(worst, std::abs(bandit_step_loss(logits, p_ref, ap, beta, 0.0).value - dpo_bandit_loss(pt, p_ref, ap, beta)));
  }
  o.check(worst <= 1e-12, "max deviation " + fmt(worst));
  if (o.passed) o.detail = "max deviation " + fmt(worst);
  return o;
}

Outcome objectives_form_equivalence(Rng& rng, Mutation mutation) {
  Outcome o;
  const FormA a_form = form_a(mutation);
  double worst = 0.0;
  for (double gamma : {0.5, 1.0, 3.0, 5.0}) {
    for (int i = 0; i < 100; ++i) {
      const int T = rng.uniform_int(2, 8);
      const auto sched = make_schedule(T, i % 2 ? ScheduleKind::Cosine : ScheduleKind::Linear);
      const auto ref = fixtures::random_denoiser(small_spec(T, 1), rng, 0.05);
      const auto params = fixtures::perturbed(ref, 0.05, rng);
      const double beta = (0.01 + rng.uniform()) / T;
      const auto batch = fixtures::random_pairs(3, 2, 1, rng);
      const auto draws = draw_noise_pairs(sched, batch.size(), 2, rng);
      const double a = a_form(sched, batch, params, ref, draws, beta, gamma).value;
      const double b = see_noise_loss_B(sched, batch, params, ref, draws, (1.0 + gamma) * beta, gamma).value;
      worst = std::max(worst, std::abs(a - b));
    }
  }
  o.check(worst <= 1e-12, "max deviation " + fmt(worst));
  if (o.passed) o.detail = "max deviation " + fmt(worst);
  return o;
}

Outcome objectives_step_flattening(Rng& rng) {
  Outcome o;
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const int T = rng.uniform_int(2, 8);
    const auto sched = make_schedule(T, ScheduleKind::Linear);
    const auto ref = fixtures::random_denoiser(small_spec(T), rng, 0.05);
    const auto params = fixtures::perturbed(ref, 0.05, rng);
    const auto tp = fixtures::random_trajectory_pair(sched, params, rng);
    const int k = rng.uniform_int(1, T);
    const double beta = 0.05 + 2 * rng.uniform(), gamma = -0.5 + 10 * rng.uniform();
    const double s = 1.0 + gamma;
    const double lw = step_logprob(sched, params, tp.winner, k), ll = step_logprob(sched, params, tp.loser, k);
    const double rw = step_logprob(sched, ref, tp.winner, k), rl = step_logprob(sched, ref, tp.loser, k);
    const double rewritten = step_loss_from_logprobs(lw, rw / s, ll, rl / s, beta * s, 0.0);
    worst = std::max(worst, std::abs(d3po_step_loss(sched, tp, params, ref, k, beta, gamma).value - rewritten));
  }
  o.check(worst <= 1e-12, "max deviation " + fmt(worst));
  if (o.passed) o.detail = "max deviation " + fmt(worst);
  return o;
}

Outcome objectives_closed_form(Rng& rng) {
  Outcome o;
  constexpr int kUnits = 1000;
  constexpr int kFineUnits = 10000;
  double worst_tv = 0.0;
  for (double gamma : {0.0, 1.0, 3.0}) {
    for (int i = 0; i < 20; ++i) {
      const auto p_ref = fixtures::random_distribution(8, rng);
      const auto r = fixtures::random_vector(8, rng);
      const double beta = 0.2 + 2 * rng.uniform();
      const auto pi = closed_form_policy(p_ref, r, beta, gamma);
      const auto grid = fixtures::lattice_argmax(p_ref, r, beta, gamma, kUnits);
      const double f_star = regularized_objective(pi.probs, p_ref, r, beta, gamma);
      const double f_grid = regularized_objective(grid, p_ref, r, beta, gamma);
      o.check(f_star >= f_grid, "grid point beats the closed form (gamma " + fmt(gamma) + ")");
      // Distance is measured on the 10x finer lattice, where rounding cannot eat the budget.
      const auto fine = fixtures::lattice_argmax(p_ref, r, beta, gamma, kFineUnits);
      worst_tv = std::max(worst_tv, total_variation(pi.probs, fine));
    }
  }
  o.check(worst_tv <= 1e-3, "total variation to the grid optimum " + fmt(worst_tv));
  if (o.passed) o.detail = "max TV to grid optimum " + fmt(worst_tv);
  return o;
}

Outcome objectives_entropy_monotone(Rng& rng) {
  Outcome o;
  for (int i = 0; i < 100; ++i) {
    const auto p = fixtures::random_distribution(rng.uniform_int(2, 12), rng);
    double prev = -1.0;
    for (double g : {0.0, 0.5, 1.0, 3.0, 5.0, 10.0}) {
      const double h = shannon_entropy(flatten_distribution(p, g).probs);
      o.check(h >= prev, "entropy decreased at gamma " + fmt(g));
      prev = h;
    }
  }
  return o;
}

Outcome objectives_permutation(Rng& rng) {
  Outcome o;
  for (int i = 0; i < 20; ++i) {
    const int T = rng.uniform_int(2, 5);
    const auto sched = make_schedule(T, ScheduleKind::Linear);
    const auto ref = fixtures::random_denoiser(small_spec(T), rng, 0.05);
    const auto params = fixtures::perturbed(ref, 0.05, rng);
    const double beta = 0.1 + rng.uniform(), gamma = 3 * rng.uniform();
    const auto sp = step_pairs(sched, params, 6, rng);
    o.check(step_pair_loss(sched, params, ref, sp, beta, gamma).value ==
                step_pair_loss(sched, params, ref, permuted(sp, rng), beta, gamma).value,
            "step loss depends on batch order");
    const auto batch = fixtures::random_pairs(6, 2, 0, rng);
    const auto draws = draw_noise_pairs(sched, batch.size(), 2, rng);
    std::vector<std::size_t> idx(batch.size());
    std::iota(idx.begin(), idx.end(), 0);
    idx = permuted(idx, rng);
    std::vector<PreferencePair> pb;
    std::vector<NoiseDraw> pd;
    for (auto j : idx) {
      pb.push_back(batch[j]);
      pd.push_back(draws[j]);
    }
    o.check(see_noise_loss_A(sched, batch, params, ref, draws, beta / T, gamma).value ==
                see_noise_loss_A(sched, pb, params, ref, pd, beta / T, gamma).value,
            "noise loss depends on batch order");
    RewardModelParams rm = init_reward_model(2, 0, false, 0, 8, 2, rng);
    o.check(bt_loss(rm, batch).value == bt_loss(rm, permuted(batch, rng)).value, "bt_loss depends on batch order");
    const auto p_ref = fixtures::random_distribution(6, rng);
    const auto logits = fixtures::random_vector(6, rng);
    const auto ap = action_pairs(6, 9, rng);
    const auto pap = permuted(ap, rng);
    o.check(bandit_step_loss(logits, p_ref, ap, beta, gamma).value ==
                bandit_step_loss(logits, p_ref, pap, beta, gamma).value,
            "bandit step loss depends on batch order");
    const DiscretePolicy pt{softmax(logits), {}};
    o.check(dpo_bandit_loss(pt, p_ref, ap, beta) == dpo_bandit_loss(pt, p_ref, pap, beta),
            "bandit DPO loss depends on batch order");
  }
  return o;
}

Outcome objectives_logratio_monotone(Rng& rng) {
  Outcome o;
  for (int i = 0; i < 200; ++i) {
    const double lw = rng.normal(), ll = rng.normal(), rw = rng.normal(), rl = rng.normal();
    const double beta = 0.05 + rng.uniform(), gamma = -0.5 + 5 * rng.uniform();
    const double d = std::pow(10.0, rng.uniform_int(-3, 0));
    const double base = step_loss_from_logprobs(lw, rw, ll, rl, beta, gamma);
    o.check(step_loss_from_logprobs(lw + d, rw, ll, rl, beta, gamma) < base, "step loss not decreasing in the winner log-ratio");
    o.check(step_loss_from_logprobs(lw, rw, ll - d, rl, beta, gamma) < base, "step loss not decreasing as the loser log-ratio drops");
    const int n = rng.uniform_int(2, 6);
    const auto p_ref = fixtures::random_distribution(n, rng);
    auto logits = fixtures::random_vector(n, rng);
    const std::vector<ActionPair> ap{{0, 1}};
    const double b0 = bandit_step_loss(logits, p_ref, ap, beta, gamma).value;
    logits[0] += d;
    o.check(bandit_step_loss(logits, p_ref, ap, beta, gamma).value < b0, "bandit loss not decreasing in the gap");
  }
  return o;
}

// --- trainer ----------------------------------------------------------------

struct TrainerFixture {
  DenoiserParams reference;
  RunConfig config;
};

TrainerFixture trainer_fixture(std::uint64_t seed) {
  TrainerFixture f;
  const ToyDataset ds(DatasetId::Mixture2d);
  const DenoiserSpec spec{2, 0, 5, 16, 2};
  const auto sched = make_schedule(5, ScheduleKind::Linear);
  PretrainSettings ps;
  ps.steps = 300;
  Rng rng(seed, 10);
  f.reference = pretrain_denoiser(ds, sched, spec, ps, rng);
  RunConfig& c = f.config;
  c.loss = LossConfig{LossVariant::SeeStep, 0.3, 1.0, 5, Pairing::Trajectory};
  c.iterations = 6;
  c.pairs_per_iteration = 4;
  c.eval_every = 2;
  c.eval_samples = 64;
  c.kl_samples = 16;
  c.seed = seed;
  c.proxy = default_proxy(DatasetId::Mixture2d);
  c.truth = default_truth(DatasetId::Mixture2d);
  c.reward_model.fit_pairs = 200;
  c.reward_model.epochs = 5;
  c.reward_model.width = 16;
  return f;
}

Outcome trainer_reference_immutability(const TrainerFixture& f) {
  Outcome o;
  const auto before = checksum(f.reference.net);
  for (auto variant : {LossVariant::SeeStep, LossVariant::SeeNoiseA}) {
    RunConfig c = f.config;
    c.loss.variant = variant;
    if (variant == LossVariant::SeeNoiseA) c.online = false;
    TrainerState s = init_trainer(c, f.reference);
    train(s);
    o.check(checksum(s.reference.net) == before, to_string(variant) + " run changed its reference copy");
  }
  o.check(checksum(f.reference.net) == before, "caller's reference changed");
  return o;
}

Outcome trainer_dataset_growth(const TrainerFixture& f) {
  Outcome o;
  for (bool online : {true, false}) {
    RunConfig c = f.config;
    c.online = online;
    TrainerState s = init_trainer(c, f.reference);
    const std::size_t initial = s.dataset.size();
    for (int k = 1; k <= c.iterations; ++k) {
      run_online_iteration(s);
      o.check(s.dataset.size() == initial + static_cast<std::size_t>(k * c.pairs_per_iteration),
              std::string(online ? "online" : "offline") + " dataset size wrong after iteration " + std::to_string(k));
    }
  }
  return o;
}

Outcome trainer_determinism(const TrainerFixture& f) {
  Outcome o;
  auto run = [&] {
    TrainerState s = init_trainer(f.config, f.reference);
    train(s);
    return s;
  };
  const auto a = run();
  const auto b = run();
  o.check(a.log == b.log, "run logs differ");
  o.check(a == b, "final trainer states differ");
  return o;
}

Outcome trainer_kl_sanity(const TrainerFixture& f) {
  Outcome o;
  TrainerState s = init_trainer(f.config, f.reference);
  train(s);
  o.check(!s.log.rows.empty() && s.log.rows.front().step == 0 && s.log.rows.front().kl == 0.0,
          "KL at step 0 is not zero");
  for (const auto& r : s.log.rows) o.check(r.kl >= 0.0, "negative KL at step " + std::to_string(r.step));
  return o;
}

// --- metrics ----------------------------------------------------------------

GrayImage random_image(int w, int h, Rng& rng) {
  GrayImage img(w, h);
  for (double& p : img.pixels) p = rng.uniform();
  return img;
}

Outcome metrics_rmse(Rng& rng) {
  Outcome o;
  for (int i = 0; i < 200; ++i) {
    const auto a = random_image(8, 8, rng), b = random_image(8, 8, rng), c = random_image(8, 8, rng);
    o.check(rmse(a, b) == rmse(b, a), "rmse not symmetric");
    o.check(rmse(a, c) <= rmse(a, b) + rmse(b, c) + 1e-12, "triangle inequality violated");
    o.check(rmse(a, a) == 0.0, "rmse(a, a) != 0");
  }
  return o;
}

Outcome metrics_psnr(Rng&) {
  Outcome o;
  const GrayImage a(8, 8, 0.1);
  double prev = psnr(a, GrayImage(8, 8, 0.1 + 0.001));
  for (int k = 2; k <= 80; ++k) {
    const double v = psnr(a, GrayImage(8, 8, 0.1 + 0.01 * k));
    o.check(v < prev, "psnr not strictly decreasing at rung " + std::to_string(k));
    prev = v;
  }
  return o;
}

Outcome metrics_ssim(Rng& rng) {
  Outcome o;
  for (int i = 0; i < 50; ++i) {
    const auto a = random_image(rng.uniform_int(8, 16), rng.uniform_int(8, 16), rng);
    o.check(ssim(a, a) == 1.0, "ssim(a, a) = " + fmt(ssim(a, a)));
  }
  return o;
}

Outcome metrics_entropy(Rng& rng) {
  Outcome o;
  for (int i = 0; i < 50; ++i) {
    auto a = random_image(8, 8, rng);
    const int bins = 1 << rng.uniform_int(1, 8);
    const double h = entropy_1d(a, bins);
    GrayImage b = a;
    b.pixels = permuted(a.pixels, rng);
    o.check(entropy_1d(b, bins) == h, "entropy_1d changed under a pixel permutation");
    o.check(h <= std::log2(bins), "entropy_1d above log2(bins)");
  }
  return o;
}

// --- cli --------------------------------------------------------------------

Outcome cli_config_roundtrip(Rng& rng) {
  Outcome o;
  for (auto id : {DatasetId::Mixture2d, DatasetId::Blobs8x8}) {
    ExperimentConfig c = default_experiment(id);
    c.seed = rng.next_u64() >> 12;
    c.run.loss.gamma = 0.25;
    c.run.adam.learning_rate = 1.0 / 3.0;
    c.propagate();
    const ExperimentConfig once = experiment_config_from_json(experiment_config_to_json(c));
    const ExperimentConfig twice = experiment_config_from_json(experiment_config_to_json(once));
    o.check(once == c, to_string(id) + ": load(save(c)) != c");
    o.check(twice == once, to_string(id) + ": second round trip differs");
  }
  return o;
}

std::string dir_fingerprint(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::string out;
  for (const auto& f : files) out += fs::relative(f, dir).string() + "\n" + read_text_file(f);
  return out;
}

Outcome cli_idempotent(Rng&) {
  Outcome o;
  const fs::path root = fs::temp_directory_path() / ("seelab-verify-" + std::to_string(::getpid()));
  fs::remove_all(root);
  ExperimentConfig c = default_experiment(DatasetId::Mixture2d);
  c.output_dir = "idem";
  c.toy.steps = 40;
  CommandOptions opt;
  opt.output_root = root.string();
  try {
    cmd_toy(c, opt);
    const std::string first = dir_fingerprint(root / "idem");
    try {
      cmd_toy(c, opt);
      o.fail("second run without --force overwrote outputs");
    } catch (const ConfigError&) {
    }
    opt.force = true;
    cmd_toy(c, opt);
    o.check(dir_fingerprint(root / "idem") == first, "forced rerun produced different files");
  } catch (const std::exception& e) {
    o.fail(std::string("unexpected error: ") + e.what());
  }
  fs::remove_all(root);
  return o;
}

Outcome cli_exit_codes(Rng&) {
  Outcome o;
  o.check(exit_code_for(ConfigError("x")) == 2, "config error is not exit 2");
  o.check(exit_code_for(MissingArtifact("x")) == 3, "missing artifact is not exit 3");
  o.check(exit_code_for(NumericalAbort("x")) == 4, "numerical abort is not exit 4");
  try {
    experiment_config_from_json("{\"seed\": 1}");
    o.fail("config without a dataset was accepted");
  } catch (const std::exception& e) {
    o.check(exit_code_for(e) == 2 && std::string(e.what()).find("dataset") != std::string::npos,
            "missing dataset not reported as a field error");
  }
  const fs::path root = fs::temp_directory_path() / ("seelab-verify-exit-" + std::to_string(::getpid()));
  fs::remove_all(root);
  ExperimentConfig c = default_experiment(DatasetId::Mixture2d);
  CommandOptions opt;
  opt.output_root = root.string();
  try {
    cmd_train(c, opt);
    o.fail("train without a reference succeeded");
  } catch (const std::exception& e) {
    o.check(exit_code_for(e) == 3, "train without a reference is not exit 3");
  }
  fs::remove_all(root);
  return o;
}

struct Property {
  const char* id;
  std::function<Outcome(Rng&)> run;
};

}  // namespace

bool VerifyReport::all_passed() const {
  return std::all_of(results.begin(), results.end(), [](const PropertyResult& r) { return r.passed; });
}

VerifyReport run_verify(const VerifyOptions& options) {
  std::optional<TrainerFixture> fixture;
  auto trainer = [&]() -> const TrainerFixture& {
    if (!fixture) fixture = trainer_fixture(options.seed);
    return *fixture;
  };
  const std::vector<Property> props = {
      {"numerics.determinism", numerics_determinism},
      {"numerics.gradient_fidelity", numerics_gradient_fidelity},
      {"numerics.purity", numerics_purity},
      {"diffusion.marginal_consistency", diffusion_marginal_consistency},
      {"diffusion.record_replay", diffusion_record_replay},
      {"diffusion.pretrain_mode_coverage", [&](Rng&) { return diffusion_pretrain_coverage(options.seed); }},
      {"preference.bt_swap", preference_bt_swap},
      {"preference.label_monotone_invariance", preference_label_invariance},
      {"preference.bt_shift_invariance", preference_bt_shift},
      {"objectives.gamma_zero_reduction", objectives_gamma_zero},
      {"objectives.form_equivalence", [&](Rng& r) { return objectives_form_equivalence(r, options.mutation); }},
      {"objectives.step_flattening_equivalence", objectives_step_flattening},
      {"objectives.closed_form_optimality", objectives_closed_form},
      {"objectives.entropy_monotonicity", objectives_entropy_monotone},
      {"objectives.batch_permutation_invariance", objectives_permutation},
      {"objectives.logratio_monotonicity", objectives_logratio_monotone},
      {"trainer.reference_immutability", [&](Rng&) { return trainer_reference_immutability(trainer()); }},
      {"trainer.dataset_growth", [&](Rng&) { return trainer_dataset_growth(trainer()); }},
      {"trainer.determinism", [&](Rng&) { return trainer_determinism(trainer()); }},
      {"trainer.kl_sanity", [&](Rng&) { return trainer_kl_sanity(trainer()); }},
      {"metrics.rmse_metric", metrics_rmse},
      {"metrics.psnr_monotone", metrics_psnr},
      {"metrics.ssim_identity", metrics_ssim},
      {"metrics.entropy_permutation_bound", metrics_entropy},
      {"cli.config_roundtrip", cli_config_roundtrip},
      {"cli.idempotent_outputs", cli_idempotent},
      {"cli.exit_codes", cli_exit_codes},
  };
  const auto ids = property_ids();
  require(ids.size() == props.size(), "verify: id list out of sync with the registry");
  for (std::size_t i = 0; i < ids.size(); ++i) require(ids[i] == props[i].id, "verify: id list out of sync");
  for (const auto& id : options.only) {
    if (std::none_of(props.begin(), props.end(), [&](const Property& p) { return id == p.id; })) {
      throw ConfigError("unknown property id '" + id + "'");
    }
  }
  VerifyReport report;
  std::uint64_t stream = 100;
  for (const auto& p : props) {
    ++stream;  // each property keeps its stream whatever the filter
    if (!options.only.empty() && std::find(options.only.begin(), options.only.end(), p.id) == options.only.end()) {
      continue;
    }
    Rng rng(options.seed, stream);
    const auto t0 = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = p.run(rng);
    } catch (const std::exception& e) {
      out.fail(std::string("threw: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    report.results.push_back(PropertyResult{p.id, out.passed, out.detail, secs});
  }
  return report;
}

std::vector<std::string> property_ids() {
  // Same order as the registry in run_verify, which checks it.
  return {"numerics.determinism",
          "numerics.gradient_fidelity",
          "numerics.purity",
          "diffusion.marginal_consistency",
          "diffusion.record_replay",
          "diffusion.pretrain_mode_coverage",
          "preference.bt_swap",
          "preference.label_monotone_invariance",
          "preference.bt_shift_invariance",
          "objectives.gamma_zero_reduction",
          "objectives.form_equivalence",
          "objectives.step_flattening_equivalence",
          "objectives.closed_form_optimality",
          "objectives.entropy_monotonicity",
          "objectives.batch_permutation_invariance",
          "objectives.logratio_monotonicity",
          "trainer.reference_immutability",
          "trainer.dataset_growth",
          "trainer.determinism",
          "trainer.kl_sanity",
          "metrics.rmse_metric",
          "metrics.psnr_monotone",
          "metrics.ssim_identity",
          "metrics.entropy_permutation_bound",
          "cli.config_roundtrip",
          "cli.idempotent_outputs",
          "cli.exit_codes"};
}

std::string verify_report_json(const VerifyReport& report) {
  nlohmann::ordered_json props = nlohmann::ordered_json::array();
  for (const auto& r : report.results) {
    props.push_back({{"id", r.id}, {"passed", r.passed}, {"detail", r.detail}, {"seconds", r.seconds}});
  }
  const nlohmann::ordered_json j{{"format", "seelab-verify"},
                                 {"version", kFormatVersion},
                                 {"passed", report.all_passed()},
                                 {"properties", props}};
  return j.dump(1) + "\n";
}

}  // namespace seelab

#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "seelab/errors.hpp"
#include "seelab/fixtures.hpp"
#include "seelab/objectives.hpp"
#include "seelab/preference.hpp"

using namespace seelab;

namespace {

const double kLn2 = std::log(2.0);

double stable_softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

DiscretePolicy policy(std::vector<double> p) { return DiscretePolicy{std::move(p), {}}; }

struct StepFixture {
  DiffusionSchedule sched;
  DenoiserParams ref;
  DenoiserParams params;
};

StepFixture step_fixture(int T, Rng& rng, double jitter = 0.02) {
  DenoiserSpec spec{2, 1, T, 8, 2};
  StepFixture f{make_schedule(T, ScheduleKind::Linear), fixtures::random_denoiser(spec, rng, 0.1), {}};
  f.params = fixtures::perturbed(f.ref, jitter, rng);
  return f;
}

// log pi(x_{t-1} | x_t) evaluated straight from the Gaussian kernel.
double plain_logprob(const StepFixture& f, const DenoiserParams& p, const Trajectory& tr, int t) {
  const auto eps = denoiser_forward(p, tr.x(t), t, tr.condition);
  const auto mean = posterior_mean(f.sched, tr.x(t), t, eps);
  return gaussian_logprob(tr.x(t - 1), mean, step_kernel(f.sched, t).variance);
}

}  // namespace

TEST_CASE("flatten_distribution examples and entropy monotonicity") {
  const auto p = policy({0.9, 0.1});
  CHECK(flatten_distribution(p, 0.0).probs == p.probs);
  const auto f = flatten_distribution(p, 1.0);
  CHECK(f.probs[0] == doctest::Approx(0.75).epsilon(1e-14));
  CHECK(f.probs[1] == doctest::Approx(0.25).epsilon(1e-14));
  Rng rng(1);
  const double gammas[] = {0, 0.5, 1, 3, 5, 10};
  for (int i = 0; i < 100; ++i) {
    const auto q = fixtures::random_distribution(8, rng);
    double prev = -1.0;
    for (double g : gammas) {
      const double h = shannon_entropy(flatten_distribution(q, g).probs);
      CHECK(h >= prev);
      prev = h;
    }
    CHECK(total_variation(flatten_distribution(q, 1e6).probs, uniform_policy(8).probs) <= 1e-3);
  }
  CHECK(flatten_distribution(policy({0.5, 0.0, 0.5}), 1.0).probs[1] == 0.0);
  CHECK_THROWS_AS(flatten_distribution(policy({0.0, 0.0}), 1.0), ContractViolation);
}

TEST_CASE("partition_function against direct summation") {
  CHECK(partition_function(uniform_policy(5), std::vector<double>(5, 0.0), 0.7) == doctest::Approx(1.0));
  const double beta = 0.3;
  CHECK(partition_function(uniform_policy(2), std::vector<double>{beta * std::log(2.0), 0.0}, beta) ==
        doctest::Approx(1.5).epsilon(1e-15));
  Rng rng(2);
  for (int i = 0; i < 50; ++i) {
    const auto p = fixtures::random_distribution(8, rng);
    const auto r = fixtures::random_vector(8, rng);
    double z = 0.0;
    for (int a = 0; a < 8; ++a) z += p.probs[a] * std::exp(r[a] / beta);
    CHECK(std::abs(partition_function(p, r, beta) - z) <= 1e-12 * z);
  }
  // Log domain survives r / beta near 700.
  CHECK(std::isfinite(log_partition_function(uniform_policy(2), std::vector<double>{699.0, -699.0}, 1.0)));
}

TEST_CASE("closed_form_policy: limits, analytic case, lattice oracle") {
  Rng rng(3);
  const auto p_ref = fixtures::random_distribution(8, rng);
  const auto r = fixtures::random_vector(8, rng);
  CHECK(total_variation(closed_form_policy(p_ref, r, 1e9, 0.0).probs, p_ref.probs) < 1e-6);
  const double beta = 0.4;
  const auto two = closed_form_policy(uniform_policy(2), std::vector<double>{beta * std::log(2.0), 0.0}, beta, 0.0);
  CHECK(two.probs[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  for (double gamma : {0.0, 1.0, 3.0}) {
    for (int i = 0; i < 5; ++i) {
      const auto q = fixtures::random_distribution(8, rng);
      const auto rr = fixtures::random_vector(8, rng);
      const auto pi = closed_form_policy(q, rr, 0.5, gamma);
      const auto grid = fixtures::lattice_argmax(q, rr, 0.5, gamma, 1000);
      CHECK(regularized_objective(pi.probs, q, rr, 0.5, gamma) >= regularized_objective(grid, q, rr, 0.5, gamma));
      CHECK(total_variation(pi.probs, fixtures::lattice_argmax(q, rr, 0.5, gamma, 10000)) <= 1e-3);
    }
  }
}

TEST_CASE("greedy lattice oracle equals brute-force enumeration") {
  Rng rng(4);
  for (int i = 0; i < 10; ++i) {
    const auto q = fixtures::random_distribution(3, rng);
    const auto rr = fixtures::random_vector(3, rng);
    for (double gamma : {0.0, 1.0, 3.0}) {
      CHECK(fixtures::lattice_argmax(q, rr, 0.7, gamma, 60) == fixtures::lattice_argmax_enumerate(q, rr, 0.7, gamma, 60));
    }
  }
}

TEST_CASE("implied_reward: zero log-ratio, round trip, linearity in beta") {
  Rng rng(5);
  const auto p_ref = fixtures::random_distribution(6, rng);
  const auto r = fixtures::random_vector(6, rng);
  const double beta = 0.8;
  const double z = partition_function(p_ref, std::vector<double>(6, 0.0), beta);
  CHECK(implied_reward(p_ref, p_ref, beta, 2, z) == doctest::Approx(beta * std::log(z)));
  const auto pi = closed_form_policy(p_ref, r, beta, 0.0);
  const double zr = partition_function(p_ref, r, beta);
  double shift = implied_reward(pi, p_ref, beta, 0, zr) - r[0];
  for (int a = 1; a < 6; ++a) CHECK(std::abs(implied_reward(pi, p_ref, beta, a, zr) - r[a] - shift) < 1e-9);
  const double lr1 = implied_reward(pi, p_ref, beta, 3, 1.0);
  const double lr2 = implied_reward(pi, p_ref, 2 * beta, 3, 1.0);
  CHECK(lr2 == 2.0 * lr1);
  CHECK_THROWS_AS(implied_reward(policy({1.0, 0.0}), policy({0.5, 0.5}), beta, 1, 1.0), ContractViolation);
}

TEST_CASE("dpo_bandit_loss: ln 2 at the reference, saturation, scalar oracle") {
  Rng rng(6);
  const auto p_ref = fixtures::random_distribution(5, rng);
  const std::vector<ActionPair> pairs{{0, 1}, {2, 4}, {3, 0}};
  CHECK(dpo_bandit_loss(p_ref, p_ref, pairs, 0.5) == doctest::Approx(kLn2).epsilon(1e-15));
  const auto sharp = normalized({1e6, 1e-6, 1e6, 1e6, 1e-6});
  const std::vector<ActionPair> w{{0, 1}, {2, 4}};
  CHECK(dpo_bandit_loss(sharp, p_ref, w, 1.0) < 1e-6);
  for (int i = 0; i < 20; ++i) {
    const auto th = fixtures::random_distribution(5, rng);
    double s = 0;
    for (auto [a, b] : pairs) {
      const double z = 0.5 * (std::log(th.probs[a] / p_ref.probs[a]) - std::log(th.probs[b] / p_ref.probs[b]));
      s += stable_softplus(-z);
    }
    CHECK(std::abs(dpo_bandit_loss(th, p_ref, pairs, 0.5) - s / 3) <= 1e-12);
  }
}

TEST_CASE("d3po_step_loss: ln 2 at the reference, base oracle, flattening identity, gradients") {
  Rng rng(7);
  auto f = step_fixture(5, rng);
  for (int i = 0; i < 20; ++i) {
    const auto tp = fixtures::random_trajectory_pair(f.sched, f.params, rng);
    const int k = rng.uniform_int(1, 5);
    CHECK(d3po_step_loss(f.sched, tp, f.ref, f.ref, k, 0.3, 0.0).value == doctest::Approx(kLn2).epsilon(1e-15));
    const double lw = plain_logprob(f, f.params, tp.winner, k), rw = plain_logprob(f, f.ref, tp.winner, k);
    const double ll = plain_logprob(f, f.params, tp.loser, k), rl = plain_logprob(f, f.ref, tp.loser, k);
    const double base = stable_softplus(-0.3 * ((lw - rw) - (ll - rl)));
    CHECK(std::abs(d3po_step_loss(f.sched, tp, f.params, f.ref, k, 0.3, 0.0).value - base) <= 1e-12);
    const double g = 3.0;
    const double flat = step_loss_from_logprobs(lw, rw / (1 + g), ll, rl / (1 + g), 0.3 * (1 + g), 0.0);
    CHECK(std::abs(d3po_step_loss(f.sched, tp, f.params, f.ref, k, 0.3, g).value - flat) <= 1e-12);
  }
  const auto tp = fixtures::random_trajectory_pair(f.sched, f.params, rng);
  for (double g : {0.0, 3.0}) {
    const StepPair sp{transition_of(tp.winner, 3), transition_of(tp.loser, 3)};
    const double b = fixtures::bounded_beta(0.3, (1 + g) * fixtures::max_logratio_gap(f.sched, f.params, f.ref, std::span<const StepPair>(&sp, 1)));
    const auto rep = grad_check(fixtures::denoiser_loss(f.params, [&](const DenoiserParams& p) {
                                  return d3po_step_loss(f.sched, tp, p, f.ref, 3, b, g);
                                }),
                                f.params.net.values, 1e-4);
    CHECK_MESSAGE(rep.passed, rep.diagnostic);
  }
}

TEST_CASE("step losses decrease as the winner log-ratio grows") {
  double prev = 1e9;
  for (double lw = -3; lw <= 3; lw += 0.5) {
    const double v = step_loss_from_logprobs(lw, 0.1, -0.2, 0.4, 0.7, 1.5);
    CHECK(v < prev);
    prev = v;
  }
}

TEST_CASE("stepwise bound: ln 2 at the reference, argument identity, upper bound") {
  Rng rng(8);
  constexpr int T = 5;
  for (int i = 0; i < 20; ++i) {
    auto f = step_fixture(T, rng);
    const auto tp = fixtures::random_trajectory_pair(f.sched, f.params, rng);
    const double beta = 0.05;
    double arg_sum = 0.0, mean_bound = 0.0, chain_arg = 0.0;
    for (int t = 1; t <= T; ++t) {
      CHECK(stepwise_bound_loss(f.sched, tp, f.ref, f.ref, t, beta).value == doctest::Approx(kLn2).epsilon(1e-15));
      const double d = (plain_logprob(f, f.params, tp.winner, t) - plain_logprob(f, f.ref, tp.winner, t)) -
                       (plain_logprob(f, f.params, tp.loser, t) - plain_logprob(f, f.ref, tp.loser, t));
      arg_sum += beta * T * d / T;
      chain_arg += beta * d;
      mean_bound += stepwise_bound_loss(f.sched, tp, f.params, f.ref, t, beta).value / T;
    }
    CHECK(std::abs(arg_sum - chain_arg) <= 1e-10);
    const double chain = full_chain_dpo_loss(f.sched, tp, f.params, f.ref, beta);
    CHECK(std::abs(chain - stable_softplus(-chain_arg)) <= 1e-10);
    CHECK(mean_bound >= chain - 1e-10);
  }
}

namespace {

struct NoiseFixture {
  DiffusionSchedule sched;
  DenoiserParams ref;
  DenoiserParams params;
  std::vector<PreferencePair> batch;
  std::vector<NoiseDraw> draws;
};

NoiseFixture noise_fixture(Rng& rng, int n = 6) {
  DenoiserSpec spec{2, 1, 10, 8, 2};
  NoiseFixture f{make_schedule(10, ScheduleKind::Linear), fixtures::random_denoiser(spec, rng, 0.1), {}, {}, {}};
  f.params = fixtures::perturbed(f.ref, 0.05, rng);
  f.batch = fixtures::random_pairs(n, 2, 1, rng);
  f.draws = draw_noise_pairs(f.sched, f.batch.size(), 2, rng);
  return f;
}

}  // namespace

TEST_CASE("noise losses: ln 2 at the reference, reductions, form identity") {
  Rng rng(9);
  for (int i = 0; i < 20; ++i) {
    auto f = noise_fixture(rng);
    const double beta = 0.01;
    CHECK(diffusion_dpo_noise_loss(f.sched, f.batch, f.ref, f.ref, f.draws, beta).value == kLn2);
    const double base = diffusion_dpo_noise_loss(f.sched, f.batch, f.params, f.ref, f.draws, beta).value;
    CHECK(std::abs(see_noise_loss_A(f.sched, f.batch, f.params, f.ref, f.draws, beta, 0.0).value - base) <= 1e-12);
    CHECK(std::abs(see_noise_loss_B(f.sched, f.batch, f.params, f.ref, f.draws, beta, 0.0).value - base) <= 1e-12);
    for (double g : {0.5, 1.0, 3.0, 5.0}) {
      const double a = see_noise_loss_A(f.sched, f.batch, f.params, f.ref, f.draws, beta, g).value;
      const double b = see_noise_loss_B(f.sched, f.batch, f.params, f.ref, f.draws, beta * (1 + g), g).value;
      CHECK(std::abs(a - b) <= 1e-12);
    }
  }
}

TEST_CASE("noise loss drops below ln 2 after a step toward the winners") {
  Rng rng(10);
  auto f = noise_fixture(rng, 8);
  std::vector<std::vector<double>> x0, cs;
  std::vector<ElboDraw> elbo;
  for (std::size_t j = 0; j < f.batch.size(); ++j) {
    x0.push_back(f.batch[j].x_w);
    cs.push_back(f.batch[j].c);
    elbo.push_back(ElboDraw{f.draws[j].t, f.draws[j].eps_w});
  }
  auto better = f.ref;
  const auto g = dm_pretrain_loss(f.sched, f.ref, x0, cs, elbo).grad;
  for (std::size_t i = 0; i < better.net.values.size(); ++i) better.net.values[i] -= 1e-3 * g.values[i];
  CHECK(diffusion_dpo_noise_loss(f.sched, f.batch, better, f.ref, f.draws, 0.05).value < kLn2);
}

TEST_CASE("noise loss gradients pass grad_check") {
  Rng rng(11);
  auto f = noise_fixture(rng);
  auto check = [&](const char* name, auto&& fn) {
    const auto rep = grad_check(fixtures::denoiser_loss(f.params, fn), f.params.net.values, 1e-4);
    CHECK_MESSAGE(rep.passed, name << ": " << rep.diagnostic);
  };
  check("base", [&](const DenoiserParams& p) { return diffusion_dpo_noise_loss(f.sched, f.batch, p, f.ref, f.draws, 0.02); });
  check("A", [&](const DenoiserParams& p) { return see_noise_loss_A(f.sched, f.batch, p, f.ref, f.draws, 0.02, 3.0); });
  check("B", [&](const DenoiserParams& p) { return see_noise_loss_B(f.sched, f.batch, p, f.ref, f.draws, 0.02, 3.0); });
}

TEST_CASE("losses are invariant under batch permutation") {
  Rng rng(12);
  auto f = noise_fixture(rng, 9);
  const double a = see_noise_loss_A(f.sched, f.batch, f.params, f.ref, f.draws, 0.02, 1.0).value;
  std::vector<std::size_t> idx(f.batch.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::reverse(idx.begin(), idx.end());
  std::rotate(idx.begin(), idx.begin() + 4, idx.end());
  std::vector<PreferencePair> pb;
  std::vector<NoiseDraw> pd;
  for (auto i : idx) {
    pb.push_back(f.batch[i]);
    pd.push_back(f.draws[i]);
  }
  CHECK(see_noise_loss_A(f.sched, pb, f.params, f.ref, pd, 0.02, 1.0).value == a);
}

TEST_CASE("KL to reference") {
  CHECK(gaussian_kl_equal_variance(std::vector<double>{1.0}, std::vector<double>{0.0}, 1.0) == 0.5);
  Rng rng(13);
  auto f = step_fixture(6, rng, 0.05);
  const std::vector<std::vector<double>> cs{{0.2}, {-0.4}};
  Rng r0(1);
  CHECK(kl_to_reference(f.ref, f.ref, f.sched, cs, r0, 20).mean == 0.0);
  std::vector<KlEstimate> est;
  for (int s = 0; s < 4; ++s) {
    Rng r(50 + s);
    est.push_back(kl_to_reference(f.params, f.ref, f.sched, cs, r, 500));
    CHECK(est.back().mean > 0.0);
  }
  for (std::size_t i = 1; i < est.size(); ++i) {
    const double se = std::hypot(est[0].standard_error, est[i].standard_error);
    CHECK(std::abs(est[i].mean - est[0].mean) <= 3 * se);
  }
}

TEST_CASE("LossConfig validation and base equivalence") {
  LossConfig c;
  c.beta = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.beta = 0.1;
  c.gamma = -1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.gamma = 0.0;
  c.variant = LossVariant::SeeNoiseA;
  CHECK(c.equivalent_base() == LossVariant::DiffusionDpoNoise);
  c.T = 20;
  CHECK(c.effective_beta() == doctest::Approx(2.0));
  c.variant = LossVariant::SeeStep;
  CHECK(c.equivalent_base() == LossVariant::D3poStep);
  c.gamma = 1.0;
  CHECK(c.equivalent_base() == LossVariant::SeeStep);
  CHECK_THROWS_AS(parse_loss_variant("ppo"), ConfigError);
}

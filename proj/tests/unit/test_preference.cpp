#include <doctest.h>

#include <cmath>

#include "seelab/errors.hpp"
#include "seelab/fixtures.hpp"
#include "seelab/metrics.hpp"
#include "seelab/preference.hpp"

using namespace seelab;

TEST_CASE("true_reward: mode-seeking and blob sharpness") {
  RewardSpec ms{RewardKind::ModeSeeking, {1.0, -2.0}};
  CHECK(true_reward(ms, {}, std::vector<double>{1.0, -2.0}) == 0.0);
  CHECK(true_reward(ms, {}, std::vector<double>{1.0, -1.0}) == doctest::Approx(-1.0));
  CHECK(true_reward(ms, {}, std::vector<double>{0.6, -2.8}) == doctest::Approx(-0.8));

  RewardSpec sharp{RewardKind::BlobSharpness, {}};
  Rng rng(1);
  const double flat = true_reward(sharp, {}, std::vector<double>(64, 0.2));
  for (int i = 0; i < 20; ++i) {
    auto img = fixtures::random_vector(64, rng, 0.5);
    CHECK(true_reward(sharp, {}, img) > flat);
  }
  CHECK(flat == doctest::Approx(0.0));
  CHECK_THROWS_AS(true_reward(sharp, {}, std::vector<double>(10, 0.0)), ConfigError);
  CHECK_THROWS_AS(parse_reward_kind("pickscore"), ConfigError);
}

TEST_CASE("bt_probability examples and exact swap complement") {
  CHECK(bt_probability(1.3, 1.3) == 0.5);
  CHECK(bt_probability(std::log(3.0), 0.0) == doctest::Approx(0.75).epsilon(1e-15));
  Rng rng(2);
  for (int i = 0; i < 1000; ++i) {
    const double a = 20 * rng.normal(), b = 20 * rng.normal();
    CHECK(bt_probability(a, b) == 1.0 - bt_probability(b, a));
  }
}

TEST_CASE("label_pair: deterministic argmax, ties, identical samples") {
  Rng rng(3);
  const std::vector<double> a{0.1, 0.2}, b{0.3, -0.4};
  auto p = label_pair(1.0, 0.5, {}, a, b, rng, LabelMode::Deterministic);
  CHECK(p.x_w == a);
  p = label_pair(0.0, 0.5, {}, a, b, rng, LabelMode::Deterministic);
  CHECK(p.x_w == b);
  // Ties go to the lexicographically smaller sample.
  p = label_pair(0.5, 0.5, {}, b, a, rng, LabelMode::Deterministic);
  CHECK(p.x_w == a);
  CHECK(p.confidence >= 0.5);
  CHECK_THROWS_AS(label_pair(0.0, 1.0, {}, a, a, rng, LabelMode::Deterministic), ContractViolation);
}

TEST_CASE("stochastic labels follow the BT probability") {
  const std::vector<double> a{0.0}, b{1.0};
  Rng rng(4);
  int wins_equal = 0, wins_gap = 0;
  constexpr int n = 10000;
  for (int i = 0; i < n; ++i) {
    if (label_pair(0.0, 0.0, {}, a, b, rng, LabelMode::Stochastic).x_w == a) ++wins_equal;
    if (label_pair(5.0, 0.0, {}, a, b, rng, LabelMode::Stochastic).x_w == a) ++wins_gap;
  }
  CHECK(std::abs(wins_equal / double(n) - 0.5) <= 0.02);
  CHECK(std::abs(wins_gap / double(n) - 1.0 / (1.0 + std::exp(-5.0))) <= 0.005);
}

TEST_CASE("deterministic labels are invariant under monotone reward maps") {
  Rng rng(5);
  RewardSpec ms{RewardKind::ModeSeeking, {0.5, 0.5}};
  for (int map = 0; map < 20; ++map) {
    const double k = std::exp(rng.normal()), shift = 3 * rng.normal();
    auto f = [&](double r) { return map % 2 ? k * r + shift : std::exp(k * r) + shift; };
    for (int i = 0; i < 20; ++i) {
      const auto xa = rng.gaussian(2), xb = rng.gaussian(2);
      const double ra = true_reward(ms, {}, xa), rb = true_reward(ms, {}, xb);
      Rng r1(0), r2(0);
      CHECK(label_pair(ra, rb, {}, xa, xb, r1, LabelMode::Deterministic) ==
            label_pair(f(ra), f(rb), {}, xa, xb, r2, LabelMode::Deterministic));
    }
  }
}

namespace {

// r(x) = k * silu(x[0]) on a depth-1 model.
RewardModelParams silu_model(double k) {
  Rng rng(0);
  auto rm = init_reward_model(2, 0, false, 0, 4, 1, rng);
  std::fill(rm.net.values.begin(), rm.net.values.end(), 0.0);
  rm.net.values[rm.net.weight_offset(0)] = 1.0;
  rm.net.values[rm.net.weight_offset(1)] = k;
  return rm;
}

std::vector<PreferencePair> gap_pairs(int n) {
  std::vector<PreferencePair> pairs(static_cast<std::size_t>(n));
  for (auto& p : pairs) {
    p.x_w = {2.0, 0.0};
    p.x_l = {0.0, 1.0};
  }
  return pairs;
}

}  // namespace

TEST_CASE("bt_loss: equal scores, saturation, gradient, shift invariance") {
  const auto pairs = gap_pairs(5);
  CHECK(bt_loss(silu_model(0.0), pairs).value == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(bt_loss(silu_model(10.0 / silu(2.0)), pairs).value < 1e-4);

  Rng rng(6);
  auto rm = init_reward_model(2, 1, true, 10, 8, 2, rng);
  auto batch = fixtures::random_pairs(7, 2, 1, rng);
  for (auto& p : batch) p.t = rng.uniform_int(0, 10);
  LossWithGradient f = [&](std::span<const double> v, std::vector<double>* g) {
    RewardModelParams q = rm;
    q.net.values.assign(v.begin(), v.end());
    auto lv = bt_loss(q, batch);
    if (g) *g = lv.grad.values;
    return lv.value;
  };
  const auto rep = grad_check(f, rm.net.values, 1e-4);
  CHECK_MESSAGE(rep.passed, rep.diagnostic);

  // Adding a constant to every score moves only the output bias.
  const double base = bt_loss(rm, batch).value;
  auto shifted = rm;
  shifted.net.values[shifted.net.bias_offset(shifted.net.shape.depth)] += 123.456;
  CHECK(std::abs(bt_loss(shifted, batch).value - base) <= 1e-12);
}

namespace {

std::vector<PreferencePair> labeled(const RewardSpec& spec, int n, Rng& rng, bool shuffle_labels) {
  std::vector<PreferencePair> out;
  for (int i = 0; i < n; ++i) {
    const auto a = rng.gaussian(2), b = rng.gaussian(2);
    auto p = sample_preference(spec, {}, a, b, rng, LabelMode::Deterministic);
    if (shuffle_labels && rng.uniform() < 0.5) std::swap(p.x_w, p.x_l);
    out.push_back(p);
  }
  return out;
}

}  // namespace

TEST_CASE("train_reward_model: separable data, random labels, determinism") {
  RewardSpec ms{RewardKind::ModeSeeking, {1.0, 0.0}};
  Rng rng(7);
  const auto pairs = labeled(ms, 600, rng, false);
  RewardModelConfig cfg;
  cfg.seed = 3;
  const auto fit = train_reward_model(pairs, cfg);
  CHECK(fit.report.heldout_accuracy > 0.9);
  const auto again = train_reward_model(pairs, cfg);
  CHECK(again.params == fit.params);
  CHECK(again.report == fit.report);

  Rng rng2(8);
  const auto noise = labeled(ms, 2000, rng2, true);
  RewardModelConfig small = cfg;
  small.epochs = 10;
  const auto nofit = train_reward_model(noise, small);
  CHECK(std::abs(nofit.report.heldout_accuracy - 0.5) <= 0.05);
  CHECK_THROWS_AS(train_reward_model(std::span<const PreferencePair>(pairs.data(), 50), cfg), ContractViolation);
}

TEST_CASE("stepwise_score: purity, clean-data agreement, untrained control") {
  RewardSpec ms{RewardKind::ModeSeeking, {1.0, 0.0}};
  const auto sched = make_schedule(10, ScheduleKind::Linear);
  Rng rng(9);
  const auto train = labeled(ms, 800, rng, false);
  const auto held = labeled(ms, 400, rng, false);
  RewardModelConfig clean_cfg;
  clean_cfg.seed = 1;
  const auto clean = train_reward_model(train, clean_cfg);
  RewardModelConfig step_cfg = clean_cfg;
  step_cfg.time_conditioned = true;
  step_cfg.timesteps = 10;
  step_cfg.epochs = 30;
  const auto step = train_reward_model(noisy_preference_pairs(sched, train, 4, rng), step_cfg);

  const std::vector<double> x{0.3, 0.1};
  CHECK(stepwise_score(step.params, x, 4, {}) == stepwise_score(step.params, x, 4, {}));
  CHECK_THROWS_AS(stepwise_score(clean.params, x, 0, {}), ContractViolation);

  int agree = 0;
  for (const auto& p : held) {
    const bool a = reward_score(clean.params, p.x_w, 0, {}) > reward_score(clean.params, p.x_l, 0, {});
    const bool b = stepwise_score(step.params, p.x_w, 0, {}) > stepwise_score(step.params, p.x_l, 0, {});
    agree += a == b;
  }
  CHECK(agree / double(held.size()) > 0.9);

  // Untrained scorers agree with the truth at chance level on average.
  double acc = 0.0;
  for (int s = 0; s < 20; ++s) {
    Rng r(100 + s);
    acc += pairwise_accuracy(init_reward_model(2, 0, true, 10, 16, 2, r), held);
  }
  CHECK(std::abs(acc / 20 - 0.5) < 0.12);
}

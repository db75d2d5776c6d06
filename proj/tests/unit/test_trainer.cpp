#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "seelab/errors.hpp"
#include "seelab/serialize.hpp"
#include "seelab/trainer.hpp"

using namespace seelab;

namespace {

struct Small {
  DenoiserParams reference;
  RunConfig config;
};

const Small& small() {
  static const Small s = [] {
    Small f;
    const ToyDataset ds(DatasetId::Mixture2d);
    const auto sched = make_schedule(5, ScheduleKind::Linear);
    PretrainSettings ps;
    ps.steps = 300;
    Rng rng(0, 10);
    f.reference = pretrain_denoiser(ds, sched, DenoiserSpec{2, 0, 5, 16, 2}, ps, rng);
    RunConfig& c = f.config;
    c.loss = LossConfig{LossVariant::SeeStep, 0.3, 1.0, 5, Pairing::Trajectory};
    c.iterations = 6;
    c.pairs_per_iteration = 4;
    c.eval_every = 2;
    c.eval_samples = 64;
    c.kl_samples = 16;
    c.proxy = default_proxy(DatasetId::Mixture2d);
    c.truth = default_truth(DatasetId::Mixture2d);
    c.reward_model.fit_pairs = 200;
    c.reward_model.epochs = 5;
    c.reward_model.width = 16;
    return f;
  }();
  return s;
}

RunLog synthetic_log(int rows, int turn, double truth_after) {
  RunLog log;
  for (int i = 0; i < rows; ++i) {
    RunLogRow r;
    r.step = i;
    r.proxy_reward = 0.1 * i + 0.01 * std::sin(i);
    r.true_reward = i < turn ? 0.05 * i : 0.05 * turn + truth_after * (i - turn);
    r.diversity = 2.0;
    log.append(r);
  }
  return log;
}

}  // namespace

TEST_CASE("zero learning rate leaves the policy and proxy curve flat") {
  RunConfig c = small().config;
  c.adam.learning_rate = 0.0;
  TrainerState s = init_trainer(c, small().reference);
  train(s);
  CHECK(s.policy == s.reference);
  for (const auto& row : s.log.rows) {
    CHECK(row.proxy_reward == s.log.rows.front().proxy_reward);
    CHECK(row.kl == 0.0);
  }
}

TEST_CASE("training is deterministic, grows the dataset and keeps the reference") {
  const auto before = checksum(small().reference.net);
  auto run = [] {
    TrainerState s = init_trainer(small().config, small().reference);
    const auto initial = s.dataset.size();
    train(s);
    CHECK(s.dataset.size() == initial + 6u * 4u);
    return s;
  };
  const auto a = run();
  const auto b = run();
  CHECK(a.log == b.log);
  CHECK(a.policy == b.policy);
  CHECK(checksum(a.reference.net) == before);
  CHECK(a.log.rows.front().kl == 0.0);
  for (const auto& r : a.log.rows) CHECK(r.kl >= 0.0);
  CHECK(a.log.rows.size() == 4u);  // steps 0, 2, 4, 6
}

TEST_CASE("interrupted run resumed from a serialized state equals the uninterrupted run") {
  TrainerState full = init_trainer(small().config, small().reference);
  train(full);
  TrainerState part = init_trainer(small().config, small().reference);
  train(part, {}, 3);
  CHECK(part.iteration == 3);
  TrainerState resumed = trainer_state_from_json(trainer_state_to_json(part), small().reference);
  CHECK(resumed == part);
  train(resumed);
  CHECK(resumed.log == full.log);
  CHECK(resumed.policy == full.policy);
  CHECK(resumed.optimizer == full.optimizer);
}

TEST_CASE("gamma changes the log; noise losses refuse online mode") {
  RunConfig c = small().config;
  c.iterations = 2;
  TrainerState a = init_trainer(c, small().reference);
  train(a);
  c.loss.gamma = 3.0;
  TrainerState b = init_trainer(c, small().reference);
  train(b);
  CHECK_FALSE(a.log == b.log);
  c.loss.variant = LossVariant::DiffusionDpoNoise;
  c.loss.gamma = 0.0;
  c.online = true;
  try {
    c.validate();
    FAIL("online noise loss accepted");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("offline") != std::string::npos);
  }
}

TEST_CASE("RunLog rows must strictly increase") {
  RunLog log;
  RunLogRow r;
  r.step = 3;
  log.append(r);
  CHECK_THROWS_AS(log.append(r), ContractViolation);
}

TEST_CASE("detect_reward_hacking on synthetic logs") {
  CHECK_FALSE(detect_reward_hacking(synthetic_log(120, 1000, 0.0)).flagged);
  const auto rep = detect_reward_hacking(synthetic_log(120, 50, -0.08));
  REQUIRE(rep.flagged);
  CHECK(std::abs(rep.first_step - 50) <= 20);
  CHECK_THROWS_AS(detect_reward_hacking(synthetic_log(30, 10, -0.1)), ContractViolation);
  const double xs[] = {0, 1, 2, 3}, ys[] = {1, 3, 5, 7};
  CHECK(ls_slope(xs, ys).first == doctest::Approx(2.0));
}

TEST_CASE("bandit toy: initialization, flattening, strong regularization") {
  BanditToyConfig c;
  const int hi = high_reward_action(c);
  CHECK(hi == 7);
  c.steps = 0;
  for (const auto& curve : run_bandit_toy(c)) {
    REQUIRE(curve.mass.size() == 1u);
    CHECK(curve.mass[0] == normalized(c.p_ref).probs[hi]);
  }
  c.steps = 100;
  c.gammas = {1e6};
  const auto flat = run_bandit_toy(c)[0];
  CHECK(*std::max_element(flat.mass.begin(), flat.mass.end()) > c.p_ref[hi]);
  c.gammas = {0.0};
  c.beta = 1e6;
  c.steps = 300;
  const auto pinned = run_bandit_toy(c);
  for (double m : pinned[0].mass) CHECK(m <= 2 * c.p_ref[hi]);
  BanditToyConfig tie;
  tie.rewards[0] = tie.rewards.back();
  CHECK_THROWS_AS(high_reward_action(tie), ConfigError);
}

TEST_CASE("time_to_mass") {
  BanditCurve c{0.0, {0.1, 0.3, 0.6, 0.4}};
  CHECK(time_to_mass(c, 0.5) == 2);
  CHECK(time_to_mass(c, 0.9) == 4);
}

TEST_CASE("sweep: 1x1 equals a single run, cell failures are recorded") {
  RunConfig c = small().config;
  c.iterations = 2;
  TrainerState single = init_trainer(c, small().reference);
  train(single);
  const auto one = sweep(c, small().reference, {c.loss.gamma}, {c.loss.beta}, 1);
  REQUIRE(one.cells.size() == 1u);
  CHECK(one.cells[0].ok);
  CHECK(one.cells[0].log == single.log);

  const auto mixed = sweep(c, small().reference, {-2.0, 1.0}, {0.3}, 2);
  REQUIRE(mixed.cells.size() == 2u);
  CHECK_FALSE(mixed.cells[0].ok);
  CHECK_FALSE(mixed.cells[0].error.empty());
  CHECK(mixed.cells[1].ok);
  CHECK(mixed.cells[1].log == single.log);

  const auto again = sweep(c, small().reference, {-2.0, 1.0}, {0.3}, 1);
  CHECK(again.cells[1].log == mixed.cells[1].log);
  CHECK(sweep_variant(LossVariant::D3poStep, 3.0) == LossVariant::SeeStep);
  CHECK(sweep_variant(LossVariant::DiffusionDpoNoise, 0.0) == LossVariant::DiffusionDpoNoise);
}

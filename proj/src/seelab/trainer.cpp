#include "seelab/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <mutex>
#include <optional>
#include <numeric>
#include <thread>

#include "seelab/errors.hpp"
#include "seelab/metrics.hpp"

namespace seelab {
namespace {

// Stream ids. Every iteration and evaluation reseeds from (seed, stream), so a
// resumed run draws exactly what the uninterrupted run would have drawn.
constexpr std::uint64_t kSetupStream = 1;
constexpr std::uint64_t kEvalStream = 2;
constexpr std::uint64_t kKlStream = 3;
constexpr std::uint64_t kIterationStreamBase = 1000;

constexpr double kMixtureTargetScale = 1.4;

}  // namespace

RewardSpec default_proxy(DatasetId id) {
  if (id == DatasetId::Mixture2d) {
    const ToyDataset ds(id);
    const auto& c0 = ds.centers().front();
    return RewardSpec{RewardKind::ModeSeeking, {kMixtureTargetScale * c0[0], kMixtureTargetScale * c0[1]}};
  }
  return RewardSpec{RewardKind::BlobSharpness, {}};
}

RewardSpec default_truth(DatasetId id) {
  if (id == DatasetId::Mixture2d) {
    const ToyDataset ds(id);
    RewardSpec spec{RewardKind::MixtureDensity, {ds.component_stddev()}};
    for (const auto& c : ds.centers()) spec.parameters.insert(spec.parameters.end(), c.begin(), c.end());
    return spec;
  }
  return RewardSpec{RewardKind::BlobSharpness, {}};
}

void RunConfig::validate() const {
  loss.validate();
  auto positive = [](int v, const char* field) {
    if (v < 1) throw ConfigError(std::string(field) + " must be a positive integer, got " + std::to_string(v));
  };
  positive(iterations, "run.iterations");
  positive(pairs_per_iteration, "run.pairs_per_iteration");
  positive(updates_per_iteration, "run.updates_per_iteration");
  positive(eval_every, "run.eval_every");
  positive(eval_samples, "run.eval_samples");
  positive(kl_samples, "run.kl_samples");
  positive(reward_model.width, "run.reward_model.width");
  positive(reward_model.depth, "run.reward_model.depth");
  positive(reward_model.epochs, "run.reward_model.epochs");
  positive(reward_model.noisy_copies, "run.reward_model.noisy_copies");
  if (reward_model.fit_pairs < 100) {
    throw ConfigError("run.reward_model.fit_pairs must be at least 100, got " + std::to_string(reward_model.fit_pairs));
  }
  if (!(adam.learning_rate >= 0.0) || !std::isfinite(adam.learning_rate)) {
    throw ConfigError("run.optimizer.learning_rate must be a finite non-negative number");
  }
  if (loss.variant == LossVariant::DpoBandit) {
    throw ConfigError("loss.variant dpo-bandit applies to the bandit toy, not to diffusion runs");
  }
  if (loss.is_noise_loss() && online) {
    throw ConfigError("loss.variant " + to_string(loss.variant) +
                      " runs offline only (fixed pre-labeled reference data); set run.online = false");
  }
  if (loss.is_step_loss() && loss.pairing == Pairing::PerStep && !online) {
    throw ConfigError("run.online must be true for per-step pairing");
  }
}

void RunLog::append(RunLogRow row) {
  require(rows.empty() || row.step > rows.back().step, "RunLog rows must have strictly increasing steps");
  rows.push_back(std::move(row));
}

namespace {

std::vector<std::vector<double>> draw_prompts(const ToyDataset& ds, int n, Rng& rng) {
  std::vector<std::vector<double>> out(static_cast<std::size_t>(n));
  for (auto& c : out) c = ds.random_prompt(rng);
  return out;
}

std::vector<double> score_all(const RewardModelParams& rm, const std::vector<std::vector<double>>& xs,
                              const std::vector<std::vector<double>>& cs, int t = 0) {
  const std::vector<int> ts(xs.size(), t);
  return reward_scores(rm, xs, ts, cs);
}

}  // namespace

TrainerState init_trainer(const RunConfig& config, const DenoiserParams& reference) {
  config.validate();
  const ToyDataset ds(config.dataset);
  if (reference.spec.data_dim != ds.data_dim() || reference.spec.cond_dim != ds.cond_dim()) {
    throw ConfigError("reference checkpoint does not match dataset '" + to_string(config.dataset) + "'");
  }
  if (reference.spec.timesteps != config.loss.T) {
    throw ConfigError("loss.T is " + std::to_string(config.loss.T) + " but the reference was trained with T=" +
                      std::to_string(reference.spec.timesteps));
  }
  TrainerState st;
  st.config = config;
  st.schedule = make_schedule(reference.spec.timesteps, config.schedule);
  st.reference = reference;
  st.reference_checksum = checksum(reference.net);
  st.policy = reference;
  st.optimizer = OptimizerState::for_size(reference.net.values.size(), config.adam);

  // Proxy reward model: reference samples labeled by the proxy spec.
  Rng setup(config.seed, kSetupStream);
  const int n = config.reward_model.fit_pairs;
  const auto conds = draw_prompts(ds, n, setup);
  std::vector<std::vector<double>> cc;
  cc.reserve(2 * conds.size());
  for (const auto& c : conds) {
    cc.push_back(c);
    cc.push_back(c);
  }
  const auto xs = sample_final(st.schedule, reference, cc, setup);
  std::vector<PreferencePair> fit_pairs;
  fit_pairs.reserve(conds.size());
  for (int j = 0; j < n; ++j) {
    const auto& a = xs[2 * j];
    const auto& b = xs[2 * j + 1];
    if (a == b) continue;
    fit_pairs.push_back(sample_preference(config.proxy, conds[j], a, b, setup, config.labeling));
  }
  RewardModelConfig rmc;
  rmc.width = config.reward_model.width;
  rmc.depth = config.reward_model.depth;
  rmc.epochs = config.reward_model.epochs;
  rmc.learning_rate = config.reward_model.learning_rate;
  rmc.seed = config.seed;
  auto fit = train_reward_model(fit_pairs, rmc);
  st.proxy_model = std::move(fit.params);
  st.proxy_fit = fit.report;
  if (config.loss.is_step_loss() && config.loss.pairing == Pairing::PerStep) {
    const auto noisy = noisy_preference_pairs(st.schedule, fit_pairs, config.reward_model.noisy_copies, setup);
    RewardModelConfig step_cfg = rmc;
    step_cfg.time_conditioned = true;
    step_cfg.timesteps = st.schedule.T;
    step_cfg.seed = config.seed + 1;
    st.step_model = train_reward_model(noisy, step_cfg).params;
  }
  st.log.append(evaluate(st, 0));
  return st;
}

RunLogRow evaluate(const TrainerState& state, int step) {
  const RunConfig& cfg = state.config;
  const ToyDataset ds(cfg.dataset);
  Rng rng(cfg.seed, kEvalStream);
  const auto conds = draw_prompts(ds, cfg.eval_samples, rng);
  const auto xs = sample_final(state.schedule, state.policy, conds, rng);
  RunLogRow row;
  row.step = step;
  const auto proxy = score_all(state.proxy_model, xs, conds);
  row.proxy_reward = std::accumulate(proxy.begin(), proxy.end(), 0.0) / static_cast<double>(xs.size());
  double truth = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) truth += true_reward(cfg.truth, conds[i], xs[i]);
  row.true_reward = truth / static_cast<double>(xs.size());
  Rng kl_rng(cfg.seed, kKlStream);
  const KlEstimate kl = kl_to_reference(state.policy, state.reference, state.schedule, ds.prompts(), kl_rng,
                                        cfg.kl_samples);
  row.kl = kl.mean;
  row.kl_stderr = kl.standard_error;
  if (cfg.dataset == DatasetId::Mixture2d) {
    row.coverage = mode_coverage(xs, ds.centers());
    row.diversity = coverage_entropy_bits(row.coverage);
  } else {
    double e1 = 0.0, e2 = 0.0;
    for (const auto& x : xs) {
      const GrayImage img = square_image(to_pixels(x));
      e1 += entropy_1d(img);
      e2 += entropy_2d(img);
    }
    row.diversity = e1 / static_cast<double>(xs.size());
    row.e2 = e2 / static_cast<double>(xs.size());
  }
  return row;
}

namespace {

struct IterationBatch {
  std::vector<StepPair> step_pairs;
  std::vector<PreferencePair> noise_pairs;
};

PreferencePair label_by_model(const RewardModelParams& rm, const std::vector<double>& c,
                              const std::vector<double>& a, const std::vector<double>& b, int t, Rng& rng,
                              LabelMode mode) {
  const std::vector<std::vector<double>> xs{a, b};
  const std::vector<std::vector<double>> cs{c, c};
  const auto s = score_all(rm, xs, cs, t);
  PreferencePair p = label_pair(s[0], s[1], c, a, b, rng, mode);
  p.t = t;
  return p;
}

IterationBatch collect_pairs(TrainerState& st, Rng& rng) {
  const RunConfig& cfg = st.config;
  const ToyDataset ds(cfg.dataset);
  const DenoiserParams& sampler = cfg.online ? st.policy : st.reference;
  const int P = cfg.pairs_per_iteration;
  const auto conds = draw_prompts(ds, P, rng);
  IterationBatch out;

  if (cfg.loss.is_noise_loss()) {
    std::vector<std::vector<double>> cc;
    for (const auto& c : conds) {
      cc.push_back(c);
      cc.push_back(c);
    }
    const auto xs = sample_final(st.schedule, sampler, cc, rng);
    for (int j = 0; j < P; ++j) {
      auto p = label_by_model(st.proxy_model, conds[j], xs[2 * j], xs[2 * j + 1], 0, rng, cfg.labeling);
      st.dataset.push_back(p);
    }
    // Offline minibatch drawn uniformly from everything labeled so far.
    for (int j = 0; j < P; ++j) {
      const int k = rng.uniform_int(0, static_cast<int>(st.dataset.size()) - 1);
      out.noise_pairs.push_back(st.dataset[static_cast<std::size_t>(k)]);
    }
    return out;
  }

  if (cfg.loss.pairing == Pairing::Trajectory) {
    std::vector<std::vector<double>> cc;
    for (const auto& c : conds) {
      cc.push_back(c);
      cc.push_back(c);
    }
    const auto chains = sample_trajectories(st.schedule, sampler, cc, rng);
    for (int j = 0; j < P; ++j) {
      const Trajectory& a = chains[2 * j];
      const Trajectory& b = chains[2 * j + 1];
      auto p = label_by_model(st.proxy_model, conds[j], a.x(0), b.x(0), 0, rng, cfg.labeling);
      const bool a_wins = p.x_w == a.x(0);
      st.dataset.push_back(std::move(p));
      const Trajectory& w = a_wins ? a : b;
      const Trajectory& l = a_wins ? b : a;
      for (int t = 1; t <= st.schedule.T; ++t) out.step_pairs.push_back({transition_of(w, t), transition_of(l, t)});
    }
    return out;
  }

  // Per-step pairing: branch two transitions from one shared state.
  const auto chains = sample_trajectories(st.schedule, sampler, conds, rng);
  for (int j = 0; j < P; ++j) {
    const int t = rng.uniform_int(1, st.schedule.T);
    const auto& x_t = chains[j].x(t);
    auto [xa, ra] = reverse_step(st.schedule, sampler, x_t, t, conds[j], rng);
    auto [xb, rb] = reverse_step(st.schedule, sampler, x_t, t, conds[j], rng);
    auto p = label_by_model(*st.step_model, conds[j], xa, xb, t - 1, rng, cfg.labeling);
    StepTransition w{conds[j], t, x_t, p.x_w};
    StepTransition l{conds[j], t, x_t, p.x_l};
    st.dataset.push_back(std::move(p));
    out.step_pairs.push_back({std::move(w), std::move(l)});
  }
  return out;
}

}  // namespace

void run_online_iteration(TrainerState& state) {
  const RunConfig& cfg = state.config;
  require(checksum(state.reference.net) == state.reference_checksum, "reference parameters were modified");
  Rng rng(cfg.seed, kIterationStreamBase + static_cast<std::uint64_t>(state.iteration));
  const IterationBatch batch = collect_pairs(state, rng);
  for (int u = 0; u < cfg.updates_per_iteration; ++u) {
    LossValue lv;
    if (cfg.loss.is_noise_loss()) {
      const auto draws = draw_noise_pairs(state.schedule, batch.noise_pairs.size(), state.policy.spec.data_dim, rng);
      const double g = cfg.loss.gamma;
      switch (cfg.loss.variant) {
        case LossVariant::SeeNoiseA:
          lv = see_noise_loss_A(state.schedule, batch.noise_pairs, state.policy, state.reference, draws,
                                cfg.loss.beta, g);
          break;
        case LossVariant::SeeNoiseB:
          lv = see_noise_loss_B(state.schedule, batch.noise_pairs, state.policy, state.reference, draws,
                                cfg.loss.beta, g);
          break;
        default:
          lv = diffusion_dpo_noise_loss(state.schedule, batch.noise_pairs, state.policy, state.reference, draws,
                                        cfg.loss.beta);
      }
    } else {
      lv = step_pair_loss(state.schedule, state.policy, state.reference, batch.step_pairs, cfg.loss.beta,
                          cfg.loss.gamma);
    }
    if (!std::isfinite(lv.value)) {
      throw NumericalAbort("non-finite loss at iteration " + std::to_string(state.iteration) + ", update " +
                           std::to_string(u));
    }
    optimizer_step(state.optimizer, state.policy.net.values, lv.grad.values);
  }
  if (!state.policy.net.all_finite()) {
    throw NumericalAbort("policy parameters became non-finite at iteration " + std::to_string(state.iteration));
  }
  ++state.iteration;
  if (state.iteration % cfg.eval_every == 0 || state.iteration == cfg.iterations) {
    state.log.append(evaluate(state, state.iteration));
  }
  require(checksum(state.reference.net) == state.reference_checksum, "reference parameters were modified");
}

void train(TrainerState& state, const RowCallback& on_row, int stop_at) {
  const int end = stop_at < 0 ? state.config.iterations : std::min(stop_at, state.config.iterations);
  while (state.iteration < end) {
    const TrainerState backup = state;
    const std::size_t rows = state.log.rows.size();
    try {
      run_online_iteration(state);
    } catch (const NumericalAbort&) {
      state = backup;
      throw;
    }
    if (on_row && state.log.rows.size() > rows) on_row(state);
  }
}

std::pair<double, double> ls_slope(std::span<const double> x, std::span<const double> y) {
  require(x.size() == y.size(), "ls_slope: size mismatch");
  const double n = static_cast<double>(x.size());
  if (x.size() < 3) return {0.0, 0.0};
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (sxx == 0.0) return {0.0, 0.0};
  const double slope = sxy / sxx;
  double sse = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = y[i] - my - slope * (x[i] - mx);
    sse += r * r;
  }
  const double se = std::sqrt(sse / (n - 2) / sxx);
  if (se == 0.0) return {slope, slope == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), slope)};
  return {slope, slope / se};
}

HackingReport detect_reward_hacking(const RunLog& log, const DetectorSettings& settings) {
  const int w = settings.window;
  require(w >= 3, "detect_reward_hacking: window must be at least 3");
  const int n = static_cast<int>(log.rows.size());
  if (n < 2 * w) {
    throw ContractViolation("detect_reward_hacking: log has " + std::to_string(n) + " rows, needs at least " +
                            std::to_string(2 * w));
  }
  std::vector<double> xs(static_cast<std::size_t>(w)), proxy(xs.size()), truth(xs.size()), div(xs.size());
  auto up = [&](std::pair<double, double> s) { return s.first > 0.0 && s.second >= settings.min_t; };
  auto down = [&](std::pair<double, double> s) { return s.first < 0.0 && -s.second >= settings.min_t; };
  for (int s = 0; s + w <= n; ++s) {
    for (int i = 0; i < w; ++i) {
      const auto& r = log.rows[static_cast<std::size_t>(s + i)];
      xs[i] = r.step;
      proxy[i] = r.proxy_reward;
      truth[i] = r.true_reward;
      div[i] = r.diversity;
    }
    if (up(ls_slope(xs, proxy)) && (down(ls_slope(xs, truth)) || down(ls_slope(xs, div)))) {
      return HackingReport{true, s, log.rows[static_cast<std::size_t>(s)].step};
    }
  }
  return {};
}

double composite_score(const RunLogRow& row) { return row.true_reward + row.diversity; }

// Bandit toy ------------------------------------------------------------------------

int high_reward_action(const BanditToyConfig& config) {
  if (config.rewards.size() != config.p_ref.size() || config.rewards.empty()) {
    throw ConfigError("toy.rewards must have one entry per action of toy.p_ref");
  }
  const auto it = std::max_element(config.rewards.begin(), config.rewards.end());
  if (std::count(config.rewards.begin(), config.rewards.end(), *it) != 1) {
    throw ConfigError("toy.rewards must have exactly one highest-reward action");
  }
  return static_cast<int>(it - config.rewards.begin());
}

std::vector<BanditCurve> run_bandit_toy(const BanditToyConfig& config) {
  const int hi = high_reward_action(config);
  const DiscretePolicy ref = normalized(config.p_ref);
  for (double p : ref.probs) {
    if (!(p > 0.0)) throw ConfigError("toy.p_ref must be strictly positive");
  }
  if (config.steps < 0 || config.pairs_per_step < 1 || !(config.beta > 0.0)) {
    throw ConfigError("toy.steps must be >= 0, toy.pairs_per_step >= 1 and toy.beta > 0");
  }
  const int n = static_cast<int>(ref.size());
  std::vector<BanditCurve> curves;
  for (std::size_t gi = 0; gi < config.gammas.size(); ++gi) {
    const double gamma = config.gammas[gi];
    if (!(gamma > -1.0)) throw ConfigError("toy.gammas entries must exceed -1");
    // Every gamma sees the same stream so curves differ only through gamma.
    Rng rng(config.seed, 7);
    std::vector<double> logits(static_cast<std::size_t>(n));
    for (int a = 0; a < n; ++a) logits[a] = std::log(ref.probs[a]);
    BanditCurve curve{gamma, {}};
    auto sample = [&](const std::vector<double>& p) {
      double u = rng.uniform(), acc = 0.0;
      for (int a = 0; a < n; ++a) {
        acc += p[a];
        if (u < acc) return a;
      }
      return n - 1;
    };
    for (int step = 0; step <= config.steps; ++step) {
      const auto p = softmax(logits);
      // Step 0 reports the reference itself rather than its softmax round trip.
      curve.mass.push_back(step == 0 ? ref.probs[hi] : p[hi]);
      if (step == config.steps) break;
      std::vector<ActionPair> pairs;
      for (int k = 0; k < config.pairs_per_step; ++k) {
        const int a = sample(p);
        const int b = sample(p);
        const double u = rng.uniform();
        if (a == b) continue;
        const bool a_wins = u < bt_probability(config.rewards[a], config.rewards[b]);
        pairs.emplace_back(a_wins ? a : b, a_wins ? b : a);
      }
      if (pairs.empty()) continue;
      VectorLoss lv = bandit_step_loss(logits, ref, pairs, config.beta, gamma);
      // Step size is expressed per unit beta; the norm clip keeps large-gamma steps bounded.
      double norm = 0.0;
      for (double& g : lv.grad) {
        g = g * static_cast<double>(pairs.size()) / config.pairs_per_step / config.beta;
        norm += g * g;
      }
      norm = std::sqrt(norm);
      const double scale = (config.clip > 0.0 && norm > config.clip) ? config.clip / norm : 1.0;
      for (int a = 0; a < n; ++a) logits[a] -= config.learning_rate * scale * lv.grad[a];
    }
    curves.push_back(std::move(curve));
  }
  return curves;
}

int time_to_mass(const BanditCurve& curve, double threshold) {
  for (std::size_t i = 0; i < curve.mass.size(); ++i) {
    if (curve.mass[i] >= threshold) return static_cast<int>(i);
  }
  return static_cast<int>(curve.mass.size());
}

// Sweep -----------------------------------------------------------------------------

LossVariant sweep_variant(LossVariant base, double gamma) {
  if (gamma == 0.0) return base;
  switch (base) {
    case LossVariant::D3poStep:
    case LossVariant::SpoStep: return LossVariant::SeeStep;
    case LossVariant::DiffusionDpoNoise: return LossVariant::SeeNoiseA;
    default: return base;
  }
}

SweepResult sweep(const RunConfig& base, const DenoiserParams& reference, const std::vector<double>& gammas,
                  const std::vector<double>& betas, int jobs,
                  const std::function<void(std::size_t, const SweepCell&, const TrainerState*)>& on_cell) {
  if (gammas.empty() || betas.empty()) throw ConfigError("sweep.gammas and sweep.betas must be non-empty");
  SweepResult result;
  for (double g : gammas) {
    for (double b : betas) result.cells.push_back(SweepCell{g, b, false, {}, {}, {}});
  }
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= result.cells.size()) return;
      SweepCell& cell = result.cells[i];
      std::optional<TrainerState> state;
      try {
        RunConfig cfg = base;
        cfg.loss.gamma = cell.gamma;
        cfg.loss.beta = cell.beta;
        cfg.loss.variant = sweep_variant(base.loss.variant, cell.gamma);
        state = init_trainer(cfg, reference);
        train(*state);
        cell.log = state->log;
        cell.ok = true;
        if (static_cast<int>(cell.log.rows.size()) >= 2 * DetectorSettings{}.window) {
          cell.hacking = detect_reward_hacking(cell.log);
        }
      } catch (const std::exception& e) {
        cell.ok = false;
        cell.error = e.what();
        if (state) cell.log = state->log;
      }
      if (on_cell) on_cell(i, cell, state ? &*state : nullptr);
    }
  };
  const int n = std::max(1, std::min<int>(jobs, static_cast<int>(result.cells.size())));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  return result;
}

}  // namespace seelab

#include "seelab/preference.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "seelab/denoiser.hpp"
#include "seelab/errors.hpp"
#include "seelab/reduce.hpp"

namespace seelab {

RewardKind parse_reward_kind(const std::string& name) {
  if (name == "mode-seeking") return RewardKind::ModeSeeking;
  if (name == "blob-sharpness") return RewardKind::BlobSharpness;
  if (name == "custom-table") return RewardKind::CustomTable;
  if (name == "mixture-density") return RewardKind::MixtureDensity;
  throw ConfigError("unknown reward kind '" + name + "'");
}

std::string to_string(RewardKind kind) {
  switch (kind) {
    case RewardKind::ModeSeeking: return "mode-seeking";
    case RewardKind::BlobSharpness: return "blob-sharpness";
    case RewardKind::CustomTable: return "custom-table";
    case RewardKind::MixtureDensity: return "mixture-density";
  }
  return "?";
}

double true_reward(const RewardSpec& spec, std::span<const double> /*c*/, std::span<const double> x0) {
  switch (spec.kind) {
    case RewardKind::ModeSeeking: {
      if (spec.parameters.size() != x0.size()) {
        throw ConfigError("mode-seeking reward target has dimension " +
                          std::to_string(spec.parameters.size()) + ", sample has " +
                          std::to_string(x0.size()));
      }
      double sq = 0.0;
      for (std::size_t i = 0; i < x0.size(); ++i) {
        const double d = x0[i] - spec.parameters[i];
        sq += d * d;
      }
      return -sq;
    }
    case RewardKind::BlobSharpness: {
      const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(x0.size()))));
      if (side * side != static_cast<int>(x0.size()) || side < 2) {
        throw ConfigError("blob-sharpness reward needs a square image");
      }
      const auto px = to_pixels(x0);
      double acc = 0.0;
      int n = 0;
      for (int r = 0; r < side; ++r) {
        for (int q = 0; q < side; ++q) {
          const double v = px[static_cast<std::size_t>(r * side + q)];
          if (q + 1 < side) {
            const double d = px[static_cast<std::size_t>(r * side + q + 1)] - v;
            acc += d * d;
            ++n;
          }
          if (r + 1 < side) {
            const double d = px[static_cast<std::size_t>((r + 1) * side + q)] - v;
            acc += d * d;
            ++n;
          }
        }
      }
      return acc / n;
    }
    case RewardKind::CustomTable: {
      require(!x0.empty(), "custom-table reward needs an index sample");
      const long idx = std::lround(x0[0]);
      if (idx < 0 || idx >= static_cast<long>(spec.parameters.size())) {
        throw ContractViolation("custom-table reward index out of range");
      }
      return spec.parameters[static_cast<std::size_t>(idx)];
    }
    case RewardKind::MixtureDensity: {
      const std::size_t d = x0.size();
      if (spec.parameters.size() < 1 + d || (spec.parameters.size() - 1) % d != 0) {
        throw ConfigError("mixture-density reward needs [stddev, centers...]");
      }
      const double s = spec.parameters[0];
      const std::size_t k = (spec.parameters.size() - 1) / d;
      std::vector<double> logs(k);
      for (std::size_t j = 0; j < k; ++j) {
        double sq = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
          const double diff = x0[i] - spec.parameters[1 + j * d + i];
          sq += diff * diff;
        }
        logs[j] = -sq / (2 * s * s);
      }
      const double mx = *std::max_element(logs.begin(), logs.end());
      double sum = 0.0;
      for (double l : logs) sum += std::exp(l - mx);
      return mx + std::log(sum / static_cast<double>(k)) -
             0.5 * static_cast<double>(d) * std::log(2 * std::numbers::pi * s * s);
    }
  }
  return 0.0;
}

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double softplus(double z) {
  return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

// The negative branch is the complement of the positive one. Both
// subtractions are exact for values in [0.5, 1], so swapping the pair gives
// exactly 1 - p.
double bt_probability(double r_w, double r_l) {
  const double d = r_w - r_l;
  return d >= 0 ? 1.0 / (1.0 + std::exp(-d)) : 1.0 - 1.0 / (1.0 + std::exp(d));
}

LabelMode parse_label_mode(const std::string& name) {
  if (name == "deterministic") return LabelMode::Deterministic;
  if (name == "stochastic") return LabelMode::Stochastic;
  throw ConfigError("unknown labeling mode '" + name + "'");
}

std::string to_string(LabelMode mode) {
  return mode == LabelMode::Deterministic ? "deterministic" : "stochastic";
}

PreferencePair label_pair(double reward_a, double reward_b, std::span<const double> c,
                          std::span<const double> x_a, std::span<const double> x_b, Rng& rng,
                          LabelMode mode) {
  require(x_a.size() == x_b.size(), "label_pair: samples differ in dimension");
  require(!std::equal(x_a.begin(), x_a.end(), x_b.begin()), "label_pair: samples are identical");
  bool a_wins = false;
  double confidence = 1.0;
  if (mode == LabelMode::Deterministic) {
    if (reward_a != reward_b) {
      a_wins = reward_a > reward_b;
    } else {
      a_wins = std::lexicographical_compare(x_a.begin(), x_a.end(), x_b.begin(), x_b.end());
    }
  } else {
    const double p = bt_probability(reward_a, reward_b);
    a_wins = rng.uniform() < p;
    confidence = std::max(p, 1.0 - p);
  }
  PreferencePair pair;
  pair.c.assign(c.begin(), c.end());
  const auto& w = a_wins ? x_a : x_b;
  const auto& l = a_wins ? x_b : x_a;
  pair.x_w.assign(w.begin(), w.end());
  pair.x_l.assign(l.begin(), l.end());
  pair.confidence = confidence;
  return pair;
}

PreferencePair sample_preference(const RewardSpec& spec, std::span<const double> c,
                                 std::span<const double> x_a, std::span<const double> x_b, Rng& rng,
                                 LabelMode mode) {
  return label_pair(true_reward(spec, c, x_a), true_reward(spec, c, x_b), c, x_a, x_b, rng, mode);
}

// Reward model -------------------------------------------------------------

int RewardModelParams::input_dim() const {
  return data_dim + (time_conditioned ? kTimeFeatures : 0) + cond_dim;
}

RewardModelParams init_reward_model(int data_dim, int cond_dim, bool time_conditioned, int timesteps,
                                    int width, int depth, Rng& rng) {
  if (time_conditioned && timesteps < 1) throw ConfigError("time-conditioned reward model needs T >= 1");
  RewardModelParams rm;
  rm.data_dim = data_dim;
  rm.cond_dim = cond_dim;
  rm.time_conditioned = time_conditioned;
  rm.timesteps = timesteps;
  rm.net = mlp_init(NetworkShape{rm.input_dim(), 1, width, depth}, rng, 1.0);
  return rm;
}

namespace {

Batch rm_inputs(const RewardModelParams& rm, std::span<const std::vector<double>> xs,
                std::span<const int> ts, std::span<const std::vector<double>> cs) {
  const int n = static_cast<int>(xs.size());
  Batch in(rm.input_dim(), n);
  double feats[kTimeFeatures];
  for (int j = 0; j < n; ++j) {
    if (static_cast<int>(xs[j].size()) != rm.data_dim || static_cast<int>(cs[j].size()) != rm.cond_dim) {
      throw ConfigError("reward model input dimension mismatch");
    }
    int row = 0;
    for (double v : xs[j]) in.at(row++, j) = v;
    if (rm.time_conditioned) {
      write_time_features(ts[j], rm.timesteps, feats);
      for (double f : feats) in.at(row++, j) = f;
    }
    for (double v : cs[j]) in.at(row++, j) = v;
  }
  return in;
}

}  // namespace

std::vector<double> reward_scores(const RewardModelParams& rm, std::span<const std::vector<double>> xs,
                                  std::span<const int> ts, std::span<const std::vector<double>> cs) {
  require(xs.size() == ts.size() && xs.size() == cs.size(), "reward_scores: ragged inputs");
  const Batch out = mlp_forward(rm.net, rm_inputs(rm, xs, ts, cs));
  return std::vector<double>(out.row(0), out.row(0) + out.cols);
}

double reward_score(const RewardModelParams& rm, std::span<const double> x, int t, std::span<const double> c) {
  std::vector<std::vector<double>> xs{std::vector<double>(x.begin(), x.end())};
  std::vector<std::vector<double>> cs{std::vector<double>(c.begin(), c.end())};
  const int ts[1] = {t};
  return reward_scores(rm, xs, ts, cs)[0];
}

double stepwise_score(const RewardModelParams& rm, std::span<const double> x_t, int t,
                      std::span<const double> c) {
  if (!rm.time_conditioned) {
    throw ContractViolation("stepwise_score: reward model was trained without timestep conditioning");
  }
  require(t >= 0 && t <= rm.timesteps, "stepwise_score: t out of range");
  return reward_score(rm, x_t, t, c);
}

RmLossValue bt_loss(const RewardModelParams& rm, std::span<const PreferencePair> batch) {
  require(!batch.empty(), "bt_loss: empty batch");
  const int n = static_cast<int>(batch.size());
  std::vector<std::vector<double>> xs;
  std::vector<std::vector<double>> cs;
  std::vector<int> ts;
  xs.reserve(2 * batch.size());
  for (const auto& p : batch) {
    xs.push_back(p.x_w);
    cs.push_back(p.c);
    ts.push_back(p.t);
  }
  for (const auto& p : batch) {
    xs.push_back(p.x_l);
    cs.push_back(p.c);
    ts.push_back(p.t);
  }
  MlpCache cache;
  const Batch scores = mlp_forward(rm.net, rm_inputs(rm, xs, ts, cs), &cache);
  Batch upstream(1, 2 * n);
  std::vector<double> terms(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j) {
    const double z = scores.at(0, j) - scores.at(0, n + j);
    terms[static_cast<std::size_t>(j)] = softplus(-z);
    const double dz = -sigmoid(-z) / n;
    upstream.at(0, j) = dz;
    upstream.at(0, n + j) = -dz;
  }
  RmLossValue out{order_free_mean(std::move(terms)), ParamBuffer::zeros(rm.net.shape)};
  mlp_backward(rm.net, cache, upstream, out.grad);
  return out;
}

double pairwise_accuracy(const RewardModelParams& rm, std::span<const PreferencePair> pairs) {
  if (pairs.empty()) return 0.0;
  int correct = 0;
  for (const auto& p : pairs) {
    if (reward_score(rm, p.x_w, p.t, p.c) > reward_score(rm, p.x_l, p.t, p.c)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(pairs.size());
}

FittedRewardModel train_reward_model(std::span<const PreferencePair> pairs, const RewardModelConfig& config) {
  if (pairs.size() < 100) {
    throw ContractViolation("train_reward_model: needs at least 100 pairs, got " + std::to_string(pairs.size()));
  }
  Rng rng(config.seed, 0x5eed);
  const auto& first = pairs.front();
  Rng init_rng = rng.fork();
  FittedRewardModel fit;
  fit.params = init_reward_model(static_cast<int>(first.x_w.size()), static_cast<int>(first.c.size()),
                                 config.time_conditioned, config.timesteps, config.width, config.depth,
                                 init_rng);
  // Deterministic shuffled split into train / held-out.
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i) - 1))]);
  }
  const auto n_hold = static_cast<std::size_t>(std::floor(config.holdout_fraction * pairs.size()));
  std::vector<PreferencePair> held, train;
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i < n_hold ? held : train).push_back(pairs[order[i]]);
  }
  OptimizerState opt = OptimizerState::for_size(fit.params.net.values.size(),
                                                AdamSettings{config.learning_rate, 0.9, 0.999, 1e-8});
  const std::size_t bs = static_cast<std::size_t>(std::max(1, config.batch_size));
  std::vector<PreferencePair> mb;
  double last_epoch = 0.0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = train.size(); i > 1; --i) {
      std::swap(train[i - 1], train[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i) - 1))]);
    }
    double sum = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < train.size(); start += bs) {
      mb.assign(train.begin() + static_cast<long>(start),
                train.begin() + static_cast<long>(std::min(train.size(), start + bs)));
      RmLossValue lv = bt_loss(fit.params, mb);
      if (!std::isfinite(lv.value)) {
        throw NumericalAbort("train_reward_model: loss diverged in epoch " + std::to_string(epoch));
      }
      sum += lv.value;
      ++batches;
      optimizer_step(opt, fit.params.net.values, lv.grad.values);
    }
    last_epoch = sum / std::max(batches, 1);
  }
  fit.report.final_train_loss = last_epoch;
  fit.report.train_pairs = static_cast<int>(train.size());
  fit.report.heldout_pairs = static_cast<int>(held.size());
  fit.report.heldout_accuracy = pairwise_accuracy(fit.params, held);
  return fit;
}

std::vector<PreferencePair> noisy_preference_pairs(const DiffusionSchedule& sched,
                                                   std::span<const PreferencePair> clean, int copies,
                                                   Rng& rng) {
  std::vector<PreferencePair> out;
  out.reserve(clean.size() * static_cast<std::size_t>(copies));
  for (const auto& p : clean) {
    for (int k = 0; k < copies; ++k) {
      PreferencePair q = p;
      q.t = rng.uniform_int(0, sched.T);
      const int d = static_cast<int>(p.x_w.size());
      q.x_w = forward_noise(sched, p.x_w, q.t, rng.gaussian(d));
      q.x_l = forward_noise(sched, p.x_l, q.t, rng.gaussian(d));
      out.push_back(std::move(q));
    }
  }
  return out;
}

}  // namespace seelab

#include "seelab/denoiser.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "seelab/errors.hpp"

namespace seelab {

void write_time_features(int t, int timesteps, std::span<double> out) {
  const double u = static_cast<double>(t) / timesteps;
  out[0] = u;
  for (int k = 0; k < 4; ++k) {
    const double w = std::numbers::pi * static_cast<double>(1 << k) * u;
    out[1 + 2 * k] = std::sin(w);
    out[2 + 2 * k] = std::cos(w);
  }
}

DenoiserParams init_denoiser(const DenoiserSpec& spec, Rng& rng) {
  if (spec.data_dim < 1 || spec.cond_dim < 0 || spec.timesteps < 1 || spec.width < 1 ||
      spec.depth < 1) {
    throw ConfigError("denoiser spec has a non-positive dimension");
  }
  return DenoiserParams{spec, mlp_init(spec.shape(), rng, 0.1)};
}

Batch denoiser_inputs(const DenoiserSpec& spec, const Batch& x, std::span<const int> t,
                      const Batch& c) {
  if (x.rows != spec.data_dim) {
    throw ConfigError("denoiser input has dimension " + std::to_string(x.rows) + ", expected " +
                      std::to_string(spec.data_dim));
  }
  if (c.rows != spec.cond_dim || (spec.cond_dim > 0 && c.cols != x.cols)) {
    throw ConfigError("denoiser condition has dimension " + std::to_string(c.rows) +
                      ", expected " + std::to_string(spec.cond_dim));
  }
  if (static_cast<int>(t.size()) != x.cols) throw ContractViolation("one timestep per column");
  Batch in(spec.input_dim(), x.cols);
  double feats[kTimeFeatures];
  for (int j = 0; j < x.cols; ++j) {
    require(t[j] >= 0 && t[j] <= spec.timesteps, "timestep out of range");
    for (int r = 0; r < spec.data_dim; ++r) in.at(r, j) = x.at(r, j);
    write_time_features(t[j], spec.timesteps, feats);
    for (int f = 0; f < kTimeFeatures; ++f) in.at(spec.data_dim + f, j) = feats[f];
    for (int r = 0; r < spec.cond_dim; ++r) in.at(spec.data_dim + kTimeFeatures + r, j) = c.at(r, j);
  }
  return in;
}

Batch denoiser_forward_batch(const DenoiserParams& params, const Batch& x, std::span<const int> t,
                             const Batch& c, MlpCache* cache) {
  return mlp_forward(params.net, denoiser_inputs(params.spec, x, t, c), cache);
}

namespace {

Batch single_column(std::span<const double> v) {
  Batch b(static_cast<int>(v.size()), 1);
  b.set_column(0, v);
  return b;
}

}  // namespace

std::vector<double> denoiser_forward(const DenoiserParams& params, std::span<const double> x,
                                     int t, std::span<const double> c) {
  const int ts[1] = {t};
  return denoiser_forward_batch(params, single_column(x), ts, single_column(c)).column(0);
}

Gradients denoiser_backward(const DenoiserParams& params, std::span<const double> x, int t,
                            std::span<const double> c, std::span<const double> upstream) {
  if (static_cast<int>(upstream.size()) != params.spec.data_dim) {
    throw ConfigError("denoiser_backward: upstream dimension mismatch");
  }
  const int ts[1] = {t};
  MlpCache cache;
  denoiser_forward_batch(params, single_column(x), ts, single_column(c), &cache);
  Gradients g = ParamBuffer::zeros(params.net.shape);
  mlp_backward(params.net, cache, single_column(upstream), g);
  return g;
}

}  // namespace seelab

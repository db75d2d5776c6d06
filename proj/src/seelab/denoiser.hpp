#pragma once

#include <span>
#include <vector>

#include "seelab/mlp.hpp"

namespace seelab {

/// Timestep embedding: t/T followed by (sin, cos) at 4 octave frequencies.
inline constexpr int kTimeFeatures = 9;

void write_time_features(int t, int timesteps, std::span<double> out);

/// Noise-prediction network eps_theta(x_t, t, c).
struct DenoiserSpec {
  int data_dim = 2;
  int cond_dim = 0;
  int timesteps = 50;
  int width = 64;
  int depth = 3;

  bool operator==(const DenoiserSpec&) const = default;
  int input_dim() const { return data_dim + kTimeFeatures + cond_dim; }
  NetworkShape shape() const { return {input_dim(), data_dim, width, depth}; }
};

struct DenoiserParams {
  DenoiserSpec spec;
  ParamBuffer net;

  bool operator==(const DenoiserParams&) const = default;
};

DenoiserParams init_denoiser(const DenoiserSpec& spec, Rng& rng);

/// Assembles the [x; time features; c] input batch.
Batch denoiser_inputs(const DenoiserSpec& spec, const Batch& x, std::span<const int> t,
                      const Batch& c);

Batch denoiser_forward_batch(const DenoiserParams& params, const Batch& x, std::span<const int> t,
                             const Batch& c, MlpCache* cache = nullptr);

std::vector<double> denoiser_forward(const DenoiserParams& params, std::span<const double> x,
                                     int t, std::span<const double> c);

/// Gradient of <upstream, denoiser_forward(x, t, c)> with respect to the weights.
Gradients denoiser_backward(const DenoiserParams& params, std::span<const double> x, int t,
                            std::span<const double> c, std::span<const double> upstream);

}  // namespace seelab

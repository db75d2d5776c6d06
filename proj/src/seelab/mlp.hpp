#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "seelab/rng.hpp"

namespace seelab {

/// Fully connected network: `depth` hidden SiLU layers of `width` units and
/// a linear output layer.
struct NetworkShape {
  int input_dim = 0;
  int output_dim = 0;
  int width = 64;
  int depth = 3;

  bool operator==(const NetworkShape&) const = default;
  int layer_count() const { return depth + 1; }
  int layer_in(int layer) const { return layer == 0 ? input_dim : width; }
  int layer_out(int layer) const { return layer == depth ? output_dim : width; }
};

std::size_t parameter_count(const NetworkShape& shape);

/// Flat parameter storage. Layer l holds its weight matrix (out x in,
/// row-major) followed by its bias vector.
struct ParamBuffer {
  NetworkShape shape;
  std::vector<double> values;

  static ParamBuffer zeros(const NetworkShape& shape);
  std::size_t weight_offset(int layer) const;
  std::size_t bias_offset(int layer) const;
  bool congruent(const ParamBuffer& other) const {
    return shape == other.shape && values.size() == other.values.size();
  }
  bool all_finite() const;
  bool operator==(const ParamBuffer&) const = default;
};

using Gradients = ParamBuffer;

/// FNV-1a over the raw parameter bytes; used to prove a buffer was not mutated.
std::uint64_t checksum(const ParamBuffer& params);

/// Feature-major activations: `rows` features by `cols` batch items, stored
/// row-major so that one feature is contiguous across the batch.
struct Batch {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Batch() = default;
  Batch(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0.0) {}

  double* row(int r) { return data.data() + static_cast<std::size_t>(r) * cols; }
  const double* row(int r) const { return data.data() + static_cast<std::size_t>(r) * cols; }
  double& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  double at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }

  std::vector<double> column(int c) const;
  void set_column(int c, std::span<const double> v, int row_offset = 0);
  static Batch from_columns(std::span<const std::vector<double>> columns, int rows);
};

struct MlpCache {
  std::vector<Batch> inputs;   // input to each layer
  std::vector<Batch> preacts;  // pre-activation of each hidden layer
};

ParamBuffer mlp_init(const NetworkShape& shape, Rng& rng, double output_scale = 1.0);

Batch mlp_forward(const ParamBuffer& params, const Batch& input, MlpCache* cache = nullptr);

/// Accumulates d<upstream, output>/d(params) into `grad`.
void mlp_backward(const ParamBuffer& params, const MlpCache& cache, const Batch& upstream,
                  ParamBuffer& grad);

double silu(double x);
double silu_derivative(double x);

}  // namespace seelab

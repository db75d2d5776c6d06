#include "seelab/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "seelab/errors.hpp"

namespace seelab {

std::size_t parameter_count(const NetworkShape& shape) {
  std::size_t n = 0;
  for (int l = 0; l < shape.layer_count(); ++l) {
    n += static_cast<std::size_t>(shape.layer_out(l)) * (shape.layer_in(l) + 1);
  }
  return n;
}

ParamBuffer ParamBuffer::zeros(const NetworkShape& shape) {
  return ParamBuffer{shape, std::vector<double>(parameter_count(shape), 0.0)};
}

std::size_t ParamBuffer::weight_offset(int layer) const {
  std::size_t off = 0;
  for (int l = 0; l < layer; ++l) {
    off += static_cast<std::size_t>(shape.layer_out(l)) * (shape.layer_in(l) + 1);
  }
  return off;
}

std::size_t ParamBuffer::bias_offset(int layer) const {
  return weight_offset(layer) +
         static_cast<std::size_t>(shape.layer_out(layer)) * shape.layer_in(layer);
}

bool ParamBuffer::all_finite() const {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

std::uint64_t checksum(const ParamBuffer& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  };
  const int dims[4] = {params.shape.input_dim, params.shape.output_dim, params.shape.width,
                       params.shape.depth};
  feed(dims, sizeof dims);
  feed(params.values.data(), params.values.size() * sizeof(double));
  return h;
}

std::vector<double> Batch::column(int c) const {
  std::vector<double> out(static_cast<std::size_t>(rows));
  for (int r = 0; r < rows; ++r) out[r] = at(r, c);
  return out;
}

void Batch::set_column(int c, std::span<const double> v, int row_offset) {
  for (std::size_t r = 0; r < v.size(); ++r) at(row_offset + static_cast<int>(r), c) = v[r];
}

Batch Batch::from_columns(std::span<const std::vector<double>> columns, int rows) {
  Batch b(rows, static_cast<int>(columns.size()));
  for (std::size_t c = 0; c < columns.size(); ++c) {
    require(static_cast<int>(columns[c].size()) == rows, "Batch::from_columns: ragged columns");
    b.set_column(static_cast<int>(c), columns[c]);
  }
  return b;
}

double silu(double x) { return x / (1.0 + std::exp(-x)); }

double silu_derivative(double x) {
  const double s = 1.0 / (1.0 + std::exp(-x));
  return s * (1.0 + x * (1.0 - s));
}

ParamBuffer mlp_init(const NetworkShape& shape, Rng& rng, double output_scale) {
  ParamBuffer p = ParamBuffer::zeros(shape);
  for (int l = 0; l < shape.layer_count(); ++l) {
    const int in = shape.layer_in(l);
    const int out = shape.layer_out(l);
    double scale = std::sqrt(1.0 / std::max(in, 1));
    if (l == shape.depth) scale *= output_scale;
    double* w = p.values.data() + p.weight_offset(l);
    for (int i = 0; i < out * in; ++i) w[i] = scale * rng.normal();
  }
  return p;
}

namespace {

// out[i, :] = b[i] + sum_k W[i, k] * in[k, :]
void affine(const double* w, const double* b, const Batch& in, Batch& out) {
  const int cols = in.cols;
  for (int i = 0; i < out.rows; ++i) {
    double* o = out.row(i);
    std::fill(o, o + cols, b[i]);
    const double* wi = w + static_cast<std::size_t>(i) * in.rows;
    for (int k = 0; k < in.rows; ++k) {
      const double wik = wi[k];
      const double* x = in.row(k);
      for (int j = 0; j < cols; ++j) o[j] += wik * x[j];
    }
  }
}

}  // namespace

Batch mlp_forward(const ParamBuffer& params, const Batch& input, MlpCache* cache) {
  const NetworkShape& s = params.shape;
  if (input.rows != s.input_dim) {
    throw ConfigError("mlp_forward: input has " + std::to_string(input.rows) +
                      " features, network expects " + std::to_string(s.input_dim));
  }
  if (cache) {
    cache->inputs.assign(static_cast<std::size_t>(s.layer_count()), Batch{});
    cache->preacts.assign(static_cast<std::size_t>(s.depth), Batch{});
  }
  Batch current = input;
  for (int l = 0; l < s.layer_count(); ++l) {
    Batch out(s.layer_out(l), input.cols);
    affine(params.values.data() + params.weight_offset(l),
           params.values.data() + params.bias_offset(l), current, out);
    if (cache) cache->inputs[l] = std::move(current);
    if (l < s.depth) {
      if (cache) cache->preacts[l] = out;
      for (double& v : out.data) v = silu(v);
    }
    current = std::move(out);
  }
  return current;
}

void mlp_backward(const ParamBuffer& params, const MlpCache& cache, const Batch& upstream,
                  ParamBuffer& grad) {
  const NetworkShape& s = params.shape;
  if (!grad.congruent(params)) throw ContractViolation("mlp_backward: gradient shape mismatch");
  if (upstream.rows != s.output_dim) {
    throw ConfigError("mlp_backward: upstream has " + std::to_string(upstream.rows) +
                      " rows, network output is " + std::to_string(s.output_dim));
  }
  Batch delta = upstream;
  for (int l = s.depth; l >= 0; --l) {
    const Batch& in = cache.inputs[l];
    const int n_in = in.rows;
    const int n_out = delta.rows;
    const int cols = delta.cols;
    const double* w = params.values.data() + params.weight_offset(l);
    double* gw = grad.values.data() + grad.weight_offset(l);
    double* gb = grad.values.data() + grad.bias_offset(l);
    for (int i = 0; i < n_out; ++i) {
      const double* d = delta.row(i);
      double bsum = 0.0;
      for (int j = 0; j < cols; ++j) bsum += d[j];
      gb[i] += bsum;
      double* gwi = gw + static_cast<std::size_t>(i) * n_in;
      for (int k = 0; k < n_in; ++k) {
        const double* x = in.row(k);
        double acc = 0.0;
        for (int j = 0; j < cols; ++j) acc += d[j] * x[j];
        gwi[k] += acc;
      }
    }
    if (l == 0) break;
    Batch prev(n_in, cols);
    for (int i = 0; i < n_out; ++i) {
      const double* d = delta.row(i);
      const double* wi = w + static_cast<std::size_t>(i) * n_in;
      for (int k = 0; k < n_in; ++k) {
        const double wik = wi[k];
        double* p = prev.row(k);
        for (int j = 0; j < cols; ++j) p[j] += wik * d[j];
      }
    }
    const Batch& pre = cache.preacts[l - 1];
    for (std::size_t idx = 0; idx < prev.data.size(); ++idx) {
      prev.data[idx] *= silu_derivative(pre.data[idx]);
    }
    delta = std::move(prev);
  }
}

}  // namespace seelab

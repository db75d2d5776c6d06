#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace seelab {

struct AdamSettings {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  bool operator==(const AdamSettings&) const = default;
};

struct OptimizerState {
  AdamSettings settings;
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  long step = 0;

  static OptimizerState for_size(std::size_t n, const AdamSettings& settings);
  bool operator==(const OptimizerState&) const = default;
};

/// Bias-corrected Adam update in place. Throws NumericalAbort on a
/// non-finite gradient entry before touching any parameter.
void optimizer_step(OptimizerState& state, std::span<double> params, std::span<const double> grads);

struct GradCheckOptions {
  /// Central differences at step and step/2, combined by Richardson
  /// extrapolation. The larger step keeps cancellation noise in losses built
  /// from large log-probabilities from swamping small gradient entries.
  double step = 1e-4;
  /// Denominator floor for the relative error |a - n| / max(|a|, |n|, floor),
  /// raised to relative_floor * max_i |a_i| for large gradients.
  double floor = 1e-5;
  double relative_floor = 1e-6;
  /// Optional subset of coordinates to probe; empty means every coordinate.
  std::vector<std::size_t> indices;
};

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
  std::size_t checked = 0;
  bool finite = true;
  bool passed = false;
  std::string diagnostic;
};

/// Returns the loss and writes its analytic gradient into the second argument
/// when that pointer is non-null.
using LossWithGradient = std::function<double(std::span<const double>, std::vector<double>*)>;

GradCheckReport grad_check(const LossWithGradient& loss, std::span<const double> params,
                           double tolerance, const GradCheckOptions& options = {});

/// Same comparison against a caller-supplied analytic gradient.
GradCheckReport grad_check_against(const std::function<double(std::span<const double>)>& loss,
                                   std::span<const double> params,
                                   std::span<const double> analytic, double tolerance,
                                   const GradCheckOptions& options = {});

}  // namespace seelab

#include "seelab/optim.hpp"

#include <algorithm>
#include <cmath>

#include "seelab/errors.hpp"

namespace seelab {

OptimizerState OptimizerState::for_size(std::size_t n, const AdamSettings& settings) {
  OptimizerState s;
  s.settings = settings;
  s.first_moment.assign(n, 0.0);
  s.second_moment.assign(n, 0.0);
  return s;
}

void optimizer_step(OptimizerState& state, std::span<double> params, std::span<const double> grads) {
  require(params.size() == grads.size() && params.size() == state.first_moment.size() &&
              params.size() == state.second_moment.size(),
          "optimizer_step: shapes are not congruent");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(grads[i])) {
      throw NumericalAbort("optimizer_step: non-finite gradient at entry " + std::to_string(i));
    }
  }
  const AdamSettings& a = state.settings;
  ++state.step;
  const double c1 = 1.0 - std::pow(a.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(a.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    double& m = state.first_moment[i];
    double& v = state.second_moment[i];
    m = a.beta1 * m + (1.0 - a.beta1) * grads[i];
    v = a.beta2 * v + (1.0 - a.beta2) * grads[i] * grads[i];
    params[i] -= a.learning_rate * (m / c1) / (std::sqrt(v / c2) + a.epsilon);
  }
}

GradCheckReport grad_check_against(const std::function<double(std::span<const double>)>& loss,
                                   std::span<const double> params,
                                   std::span<const double> analytic, double tolerance,
                                   const GradCheckOptions& options) {
  GradCheckReport report;
  require(analytic.size() == params.size(), "grad_check: gradient size mismatch");
  const double base = loss(params);
  if (!std::isfinite(base)) {
    report.finite = false;
    report.diagnostic = "loss is not finite at the supplied parameters";
    return report;
  }
  std::vector<double> probe(params.begin(), params.end());
  double scale = 0.0;
  for (double a : analytic) scale = std::max(scale, std::abs(a));
  const double floor = std::max(options.floor, options.relative_floor * scale);
  auto check_one = [&](std::size_t i) {
    const double saved = probe[i];
    auto central = [&](double h) {
      probe[i] = saved + h;
      const double up = loss(probe);
      probe[i] = saved - h;
      const double down = loss(probe);
      probe[i] = saved;
      return (up - down) / (2.0 * h);
    };
    const double numeric = (4.0 * central(0.5 * options.step) - central(options.step)) / 3.0;
    ++report.checked;
    if (!std::isfinite(numeric)) {
      report.finite = false;
      report.diagnostic = "non-finite loss while probing coordinate " + std::to_string(i);
      return;
    }
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), floor});
    const double rel = std::abs(analytic[i] - numeric) / denom;
    if (report.checked == 1 || rel > report.max_relative_error) {
      report.max_relative_error = rel;
      report.worst_index = i;
      report.analytic_at_worst = analytic[i];
      report.numeric_at_worst = numeric;
    }
  };
  if (options.indices.empty()) {
    for (std::size_t i = 0; i < params.size(); ++i) check_one(i);
  } else {
    for (std::size_t i : options.indices) {
      require(i < params.size(), "grad_check: probe index out of range");
      check_one(i);
    }
  }
  report.passed = report.finite && report.max_relative_error < tolerance;
  if (report.finite && !report.passed) {
    report.diagnostic = "max relative error " + std::to_string(report.max_relative_error) +
                        " at coordinate " + std::to_string(report.worst_index) + " (analytic " +
                        std::to_string(report.analytic_at_worst) + ", numeric " +
                        std::to_string(report.numeric_at_worst) + ", loss " + std::to_string(base) + ")";
  }
  return report;
}

GradCheckReport grad_check(const LossWithGradient& loss, std::span<const double> params,
                           double tolerance, const GradCheckOptions& options) {
  std::vector<double> analytic;
  const double base = loss(params, &analytic);
  if (!std::isfinite(base)) {
    GradCheckReport report;
    report.finite = false;
    report.diagnostic = "loss is not finite at the supplied parameters";
    return report;
  }
  return grad_check_against([&](std::span<const double> p) { return loss(p, nullptr); }, params,
                            analytic, tolerance, options);
}

}  // namespace seelab

#include <doctest.h>

#include <cmath>

#include "seelab/denoiser.hpp"
#include "seelab/errors.hpp"
#include "seelab/fixtures.hpp"
#include "seelab/mlp.hpp"
#include "seelab/optim.hpp"
#include "seelab/rng.hpp"

using namespace seelab;

TEST_CASE("gaussian_sample is reproducible and distinct across calls") {
  Rng a(0), b(0);
  const auto a1 = gaussian_sample(a, 2), a2 = gaussian_sample(a, 2);
  CHECK(a1 != a2);
  CHECK(gaussian_sample(b, 2) == a1);
  CHECK(gaussian_sample(b, 2) == a2);
  CHECK_THROWS_AS(gaussian_sample(a, 0), ContractViolation);
}

TEST_CASE("gaussian_sample moments over 1e5 draws") {
  Rng rng(0, 3);
  constexpr int n = 100000;
  double m[2] = {0, 0}, s[2] = {0, 0};
  std::vector<std::vector<double>> xs;
  for (int i = 0; i < n; ++i) xs.push_back(gaussian_sample(rng, 2));
  for (const auto& x : xs)
    for (int d = 0; d < 2; ++d) m[d] += x[d] / n;
  for (const auto& x : xs)
    for (int d = 0; d < 2; ++d) s[d] += (x[d] - m[d]) * (x[d] - m[d]) / (n - 1);
  for (int d = 0; d < 2; ++d) {
    CHECK(std::abs(m[d]) < 0.02);
    CHECK(std::abs(s[d] - 1.0) < 0.03);
  }
}

TEST_CASE("forked streams are independent of later parent draws") {
  Rng parent(5);
  Rng child = parent.fork();
  Rng copy = child;
  (void)parent.normal();
  CHECK(child.normal() == copy.normal());
  Rng r(9, 2);
  (void)r.normal();
  CHECK(Rng::restore(9, 2, r.counter()) == r);
}

TEST_CASE("zero weights give the output bias") {
  DenoiserSpec spec{2, 1, 10, 8, 2};
  Rng rng(1);
  DenoiserParams p = init_denoiser(spec, rng);
  std::fill(p.net.values.begin(), p.net.values.end(), 0.0);
  const int last = spec.depth;
  p.net.values[p.net.bias_offset(last)] = 0.25;
  p.net.values[p.net.bias_offset(last) + 1] = -1.5;
  for (int t : {0, 3, 10}) {
    const auto out = denoiser_forward(p, std::vector<double>{0.3, -2.0}, t, std::vector<double>{7.0});
    CHECK(out == std::vector<double>{0.25, -1.5});
  }
}

namespace {

// Straight-line evaluation of the same network, written without Batch.
std::vector<double> reference_forward(const DenoiserParams& p, std::span<const double> x, int t,
                                      std::span<const double> c) {
  std::vector<double> h(x.begin(), x.end());
  std::vector<double> tf(kTimeFeatures);
  const double s = static_cast<double>(t) / p.spec.timesteps;
  tf[0] = s;
  for (int k = 0; k < 4; ++k) {
    const double w = std::pow(2.0, k) * 3.141592653589793 * s;
    tf[1 + 2 * k] = std::sin(w);
    tf[2 + 2 * k] = std::cos(w);
  }
  h.insert(h.end(), tf.begin(), tf.end());
  h.insert(h.end(), c.begin(), c.end());
  const auto shape = p.spec.shape();
  for (int l = 0; l < shape.layer_count(); ++l) {
    const int in = shape.layer_in(l), out = shape.layer_out(l);
    std::vector<double> next(static_cast<std::size_t>(out));
    for (int o = 0; o < out; ++o) {
      double acc = p.net.values[p.net.bias_offset(l) + o];
      for (int i = 0; i < in; ++i) acc += p.net.values[p.net.weight_offset(l) + static_cast<std::size_t>(o) * in + i] * h[i];
      next[o] = l == shape.depth ? acc : acc / (1.0 + std::exp(-acc));
    }
    h = std::move(next);
  }
  return h;
}

}  // namespace

TEST_CASE("denoiser_forward matches a straight-line re-implementation and is pure") {
  Rng rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    DenoiserSpec spec{2 + trial % 3, trial % 2, 20, 6 + trial, 1 + trial % 3};
    const auto p = fixtures::random_denoiser(spec, rng, 0.1);
    const auto x = fixtures::random_vector(spec.data_dim, rng);
    const auto c = fixtures::random_vector(spec.cond_dim, rng);
    const int t = rng.uniform_int(0, 20);
    const auto out = denoiser_forward(p, x, t, c);
    const auto ref = reference_forward(p, x, t, c);
    REQUIRE(out.size() == ref.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
      CHECK(std::isfinite(out[i]));
      CHECK(out[i] == doctest::Approx(ref[i]).epsilon(1e-12));
    }
    CHECK(denoiser_forward(p, x, t, c) == out);
  }
}

TEST_CASE("denoiser dimension mismatch is a configuration error") {
  Rng rng(3);
  const auto p = init_denoiser(DenoiserSpec{2, 0, 10, 8, 1}, rng);
  CHECK_THROWS_AS(denoiser_forward(p, std::vector<double>{1, 2, 3}, 1, {}), ConfigError);
  CHECK_THROWS_AS(denoiser_backward(p, std::vector<double>{1, 2}, 1, {}, std::vector<double>{1}), ConfigError);
}

TEST_CASE("denoiser_backward: linearity in upstream and finite differences") {
  Rng rng(4);
  DenoiserSpec spec{2, 1, 10, 8, 2};
  const auto p = fixtures::random_denoiser(spec, rng, 0.05);
  const std::vector<double> x{0.4, -0.7}, c{0.2}, up{0.3, -1.1}, up2{0.6, -2.2};
  const auto zero = denoiser_backward(p, x, 4, c, std::vector<double>{0.0, 0.0});
  for (double v : zero.values) CHECK(v == 0.0);
  const auto g1 = denoiser_backward(p, x, 4, c, up);
  const auto g2 = denoiser_backward(p, x, 4, c, up2);
  for (std::size_t i = 0; i < g1.values.size(); ++i) CHECK(g2.values[i] == 2.0 * g1.values[i]);
  auto f = [&](std::span<const double> v) {
    DenoiserParams q = p;
    q.net.values.assign(v.begin(), v.end());
    const auto out = denoiser_forward(q, x, 4, c);
    return up[0] * out[0] + up[1] * out[1];
  };
  const auto rep = grad_check_against(f, p.net.values, g1.values, 1e-4);
  CHECK_MESSAGE(rep.passed, rep.diagnostic);
}

TEST_CASE("grad_check: quadratic, negative control and non-finite loss") {
  const std::vector<double> p{0.5, -1.25, 2.0, 3.5};
  LossWithGradient quad = [](std::span<const double> v, std::vector<double>* g) {
    double s = 0.0;
    for (double x : v) s += x * x;
    if (g) {
      g->clear();
      for (double x : v) g->push_back(2 * x);
    }
    return s;
  };
  const auto ok = grad_check(quad, p, 1e-4);
  CHECK(ok.passed);
  CHECK(ok.max_relative_error < 1e-8);
  LossWithGradient corrupted = [&](std::span<const double> v, std::vector<double>* g) {
    const double s = quad(v, g);
    if (g) (*g)[2] *= 2.0;
    return s;
  };
  const auto bad = grad_check(corrupted, p, 1e-4);
  CHECK_FALSE(bad.passed);
  CHECK(bad.worst_index == 2);
  LossWithGradient nan = [](std::span<const double>, std::vector<double>* g) {
    if (g) g->assign(4, 0.0);
    return std::nan("");
  };
  const auto r = grad_check(nan, p, 1e-4);
  CHECK_FALSE(r.passed);
  CHECK_FALSE(r.finite);
  CHECK_FALSE(r.diagnostic.empty());
}

TEST_CASE("optimizer_step: zero gradient, descent and hand-computed first step") {
  AdamSettings s{0.1, 0.9, 0.999, 1e-8};
  {
    auto st = OptimizerState::for_size(3, s);
    std::vector<double> p{1, 2, 3};
    optimizer_step(st, p, std::vector<double>{0, 0, 0});
    CHECK(p == std::vector<double>{1, 2, 3});
    CHECK(st.step == 1);
  }
  {
    auto st = OptimizerState::for_size(1, s);
    std::vector<double> p{0.0};
    for (int i = 0; i < 50; ++i) optimizer_step(st, p, std::vector<double>{0.7});
    CHECK(p[0] < 0.0);
  }
  {
    // Step 1: m = 0.1 g, v = 0.001 g^2, bias-corrected m/v = g, g^2.
    auto st = OptimizerState::for_size(2, s);
    std::vector<double> p{1.0, -1.0};
    const std::vector<double> g{0.5, -2.0};
    optimizer_step(st, p, g);
    for (int i = 0; i < 2; ++i) {
      const double m = (1 - 0.9) * g[i], v = (1 - 0.999) * g[i] * g[i];
      const double mh = m / (1 - 0.9), vh = v / (1 - 0.999);
      const double expect = (i == 0 ? 1.0 : -1.0) - 0.1 * mh / (std::sqrt(vh) + 1e-8);
      CHECK(p[i] == doctest::Approx(expect).epsilon(1e-14));
    }
  }
  {
    auto st = OptimizerState::for_size(2, s);
    std::vector<double> p{1.0, 2.0};
    CHECK_THROWS_AS(optimizer_step(st, p, std::vector<double>{0.1, std::nan("")}), NumericalAbort);
    CHECK(p == std::vector<double>{1.0, 2.0});
  }
}

TEST_CASE("checksum detects a single-bit change") {
  Rng rng(6);
  const auto p = mlp_init(NetworkShape{3, 2, 4, 1}, rng);
  auto q = p;
  CHECK(checksum(p) == checksum(q));
  q.values[1] = std::nextafter(q.values[1], 1e9);
  CHECK(checksum(p) != checksum(q));
}

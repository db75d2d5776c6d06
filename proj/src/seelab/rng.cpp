#include "seelab/rng.hpp"

#include <cmath>
#include <numbers>

#include "seelab/errors.hpp"

namespace seelab {
namespace {

std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

std::uint64_t Rng::next_u64() {
  const std::uint64_t key = mix64(seed_ ^ mix64(stream_ * 0xd1b54a32d192ed03ULL + 0x2545f4914f6cdd1dULL));
  return mix64(key + mix64(counter_++));
}

double Rng::uniform() {
  return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
}

double Rng::normal() {
  const double u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::vector<double> Rng::gaussian(int dim) {
  std::vector<double> out(static_cast<std::size_t>(dim));
  for (auto& v : out) v = normal();
  return out;
}

int Rng::uniform_int(int lo, int hi) {
  require(hi >= lo, "uniform_int: empty range");
  const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
  return lo + static_cast<int>(next_u64() % span);
}

Rng Rng::fork() {
  const std::uint64_t child_stream = next_u64();
  return Rng(seed_, child_stream);
}

Rng Rng::restore(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter) {
  Rng r(seed, stream);
  r.counter_ = counter;
  return r;
}

std::vector<double> gaussian_sample(Rng& rng, int dim) {
  require(dim >= 1, "gaussian_sample: dim must be >= 1");
  return rng.gaussian(dim);
}

}  // namespace seelab

#pragma once

#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "seelab/rng.hpp"

namespace seelab {

/// Row-major grayscale image with pixels in [0, 1].
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<double> pixels;

  GrayImage() = default;
  GrayImage(int w, int h, double fill = 0.0);
  GrayImage(int w, int h, std::vector<double> px);

  double at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
  double& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
  /// Throws ContractViolation if dimensions or pixel range are off.
  void validate() const;
  bool operator==(const GrayImage&) const = default;
};

/// Clamps to [0, 1] and builds a square image from a flat pixel vector.
GrayImage square_image(std::span<const double> pixels);

inline constexpr double kPsnrIdentical = std::numeric_limits<double>::infinity();
inline constexpr int kSsimWindow = 8;

double rmse(const GrayImage& a, const GrayImage& b);
/// 20 log10(peak / rmse); identical images give kPsnrIdentical (+inf).
double psnr(const GrayImage& a, const GrayImage& b, double peak = 1.0);
/// Mean SSIM over all 8x8 windows at stride 1.
double ssim(const GrayImage& a, const GrayImage& b, double peak = 1.0);
/// Histogram bin of a pixel: round(p * (bins - 1)) after clamping to [0, 1].
int quantize(double pixel, int bins);
double entropy_1d(const GrayImage& a, int bins = 256);
/// Joint entropy of (pixel, mean of in-bounds 4-neighbours), both quantized.
double entropy_2d(const GrayImage& a, int bins = 256);

struct DiversityReport {
  double rmse = 0.0;
  double psnr = 0.0;
  double ssim = 0.0;
  double e1 = 0.0;
  double e2 = 0.0;
  int samples = 0;
};

/// Generates one image for a prompt from the given stream.
using ImageSampler = std::function<GrayImage(std::span<const double> prompt, Rng& rng)>;

/// Per prompt: one base image and ten further samples. Pairwise metrics are
/// base-vs-each averages; e1/e2 are averaged over the ten.
std::vector<DiversityReport> diversity_protocol(const ImageSampler& sampler,
                                                std::span<const std::vector<double>> prompts, Rng& rng,
                                                int samples_per_prompt = 10);

/// Fraction of samples nearest to each center, ties to the lowest index.
std::vector<double> mode_coverage(std::span<const std::vector<double>> samples,
                                  std::span<const std::vector<double>> centers);

/// Number of centers holding at least `threshold` of the samples.
int modes_covered(std::span<const double> coverage, double threshold);

/// Shannon entropy of a coverage vector in bits.
double coverage_entropy_bits(std::span<const double> coverage);

/// Portable graymap. binary = P5, otherwise P2. maxval 255.
std::string to_pgm(const GrayImage& img, bool binary);
GrayImage from_pgm(const std::string& data);

}  // namespace seelab

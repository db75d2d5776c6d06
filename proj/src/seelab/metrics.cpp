#include "seelab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "seelab/errors.hpp"

namespace seelab {

GrayImage::GrayImage(int w, int h, double fill)
    : width(w), height(h), pixels(static_cast<std::size_t>(std::max(w, 0)) * std::max(h, 0), fill) {}

GrayImage::GrayImage(int w, int h, std::vector<double> px) : width(w), height(h), pixels(std::move(px)) {
  validate();
}

void GrayImage::validate() const {
  require(width > 0 && height > 0, "GrayImage: dimensions must be positive");
  require(pixels.size() == static_cast<std::size_t>(width) * height, "GrayImage: pixel count mismatch");
  for (double p : pixels) require(p >= 0.0 && p <= 1.0, "GrayImage: pixel outside [0, 1]");
}

GrayImage square_image(std::span<const double> pixels) {
  const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(pixels.size()))));
  require(side > 0 && static_cast<std::size_t>(side) * side == pixels.size(), "square_image: not a square");
  std::vector<double> px(pixels.begin(), pixels.end());
  for (double& p : px) p = std::clamp(p, 0.0, 1.0);
  return GrayImage(side, side, std::move(px));
}

namespace {

void require_same(const GrayImage& a, const GrayImage& b) {
  if (a.width != b.width || a.height != b.height || a.pixels.size() != b.pixels.size()) {
    throw ContractViolation("image dimensions differ: " + std::to_string(a.width) + "x" +
                            std::to_string(a.height) + " vs " + std::to_string(b.width) + "x" +
                            std::to_string(b.height));
  }
}

double entropy_bits(const std::map<long, long>& counts, long total) {
  double h = 0.0;
  for (const auto& [cell, c] : counts) {
    const double p = static_cast<double>(c) / static_cast<double>(total);
    h -= p * std::log2(p);
  }
  return h;
}

}  // namespace

double rmse(const GrayImage& a, const GrayImage& b) {
  require_same(a, b);
  double s = 0.0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    const double d = a.pixels[i] - b.pixels[i];
    s += d * d;
  }
  return std::sqrt(s / static_cast<double>(a.pixels.size()));
}

double psnr(const GrayImage& a, const GrayImage& b, double peak) {
  const double e = rmse(a, b);
  if (e == 0.0) return kPsnrIdentical;
  return 20.0 * std::log10(peak / e);
}

double ssim(const GrayImage& a, const GrayImage& b, double peak) {
  require_same(a, b);
  if (a.width < kSsimWindow || a.height < kSsimWindow) {
    throw ContractViolation("ssim: image smaller than the 8x8 window");
  }
  const double c1 = (0.01 * peak) * (0.01 * peak);
  const double c2 = (0.03 * peak) * (0.03 * peak);
  const double n = kSsimWindow * kSsimWindow;
  double total = 0.0;
  int windows = 0;
  for (int y0 = 0; y0 + kSsimWindow <= a.height; ++y0) {
    for (int x0 = 0; x0 + kSsimWindow <= a.width; ++x0) {
      double ma = 0.0, mb = 0.0;
      for (int y = y0; y < y0 + kSsimWindow; ++y) {
        for (int x = x0; x < x0 + kSsimWindow; ++x) {
          ma += a.at(x, y);
          mb += b.at(x, y);
        }
      }
      ma /= n;
      mb /= n;
      double va = 0.0, vb = 0.0, cov = 0.0;
      for (int y = y0; y < y0 + kSsimWindow; ++y) {
        for (int x = x0; x < x0 + kSsimWindow; ++x) {
          const double da = a.at(x, y) - ma;
          const double db = b.at(x, y) - mb;
          va += da * da;
          vb += db * db;
          cov += da * db;
        }
      }
      va /= n;
      vb /= n;
      cov /= n;
      total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++windows;
    }
  }
  return total / windows;
}

int quantize(double pixel, int bins) {
  return static_cast<int>(std::lround(std::clamp(pixel, 0.0, 1.0) * (bins - 1)));
}

double entropy_1d(const GrayImage& a, int bins) {
  require(bins >= 2, "entropy_1d: bins must be at least 2");
  require(!a.pixels.empty(), "entropy_1d: empty image");
  std::map<long, long> counts;
  for (double p : a.pixels) ++counts[quantize(p, bins)];
  return entropy_bits(counts, static_cast<long>(a.pixels.size()));
}

double entropy_2d(const GrayImage& a, int bins) {
  require(bins >= 2, "entropy_2d: bins must be at least 2");
  require(a.width >= 2 && a.height >= 2, "entropy_2d: image must be at least 2x2");
  std::map<long, long> counts;
  for (int y = 0; y < a.height; ++y) {
    for (int x = 0; x < a.width; ++x) {
      double sum = 0.0;
      int k = 0;
      if (x > 0) sum += a.at(x - 1, y), ++k;
      if (x + 1 < a.width) sum += a.at(x + 1, y), ++k;
      if (y > 0) sum += a.at(x, y - 1), ++k;
      if (y + 1 < a.height) sum += a.at(x, y + 1), ++k;
      const long cell = static_cast<long>(quantize(a.at(x, y), bins)) * bins + quantize(sum / k, bins);
      ++counts[cell];
    }
  }
  return entropy_bits(counts, static_cast<long>(a.pixels.size()));
}

std::vector<DiversityReport> diversity_protocol(const ImageSampler& sampler,
                                                std::span<const std::vector<double>> prompts, Rng& rng,
                                                int samples_per_prompt) {
  require(!prompts.empty(), "diversity_protocol: empty prompt set");
  require(samples_per_prompt >= 1, "diversity_protocol: need at least one sample per prompt");
  std::vector<DiversityReport> out;
  out.reserve(prompts.size());
  for (const auto& prompt : prompts) {
    Rng stream = rng.fork();
    const GrayImage base = sampler(prompt, stream);
    DiversityReport rep;
    rep.samples = samples_per_prompt;
    for (int i = 0; i < samples_per_prompt; ++i) {
      const GrayImage img = sampler(prompt, stream);
      rep.rmse += rmse(base, img);
      rep.psnr += psnr(base, img);
      rep.ssim += ssim(base, img);
      rep.e1 += entropy_1d(img);
      rep.e2 += entropy_2d(img);
    }
    const double n = samples_per_prompt;
    rep.rmse /= n;
    rep.psnr /= n;
    rep.ssim /= n;
    rep.e1 /= n;
    rep.e2 /= n;
    out.push_back(rep);
  }
  return out;
}

std::vector<double> mode_coverage(std::span<const std::vector<double>> samples,
                                  std::span<const std::vector<double>> centers) {
  require(!centers.empty(), "mode_coverage: no centers");
  require(!samples.empty(), "mode_coverage: no samples");
  std::vector<double> cov(centers.size(), 0.0);
  for (const auto& s : samples) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < centers.size(); ++k) {
      require(centers[k].size() == s.size(), "mode_coverage: dimension mismatch");
      double d = 0.0;
      for (std::size_t i = 0; i < s.size(); ++i) d += (s[i] - centers[k][i]) * (s[i] - centers[k][i]);
      if (d < best_d) {
        best_d = d;
        best = k;
      }
    }
    cov[best] += 1.0;
  }
  for (double& c : cov) c /= static_cast<double>(samples.size());
  return cov;
}

int modes_covered(std::span<const double> coverage, double threshold) {
  return static_cast<int>(std::count_if(coverage.begin(), coverage.end(), [&](double c) { return c >= threshold; }));
}

double coverage_entropy_bits(std::span<const double> coverage) {
  double h = 0.0;
  for (double p : coverage) {
    if (p > 0.0) h -= p * std::log2(p);
  }
  return h;
}

std::string to_pgm(const GrayImage& img, bool binary) {
  img.validate();
  std::ostringstream os;
  os << (binary ? "P5" : "P2") << "\n" << img.width << " " << img.height << "\n255\n";
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const int v = quantize(img.at(x, y), 256);
      if (binary) {
        os.put(static_cast<char>(static_cast<unsigned char>(v)));
      } else {
        os << v << (x + 1 < img.width ? " " : "\n");
      }
    }
  }
  return os.str();
}

GrayImage from_pgm(const std::string& data) {
  std::istringstream is(data);
  auto next_token = [&]() {
    std::string tok;
    while (is >> tok) {
      if (tok[0] == '#') {
        std::string rest;
        std::getline(is, rest);
        continue;
      }
      return tok;
    }
    throw ConfigError("pgm: truncated header");
  };
  const std::string magic = next_token();
  if (magic != "P2" && magic != "P5") throw ConfigError("pgm: unsupported magic '" + magic + "'");
  const int w = std::stoi(next_token());
  const int h = std::stoi(next_token());
  const int maxval = std::stoi(next_token());
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255) throw ConfigError("pgm: bad header values");
  std::vector<double> px(static_cast<std::size_t>(w) * h);
  if (magic == "P5") {
    is.get();
    for (auto& p : px) {
      const int c = is.get();
      if (c == EOF) throw ConfigError("pgm: truncated raster");
      p = static_cast<double>(c) / maxval;
    }
  } else {
    for (auto& p : px) p = static_cast<double>(std::stoi(next_token())) / maxval;
  }
  return GrayImage(w, h, std::move(px));
}

}  // namespace seelab

#include <algorithm>
#include <cstdio>
#include <cmath>

#include "core/error.hpp"
#include "core/rng.hpp"
#include "data/dataset.hpp"

namespace cxr {

namespace {

constexpr int kSide = static_cast<int>(kImageSize);

struct Ellipse {
  double cx, cy, rx, ry;
  // 1 inside, 0 outside, linear ramp over ~2 px at the boundary.
  double weight(double x, double y) const {
    const double dx = (x - cx) / rx, dy = (y - cy) / ry;
    const double r = std::sqrt(dx * dx + dy * dy);
    const double edge = 2.0 / std::min(rx, ry);
    return std::clamp((1.0 - r) / edge + 0.5, 0.0, 1.0);
  }
};

double gauss_blob(double x, double y, double cx, double cy, double sigma) {
  const double dx = x - cx, dy = y - cy;
  return std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
}

}  // namespace

RawImage synthesize_image(int class_id, std::uint64_t seed) {
  if (class_id < 0 || class_id >= static_cast<int>(kNumClasses)) {
    throw UsageError("class id out of range: " + std::to_string(class_id));
  }
  Rng rng(seed);
  std::vector<double> img(kSide * kSide);

  const double base = rng.uniform(0.10, 0.16);
  const double lung = rng.uniform(0.55, 0.62);
  const double shift_x = rng.uniform(-1.5, 1.5), shift_y = rng.uniform(-1.5, 1.5);
  const Ellipse lungs[2] = {
      {26.0 + shift_x, 46.0 + shift_y, rng.uniform(13.0, 15.0), rng.uniform(27.0, 30.0)},
      {64.0 + shift_x, 46.0 + shift_y, rng.uniform(13.0, 15.0), rng.uniform(27.0, 30.0)}};

  for (int y = 0; y < kSide; ++y) {
    for (int x = 0; x < kSide; ++x) {
      const double w = std::max(lungs[0].weight(x, y), lungs[1].weight(x, y));
      img[y * kSide + x] = base + (lung - base) * w;
    }
  }

  auto lung_mask = [&](double x, double y) {
    return std::max(lungs[0].weight(x, y), lungs[1].weight(x, y));
  };

  if (class_id == 1) {
    // Lower-field consolidation: broad haze plus blotchy high-frequency
    // texture in several patches.
    const double amp = rng.uniform(0.18, 0.26);
    std::vector<double> texture(kSide * kSide);
    for (double& t : texture) t = rng.uniform(-1.0, 1.0);
    struct Patch { double cx, cy, s; };
    std::vector<Patch> patches;
    const int count = 2 + static_cast<int>(rng.below(3));
    for (int p = 0; p < count; ++p) {
      const Ellipse& side = lungs[p % 2];
      patches.push_back({side.cx + rng.uniform(-6.0, 6.0), side.cy + rng.uniform(8.0, 18.0),
                         rng.uniform(5.0, 8.0)});
    }
    for (int y = 0; y < kSide; ++y) {
      for (int x = 0; x < kSide; ++x) {
        double a = 0.0;
        for (const auto& p : patches) a = std::max(a, gauss_blob(x, y, p.cx, p.cy, p.s));
        const double haze = std::clamp((y - 50.0) / 20.0, 0.0, 1.0) * 0.5;
        const double m = lung_mask(x, y);
        img[y * kSide + x] += m * amp * (std::max(a, haze) + 0.6 * a * texture[y * kSide + x]);
      }
    }
  } else if (class_id == 2) {
    // Upper-field nodule clusters with faint apical haze.
    const int clusters = 1 + static_cast<int>(rng.below(2));
    for (int c = 0; c < clusters; ++c) {
      const Ellipse& side = lungs[(c + rng.below(2)) % 2];
      const double ccx = side.cx + rng.uniform(-5.0, 5.0);
      const double ccy = side.cy - rng.uniform(12.0, 20.0);
      const int nodules = 4 + static_cast<int>(rng.below(4));
      for (int k = 0; k < nodules; ++k) {
        const double nx = ccx + rng.normal(0.0, 4.0), ny = ccy + rng.normal(0.0, 3.0);
        const double s = rng.uniform(1.2, 2.2), amp = rng.uniform(0.30, 0.40);
        const int x0 = std::max(0, static_cast<int>(nx - 4 * s)), x1 = std::min(kSide - 1, static_cast<int>(nx + 4 * s));
        const int y0 = std::max(0, static_cast<int>(ny - 4 * s)), y1 = std::min(kSide - 1, static_cast<int>(ny + 4 * s));
        for (int y = y0; y <= y1; ++y) {
          for (int x = x0; x <= x1; ++x) img[y * kSide + x] += amp * gauss_blob(x, y, nx, ny, s);
        }
      }
    }
    for (int y = 0; y < kSide; ++y) {
      for (int x = 0; x < kSide; ++x) {
        const double haze = std::clamp((40.0 - y) / 20.0, 0.0, 1.0) * 0.12;
        img[y * kSide + x] += lung_mask(x, y) * haze;
      }
    }
  }

  RawImage out{kImageSize, kImageSize, 1, std::vector<std::uint8_t>(kSide * kSide)};
  for (int i = 0; i < kSide * kSide; ++i) {
    const double v = std::clamp(img[i] + rng.normal(0.0, 0.05), 0.0, 1.0);
    out.pixels[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
  return out;
}

DatasetArchive synthesize_dataset(std::size_t n_per_class, std::uint64_t seed,
                                  std::size_t channels) {
  if (n_per_class == 0) throw UsageError("n_per_class must be at least 1");
  if (channels != 1 && channels != 3) throw UsageError("channels must be 1 or 3");
  const std::size_t total = n_per_class * kNumClasses;
  std::vector<SampleImage> samples(total);
  const auto n = static_cast<std::ptrdiff_t>(total);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const int cls = static_cast<int>(i % kNumClasses);
    samples[i] = preprocess(synthesize_image(cls, mix_seed(seed, static_cast<std::uint64_t>(i))), channels);
  }
  DatasetArchive a;
  a.channels = channels;
  for (std::size_t i = 0; i < total; ++i) {
    const int cls = static_cast<int>(i % kNumClasses);
    char id[48];
    std::snprintf(id, sizeof id, "synth/%s/%06zu", kClassNames[cls], i / kNumClasses);
    a.append(samples[i], ClassLabel{cls}, id);
  }
  return a;
}

}  // namespace cxr

#include <algorithm>
#include <cmath>

#include "core/error.hpp"
#include "data/image.hpp"
#include "models/model.hpp"

namespace cxr {

RawImage center_crop_square(const RawImage& image) {
  const std::size_t side = std::min(image.width, image.height);
  const std::size_t top = (image.height - side) / 2;
  const std::size_t left = (image.width - side) / 2;
  RawImage out{side, side, image.channels, {}};
  out.pixels.resize(side * side * image.channels);
  for (std::size_t y = 0; y < side; ++y) {
    const auto* src = image.pixels.data() + ((top + y) * image.width + left) * image.channels;
    std::copy(src, src + side * image.channels,
              out.pixels.data() + y * side * image.channels);
  }
  return out;
}

namespace {

struct Tap {
  std::size_t lo, hi;
  double frac;
};

std::vector<Tap> taps(std::size_t in, std::size_t out) {
  std::vector<Tap> t(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    double s = (static_cast<double>(o) + 0.5) * scale - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(in - 1));
    const auto lo = static_cast<std::size_t>(std::floor(s));
    t[o] = {lo, std::min(lo + 1, in - 1), s - static_cast<double>(lo)};
  }
  return t;
}

std::uint8_t quantize(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

}  // namespace

std::vector<double> resize_bilinear(const RawImage& image, std::size_t out_h,
                                    std::size_t out_w) {
  if (image.width == 0 || image.height == 0 || out_h == 0 || out_w == 0) {
    throw DataFormatError("resize of an empty image");
  }
  const auto ty = taps(image.height, out_h);
  const auto tx = taps(image.width, out_w);
  const std::size_t ch = image.channels;
  std::vector<double> out(out_h * out_w * ch);
  for (std::size_t oy = 0; oy < out_h; ++oy) {
    const Tap& y = ty[oy];
    for (std::size_t ox = 0; ox < out_w; ++ox) {
      const Tap& x = tx[ox];
      for (std::size_t c = 0; c < ch; ++c) {
        const double top = (1.0 - x.frac) * image.at(y.lo, x.lo, c) +
                           x.frac * image.at(y.lo, x.hi, c);
        const double bottom = (1.0 - x.frac) * image.at(y.hi, x.lo, c) +
                              x.frac * image.at(y.hi, x.hi, c);
        out[(oy * out_w + ox) * ch + c] = (1.0 - y.frac) * top + y.frac * bottom;
      }
    }
  }
  return out;
}

SampleImage preprocess(const RawImage& image, std::size_t target_channels) {
  if (target_channels != 1 && target_channels != 3) {
    throw UsageError("target channels must be 1 or 3");
  }
  if (image.channels != 1 && image.channels != 3) {
    throw DataFormatError("source image must be gray or RGB");
  }
  if (image.width < kMinDecodedSide || image.height < kMinDecodedSide) {
    throw DataFormatError("image " + std::to_string(image.width) + "x" +
                          std::to_string(image.height) + " is below the " +
                          std::to_string(kMinDecodedSide) + "x" +
                          std::to_string(kMinDecodedSide) + " minimum");
  }
  const RawImage square = center_crop_square(image);
  const std::vector<double> resized = resize_bilinear(square, kImageSize, kImageSize);
  constexpr std::size_t plane = kImageSize * kImageSize;

  SampleImage out{target_channels, std::vector<std::uint8_t>(target_channels * plane)};
  for (std::size_t p = 0; p < plane; ++p) {
    if (image.channels == 3 && target_channels == 1) {
      const double* rgb = &resized[p * 3];
      out.pixels[p] = quantize(0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2]);
    } else if (image.channels == 1) {
      const std::uint8_t v = quantize(resized[p]);
      for (std::size_t c = 0; c < target_channels; ++c) out.pixels[c * plane + p] = v;
    } else {
      for (std::size_t c = 0; c < 3; ++c) out.pixels[c * plane + p] = quantize(resized[p * 3 + c]);
    }
  }
  return out;
}

Tensor sample_tensor(const SampleImage& sample) {
  Tensor t(Shape{1, sample.channels, kImageSize, kImageSize});
  for (std::size_t i = 0; i < sample.pixels.size(); ++i) {
    t[i] = static_cast<float>(sample.pixels[i]) / 255.0f;
  }
  return t;
}

}  // namespace cxr

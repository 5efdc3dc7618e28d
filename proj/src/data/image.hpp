#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "core/bytes.hpp"
#include "core/tensor.hpp"

namespace cxr {

// Decoded 8-bit raster, interleaved (HWC). channels is 1 (gray) or 3 (RGB).
struct RawImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 1;
  std::vector<std::uint8_t> pixels;

  std::uint8_t at(std::size_t y, std::size_t x, std::size_t c = 0) const {
    return pixels[(y * width + x) * channels + c];
  }
};

enum class ImageFormat { kPng, kJpeg, kPgm, kUnknown };

ImageFormat sniff_format(std::span<const std::uint8_t> bytes);

// PNG (any bit depth / color type), JPEG (gray or YCbCr), binary PGM (P5).
// Alpha is dropped, palettes expanded, 16-bit samples scaled by 1/257.
// Throws DataFormatError on unsupported or corrupt input.
RawImage decode_image(std::span<const std::uint8_t> bytes);

Bytes encode_png(const RawImage& image);
Bytes encode_pgm(const RawImage& image);

// ---- preprocessing

inline constexpr std::size_t kMinDecodedSide = 8;

RawImage center_crop_square(const RawImage& image);

// Bilinear resampling with half-pixel centers: output (oy, ox) samples the
// source at ((oy + 0.5) * H / oh - 0.5, ...), clamped to the border. Returns
// real-valued HWC samples.
std::vector<double> resize_bilinear(const RawImage& image, std::size_t out_h,
                                    std::size_t out_w);

// Model-ready sample: channel-first 8-bit pixels of a 90x90 image.
struct SampleImage {
  std::size_t channels = 1;
  std::vector<std::uint8_t> pixels;  // [C, 90, 90]
};

// Center-crop to square, bilinear resize to 90x90, then Rec.601 luma when a
// color source feeds a 1-channel target (or gray replication for 3), then
// round to 8 bits. Throws DataFormatError when the source is below 8x8.
SampleImage preprocess(const RawImage& image, std::size_t target_channels);

// Scales to [0,1] by 1/255 into a [1, C, 90, 90] tensor.
Tensor sample_tensor(const SampleImage& sample);

}  // namespace cxr

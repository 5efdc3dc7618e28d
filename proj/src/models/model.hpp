#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "core/bytes.hpp"
#include "nn/network.hpp"

namespace cxr {

inline constexpr std::size_t kImageSize = 90;
inline constexpr std::size_t kNumClasses = 3;
inline constexpr std::array<const char*, kNumClasses> kClassNames = {
    "Normal", "Pneumonia", "Tuberculosis"};

enum class Architecture { kCustomCnn, kVgg16Style, kInceptionSmall };

std::string architecture_name(Architecture arch);
Architecture parse_architecture(const std::string& name);

// Exact rational channel multiplier; scaled widths are floor(base * num / den).
struct WidthMult {
  std::int64_t num = 1;
  std::int64_t den = 1;

  // Accepts "1", "0.25", "1/4".
  static WidthMult parse(const std::string& text);
  std::string str() const;
  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
  std::size_t scale(std::size_t base) const;
  bool operator==(const WidthMult&) const = default;
};

// The preprocessing contract a model was trained under.
struct Preprocessing {
  std::size_t channels = 1;
  std::size_t height = kImageSize;
  std::size_t width = kImageSize;
  bool operator==(const Preprocessing&) const = default;
};

struct ModelSpec {
  Architecture arch = Architecture::kCustomCnn;
  std::size_t channels = 1;
  WidthMult width_mult;
  std::size_t num_classes = kNumClasses;
  std::vector<LayerSpec> layers;

  Shape input_shape() const { return {channels, kImageSize, kImageSize}; }
};

ModelSpec build_custom_cnn(std::size_t channels, WidthMult width_mult = {});
ModelSpec build_vgg16_style(std::size_t channels, WidthMult width_mult = {});
ModelSpec build_inception_small(std::size_t channels, WidthMult width_mult = {});
ModelSpec build_model_spec(Architecture arch, std::size_t channels,
                           WidthMult width_mult = {});

struct Model {
  ModelSpec spec;
  Network net;
  // Optional JSON object describing how the weights were produced (split,
  // config, data hash); stored verbatim in the header. Empty means none.
  std::string training;

  explicit Model(ModelSpec s)
      : spec(std::move(s)), net(spec.layers, spec.input_shape()) {}

  Preprocessing preprocessing() const { return {spec.channels}; }
};

// Builds and initializes a fresh network for `spec`.
Model make_model(ModelSpec spec, std::uint64_t seed);

// File layout: "CXRM1", u32 LE header length, JSON header, then one f32 LE
// blob per tensor in header order.
Bytes serialize_model(const Model& model);
Model parse_model(std::span<const std::uint8_t> bytes,
                  const std::optional<Preprocessing>& expected = std::nullopt);

void save_model(const Model& model, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path,
                 const std::optional<Preprocessing>& expected = std::nullopt);

// SHA-256 of the serialized model (identical to hashing the saved file).
std::string model_hash(const Model& model);

// Architecture and preprocessing fingerprint as the JSON text stored in the
// file header, without the tensor table.
std::string describe_model(const Model& model);

}  // namespace cxr

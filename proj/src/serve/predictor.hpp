#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <string>

#include "data/image.hpp"
#include "models/model.hpp"

namespace cxr {

struct PredictionReport {
  std::array<double, kNumClasses> probabilities{};
  int label_id = 0;
  std::string label;
  std::string model_name;
  std::string model_hash;
  Preprocessing preprocessing;

  std::string to_json() const;
};

// Inference on one preprocessed sample; shared by the HTTP service and the
// in-process API so both report identical numbers.
PredictionReport predict_sample(const Model& model, const std::string& name,
                                const std::string& hash, const SampleImage& sample);
PredictionReport predict_image(const Model& model, const std::string& name,
                               const std::string& hash, std::span<const std::uint8_t> bytes);

// Read-only wrapper around a loaded model; predict() may be called from many
// threads at once.
class Predictor {
 public:
  Predictor(Model model, std::string name);

  // The hash is of the file bytes, which equals model_hash(model).
  static Predictor load(const std::filesystem::path& path,
                        const std::optional<Preprocessing>& expected = std::nullopt);

  // Same decode + preprocess path as ingestion.
  PredictionReport predict(std::span<const std::uint8_t> image_bytes) const;
  PredictionReport predict_sample(const SampleImage& sample) const;

  const Model& model() const { return model_; }
  const std::string& name() const { return name_; }
  const std::string& hash() const { return hash_; }

  std::string health_json() const;
  std::string model_json() const;

 private:
  Model model_;
  std::string name_;
  std::string hash_;
};

}  // namespace cxr

#include <json.hpp>

#include "core/error.hpp"
#include "core/hash.hpp"
#include "data/image.hpp"
#include "serve/predictor.hpp"

namespace cxr {

using nlohmann::json;

namespace {

json preprocessing_json(const Preprocessing& p) {
  return {{"channels", p.channels},
          {"height", p.height},
          {"width", p.width},
          {"scale", "1/255"}};
}

}  // namespace

std::string PredictionReport::to_json() const {
  const json j = {{"probabilities", probabilities},
                  {"label", label},
                  {"label_id", label_id},
                  {"model_name", model_name},
                  {"model_hash", model_hash},
                  {"preprocessing", preprocessing_json(preprocessing)}};
  return j.dump();
}

Predictor::Predictor(Model model, std::string name)
    : model_(std::move(model)), name_(std::move(name)), hash_(model_hash(model_)) {}

Predictor Predictor::load(const std::filesystem::path& path,
                          const std::optional<Preprocessing>& expected) {
  Model m = load_model(path, expected);
  std::string name = architecture_name(m.spec.arch);
  return Predictor(std::move(m), std::move(name));
}

PredictionReport predict_sample(const Model& model, const std::string& name,
                                const std::string& hash, const SampleImage& sample) {
  if (sample.channels != model.spec.channels) {
    throw DataFormatError("sample has " + std::to_string(sample.channels) +
                          " channel(s), model expects " + std::to_string(model.spec.channels));
  }
  const Tensor probs = model.net.predict(sample_tensor(sample));
  PredictionReport r;
  for (std::size_t c = 0; c < kNumClasses; ++c) r.probabilities[c] = probs[c];
  int best = 0;
  for (std::size_t c = 1; c < kNumClasses; ++c) {
    if (probs[c] > probs[static_cast<std::size_t>(best)]) best = static_cast<int>(c);
  }
  r.label_id = best;
  r.label = kClassNames[static_cast<std::size_t>(best)];
  r.model_name = name;
  r.model_hash = hash;
  r.preprocessing = model.preprocessing();
  return r;
}

PredictionReport predict_image(const Model& model, const std::string& name,
                               const std::string& hash, std::span<const std::uint8_t> bytes) {
  return predict_sample(model, name, hash, preprocess(decode_image(bytes), model.spec.channels));
}

PredictionReport Predictor::predict_sample(const SampleImage& sample) const {
  return cxr::predict_sample(model_, name_, hash_, sample);
}

PredictionReport Predictor::predict(std::span<const std::uint8_t> image_bytes) const {
  return predict_image(model_, name_, hash_, image_bytes);
}

std::string Predictor::health_json() const {
  return json{{"status", "ok"}, {"model_hash", hash_}}.dump();
}

std::string Predictor::model_json() const {
  json j = json::parse(describe_model(model_));
  j["model_name"] = name_;
  j["model_hash"] = hash_;
  return j.dump();
}

}  // namespace cxr

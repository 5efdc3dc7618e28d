#include <json.hpp>

#include <algorithm>
#include <cstring>

#include "core/error.hpp"
#include "core/hash.hpp"
#include "models/model.hpp"

namespace cxr {
namespace {

using nlohmann::json;

constexpr char kMagic[] = "CXRM1";
constexpr std::size_t kMagicLen = 5;

const char* padding_name(Padding p) { return p == Padding::kSame ? "same" : "valid"; }

json layer_to_json(const LayerSpec& spec) {
  struct Visitor {
    json operator()(const Conv2dSpec& s) const {
      return {{"type", "conv2d"},
              {"out_channels", s.out_channels},
              {"kernel", {s.kernel_h, s.kernel_w}},
              {"stride", s.stride},
              {"padding", padding_name(s.padding)}};
    }
    json operator()(const MaxPool2dSpec& s) const {
      return {{"type", "maxpool2d"}, {"size", s.size}, {"stride", s.stride}};
    }
    json operator()(const DenseSpec& s) const {
      return {{"type", "dense"}, {"out_features", s.out_features}};
    }
    json operator()(const BatchNormSpec& s) const {
      return {{"type", "batchnorm"},
              {"channels", s.channels},
              {"epsilon", s.epsilon},
              {"momentum", s.momentum}};
    }
    json operator()(const ReluSpec&) const { return {{"type", "relu"}}; }
    json operator()(const FlattenSpec&) const { return {{"type", "flatten"}}; }
    json operator()(const SoftmaxSpec&) const { return {{"type", "softmax"}}; }
    json operator()(const InceptionSpec& s) const {
      return {{"type", "inception"},
              {"b1", s.b1},
              {"b3", s.b3},
              {"b5", s.b5},
              {"bpool", s.bpool}};
    }
  };
  return std::visit(Visitor{}, spec);
}

LayerSpec layer_from_json(const json& j) {
  const std::string type = j.at("type").get<std::string>();
  if (type == "conv2d") {
    const std::string pad = j.at("padding").get<std::string>();
    if (pad != "same" && pad != "valid") {
      throw ModelFormatError("unknown padding '" + pad + "'");
    }
    return Conv2dSpec{j.at("out_channels").get<std::size_t>(),
                      j.at("kernel").at(0).get<std::size_t>(),
                      j.at("kernel").at(1).get<std::size_t>(),
                      j.at("stride").get<std::size_t>(),
                      pad == "same" ? Padding::kSame : Padding::kValid};
  }
  if (type == "maxpool2d") {
    return MaxPool2dSpec{j.at("size").get<std::size_t>(),
                         j.at("stride").get<std::size_t>()};
  }
  if (type == "dense") return DenseSpec{j.at("out_features").get<std::size_t>()};
  if (type == "batchnorm") {
    return BatchNormSpec{j.at("channels").get<std::size_t>(),
                         j.at("epsilon").get<double>(),
                         j.at("momentum").get<double>()};
  }
  if (type == "relu") return ReluSpec{};
  if (type == "flatten") return FlattenSpec{};
  if (type == "softmax") return SoftmaxSpec{};
  if (type == "inception") {
    return InceptionSpec{j.at("b1").get<std::size_t>(), j.at("b3").get<std::size_t>(),
                         j.at("b5").get<std::size_t>(),
                         j.at("bpool").get<std::size_t>()};
  }
  throw ModelFormatError("unknown layer tag '" + type + "'");
}

json preprocessing_json(const Preprocessing& p) {
  return {{"channels", p.channels},
          {"height", p.height},
          {"width", p.width},
          {"color", p.channels == 1 ? "grayscale" : "rgb"},
          {"crop", "center-square"},
          {"resize", "bilinear"},
          {"scale", "1/255"}};
}

json describe_json(const Model& model) {
  json layers = json::array();
  for (const auto& l : model.spec.layers) layers.push_back(layer_to_json(l));
  json classes = json::array();
  for (const char* c : kClassNames) classes.push_back(c);
  json out = {{"architecture",
           {{"name", architecture_name(model.spec.arch)},
            {"width_mult", model.spec.width_mult.str()},
            {"num_classes", model.spec.num_classes},
            {"input", model.spec.input_shape()},
            {"layers", layers},
            {"parameter_count", model.net.parameter_count()}}},
          {"preprocessing", preprocessing_json(model.preprocessing())},
          {"classes", classes}};
  if (!model.training.empty()) out["training"] = json::parse(model.training);
  return out;
}

}  // namespace

std::string describe_model(const Model& model) { return describe_json(model).dump(); }

Bytes serialize_model(const Model& model) {
  json header = describe_json(model);
  json table = json::array();
  std::uint64_t payload = 0;
  for (const auto& [name, t] : model.net.tensors()) {
    const std::uint64_t bytes = t->size() * 4;
    table.push_back({{"name", name}, {"shape", t->shape()}, {"bytes", bytes}});
    payload += bytes;
  }
  header["tensors"] = table;
  header["payload_bytes"] = payload;
  header["format"] = "CXRM";
  header["version"] = 1;
  const std::string text = header.dump();

  ByteWriter w;
  w.put_text(std::string(kMagic, kMagicLen));
  w.put_u32(static_cast<std::uint32_t>(text.size()));
  w.put_text(text);
  for (const auto& [name, t] : model.net.tensors()) {
    for (float v : t->data()) w.put_f32(v);
  }
  return std::move(w.bytes());
}

Model parse_model(std::span<const std::uint8_t> bytes,
                  const std::optional<Preprocessing>& expected) {
  ByteReader r(bytes);
  if (!r.has(kMagicLen)) throw ModelFormatError("bad magic: file too short");
  const auto magic = r.take(kMagicLen);
  if (std::memcmp(magic.data(), "CXRM", 4) != 0) {
    throw ModelFormatError("bad magic: not a CXRM model file");
  }
  if (magic[4] != '1') {
    throw ModelFormatError(std::string("unsupported model format version '") +
                           static_cast<char>(magic[4]) + "' (expected 1)");
  }
  if (!r.has(4)) throw ModelFormatError("truncated model file: missing header length");
  const std::uint32_t header_len = r.u32();
  if (!r.has(header_len)) {
    throw ModelFormatError("truncated model file: header declares " +
                           std::to_string(header_len) + " bytes, " +
                           std::to_string(r.remaining()) + " available");
  }
  const auto header_bytes = r.take(header_len);
  json header;
  try {
    header = json::parse(header_bytes.begin(), header_bytes.end());
  } catch (const json::exception& e) {
    throw ModelFormatError(std::string("malformed model header: ") + e.what());
  }

  try {
    const json& arch = header.at("architecture");
    ModelSpec spec;
    spec.arch = parse_architecture(arch.at("name").get<std::string>());
    spec.width_mult = WidthMult::parse(arch.at("width_mult").get<std::string>());
    spec.num_classes = arch.at("num_classes").get<std::size_t>();
    const auto input = arch.at("input").get<std::vector<std::size_t>>();
    if (input.size() != 3 || input[1] != kImageSize || input[2] != kImageSize) {
      throw ModelFormatError("model input must be [C,90,90]");
    }
    spec.channels = input[0];
    for (const json& l : arch.at("layers")) spec.layers.push_back(layer_from_json(l));

    const json& prep = header.at("preprocessing");
    const Preprocessing stored{prep.at("channels").get<std::size_t>(),
                               prep.at("height").get<std::size_t>(),
                               prep.at("width").get<std::size_t>()};
    if (stored.channels != spec.channels || stored.height != kImageSize ||
        stored.width != kImageSize ||
        prep.value("scale", std::string()) != "1/255") {
      throw ModelFormatError("preprocessing fingerprint does not match architecture input");
    }
    if (expected && !(*expected == stored)) {
      throw ModelFormatError(
          "preprocessing fingerprint mismatch: model expects " +
          std::to_string(stored.channels) + " channel(s) at " +
          std::to_string(stored.height) + "x" + std::to_string(stored.width) +
          ", requested " + std::to_string(expected->channels) + " channel(s) at " +
          std::to_string(expected->height) + "x" + std::to_string(expected->width));
    }
    const auto classes = header.at("classes").get<std::vector<std::string>>();
    if (classes.size() != kNumClasses ||
        !std::equal(classes.begin(), classes.end(), kClassNames.begin())) {
      throw ModelFormatError("class table must be Normal, Pneumonia, Tuberculosis");
    }

    Model model(std::move(spec));
    if (header.contains("training")) {
      if (!header["training"].is_object()) throw ModelFormatError("training record must be an object");
      model.training = header["training"].dump();
    }
    auto tensors = model.net.tensors();
    const json& table = header.at("tensors");
    const std::uint64_t declared = header.at("payload_bytes").get<std::uint64_t>();
    std::uint64_t table_sum = 0;
    for (const json& t : table) table_sum += t.at("bytes").get<std::uint64_t>();
    if (table_sum != declared) {
      throw ModelFormatError("header/payload length disagreement: tensor table sums to " +
                             std::to_string(table_sum) + " bytes, header declares " +
                             std::to_string(declared));
    }
    if (r.remaining() < declared) {
      throw ModelFormatError("truncated model file: expected " +
                             std::to_string(declared) + " payload bytes, found " +
                             std::to_string(r.remaining()));
    }
    if (r.remaining() > declared) {
      throw ModelFormatError("header/payload length disagreement: header declares " +
                             std::to_string(declared) + " payload bytes, file has " +
                             std::to_string(r.remaining()));
    }
    if (table.size() != tensors.size()) {
      throw ModelFormatError("tensor table lists " + std::to_string(table.size()) +
                             " tensors, architecture has " +
                             std::to_string(tensors.size()));
    }
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      auto& [name, t] = tensors[i];
      const json& entry = table[i];
      if (entry.at("name").get<std::string>() != name ||
          entry.at("shape").get<Shape>() != t->shape() ||
          entry.at("bytes").get<std::uint64_t>() != t->size() * 4) {
        throw ModelFormatError("tensor " + std::to_string(i) + " (" + name +
                               ") does not match the architecture");
      }
      for (float& v : t->data()) v = r.f32();
    }
    return model;
  } catch (const json::exception& e) {
    throw ModelFormatError(std::string("malformed model header: ") + e.what());
  } catch (const ModelFormatError&) {
    throw;
  } catch (const Error& e) {
    throw ModelFormatError(std::string("invalid model architecture: ") + e.what());
  }
}

void save_model(const Model& model, const std::filesystem::path& path) {
  write_file(path, serialize_model(model));
}

Model load_model(const std::filesystem::path& path,
                 const std::optional<Preprocessing>& expected) {
  return parse_model(read_file(path), expected);
}

std::string model_hash(const Model& model) {
  return sha256_hex(serialize_model(model));
}

}  // namespace cxr

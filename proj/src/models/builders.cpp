#include <numeric>

#include "core/error.hpp"
#include "models/model.hpp"

namespace cxr {

std::string architecture_name(Architecture arch) {
  switch (arch) {
    case Architecture::kCustomCnn:
      return "custom_cnn";
    case Architecture::kVgg16Style:
      return "vgg16_style";
    case Architecture::kInceptionSmall:
      return "inception_small";
  }
  return "unknown";
}

Architecture parse_architecture(const std::string& name) {
  if (name == "custom_cnn") return Architecture::kCustomCnn;
  if (name == "vgg16_style") return Architecture::kVgg16Style;
  if (name == "inception_small") return Architecture::kInceptionSmall;
  throw UsageError("unknown architecture '" + name +
                   "' (expected custom_cnn, vgg16_style, inception_small)");
}

WidthMult WidthMult::parse(const std::string& text) {
  auto bad = [&] { return UsageError("invalid width multiplier '" + text + "'"); };
  auto parse_int = [&](const std::string& s) {
    if (s.empty() || s.size() > 12) throw bad();
    std::int64_t v = 0;
    for (char c : s) {
      if (c < '0' || c > '9') throw bad();
      v = v * 10 + (c - '0');
    }
    return v;
  };
  WidthMult w;
  if (auto slash = text.find('/'); slash != std::string::npos) {
    w.num = parse_int(text.substr(0, slash));
    w.den = parse_int(text.substr(slash + 1));
  } else if (auto dot = text.find('.'); dot != std::string::npos) {
    const std::string frac = text.substr(dot + 1);
    const std::string whole = dot == 0 ? "0" : text.substr(0, dot);
    if (frac.empty()) throw bad();
    w.den = 1;
    for (std::size_t i = 0; i < frac.size(); ++i) w.den *= 10;
    w.num = parse_int(whole) * w.den + parse_int(frac);
  } else {
    w.num = parse_int(text);
  }
  if (w.num <= 0 || w.den <= 0) throw bad();
  const std::int64_t g = std::gcd(w.num, w.den);
  w.num /= g;
  w.den /= g;
  return w;
}

std::string WidthMult::str() const {
  return den == 1 ? std::to_string(num)
                  : std::to_string(num) + "/" + std::to_string(den);
}

std::size_t WidthMult::scale(std::size_t base) const {
  return static_cast<std::size_t>(static_cast<std::int64_t>(base) * num / den);
}

namespace {

std::size_t width(const WidthMult& wm, std::size_t base, const char* what) {
  const std::size_t w = wm.scale(base);
  if (w == 0) {
    throw UsageError(std::string(what) + ": width " + std::to_string(base) +
                     " x " + wm.str() + " rounds to zero");
  }
  return w;
}

void check_channels(std::size_t channels) {
  if (channels != 1 && channels != 3) {
    throw UsageError("channels must be 1 or 3, got " + std::to_string(channels));
  }
}

Conv2dSpec conv3x3(std::size_t out, Padding pad) {
  return Conv2dSpec{out, 3, 3, 1, pad};
}

// Validates the chain on the canonical input and sizes the flatten-fed
// batchnorm, whose channel count is only known after the trace.
ModelSpec finish(ModelSpec spec) {
  Shape shape = spec.input_shape();
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    if (auto* bn = std::get_if<BatchNormSpec>(&spec.layers[i]); bn && bn->channels == 0) {
      bn->channels = shape.at(0);
    }
    try {
      shape = layer_output_shape(spec.layers[i], shape);
    } catch (const Error& e) {
      throw UsageError(architecture_name(spec.arch) + ": layer " +
                       std::to_string(i) + " (" + layer_tag(spec.layers[i]) +
                       "): " + e.what());
    }
  }
  return spec;
}

}  // namespace

ModelSpec build_custom_cnn(std::size_t channels, WidthMult wm) {
  check_channels(channels);
  ModelSpec s{Architecture::kCustomCnn, channels, wm, kNumClasses, {}};
  for (std::size_t base : {32u, 64u, 128u}) {
    s.layers.push_back(conv3x3(width(wm, base, "custom_cnn"), Padding::kValid));
    s.layers.push_back(ReluSpec{});
    s.layers.push_back(MaxPool2dSpec{2, 2});
  }
  s.layers.push_back(FlattenSpec{});
  s.layers.push_back(BatchNormSpec{0});
  s.layers.push_back(DenseSpec{kNumClasses});
  s.layers.push_back(SoftmaxSpec{});
  return finish(std::move(s));
}

ModelSpec build_vgg16_style(std::size_t channels, WidthMult wm) {
  check_channels(channels);
  ModelSpec s{Architecture::kVgg16Style, channels, wm, kNumClasses, {}};
  struct Block {
    std::size_t width, convs;
  };
  for (Block b : {Block{64, 2}, Block{128, 2}, Block{256, 3}, Block{512, 3},
                  Block{512, 3}}) {
    for (std::size_t i = 0; i < b.convs; ++i) {
      s.layers.push_back(conv3x3(width(wm, b.width, "vgg16_style"), Padding::kSame));
      s.layers.push_back(ReluSpec{});
    }
    s.layers.push_back(MaxPool2dSpec{2, 2});
  }
  s.layers.push_back(FlattenSpec{});
  for (int i = 0; i < 2; ++i) {
    s.layers.push_back(DenseSpec{width(wm, 256, "vgg16_style dense")});
    s.layers.push_back(ReluSpec{});
  }
  s.layers.push_back(DenseSpec{kNumClasses});
  s.layers.push_back(SoftmaxSpec{});
  return finish(std::move(s));
}

ModelSpec build_inception_small(std::size_t channels, WidthMult wm) {
  check_channels(channels);
  ModelSpec s{Architecture::kInceptionSmall, channels, wm, kNumClasses, {}};
  auto block = [&](std::size_t b1, std::size_t b3, std::size_t b5, std::size_t bp) {
    return InceptionSpec{width(wm, b1, "inception_small branch"),
                         width(wm, b3, "inception_small branch"),
                         width(wm, b5, "inception_small branch"),
                         width(wm, bp, "inception_small branch")};
  };
  s.layers.push_back(conv3x3(width(wm, 16, "inception_small stem"), Padding::kSame));
  s.layers.push_back(ReluSpec{});
  s.layers.push_back(MaxPool2dSpec{2, 2});
  s.layers.push_back(block(16, 32, 8, 8));
  s.layers.push_back(ReluSpec{});
  s.layers.push_back(MaxPool2dSpec{2, 2});
  s.layers.push_back(block(32, 64, 16, 16));
  s.layers.push_back(ReluSpec{});
  s.layers.push_back(FlattenSpec{});
  s.layers.push_back(BatchNormSpec{0});
  s.layers.push_back(DenseSpec{kNumClasses});
  s.layers.push_back(SoftmaxSpec{});
  return finish(std::move(s));
}

ModelSpec build_model_spec(Architecture arch, std::size_t channels,
                           WidthMult width_mult) {
  switch (arch) {
    case Architecture::kCustomCnn:
      return build_custom_cnn(channels, width_mult);
    case Architecture::kVgg16Style:
      return build_vgg16_style(channels, width_mult);
    case Architecture::kInceptionSmall:
      return build_inception_small(channels, width_mult);
  }
  throw UsageError("unknown architecture");
}

Model make_model(ModelSpec spec, std::uint64_t seed) {
  Model m(std::move(spec));
  m.net.initialize(seed);
  return m;
}

}  // namespace cxr

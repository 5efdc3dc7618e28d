#pragma once

#include <cstddef>
#include <string>
#include <variant>
#include <vector>

namespace cxr {

enum class Padding { kValid, kSame };

struct Conv2dSpec {
  std::size_t out_channels = 1;
  std::size_t kernel_h = 3;
  std::size_t kernel_w = 3;
  std::size_t stride = 1;
  Padding padding = Padding::kValid;
  bool operator==(const Conv2dSpec&) const = default;
};

struct MaxPool2dSpec {
  std::size_t size = 2;
  std::size_t stride = 2;
  bool operator==(const MaxPool2dSpec&) const = default;
};

struct DenseSpec {
  std::size_t out_features = 1;
  bool operator==(const DenseSpec&) const = default;
};

struct BatchNormSpec {
  std::size_t channels = 1;
  double epsilon = 1e-3;
  double momentum = 0.99;
  bool operator==(const BatchNormSpec&) const = default;
};

struct ReluSpec {
  bool operator==(const ReluSpec&) const = default;
};
struct FlattenSpec {
  bool operator==(const FlattenSpec&) const = default;
};
struct SoftmaxSpec {
  bool operator==(const SoftmaxSpec&) const = default;
};

// Parallel 1x1 / 3x3 / 5x5 convolutions plus a 3x3 max-pool followed by a
// 1x1 convolution, all stride 1 and same-padded, concatenated on channels in
// that order.
struct InceptionSpec {
  std::size_t b1 = 1;
  std::size_t b3 = 1;
  std::size_t b5 = 1;
  std::size_t bpool = 1;
  std::size_t out_channels() const { return b1 + b3 + b5 + bpool; }
  bool operator==(const InceptionSpec&) const = default;
};

using LayerSpec = std::variant<Conv2dSpec, MaxPool2dSpec, DenseSpec,
                               BatchNormSpec, ReluSpec, FlattenSpec,
                               SoftmaxSpec, InceptionSpec>;

std::string layer_tag(const LayerSpec& spec);

}  // namespace cxr

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "models/model.hpp"
#include "nn/layer_spec.hpp"

namespace cxr {

struct CheckResult {
  std::string name;
  bool passed = false;
  double value = 0;      // measured error (or 0/1 for exact checks)
  double tolerance = 0;  // pass when value <= tolerance
  std::string detail;
};

enum class VerifyLevel { kFast, kFull };

VerifyLevel parse_verify_level(const std::string& text);

using CheckCallback = std::function<void(const CheckResult&)>;

// Gradient checks for every layer type and whole networks in float and
// double, the im2col-vs-direct convolution oracle, and serialization
// roundtrips.
std::vector<CheckResult> run_verification(VerifyLevel level, const CheckCallback& on_check = {});

// ||a - n|| / max(||a||, ||n||) over sampled coordinates of the input and of
// every parameter, where a is the backward-pass gradient and n the central
// difference (step eps) of L = sum(forward(x) * R) for a fixed random R.
// Coordinates whose +-eps steps flip a relu or change a pool winner are
// redrawn; their count goes to *rejected.
template <class T>
double layer_gradient_error(const LayerSpec& spec, const Shape& sample_shape, std::size_t batch,
                            std::uint64_t seed, std::size_t coords_per_tensor, double eps = 1e-3,
                            std::size_t* rejected = nullptr);

// Same metric for mean cross-entropy of a whole network in train mode,
// sampled over every parameter tensor.
template <class T>
double network_gradient_error(const ModelSpec& spec, std::size_t batch, std::uint64_t seed,
                              std::size_t coords_per_tensor, double eps = 1e-3,
                              std::size_t* rejected = nullptr);

// Fused softmax + cross-entropy logit gradient against central differences.
template <class T>
double softmax_ce_gradient_error(std::uint64_t seed, double eps = 1e-3);

// max |im2col - direct| / max |direct| for one randomized conv case.
struct ConvCase {
  std::size_t n, c, h, w, f, k, stride;
  Padding padding;
};
ConvCase random_conv_case(std::uint64_t seed, std::size_t index);
double conv_oracle_error(const ConvCase& c, std::uint64_t seed);

}  // namespace cxr

#pragma once

// Stateless forward/backward kernels. Layers in layer.hpp wrap these and own
// the cached activations.

#include <cstdint>
#include <vector>

#include "core/tensor.hpp"
#include "nn/layer_spec.hpp"

namespace cxr {

template <class T>
struct BasicParam {
  BasicTensor<T> value;
  BasicTensor<T> grad;

  BasicParam() = default;
  explicit BasicParam(BasicTensor<T> v)
      : value(std::move(v)), grad(value.shape(), T(0)) {}
  void zero_grad() { grad.fill(T(0)); }
};
using Param = BasicParam<float>;

template <class T>
struct BasicBatchStats {
  BasicTensor<T> running_mean;
  BasicTensor<T> running_var;
  double momentum = 0.99;
  double epsilon = 1e-3;

  BasicBatchStats() = default;
  BasicBatchStats(std::size_t channels, double momentum_, double epsilon_)
      : running_mean(Shape{channels}, T(0)),
        running_var(Shape{channels}, T(1)),
        momentum(momentum_),
        epsilon(epsilon_) {}
};
using BatchStats = BasicBatchStats<float>;

enum class Mode { kTrain, kInfer };

struct ConvGeometry {
  std::size_t stride = 1;
  std::size_t pad = 0;
};

// Per-side zero padding for a kernel under the given padding rule. Same
// padding requires an odd kernel.
std::size_t conv_padding(std::size_t kernel, Padding padding);

// floor((in + 2*pad - kernel) / stride) + 1; throws when the kernel does not
// fit the padded input.
std::size_t conv_out_dim(std::size_t in, std::size_t kernel, std::size_t stride,
                         std::size_t pad);

// ---- convolution (cross-correlation via im2col + gemm) ----

template <class T>
BasicTensor<T> conv2d_forward(const BasicTensor<T>& x,
                              const BasicParam<T>& kernel,
                              const BasicParam<T>& bias, ConvGeometry geom);

// Accumulates into kernel.grad and bias.grad. Returns dL/dx, or an all-zero
// tensor when need_dx is false.
template <class T>
BasicTensor<T> conv2d_backward(const BasicTensor<T>& x,
                               BasicParam<T>& kernel, BasicParam<T>& bias,
                               ConvGeometry geom,
                               const BasicTensor<T>& upstream,
                               bool need_dx = true);

// ---- max pooling ----

struct PoolGeometry {
  std::size_t size = 2;
  std::size_t stride = 2;
  std::size_t pad = 0;  // padded cells never win
};

// `argmax` (optional) receives, per output cell, the flat input index that
// won. Ties go to the first cell in row-major window order.
template <class T>
BasicTensor<T> maxpool2d_forward(const BasicTensor<T>& x, PoolGeometry geom,
                                 std::vector<std::uint32_t>* argmax = nullptr);

template <class T>
BasicTensor<T> maxpool2d_backward(const Shape& input_shape,
                                  const std::vector<std::uint32_t>& argmax,
                                  const BasicTensor<T>& upstream);

// ---- batch normalization over axis 1 of [N, C, ...] ----

template <class T>
struct BatchNormCache {
  BasicTensor<T> xhat;
  std::vector<T> inv_std;
  Mode mode = Mode::kTrain;
};

template <class T>
BasicTensor<T> batchnorm_forward(const BasicTensor<T>& x,
                                 const BasicParam<T>& gamma,
                                 const BasicParam<T>& beta,
                                 BasicBatchStats<T>& stats, Mode mode,
                                 BatchNormCache<T>* cache = nullptr);

// Inference-mode forward that never touches the statistics.
template <class T>
BasicTensor<T> batchnorm_infer(const BasicTensor<T>& x,
                               const BasicParam<T>& gamma,
                               const BasicParam<T>& beta,
                               const BasicBatchStats<T>& stats);

template <class T>
BasicTensor<T> batchnorm_backward(const BatchNormCache<T>& cache,
                                  BasicParam<T>& gamma, BasicParam<T>& beta,
                                  const BasicTensor<T>& upstream);

// ---- dense: y = x W + b ----

template <class T>
BasicTensor<T> dense_forward(const BasicTensor<T>& x,
                             const BasicParam<T>& weight,
                             const BasicParam<T>& bias);

template <class T>
BasicTensor<T> dense_backward(const BasicTensor<T>& x, BasicParam<T>& weight,
                              BasicParam<T>& bias,
                              const BasicTensor<T>& upstream,
                              bool need_dx = true);

// ---- softmax and cross-entropy ----

template <class T>
BasicTensor<T> softmax(const BasicTensor<T>& logits);

template <class T>
BasicTensor<T> softmax_backward(const BasicTensor<T>& probs,
                                const BasicTensor<T>& dprobs);

// -(1/N) sum_i w[y_i] log max(p[i, y_i], 1e-12). `class_weights` empty means
// all ones.
template <class T>
T cross_entropy(const BasicTensor<T>& probs, const BasicTensor<T>& onehot,
                const std::vector<T>& class_weights = {});

// Gradient of cross_entropy(softmax(z), onehot) with respect to z:
// w[y_i] * (probs - onehot) / N.
template <class T>
BasicTensor<T> cross_entropy_logit_grad(const BasicTensor<T>& probs,
                                        const BasicTensor<T>& onehot,
                                        const std::vector<T>& class_weights = {});

template <class T>
BasicTensor<T> one_hot(const std::vector<int>& labels, std::size_t classes);

}  // namespace cxr

#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "nn/layer.hpp"

namespace cxr {

// Ordered layer pipeline. The shape chain is validated on construction
// against the per-sample input shape [C, H, W].
template <class T>
class BasicNetwork {
 public:
  using Tensor = BasicTensor<T>;

  BasicNetwork(std::vector<LayerSpec> specs, Shape input_shape);
  BasicNetwork(BasicNetwork&&) noexcept = default;
  BasicNetwork& operator=(BasicNetwork&&) noexcept = default;

  const std::vector<LayerSpec>& specs() const { return specs_; }
  const Shape& input_shape() const { return input_shape_; }
  const Shape& output_shape() const { return layers_.back()->output_shape(); }
  std::size_t num_layers() const { return layers_.size(); }
  const Layer<T>& layer(std::size_t i) const { return *layers_.at(i); }

  // He-uniform everywhere except a dense layer feeding the softmax, which
  // gets Glorot-uniform. Biases zero, batchnorm gamma 1 / beta 0.
  void initialize(std::uint64_t seed);

  // Inference mode, read-only; safe to call from several threads at once.
  Tensor predict(const Tensor& x) const;

  Tensor forward(const Tensor& x, Mode mode);
  // Backpropagates dL/d(output) through every layer, softmax included.
  void backward(const Tensor& doutput);
  // Backpropagates dL/d(logits), skipping a final softmax layer.
  void backward_from_logits(const Tensor& dlogits);
  void zero_grads();

  std::vector<BasicParam<T>*> params();
  std::vector<std::pair<std::string, Tensor*>> tensors();
  std::vector<std::pair<std::string, const Tensor*>> tensors() const;
  std::size_t parameter_count() const;
  // Concatenated Layer::append_switch_state of every layer.
  std::vector<std::uint32_t> switch_state() const {
    std::vector<std::uint32_t> out;
    for (const auto& l : layers_) l->append_switch_state(out);
    return out;
  }

  // Same architecture in another precision, tensors converted elementwise.
  template <class U>
  BasicNetwork<U> convert() const {
    BasicNetwork<U> out(specs_, input_shape_);
    auto dst = out.tensors();
    auto src = tensors();
    for (std::size_t i = 0; i < src.size(); ++i) {
      auto s = src[i].second->data();
      auto d = dst[i].second->data();
      for (std::size_t k = 0; k < s.size(); ++k) d[k] = static_cast<U>(s[k]);
    }
    return out;
  }

 private:
  void check_input(const Tensor& x) const;
  void backward_range(Tensor grad, std::size_t end);

  std::vector<LayerSpec> specs_;
  Shape input_shape_;
  std::vector<std::unique_ptr<Layer<T>>> layers_;
};

using Network = BasicNetwork<float>;
using WideNetwork = BasicNetwork<double>;

}  // namespace cxr

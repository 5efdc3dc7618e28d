#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "core/rng.hpp"
#include "core/tensor.hpp"
#include "nn/layer_spec.hpp"
#include "nn/ops.hpp"

namespace cxr {

// Output per-sample shape (batch axis excluded) of `spec` applied to an input
// of per-sample shape `in`. Throws DimensionError on an invalid chain.
Shape layer_output_shape(const LayerSpec& spec, const Shape& in);

enum class InitRule { kHeUniform, kGlorotUniform };

template <class T>
class Layer {
 public:
  using Tensor = BasicTensor<T>;
  using NamedTensor = std::pair<std::string, Tensor*>;

  virtual ~Layer() = default;

  virtual LayerSpec spec() const = 0;
  const Shape& input_shape() const { return in_; }
  const Shape& output_shape() const { return out_; }

  // Pure inference-mode forward: no caching, no statistic updates, safe for
  // concurrent callers.
  virtual Tensor infer(const Tensor& x) const = 0;
  // Caches what backward needs. Train mode may update running statistics.
  // Takes the activation by value so element-wise layers can work in place.
  virtual Tensor forward(Tensor x, Mode mode) = 0;
  // Accumulates parameter gradients and returns dL/dx.
  virtual Tensor backward(Tensor upstream) = 0;

  virtual std::vector<BasicParam<T>*> params() { return {}; }
  // Every persistent tensor (parameter values and running statistics), in
  // serialization order.
  virtual std::vector<NamedTensor> tensors() { return {}; }
  virtual void initialize(Rng& /*rng*/, InitRule /*rule*/) {}
  // Which branch each piecewise-linear unit (relu sign, pool winner) took in
  // the last forward. Gradient checks use it to reject steps across a kink.
  virtual void append_switch_state(std::vector<std::uint32_t>& /*out*/) const {}

  void set_need_input_grad(bool need) { need_input_grad_ = need; }

 protected:
  Layer(Shape in, Shape out) : in_(std::move(in)), out_(std::move(out)) {}
  bool need_input_grad_ = true;

 private:
  Shape in_;
  Shape out_;
};

template <class T>
std::unique_ptr<Layer<T>> make_layer(const LayerSpec& spec,
                                     const Shape& input_shape);

}  // namespace cxr

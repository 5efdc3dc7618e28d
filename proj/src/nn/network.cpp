#include "nn/network.hpp"

#include "core/error.hpp"

namespace cxr {

template <class T>
BasicNetwork<T>::BasicNetwork(std::vector<LayerSpec> specs, Shape input_shape)
    : specs_(std::move(specs)), input_shape_(std::move(input_shape)) {
  if (specs_.empty()) throw DimensionError("network has no layers");
  Shape shape = input_shape_;
  for (std::size_t i = 0; i < specs_.size(); ++i) {
    if (std::holds_alternative<SoftmaxSpec>(specs_[i]) && i + 1 != specs_.size()) {
      throw DimensionError("layer " + std::to_string(i) +
                           " (softmax): softmax must be the final layer");
    }
    try {
      layers_.push_back(make_layer<T>(specs_[i], shape));
    } catch (const Error& e) {
      throw DimensionError("layer " + std::to_string(i) + " (" +
                           layer_tag(specs_[i]) + ") on input " +
                           shape_str(shape) + ": " + e.what());
    }
    shape = layers_.back()->output_shape();
  }
  layers_.front()->set_need_input_grad(false);
}

template <class T>
void BasicNetwork<T>::initialize(std::uint64_t seed) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const bool feeds_softmax = i + 1 < layers_.size() &&
                               std::holds_alternative<DenseSpec>(specs_[i]) &&
                               std::holds_alternative<SoftmaxSpec>(specs_[i + 1]);
    Rng rng(mix_seed(seed, i));
    layers_[i]->initialize(rng, feeds_softmax ? InitRule::kGlorotUniform
                                              : InitRule::kHeUniform);
  }
}

template <class T>
void BasicNetwork<T>::check_input(const Tensor& x) const {
  Shape expect{x.dim(0)};
  expect.insert(expect.end(), input_shape_.begin(), input_shape_.end());
  if (x.shape() != expect) {
    throw DimensionError("network input " + shape_str(x.shape()) +
                         ", expected [N," + shape_str(input_shape_).substr(1));
  }
}

template <class T>
BasicTensor<T> BasicNetwork<T>::predict(const Tensor& x) const {
  check_input(x);
  Tensor h = layers_.front()->infer(x);
  for (std::size_t i = 1; i < layers_.size(); ++i) h = layers_[i]->infer(h);
  return h;
}

template <class T>
BasicTensor<T> BasicNetwork<T>::forward(const Tensor& x, Mode mode) {
  check_input(x);
  Tensor h = layers_.front()->forward(x, mode);
  for (std::size_t i = 1; i < layers_.size(); ++i) {
    h = layers_[i]->forward(std::move(h), mode);
  }
  return h;
}

template <class T>
void BasicNetwork<T>::backward_range(Tensor grad, std::size_t end) {
  for (std::size_t i = end; i-- > 0;) grad = layers_[i]->backward(std::move(grad));
}

template <class T>
void BasicNetwork<T>::backward(const Tensor& doutput) {
  backward_range(doutput, layers_.size());
}

template <class T>
void BasicNetwork<T>::backward_from_logits(const Tensor& dlogits) {
  std::size_t end = layers_.size();
  if (std::holds_alternative<SoftmaxSpec>(specs_.back())) --end;
  if (end == 0) return;
  backward_range(dlogits, end);
}

template <class T>
void BasicNetwork<T>::zero_grads() {
  for (auto* p : params()) p->zero_grad();
}

template <class T>
std::vector<BasicParam<T>*> BasicNetwork<T>::params() {
  std::vector<BasicParam<T>*> out;
  for (auto& l : layers_) {
    for (auto* p : l->params()) out.push_back(p);
  }
  return out;
}

template <class T>
std::vector<std::pair<std::string, BasicTensor<T>*>> BasicNetwork<T>::tensors() {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    for (auto& [name, t] : layers_[i]->tensors()) {
      out.emplace_back(std::to_string(i) + "." + name, t);
    }
  }
  return out;
}

template <class T>
std::vector<std::pair<std::string, const BasicTensor<T>*>>
BasicNetwork<T>::tensors() const {
  std::vector<std::pair<std::string, const Tensor*>> out;
  for (auto& [name, t] : const_cast<BasicNetwork*>(this)->tensors()) {
    out.emplace_back(name, t);
  }
  return out;
}

template <class T>
std::size_t BasicNetwork<T>::parameter_count() const {
  std::size_t n = 0;
  for (auto* p : const_cast<BasicNetwork*>(this)->params()) n += p->value.size();
  return n;
}

template class BasicNetwork<float>;
template class BasicNetwork<double>;

}  // namespace cxr

#include "nn/layer.hpp"

#include <cmath>

#include "core/error.hpp"

namespace cxr {

std::string layer_tag(const LayerSpec& spec) {
  struct Visitor {
    std::string operator()(const Conv2dSpec&) const { return "conv2d"; }
    std::string operator()(const MaxPool2dSpec&) const { return "maxpool2d"; }
    std::string operator()(const DenseSpec&) const { return "dense"; }
    std::string operator()(const BatchNormSpec&) const { return "batchnorm"; }
    std::string operator()(const ReluSpec&) const { return "relu"; }
    std::string operator()(const FlattenSpec&) const { return "flatten"; }
    std::string operator()(const SoftmaxSpec&) const { return "softmax"; }
    std::string operator()(const InceptionSpec&) const { return "inception"; }
  };
  return std::visit(Visitor{}, spec);
}

namespace {

void require_image(const Shape& in, const char* what) {
  if (in.size() != 3) {
    throw DimensionError(std::string(what) + " needs a [C,H,W] input, got " +
                         shape_str(in));
  }
}

void require_positive(std::size_t v, const char* what) {
  if (v == 0) throw DimensionError(std::string(what) + " must be >= 1");
}

}  // namespace

Shape layer_output_shape(const LayerSpec& spec, const Shape& in) {
  struct Visitor {
    const Shape& in;
    Shape operator()(const Conv2dSpec& s) const {
      require_image(in, "conv2d");
      require_positive(s.out_channels, "conv2d out_channels");
      require_positive(s.kernel_h, "conv2d kernel");
      require_positive(s.kernel_w, "conv2d kernel");
      require_positive(s.stride, "conv2d stride");
      const std::size_t ph = conv_padding(s.kernel_h, s.padding);
      const std::size_t pw = conv_padding(s.kernel_w, s.padding);
      return {s.out_channels, conv_out_dim(in[1], s.kernel_h, s.stride, ph),
              conv_out_dim(in[2], s.kernel_w, s.stride, pw)};
    }
    Shape operator()(const MaxPool2dSpec& s) const {
      require_image(in, "maxpool2d");
      require_positive(s.size, "maxpool2d size");
      require_positive(s.stride, "maxpool2d stride");
      if (s.size > in[1] || s.size > in[2]) {
        throw DimensionError("maxpool2d window " + std::to_string(s.size) +
                             " larger than input " + shape_str(in));
      }
      return {in[0], (in[1] - s.size) / s.stride + 1,
              (in[2] - s.size) / s.stride + 1};
    }
    Shape operator()(const DenseSpec& s) const {
      if (in.size() != 1) {
        throw DimensionError("dense needs a flat input, got " + shape_str(in));
      }
      require_positive(s.out_features, "dense out_features");
      return {s.out_features};
    }
    Shape operator()(const BatchNormSpec& s) const {
      if (in.empty() || in[0] != s.channels) {
        throw DimensionError("batchnorm over " + std::to_string(s.channels) +
                             " channels applied to " + shape_str(in));
      }
      if (!(s.epsilon > 0.0) || !(s.momentum > 0.0 && s.momentum < 1.0)) {
        throw DimensionError("batchnorm needs epsilon > 0 and momentum in (0,1)");
      }
      return in;
    }
    Shape operator()(const ReluSpec&) const { return in; }
    Shape operator()(const FlattenSpec&) const { return {shape_numel(in)}; }
    Shape operator()(const SoftmaxSpec&) const {
      if (in.size() != 1 || in[0] < 2) {
        throw DimensionError("softmax needs a flat input of width >= 2, got " +
                             shape_str(in));
      }
      return in;
    }
    Shape operator()(const InceptionSpec& s) const {
      require_image(in, "inception");
      require_positive(s.b1, "inception b1");
      require_positive(s.b3, "inception b3");
      require_positive(s.b5, "inception b5");
      require_positive(s.bpool, "inception bpool");
      // the 5x5 branch bounds the minimum size under same padding
      conv_out_dim(in[1], 5, 1, 2);
      conv_out_dim(in[2], 5, 1, 2);
      return {s.out_channels(), in[1], in[2]};
    }
  };
  return std::visit(Visitor{in}, spec);
}

namespace {

template <class T>
void fill_uniform(BasicTensor<T>& t, Rng& rng, double limit) {
  for (T& v : t.data()) v = static_cast<T>(rng.uniform(-limit, limit));
}

double init_limit(InitRule rule, double fan_in, double fan_out) {
  return rule == InitRule::kHeUniform ? std::sqrt(6.0 / fan_in)
                                      : std::sqrt(6.0 / (fan_in + fan_out));
}

// ---- conv

template <class T>
class ConvLayer final : public Layer<T> {
 public:
  using typename Layer<T>::Tensor;
  using typename Layer<T>::NamedTensor;

  ConvLayer(const Conv2dSpec& s, const Shape& in)
      : Layer<T>(in, layer_output_shape(s, in)),
        spec_(s),
        kernel_(Tensor(Shape{s.out_channels, in[0], s.kernel_h, s.kernel_w})),
        bias_(Tensor(Shape{s.out_channels})) {
    if (s.kernel_h != s.kernel_w && s.padding == Padding::kSame) {
      throw DimensionError("same padding needs a square kernel");
    }
    geom_ = {s.stride, conv_padding(s.kernel_h, s.padding)};
  }

  LayerSpec spec() const override { return spec_; }
  Tensor infer(const Tensor& x) const override {
    return conv2d_forward(x, kernel_, bias_, geom_);
  }
  Tensor forward(Tensor x, Mode) override {
    input_ = std::move(x);
    return conv2d_forward(input_, kernel_, bias_, geom_);
  }
  Tensor backward(Tensor up) override {
    return conv2d_backward(input_, kernel_, bias_, geom_, up,
                           this->need_input_grad_);
  }
  std::vector<BasicParam<T>*> params() override { return {&kernel_, &bias_}; }
  std::vector<NamedTensor> tensors() override {
    return {{"weight", &kernel_.value}, {"bias", &bias_.value}};
  }
  void initialize(Rng& rng, InitRule rule) override {
    const double area = static_cast<double>(spec_.kernel_h * spec_.kernel_w);
    const double fan_in = area * static_cast<double>(this->input_shape()[0]);
    const double fan_out = area * static_cast<double>(spec_.out_channels);
    fill_uniform(kernel_.value, rng, init_limit(rule, fan_in, fan_out));
    bias_.value.fill(T(0));
  }

 private:
  Conv2dSpec spec_;
  ConvGeometry geom_;
  BasicParam<T> kernel_;
  BasicParam<T> bias_;
  Tensor input_;
};

// ---- max pool

template <class T>
class PoolLayer final : public Layer<T> {
 public:
  using typename Layer<T>::Tensor;

  PoolLayer(const MaxPool2dSpec& s, const Shape& in)
      : Layer<T>(in, layer_output_shape(s, in)), spec_(s), geom_{s.size, s.stride, 0} {}

  LayerSpec spec() const override { return spec_; }
  Tensor infer(const Tensor& x) const override {
    return maxpool2d_forward<T>(x, geom_, nullptr);
  }
  Tensor forward(Tensor x, Mode) override {
    input_shape_ = x.shape();
    return maxpool2d_forward<T>(x, geom_, &argmax_);
  }
  Tensor backward(Tensor up) override {
    return maxpool2d_backward<T>(input_shape_, argmax_, up);
  }
  void append_switch_state(std::vector<std::uint32_t>& out) const override {
    out.insert(out.end(), argmax_.begin(), argmax_.end());
  }

 private:
  MaxPool2dSpec spec_;
  PoolGeometry geom_;
  Shape input_shape_;
  std::vector<std::uint32_t> argmax_;
};

// ---- dense

template <class T>
class DenseLayer final : public Layer<T> {
 public:
  using typename Layer<T>::Tensor;
  using typename Layer<T>::NamedTensor;

  DenseLayer(const DenseSpec& s, const Shape& in)
      : Layer<T>(in, layer_output_shape(s, in)),
        spec_(s),
        weight_(Tensor(Shape{in[0], s.out_features})),
        bias_(Tensor(Shape{s.out_features})) {}

  LayerSpec spec() const override { return spec_; }
  Tensor infer(const Tensor& x) const override {
    return dense_forward(x, weight_, bias_);
  }
  Tensor forward(Tensor x, Mode) override {
    input_ = std::move(x);
    return dense_forward(input_, weight_, bias_);
  }
  Tensor backward(Tensor up) override {
    return dense_backward(input_, weight_, bias_, up, this->need_input_grad_);
  }
  std::vector<BasicParam<T>*> params() override { return {&weight_, &bias_}; }
  std::vector<NamedTensor> tensors() override {
    return {{"weight", &weight_.value}, {"bias", &bias_.value}};
  }
  void initialize(Rng& rng, InitRule rule) override {
    fill_uniform(weight_.value, rng,
                 init_limit(rule, static_cast<double>(weight_.value.dim(0)),
                            static_cast<double>(weight_.value.dim(1))));
    bias_.value.fill(T(0));
  }

 private:
  DenseSpec spec_;
  BasicParam<T> weight_;
  BasicParam<T> bias_;
  Tensor input_;
};

// ---- batchnorm

template <class T>
class BatchNormLayer final : public Layer<T> {
 public:
  using typename Layer<T>::Tensor;
  using typename Layer<T>::NamedTensor;

  BatchNormLayer(const BatchNormSpec& s, const Shape& in)
      : Layer<T>(in, layer_output_shape(s, in)),
        spec_(s),
        gamma_(Tensor(Shape{s.channels}, T(1))),
        beta_(Tensor(Shape{s.channels}, T(0))),
        stats_(s.channels, s.momentum, s.epsilon) {}

  LayerSpec spec() const override { return spec_; }
  Tensor infer(const Tensor& x) const override {
    return batchnorm_infer(x, gamma_, beta_, stats_);
  }
  Tensor forward(Tensor x, Mode mode) override {
    return batchnorm_forward(x, gamma_, beta_, stats_, mode, &cache_);
  }
  Tensor backward(Tensor up) override {
    return batchnorm_backward(cache_, gamma_, beta_, up);
  }
  std::vector<BasicParam<T>*> params() override { return {&gamma_, &beta_}; }
  std::vector<NamedTensor> tensors() override {
    return {{"gamma", &gamma_.value},
            {"beta", &beta_.value},
            {"running_mean", &stats_.running_mean},
            {"running_var", &stats_.running_var}};
  }
  void initialize(Rng&, InitRule) override {
    gamma_.value.fill(T(1));
    beta_.value.fill(T(0));
    stats_.running_mean.fill(T(0));
    stats_.running_var.fill(T(1));
  }

 private:
  BatchNormSpec spec_;
  BasicParam<T> gamma_;
  BasicParam<T> beta_;
  BasicBatchStats<T> stats_;
  BatchNormCache<T> cache_;
};

// ---- relu

template <class T>
class ReluLayer final : public Layer<T> {
 public:
  using typename Layer<T>::Tensor;

  explicit ReluLayer(const Shape& in) : Layer<T>(in, in) {}

  LayerSpec spec() const override { return ReluSpec{}; }
  Tensor infer(const Tensor& x) const override { return relu(x); }
  Tensor forward(Tensor x, Mode) override {
    mask_.resize(x.size());
    T* p = x.ptr();
    for (std::size_t i = 0; i < x.size(); ++i) {
      const bool on = p[i] > T(0);
      mask_[i] = on;
      p[i] = on ? p[i] : T(0);
    }
    return x;
  }
  Tensor backward(Tensor up) override {
    if (up.size() != mask_.size()) {
      throw DimensionError("relu backward: upstream " + shape_str(up.shape()) +
                           " does not match cached forward");
    }
    T* p = up.ptr();
    for (std::size_t i = 0; i < up.size(); ++i) p[i] = mask_[i] ? p[i] : T(0);
    return up;
  }
  void append_switch_state(std::vector<std::uint32_t>& out) const override {
    out.insert(out.end(), mask_.begin(), mask_.end());
  }

 private:
  std::vector<std::uint8_t> mask_;
};

// ---- flatten

template <class T>
class FlattenLayer final : public Layer<T> {
 public:
  using typename Layer<T>::Tensor;

  explicit FlattenLayer(const Shape& in)
      : Layer<T>(in, layer_output_shape(FlattenSpec{}, in)) {}

  LayerSpec spec() const override { return FlattenSpec{}; }
  Tensor infer(const Tensor& x) const override {
    return reshape(x, Shape{x.dim(0), x.size() / x.dim(0)});
  }
  Tensor forward(Tensor x, Mode) override {
    in_shape_ = x.shape();
    x.reshape_in_place(Shape{x.dim(0), x.size() / x.dim(0)});
    return x;
  }
  Tensor backward(Tensor up) override {
    up.reshape_in_place(in_shape_);
    return up;
  }

 private:
  Shape in_shape_;
};

// ---- softmax

template <class T>
class SoftmaxLayer final : public Layer<T> {
 public:
  using typename Layer<T>::Tensor;

  explicit SoftmaxLayer(const Shape& in)
      : Layer<T>(in, layer_output_shape(SoftmaxSpec{}, in)) {}

  LayerSpec spec() const override { return SoftmaxSpec{}; }
  Tensor infer(const Tensor& x) const override { return softmax(x); }
  Tensor forward(Tensor x, Mode) override {
    probs_ = softmax(x);
    return probs_;
  }
  Tensor backward(Tensor up) override {
    return softmax_backward(probs_, up);
  }

 private:
  Tensor probs_;
};

// ---- inception

template <class T>
class InceptionLayer final : public Layer<T> {
 public:
  using typename Layer<T>::Tensor;
  using typename Layer<T>::NamedTensor;

  InceptionLayer(const InceptionSpec& s, const Shape& in)
      : Layer<T>(in, layer_output_shape(s, in)),
        spec_(s),
        b1_(Conv2dSpec{s.b1, 1, 1, 1, Padding::kSame}, in),
        b3_(Conv2dSpec{s.b3, 3, 3, 1, Padding::kSame}, in),
        b5_(Conv2dSpec{s.b5, 5, 5, 1, Padding::kSame}, in),
        bp_(Conv2dSpec{s.bpool, 1, 1, 1, Padding::kSame}, in) {}

  LayerSpec spec() const override { return spec_; }

  Tensor infer(const Tensor& x) const override {
    const Tensor pooled = maxpool2d_forward<T>(x, kPool, nullptr);
    return concat({b1_.infer(x), b3_.infer(x), b5_.infer(x), bp_.infer(pooled)});
  }

  Tensor forward(Tensor x, Mode mode) override {
    in_shape_ = x.shape();
    const Tensor pooled = maxpool2d_forward<T>(x, kPool, &pool_argmax_);
    return concat({b1_.forward(x, mode), b3_.forward(x, mode),
                   b5_.forward(x, mode), bp_.forward(pooled, mode)});
  }

  Tensor backward(Tensor up) override {
    const std::size_t n = up.dim(0);
    const std::size_t h = up.dim(2), w = up.dim(3);
    const std::size_t widths[4] = {spec_.b1, spec_.b3, spec_.b5, spec_.bpool};
    if (up.dim(1) != spec_.out_channels()) {
      throw DimensionError("inception backward: upstream " + shape_str(up.shape()));
    }
    std::size_t offset = 0;
    Tensor dx(in_shape_, T(0));
    ConvLayer<T>* convs[4] = {&b1_, &b3_, &b5_, &bp_};
    for (int b = 0; b < 4; ++b) {
      Tensor slice(Shape{n, widths[b], h, w});
      for (std::size_t i = 0; i < n; ++i) {
        const T* src = up.ptr() + (i * spec_.out_channels() + offset) * h * w;
        std::copy(src, src + widths[b] * h * w, slice.ptr() + i * widths[b] * h * w);
      }
      offset += widths[b];
      Tensor g = convs[b]->backward(slice);
      if (b == 3) g = maxpool2d_backward<T>(in_shape_, pool_argmax_, g);
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g[i];
    }
    return dx;
  }

  std::vector<BasicParam<T>*> params() override {
    std::vector<BasicParam<T>*> out;
    for (auto* c : branches()) {
      for (auto* p : c->params()) out.push_back(p);
    }
    return out;
  }
  std::vector<NamedTensor> tensors() override {
    static constexpr const char* kNames[4] = {"b1", "b3", "b5", "bpool"};
    std::vector<NamedTensor> out;
    auto br = branches();
    for (int b = 0; b < 4; ++b) {
      for (auto& [name, t] : br[b]->tensors()) {
        out.emplace_back(std::string(kNames[b]) + "." + name, t);
      }
    }
    return out;
  }
  void initialize(Rng& rng, InitRule rule) override {
    for (auto* c : branches()) c->initialize(rng, rule);
  }
  void append_switch_state(std::vector<std::uint32_t>& out) const override {
    out.insert(out.end(), pool_argmax_.begin(), pool_argmax_.end());
  }

 private:
  static constexpr PoolGeometry kPool{3, 1, 1};

  std::vector<ConvLayer<T>*> branches() { return {&b1_, &b3_, &b5_, &bp_}; }

  Tensor concat(std::initializer_list<Tensor> parts) const {
    const Tensor& first = *parts.begin();
    const std::size_t n = first.dim(0), h = first.dim(2), w = first.dim(3);
    std::size_t total = 0;
    for (const Tensor& p : parts) {
      if (p.dim(0) != n || p.dim(2) != h || p.dim(3) != w) {
        throw DimensionError("inception branch output " + shape_str(p.shape()) +
                             " does not match " + shape_str(first.shape()));
      }
      total += p.dim(1);
    }
    Tensor out(Shape{n, total, h, w});
    for (std::size_t i = 0; i < n; ++i) {
      T* dst = out.ptr() + i * total * h * w;
      for (const Tensor& p : parts) {
        const std::size_t len = p.dim(1) * h * w;
        const T* src = p.ptr() + i * len;
        dst = std::copy(src, src + len, dst);
      }
    }
    return out;
  }

  InceptionSpec spec_;
  ConvLayer<T> b1_, b3_, b5_, bp_;
  Shape in_shape_;
  std::vector<std::uint32_t> pool_argmax_;
};

}  // namespace

template <class T>
std::unique_ptr<Layer<T>> make_layer(const LayerSpec& spec, const Shape& in) {
  struct Visitor {
    const Shape& in;
    std::unique_ptr<Layer<T>> operator()(const Conv2dSpec& s) const {
      return std::make_unique<ConvLayer<T>>(s, in);
    }
    std::unique_ptr<Layer<T>> operator()(const MaxPool2dSpec& s) const {
      return std::make_unique<PoolLayer<T>>(s, in);
    }
    std::unique_ptr<Layer<T>> operator()(const DenseSpec& s) const {
      return std::make_unique<DenseLayer<T>>(s, in);
    }
    std::unique_ptr<Layer<T>> operator()(const BatchNormSpec& s) const {
      return std::make_unique<BatchNormLayer<T>>(s, in);
    }
    std::unique_ptr<Layer<T>> operator()(const ReluSpec&) const {
      return std::make_unique<ReluLayer<T>>(in);
    }
    std::unique_ptr<Layer<T>> operator()(const FlattenSpec&) const {
      return std::make_unique<FlattenLayer<T>>(in);
    }
    std::unique_ptr<Layer<T>> operator()(const SoftmaxSpec&) const {
      return std::make_unique<SoftmaxLayer<T>>(in);
    }
    std::unique_ptr<Layer<T>> operator()(const InceptionSpec& s) const {
      return std::make_unique<InceptionLayer<T>>(s, in);
    }
  };
  return std::visit(Visitor{in}, spec);
}

template std::unique_ptr<Layer<float>> make_layer(const LayerSpec&, const Shape&);
template std::unique_ptr<Layer<double>> make_layer(const LayerSpec&, const Shape&);

}  // namespace cxr

#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace cxr {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

// Dense row-major array (last axis fastest). Image batches use [N, C, H, W].
// The float instantiation carries all production compute; the double one
// exists for the widened gradient-check harness.
template <class T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() : BasicTensor(Shape{1}) {}
  explicit BasicTensor(Shape shape, T fill = T(0));
  BasicTensor(Shape shape, std::vector<T> data);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  T* ptr() noexcept { return data_.data(); }
  const T* ptr() const noexcept { return data_.data(); }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& at(std::initializer_list<std::size_t> index);
  const T& at(std::initializer_list<std::size_t> index) const;

  void fill(T value);
  // Relabels the shape; element count must be unchanged.
  void reshape_in_place(Shape new_shape);
  bool all_finite() const;

  template <class U>
  BasicTensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return BasicTensor<U>(shape_, std::move(out));
  }

  friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  std::size_t offset(std::initializer_list<std::size_t> index) const;

  Shape shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;
using WideTensor = BasicTensor<double>;

enum class Elementwise { kAdd, kSub, kMul, kScale, kRelu, kExp, kLog };
enum class Reduction { kSum, kMean, kMax, kArgmax };

// c[i,j] = sum_t a[i,t] * b[t,j], accumulated in ascending t.
template <class T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);

// Unary forms: relu, exp, log.
template <class T>
BasicTensor<T> elementwise(Elementwise op, const BasicTensor<T>& a);
// Binary forms: add, sub, mul on identical shapes.
template <class T>
BasicTensor<T> elementwise(Elementwise op, const BasicTensor<T>& a,
                           const BasicTensor<T>& b);
// Scalar forms: add, sub, mul, scale.
template <class T>
BasicTensor<T> elementwise(Elementwise op, const BasicTensor<T>& a, T b);

// Collapses `axis`. A rank-1 input reduces to shape {1}. Argmax ties resolve
// to the lowest index and the index is stored as a value of T.
template <class T>
BasicTensor<T> reduce(Reduction op, const BasicTensor<T>& a, std::size_t axis);

template <class T>
BasicTensor<T> reshape(const BasicTensor<T>& a, Shape new_shape);

template <class T>
BasicTensor<T> transpose2d(const BasicTensor<T>& a);

template <class T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return elementwise(Elementwise::kAdd, a, b);
}
template <class T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return elementwise(Elementwise::kSub, a, b);
}
template <class T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return elementwise(Elementwise::kMul, a, b);
}
template <class T>
BasicTensor<T> scale(const BasicTensor<T>& a, T s) {
  return elementwise(Elementwise::kScale, a, s);
}
template <class T>
BasicTensor<T> relu(const BasicTensor<T>& a) {
  return elementwise(Elementwise::kRelu, a);
}

}  // namespace cxr

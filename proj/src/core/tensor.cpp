#include "core/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "core/error.hpp"
#include "core/gemm.hpp"

namespace cxr {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

namespace {

void check_shape(const Shape& shape) {
  if (shape.empty()) throw DimensionError("tensor shape must be non-empty");
  for (std::size_t d : shape) {
    if (d == 0) {
      throw DimensionError("zero-sized dimension in shape " + shape_str(shape));
    }
  }
}

template <class T>
void check_finite_result(const BasicTensor<T>& t, const char* op) {
  if (!t.all_finite()) {
    throw DomainError(std::string(op) + " produced a non-finite value");
  }
}

}  // namespace

template <class T>
BasicTensor<T>::BasicTensor(Shape shape, T fill) : shape_(std::move(shape)) {
  check_shape(shape_);
  data_.assign(shape_numel(shape_), fill);
}

template <class T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  check_shape(shape_);
  if (data_.size() != shape_numel(shape_)) {
    throw DimensionError("data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_str(shape_));
  }
}

template <class T>
std::size_t BasicTensor<T>::offset(
    std::initializer_list<std::size_t> index) const {
  if (index.size() != shape_.size()) {
    throw DimensionError("index rank " + std::to_string(index.size()) +
                         " for tensor of shape " + shape_str(shape_));
  }
  std::size_t off = 0;
  std::size_t axis = 0;
  for (std::size_t i : index) {
    if (i >= shape_[axis]) {
      throw DimensionError("index out of range for shape " + shape_str(shape_));
    }
    off = off * shape_[axis] + i;
    ++axis;
  }
  return off;
}

template <class T>
T& BasicTensor<T>::at(std::initializer_list<std::size_t> index) {
  return data_[offset(index)];
}

template <class T>
const T& BasicTensor<T>::at(std::initializer_list<std::size_t> index) const {
  return data_[offset(index)];
}

template <class T>
void BasicTensor<T>::fill(T value) {
  std::fill(data_.begin(), data_.end(), value);
}

template <class T>
void BasicTensor<T>::reshape_in_place(Shape new_shape) {
  check_shape(new_shape);
  if (shape_numel(new_shape) != data_.size()) {
    throw DimensionError("reshape " + shape_str(shape_) + " -> " +
                         shape_str(new_shape) + ": element count mismatch");
  }
  shape_ = std::move(new_shape);
}

template <class T>
bool BasicTensor<T>::all_finite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](T v) { return std::isfinite(v); });
}

template <class T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0);
  const std::size_t k = a.dim(1);
  const std::size_t n = b.dim(1);
  BasicTensor<T> c(Shape{m, n});
  gemm<T>(m, n, k, a.ptr(), k, false, b.ptr(), n, false, c.ptr(), n, false);
  return c;
}

template <class T>
BasicTensor<T> elementwise(Elementwise op, const BasicTensor<T>& a) {
  BasicTensor<T> out = a;
  auto d = out.data();
  switch (op) {
    case Elementwise::kRelu:
      for (T& v : d) v = v > T(0) ? v : T(0);
      break;
    case Elementwise::kExp:
      for (T& v : d) v = std::exp(v);
      check_finite_result(out, "exp");
      break;
    case Elementwise::kLog:
      for (T& v : d) {
        if (!(v > T(0))) {
          throw DomainError("log of non-positive value " + std::to_string(v));
        }
        v = std::log(v);
      }
      break;
    default:
      throw UsageError("elementwise: operation needs a second operand");
  }
  return out;
}

template <class T>
BasicTensor<T> elementwise(Elementwise op, const BasicTensor<T>& a,
                           const BasicTensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("elementwise " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  BasicTensor<T> out = a;
  auto d = out.data();
  auto e = b.data();
  switch (op) {
    case Elementwise::kAdd:
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += e[i];
      break;
    case Elementwise::kSub:
      for (std::size_t i = 0; i < d.size(); ++i) d[i] -= e[i];
      break;
    case Elementwise::kMul:
      for (std::size_t i = 0; i < d.size(); ++i) d[i] *= e[i];
      break;
    default:
      throw UsageError("elementwise: operation is not binary");
  }
  check_finite_result(out, "elementwise");
  return out;
}

template <class T>
BasicTensor<T> elementwise(Elementwise op, const BasicTensor<T>& a, T b) {
  BasicTensor<T> out = a;
  auto d = out.data();
  switch (op) {
    case Elementwise::kAdd:
      for (T& v : d) v += b;
      break;
    case Elementwise::kSub:
      for (T& v : d) v -= b;
      break;
    case Elementwise::kMul:
    case Elementwise::kScale:
      for (T& v : d) v *= b;
      break;
    default:
      throw UsageError("elementwise: operation does not take a scalar");
  }
  check_finite_result(out, "elementwise");
  return out;
}

template <class T>
BasicTensor<T> reduce(Reduction op, const BasicTensor<T>& a, std::size_t axis) {
  if (axis >= a.rank()) {
    throw DimensionError("reduce axis " + std::to_string(axis) +
                         " out of range for " + shape_str(a.shape()));
  }
  std::size_t outer = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= a.dim(i);
  const std::size_t len = a.dim(axis);
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < a.rank(); ++i) inner *= a.dim(i);

  Shape out_shape;
  for (std::size_t i = 0; i < a.rank(); ++i) {
    if (i != axis) out_shape.push_back(a.dim(i));
  }
  if (out_shape.empty()) out_shape.push_back(1);
  BasicTensor<T> out(out_shape);

  const T* src = a.ptr();
  T* dst = out.ptr();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const T* p = src + o * len * inner + in;
      T acc = T(0);
      switch (op) {
        case Reduction::kSum:
        case Reduction::kMean: {
          acc = T(0);
          for (std::size_t t = 0; t < len; ++t) acc += p[t * inner];
          if (op == Reduction::kMean) acc /= static_cast<T>(len);
          break;
        }
        case Reduction::kMax: {
          acc = p[0];
          for (std::size_t t = 1; t < len; ++t) acc = std::max(acc, p[t * inner]);
          break;
        }
        case Reduction::kArgmax: {
          std::size_t best = 0;
          for (std::size_t t = 1; t < len; ++t) {
            if (p[t * inner] > p[best * inner]) best = t;
          }
          acc = static_cast<T>(best);
          break;
        }
      }
      dst[o * inner + in] = acc;
    }
  }
  return out;
}

template <class T>
BasicTensor<T> reshape(const BasicTensor<T>& a, Shape new_shape) {
  if (new_shape.empty() || shape_numel(new_shape) != a.size()) {
    throw DimensionError("reshape " + shape_str(a.shape()) + " -> " +
                         shape_str(new_shape) + ": element count mismatch");
  }
  return BasicTensor<T>(std::move(new_shape),
                        std::vector<T>(a.data().begin(), a.data().end()));
}

template <class T>
BasicTensor<T> transpose2d(const BasicTensor<T>& a) {
  if (a.rank() != 2) {
    throw DimensionError("transpose2d needs rank 2, got " + shape_str(a.shape()));
  }
  const std::size_t r = a.dim(0);
  const std::size_t c = a.dim(1);
  BasicTensor<T> out(Shape{c, r});
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a[i * c + j];
  }
  return out;
}

#define CXR_INSTANTIATE(T)                                                   \
  template class BasicTensor<T>;                                             \
  template BasicTensor<T> matmul(const BasicTensor<T>&, const BasicTensor<T>&); \
  template BasicTensor<T> elementwise(Elementwise, const BasicTensor<T>&);   \
  template BasicTensor<T> elementwise(Elementwise, const BasicTensor<T>&,    \
                                      const BasicTensor<T>&);                \
  template BasicTensor<T> elementwise(Elementwise, const BasicTensor<T>&, T); \
  template BasicTensor<T> reduce(Reduction, const BasicTensor<T>&,           \
                                 std::size_t);                               \
  template BasicTensor<T> reshape(const BasicTensor<T>&, Shape);             \
  template BasicTensor<T> transpose2d(const BasicTensor<T>&);

CXR_INSTANTIATE(float)
CXR_INSTANTIATE(double)

#undef CXR_INSTANTIATE

}  // namespace cxr

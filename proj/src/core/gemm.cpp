#include "core/gemm.hpp"

#include <algorithm>
#include <vector>

namespace cxr {
namespace {

constexpr std::size_t kRows = 6;
constexpr std::size_t kVecBytes = 64;

template <class T>
struct VecOf {
  typedef T type __attribute__((vector_size(kVecBytes)));
};

template <class T>
constexpr std::size_t kLanes = kVecBytes / sizeof(T);

template <class T>
constexpr std::size_t kCols = 2 * kLanes<T>;

template <class T>
void pack_transposed(const T* src, std::size_t rows, std::size_t cols,
                     std::size_t ld, std::vector<T>& dst) {
  // src is stored [cols, rows] with stride ld; dst becomes [rows, cols].
  dst.resize(rows * cols);
  for (std::size_t r = 0; r < cols; ++r) {
    const T* s = src + r * ld;
    for (std::size_t c = 0; c < rows; ++c) dst[c * cols + r] = s[c];
  }
}

template <class V>
inline V load(const void* p) {
  V v;
  __builtin_memcpy(&v, p, sizeof(V));
  return v;
}

template <class V>
inline void store(void* p, V v) {
  __builtin_memcpy(p, &v, sizeof(V));
}

// kRows x (2 vectors) register tile.
template <class T>
void full_tile(std::size_t k, const T* a, std::size_t lda, const T* b,
               std::size_t ldb, T* c, std::size_t ldc, bool accumulate) {
  using V = typename VecOf<T>::type;
  constexpr std::size_t L = kLanes<T>;
  V acc[kRows][2];
  for (std::size_t r = 0; r < kRows; ++r) {
    if (accumulate) {
      acc[r][0] = load<V>(c + r * ldc);
      acc[r][1] = load<V>(c + r * ldc + L);
    } else {
      acc[r][0] = V{};
      acc[r][1] = V{};
    }
  }
  for (std::size_t t = 0; t < k; ++t) {
    const V b0 = load<V>(b + t * ldb);
    const V b1 = load<V>(b + t * ldb + L);
#pragma GCC unroll 6
    for (std::size_t r = 0; r < kRows; ++r) {
      const T av = a[r * lda + t];
      acc[r][0] += av * b0;
      acc[r][1] += av * b1;
    }
  }
  for (std::size_t r = 0; r < kRows; ++r) {
    store(c + r * ldc, acc[r][0]);
    store(c + r * ldc + L, acc[r][1]);
  }
}

template <class T>
void edge_tile(std::size_t mr, std::size_t nr, std::size_t k, const T* a,
               std::size_t lda, const T* b, std::size_t ldb, T* c,
               std::size_t ldc, bool accumulate) {
  T acc[kRows][kCols<T>];
  for (std::size_t r = 0; r < mr; ++r) {
    for (std::size_t j = 0; j < nr; ++j) {
      acc[r][j] = accumulate ? c[r * ldc + j] : T(0);
    }
  }
  for (std::size_t t = 0; t < k; ++t) {
    const T* brow = b + t * ldb;
    for (std::size_t r = 0; r < mr; ++r) {
      const T av = a[r * lda + t];
      for (std::size_t j = 0; j < nr; ++j) acc[r][j] += av * brow[j];
    }
  }
  for (std::size_t r = 0; r < mr; ++r) {
    for (std::size_t j = 0; j < nr; ++j) c[r * ldc + j] = acc[r][j];
  }
}

}  // namespace

template <class T>
void gemm(std::size_t m, std::size_t n, std::size_t k, const T* a,
          std::size_t lda, bool trans_a, const T* b, std::size_t ldb,
          bool trans_b, T* c, std::size_t ldc, bool accumulate) {
  if (m == 0 || n == 0) return;
  thread_local std::vector<T> packed_a;
  thread_local std::vector<T> packed_b;
  if (trans_a) {
    pack_transposed(a, m, k, lda, packed_a);
    a = packed_a.data();
    lda = k;
  }
  if (trans_b) {
    pack_transposed(b, k, n, ldb, packed_b);
    b = packed_b.data();
    ldb = n;
  }
  constexpr std::size_t cols = kCols<T>;
  for (std::size_t j0 = 0; j0 < n; j0 += cols) {
    const std::size_t nr = std::min(cols, n - j0);
    for (std::size_t i0 = 0; i0 < m; i0 += kRows) {
      const std::size_t mr = std::min(kRows, m - i0);
      const T* ap = a + i0 * lda;
      T* cp = c + i0 * ldc + j0;
      if (mr == kRows && nr == cols) {
        full_tile(k, ap, lda, b + j0, ldb, cp, ldc, accumulate);
      } else {
        edge_tile(mr, nr, k, ap, lda, b + j0, ldb, cp, ldc, accumulate);
      }
    }
  }
}

template void gemm<float>(std::size_t, std::size_t, std::size_t, const float*,
                          std::size_t, bool, const float*, std::size_t, bool,
                          float*, std::size_t, bool);
template void gemm<double>(std::size_t, std::size_t, std::size_t,
                           const double*, std::size_t, bool, const double*,
                           std::size_t, bool, double*, std::size_t, bool);

}  // namespace cxr

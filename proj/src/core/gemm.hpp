#pragma once

#include <cstddef>

namespace cxr {

// Row-major C[M,N] (+)= op(A)[M,K] * op(B)[K,N].
//
// op(X) is X or its transpose; lda/ldb are the row strides of the stored
// (untransposed) arrays. Every output element is accumulated in ascending k
// starting from 0 (or from its previous value when `accumulate`), so results
// are bit-reproducible and independent of blocking. Single-threaded; callers
// parallelize over independent outputs.
template <class T>
void gemm(std::size_t m, std::size_t n, std::size_t k, const T* a,
          std::size_t lda, bool trans_a, const T* b, std::size_t ldb,
          bool trans_b, T* c, std::size_t ldc, bool accumulate);

}  // namespace cxr

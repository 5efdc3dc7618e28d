#include "nn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>

#include "core/error.hpp"
#include "core/gemm.hpp"

namespace cxr {
namespace {

// Fixed partition used for parameter-gradient reductions across the batch.
// The partial sums are combined in chunk order, so the result does not
// depend on how many threads run the chunks.
constexpr std::size_t kGradChunks = 4;

using Index = std::ptrdiff_t;

template <class T>
void im2col(const T* x, std::size_t channels, std::size_t h, std::size_t w,
            std::size_t kh, std::size_t kw, ConvGeometry g, std::size_t ho,
            std::size_t wo, T* cols) {
  const std::size_t hw = ho * wo;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t i = 0; i < kh; ++i) {
      for (std::size_t j = 0; j < kw; ++j) {
        T* row = cols + ((c * kh + i) * kw + j) * hw;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const Index iy = static_cast<Index>(oy * g.stride + i) - static_cast<Index>(g.pad);
          T* dst = row + oy * wo;
          if (iy < 0 || iy >= static_cast<Index>(h)) {
            std::fill(dst, dst + wo, T(0));
            continue;
          }
          const T* src = x + (c * h + static_cast<std::size_t>(iy)) * w;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const Index ix = static_cast<Index>(ox * g.stride + j) - static_cast<Index>(g.pad);
            dst[ox] = (ix < 0 || ix >= static_cast<Index>(w)) ? T(0) : src[ix];
          }
        }
      }
    }
  }
}

template <class T>
void col2im(const T* cols, std::size_t channels, std::size_t h, std::size_t w,
            std::size_t kh, std::size_t kw, ConvGeometry g, std::size_t ho,
            std::size_t wo, T* dx) {
  const std::size_t hw = ho * wo;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t i = 0; i < kh; ++i) {
      for (std::size_t j = 0; j < kw; ++j) {
        const T* row = cols + ((c * kh + i) * kw + j) * hw;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const Index iy = static_cast<Index>(oy * g.stride + i) - static_cast<Index>(g.pad);
          if (iy < 0 || iy >= static_cast<Index>(h)) continue;
          T* dst = dx + (c * h + static_cast<std::size_t>(iy)) * w;
          const T* src = row + oy * wo;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const Index ix = static_cast<Index>(ox * g.stride + j) - static_cast<Index>(g.pad);
            if (ix >= 0 && ix < static_cast<Index>(w)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

bool is_pointwise(std::size_t kh, std::size_t kw, ConvGeometry g) {
  return kh == 1 && kw == 1 && g.stride == 1 && g.pad == 0;
}

struct ConvDims {
  std::size_t n, c, h, w, f, kh, kw, ho, wo;
  std::size_t ckk() const { return c * kh * kw; }
  std::size_t hw() const { return ho * wo; }
};

template <class T>
ConvDims conv_dims(const BasicTensor<T>& x, const BasicParam<T>& kernel,
                   const BasicParam<T>& bias, ConvGeometry g) {
  if (x.rank() != 4 || kernel.value.rank() != 4) {
    throw DimensionError("conv2d expects x [N,C,H,W] and kernel [F,C,kh,kw], got " +
                         shape_str(x.shape()) + " and " +
                         shape_str(kernel.value.shape()));
  }
  if (kernel.value.dim(1) != x.dim(1)) {
    throw DimensionError("conv2d channel mismatch: x " + shape_str(x.shape()) +
                         " kernel " + shape_str(kernel.value.shape()));
  }
  if (bias.value.size() != kernel.value.dim(0)) {
    throw DimensionError("conv2d bias " + shape_str(bias.value.shape()) +
                         " for kernel " + shape_str(kernel.value.shape()));
  }
  if (g.stride == 0) throw DimensionError("conv2d stride must be >= 1");
  ConvDims d{x.dim(0), x.dim(1), x.dim(2), x.dim(3), kernel.value.dim(0),
             kernel.value.dim(2), kernel.value.dim(3), 0, 0};
  d.ho = conv_out_dim(d.h, d.kh, g.stride, g.pad);
  d.wo = conv_out_dim(d.w, d.kw, g.stride, g.pad);
  return d;
}

}  // namespace

std::size_t conv_padding(std::size_t kernel, Padding padding) {
  if (padding == Padding::kValid) return 0;
  if (kernel % 2 == 0) {
    throw DimensionError("same padding needs an odd kernel, got " +
                         std::to_string(kernel));
  }
  return kernel / 2;
}

std::size_t conv_out_dim(std::size_t in, std::size_t kernel, std::size_t stride,
                         std::size_t pad) {
  if (kernel > in + 2 * pad) {
    throw DimensionError("kernel " + std::to_string(kernel) +
                         " larger than padded input " +
                         std::to_string(in + 2 * pad));
  }
  return (in + 2 * pad - kernel) / stride + 1;
}

// ---------------------------------------------------------------- conv2d

template <class T>
BasicTensor<T> conv2d_forward(const BasicTensor<T>& x,
                              const BasicParam<T>& kernel,
                              const BasicParam<T>& bias, ConvGeometry geom) {
  const ConvDims d = conv_dims(x, kernel, bias, geom);
  BasicTensor<T> out(Shape{d.n, d.f, d.ho, d.wo});
  const std::size_t ckk = d.ckk();
  const std::size_t hw = d.hw();
  const bool pointwise = is_pointwise(d.kh, d.kw, geom);
  const T* wptr = kernel.value.ptr();
  const T* bptr = bias.value.ptr();

#pragma omp parallel for schedule(static)
  for (Index n = 0; n < static_cast<Index>(d.n); ++n) {
    thread_local std::vector<T> cols;
    const T* xn = x.ptr() + static_cast<std::size_t>(n) * d.c * d.h * d.w;
    const T* b = xn;
    if (!pointwise) {
      cols.resize(ckk * hw);
      im2col(xn, d.c, d.h, d.w, d.kh, d.kw, geom, d.ho, d.wo, cols.data());
      b = cols.data();
    }
    T* o = out.ptr() + static_cast<std::size_t>(n) * d.f * hw;
    gemm<T>(d.f, hw, ckk, wptr, ckk, false, b, hw, false, o, hw, false);
    for (std::size_t f = 0; f < d.f; ++f) {
      T* of = o + f * hw;
      for (std::size_t p = 0; p < hw; ++p) of[p] += bptr[f];
    }
  }
  return out;
}

template <class T>
BasicTensor<T> conv2d_backward(const BasicTensor<T>& x, BasicParam<T>& kernel,
                               BasicParam<T>& bias, ConvGeometry geom,
                               const BasicTensor<T>& upstream, bool need_dx) {
  const ConvDims d = conv_dims(x, kernel, bias, geom);
  const Shape expect{d.n, d.f, d.ho, d.wo};
  if (upstream.shape() != expect) {
    throw DimensionError("conv2d backward: upstream " +
                         shape_str(upstream.shape()) + ", expected " +
                         shape_str(expect));
  }
  const std::size_t ckk = d.ckk();
  const std::size_t hw = d.hw();
  const bool pointwise = is_pointwise(d.kh, d.kw, geom);

  // kernel as [ckk, F] for dcols = W^T * up
  std::vector<T> wt(ckk * d.f);
  for (std::size_t f = 0; f < d.f; ++f) {
    for (std::size_t q = 0; q < ckk; ++q) wt[q * d.f + f] = kernel.value[f * ckk + q];
  }

  BasicTensor<T> dx(x.shape(), T(0));
  const std::size_t chunks = std::min(kGradChunks, d.n);
  std::vector<std::vector<T>> dwt(chunks, std::vector<T>(ckk * d.f, T(0)));
  std::vector<std::vector<T>> db(chunks, std::vector<T>(d.f, T(0)));

#pragma omp parallel for schedule(static)
  for (Index ci = 0; ci < static_cast<Index>(chunks); ++ci) {
    const std::size_t c = static_cast<std::size_t>(ci);
    thread_local std::vector<T> cols;
    thread_local std::vector<T> dcols;
    const std::size_t lo = c * d.n / chunks;
    const std::size_t hi = (c + 1) * d.n / chunks;
    for (std::size_t n = lo; n < hi; ++n) {
      const T* xn = x.ptr() + n * d.c * d.h * d.w;
      const T* up = upstream.ptr() + n * d.f * hw;
      const T* col_ptr = xn;
      if (!pointwise) {
        cols.resize(ckk * hw);
        im2col(xn, d.c, d.h, d.w, d.kh, d.kw, geom, d.ho, d.wo, cols.data());
        col_ptr = cols.data();
      }
      // dW^T[ckk, F] += cols[ckk, hw] * up^T[hw, F]
      gemm<T>(ckk, d.f, hw, col_ptr, hw, false, up, hw, true, dwt[c].data(),
              d.f, true);
      for (std::size_t f = 0; f < d.f; ++f) {
        T s = T(0);
        for (std::size_t p = 0; p < hw; ++p) s += up[f * hw + p];
        db[c][f] += s;
      }
      if (need_dx) {
        T* dxn = dx.ptr() + n * d.c * d.h * d.w;
        if (pointwise) {
          gemm<T>(ckk, hw, d.f, wt.data(), d.f, false, up, hw, false, dxn, hw,
                  false);
        } else {
          dcols.resize(ckk * hw);
          gemm<T>(ckk, hw, d.f, wt.data(), d.f, false, up, hw, false,
                  dcols.data(), hw, false);
          col2im(dcols.data(), d.c, d.h, d.w, d.kh, d.kw, geom, d.ho, d.wo, dxn);
        }
      }
    }
  }

  for (std::size_t c = 0; c < chunks; ++c) {
    for (std::size_t f = 0; f < d.f; ++f) {
      T* g = kernel.grad.ptr() + f * ckk;
      for (std::size_t q = 0; q < ckk; ++q) g[q] += dwt[c][q * d.f + f];
      bias.grad[f] += db[c][f];
    }
  }
  return dx;
}

// ---------------------------------------------------------------- max pool

template <class T>
BasicTensor<T> maxpool2d_forward(const BasicTensor<T>& x, PoolGeometry g,
                                 std::vector<std::uint32_t>* argmax) {
  if (x.rank() != 4) {
    throw DimensionError("maxpool2d expects [N,C,H,W], got " + shape_str(x.shape()));
  }
  if (g.size == 0 || g.stride == 0) throw DimensionError("maxpool2d size/stride must be >= 1");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (g.size > h + 2 * g.pad || g.size > w + 2 * g.pad) {
    throw DimensionError("maxpool2d window " + std::to_string(g.size) +
                         " larger than input " + shape_str(x.shape()));
  }
  const std::size_t ho = (h + 2 * g.pad - g.size) / g.stride + 1;
  const std::size_t wo = (w + 2 * g.pad - g.size) / g.stride + 1;
  BasicTensor<T> out(Shape{n, c, ho, wo});
  if (argmax) argmax->assign(out.size(), 0);
  const Index planes = static_cast<Index>(n * c);

#pragma omp parallel for schedule(static)
  for (Index pl = 0; pl < planes; ++pl) {
    const std::size_t base = static_cast<std::size_t>(pl) * h * w;
    const T* src = x.ptr() + base;
    T* dst = out.ptr() + static_cast<std::size_t>(pl) * ho * wo;
    std::uint32_t* arg =
        argmax ? argmax->data() + static_cast<std::size_t>(pl) * ho * wo : nullptr;
    if (g.pad == 0) {
      for (std::size_t oy = 0; oy < ho; ++oy) {
        for (std::size_t ox = 0; ox < wo; ++ox) {
          std::size_t best_idx = oy * g.stride * w + ox * g.stride;
          T best = src[best_idx];
          for (std::size_t i = 0; i < g.size; ++i) {
            const std::size_t row = (oy * g.stride + i) * w + ox * g.stride;
            for (std::size_t j = 0; j < g.size; ++j) {
              if (src[row + j] > best) {
                best = src[row + j];
                best_idx = row + j;
              }
            }
          }
          dst[oy * wo + ox] = best;
          if (arg) arg[oy * wo + ox] = static_cast<std::uint32_t>(base + best_idx);
        }
      }
      continue;
    }
    for (std::size_t oy = 0; oy < ho; ++oy) {
      for (std::size_t ox = 0; ox < wo; ++ox) {
        T best = -std::numeric_limits<T>::infinity();
        std::size_t best_idx = 0;
        bool found = false;
        for (std::size_t i = 0; i < g.size; ++i) {
          const Index iy = static_cast<Index>(oy * g.stride + i) - static_cast<Index>(g.pad);
          if (iy < 0 || iy >= static_cast<Index>(h)) continue;
          for (std::size_t j = 0; j < g.size; ++j) {
            const Index ix = static_cast<Index>(ox * g.stride + j) - static_cast<Index>(g.pad);
            if (ix < 0 || ix >= static_cast<Index>(w)) continue;
            const std::size_t idx = static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix);
            if (!found || src[idx] > best) {
              best = src[idx];
              best_idx = idx;
              found = true;
            }
          }
        }
        const std::size_t o = oy * wo + ox;
        dst[o] = best;
        if (arg) arg[o] = static_cast<std::uint32_t>(base + best_idx);
      }
    }
  }
  return out;
}

template <class T>
BasicTensor<T> maxpool2d_backward(const Shape& input_shape,
                                  const std::vector<std::uint32_t>& argmax,
                                  const BasicTensor<T>& upstream) {
  if (argmax.size() != upstream.size()) {
    throw DimensionError("maxpool2d backward: upstream " +
                         shape_str(upstream.shape()) +
                         " does not match cached forward output");
  }
  BasicTensor<T> dx(input_shape, T(0));
  for (std::size_t i = 0; i < argmax.size(); ++i) dx[argmax[i]] += upstream[i];
  return dx;
}

// ---------------------------------------------------------------- batchnorm

namespace {

struct BnDims {
  std::size_t n, c, spatial;
};

template <class T>
BnDims bn_dims(const BasicTensor<T>& x, const BasicParam<T>& gamma,
               const BasicParam<T>& beta) {
  if (x.rank() < 2) {
    throw DimensionError("batchnorm expects [N,C,...], got " + shape_str(x.shape()));
  }
  BnDims d{x.dim(0), x.dim(1), 1};
  for (std::size_t i = 2; i < x.rank(); ++i) d.spatial *= x.dim(i);
  if (gamma.value.size() != d.c || beta.value.size() != d.c) {
    throw DimensionError("batchnorm parameters " + shape_str(gamma.value.shape()) +
                         " for input " + shape_str(x.shape()));
  }
  return d;
}

}  // namespace

template <class T>
BasicTensor<T> batchnorm_forward(const BasicTensor<T>& x,
                                 const BasicParam<T>& gamma,
                                 const BasicParam<T>& beta,
                                 BasicBatchStats<T>& stats, Mode mode,
                                 BatchNormCache<T>* cache) {
  const BnDims d = bn_dims(x, gamma, beta);
  if (stats.running_mean.size() != d.c || stats.running_var.size() != d.c) {
    throw DimensionError("batchnorm running stats do not match " +
                         shape_str(x.shape()));
  }
  const std::size_t count = d.n * d.spatial;
  if (mode == Mode::kTrain && count <= 1) {
    throw DimensionError(
        "batchnorm in train mode needs more than one value per channel, got " +
        shape_str(x.shape()));
  }
  BasicTensor<T> out(x.shape());
  BasicTensor<T> xhat(x.shape());
  std::vector<T> inv_std(d.c);
  const T mom = static_cast<T>(stats.momentum);
  const T eps = static_cast<T>(stats.epsilon);
  const std::size_t cs = d.c * d.spatial;

  for (std::size_t c = 0; c < d.c; ++c) {
    T mean, var;
    if (mode == Mode::kTrain) {
      T s = T(0);
      for (std::size_t n = 0; n < d.n; ++n) {
        const T* p = x.ptr() + n * cs + c * d.spatial;
        for (std::size_t k = 0; k < d.spatial; ++k) s += p[k];
      }
      mean = s / static_cast<T>(count);
      T v = T(0);
      for (std::size_t n = 0; n < d.n; ++n) {
        const T* p = x.ptr() + n * cs + c * d.spatial;
        for (std::size_t k = 0; k < d.spatial; ++k) {
          const T z = p[k] - mean;
          v += z * z;
        }
      }
      var = v / static_cast<T>(count);
      stats.running_mean[c] = (T(1) - mom) * stats.running_mean[c] + mom * mean;
      stats.running_var[c] = (T(1) - mom) * stats.running_var[c] + mom * var;
    } else {
      mean = stats.running_mean[c];
      var = stats.running_var[c];
    }
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[c] = is;
    const T gm = gamma.value[c];
    const T bt = beta.value[c];
    for (std::size_t n = 0; n < d.n; ++n) {
      const std::size_t off = n * cs + c * d.spatial;
      for (std::size_t k = 0; k < d.spatial; ++k) {
        const T xh = (x[off + k] - mean) * is;
        xhat[off + k] = xh;
        out[off + k] = gm * xh + bt;
      }
    }
  }
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
    cache->mode = mode;
  }
  return out;
}

template <class T>
BasicTensor<T> batchnorm_infer(const BasicTensor<T>& x,
                               const BasicParam<T>& gamma,
                               const BasicParam<T>& beta,
                               const BasicBatchStats<T>& stats) {
  BasicBatchStats<T> frozen = stats;
  return batchnorm_forward<T>(x, gamma, beta, frozen, Mode::kInfer, nullptr);
}

template <class T>
BasicTensor<T> batchnorm_backward(const BatchNormCache<T>& cache,
                                  BasicParam<T>& gamma, BasicParam<T>& beta,
                                  const BasicTensor<T>& upstream) {
  if (upstream.shape() != cache.xhat.shape()) {
    throw DimensionError("batchnorm backward: upstream " +
                         shape_str(upstream.shape()) + ", expected " +
                         shape_str(cache.xhat.shape()));
  }
  const BnDims d = bn_dims(upstream, gamma, beta);
  const std::size_t count = d.n * d.spatial;
  const std::size_t cs = d.c * d.spatial;
  const T m = static_cast<T>(count);
  BasicTensor<T> dx(upstream.shape());

  for (std::size_t c = 0; c < d.c; ++c) {
    T sum_up = T(0);
    T sum_up_xhat = T(0);
    for (std::size_t n = 0; n < d.n; ++n) {
      const std::size_t off = n * cs + c * d.spatial;
      for (std::size_t k = 0; k < d.spatial; ++k) {
        sum_up += upstream[off + k];
        sum_up_xhat += upstream[off + k] * cache.xhat[off + k];
      }
    }
    gamma.grad[c] += sum_up_xhat;
    beta.grad[c] += sum_up;
    const T g = gamma.value[c];
    const T is = cache.inv_std[c];
    for (std::size_t n = 0; n < d.n; ++n) {
      const std::size_t off = n * cs + c * d.spatial;
      for (std::size_t k = 0; k < d.spatial; ++k) {
        if (cache.mode == Mode::kTrain) {
          dx[off + k] = g * is / m *
                        (m * upstream[off + k] - sum_up -
                         cache.xhat[off + k] * sum_up_xhat);
        } else {
          dx[off + k] = g * is * upstream[off + k];
        }
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------- dense

namespace {

template <class T>
void dense_check(const BasicTensor<T>& x, const BasicParam<T>& weight,
                 const BasicParam<T>& bias) {
  if (x.rank() != 2 || weight.value.rank() != 2 ||
      x.dim(1) != weight.value.dim(0) ||
      bias.value.size() != weight.value.dim(1)) {
    throw DimensionError("dense: x " + shape_str(x.shape()) + ", W " +
                         shape_str(weight.value.shape()) + ", b " +
                         shape_str(bias.value.shape()));
  }
}

}  // namespace

template <class T>
BasicTensor<T> dense_forward(const BasicTensor<T>& x,
                             const BasicParam<T>& weight,
                             const BasicParam<T>& bias) {
  dense_check(x, weight, bias);
  const std::size_t n = x.dim(0), in = x.dim(1), out = weight.value.dim(1);
  BasicTensor<T> y(Shape{n, out});
  gemm<T>(n, out, in, x.ptr(), in, false, weight.value.ptr(), out, false,
          y.ptr(), out, false);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < out; ++j) y[i * out + j] += bias.value[j];
  }
  return y;
}

template <class T>
BasicTensor<T> dense_backward(const BasicTensor<T>& x, BasicParam<T>& weight,
                              BasicParam<T>& bias,
                              const BasicTensor<T>& upstream, bool need_dx) {
  dense_check(x, weight, bias);
  const std::size_t n = x.dim(0), in = x.dim(1), out = weight.value.dim(1);
  if (upstream.shape() != Shape{n, out}) {
    throw DimensionError("dense backward: upstream " + shape_str(upstream.shape()) +
                         ", expected " + shape_str(Shape{n, out}));
  }
  gemm<T>(in, out, n, x.ptr(), in, true, upstream.ptr(), out, false,
          weight.grad.ptr(), out, true);
  for (std::size_t j = 0; j < out; ++j) {
    T s = T(0);
    for (std::size_t i = 0; i < n; ++i) s += upstream[i * out + j];
    bias.grad[j] += s;
  }
  BasicTensor<T> dx(x.shape(), T(0));
  if (need_dx) {
    gemm<T>(n, in, out, upstream.ptr(), out, false, weight.value.ptr(), out,
            true, dx.ptr(), in, false);
  }
  return dx;
}

// ---------------------------------------------------------------- softmax / CE

template <class T>
BasicTensor<T> softmax(const BasicTensor<T>& logits) {
  if (logits.rank() != 2 || logits.dim(1) < 2) {
    throw DimensionError("softmax expects [N,K] with K >= 2, got " +
                         shape_str(logits.shape()));
  }
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  BasicTensor<T> p(logits.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const T* z = logits.ptr() + i * k;
    T* q = p.ptr() + i * k;
    T mx = z[0];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, z[j]);
    T s = T(0);
    for (std::size_t j = 0; j < k; ++j) {
      q[j] = std::exp(z[j] - mx);
      s += q[j];
    }
    for (std::size_t j = 0; j < k; ++j) q[j] /= s;
  }
  return p;
}

template <class T>
BasicTensor<T> softmax_backward(const BasicTensor<T>& probs,
                                const BasicTensor<T>& dprobs) {
  if (probs.shape() != dprobs.shape() || probs.rank() != 2) {
    throw DimensionError("softmax backward: " + shape_str(probs.shape()) +
                         " vs " + shape_str(dprobs.shape()));
  }
  const std::size_t n = probs.dim(0), k = probs.dim(1);
  BasicTensor<T> dz(probs.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const T* p = probs.ptr() + i * k;
    const T* g = dprobs.ptr() + i * k;
    T dot = T(0);
    for (std::size_t j = 0; j < k; ++j) dot += p[j] * g[j];
    for (std::size_t j = 0; j < k; ++j) dz[i * k + j] = p[j] * (g[j] - dot);
  }
  return dz;
}

namespace {

template <class T>
std::vector<std::size_t> onehot_labels(const BasicTensor<T>& probs,
                                       const BasicTensor<T>& onehot) {
  if (probs.shape() != onehot.shape() || probs.rank() != 2) {
    throw DimensionError("cross_entropy: probs " + shape_str(probs.shape()) +
                         " vs onehot " + shape_str(onehot.shape()));
  }
  const std::size_t n = probs.dim(0), k = probs.dim(1);
  std::vector<std::size_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t ones = 0;
    for (std::size_t j = 0; j < k; ++j) {
      const T v = onehot[i * k + j];
      if (v == T(1)) {
        labels[i] = j;
        ++ones;
      } else if (v != T(0)) {
        ones = 2;
        break;
      }
    }
    if (ones != 1) {
      throw DomainError("malformed one-hot row " + std::to_string(i));
    }
  }
  return labels;
}

template <class T>
T class_weight(const std::vector<T>& w, std::size_t label) {
  if (w.empty()) return T(1);
  if (label >= w.size()) throw DimensionError("class weight table too short");
  return w[label];
}

}  // namespace

template <class T>
T cross_entropy(const BasicTensor<T>& probs, const BasicTensor<T>& onehot,
                const std::vector<T>& class_weights) {
  const auto labels = onehot_labels(probs, onehot);
  const std::size_t k = probs.dim(1);
  T total = T(0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const T p = std::max(probs[i * k + labels[i]], static_cast<T>(1e-12));
    total += class_weight(class_weights, labels[i]) * -std::log(p);
  }
  return total / static_cast<T>(labels.size());
}

template <class T>
BasicTensor<T> cross_entropy_logit_grad(const BasicTensor<T>& probs,
                                        const BasicTensor<T>& onehot,
                                        const std::vector<T>& class_weights) {
  const auto labels = onehot_labels(probs, onehot);
  const std::size_t n = probs.dim(0), k = probs.dim(1);
  BasicTensor<T> g(probs.shape());
  const T inv_n = T(1) / static_cast<T>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const T w = class_weight(class_weights, labels[i]) * inv_n;
    for (std::size_t j = 0; j < k; ++j) {
      g[i * k + j] = w * (probs[i * k + j] - onehot[i * k + j]);
    }
  }
  return g;
}

template <class T>
BasicTensor<T> one_hot(const std::vector<int>& labels, std::size_t classes) {
  if (labels.empty()) throw DimensionError("one_hot of an empty label list");
  BasicTensor<T> out(Shape{labels.size(), classes}, T(0));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw DomainError("label " + std::to_string(labels[i]) + " out of range");
    }
    out[i * classes + static_cast<std::size_t>(labels[i])] = T(1);
  }
  return out;
}

#define CXR_INSTANTIATE(T)                                                       \
  template BasicTensor<T> conv2d_forward(const BasicTensor<T>&,                  \
                                         const BasicParam<T>&,                   \
                                         const BasicParam<T>&, ConvGeometry);    \
  template BasicTensor<T> conv2d_backward(const BasicTensor<T>&, BasicParam<T>&, \
                                          BasicParam<T>&, ConvGeometry,          \
                                          const BasicTensor<T>&, bool);          \
  template BasicTensor<T> maxpool2d_forward(const BasicTensor<T>&, PoolGeometry, \
                                            std::vector<std::uint32_t>*);        \
  template BasicTensor<T> maxpool2d_backward(                                    \
      const Shape&, const std::vector<std::uint32_t>&, const BasicTensor<T>&);   \
  template BasicTensor<T> batchnorm_forward(                                     \
      const BasicTensor<T>&, const BasicParam<T>&, const BasicParam<T>&,         \
      BasicBatchStats<T>&, Mode, BatchNormCache<T>*);                            \
  template BasicTensor<T> batchnorm_infer(const BasicTensor<T>&,                 \
                                          const BasicParam<T>&,                  \
                                          const BasicParam<T>&,                  \
                                          const BasicBatchStats<T>&);            \
  template BasicTensor<T> batchnorm_backward(const BatchNormCache<T>&,           \
                                             BasicParam<T>&, BasicParam<T>&,     \
                                             const BasicTensor<T>&);             \
  template BasicTensor<T> dense_forward(const BasicTensor<T>&,                   \
                                        const BasicParam<T>&,                    \
                                        const BasicParam<T>&);                   \
  template BasicTensor<T> dense_backward(const BasicTensor<T>&, BasicParam<T>&,  \
                                         BasicParam<T>&, const BasicTensor<T>&,  \
                                         bool);                                  \
  template BasicTensor<T> softmax(const BasicTensor<T>&);                        \
  template BasicTensor<T> softmax_backward(const BasicTensor<T>&,                \
                                           const BasicTensor<T>&);               \
  template T cross_entropy(const BasicTensor<T>&, const BasicTensor<T>&,         \
                           const std::vector<T>&);                               \
  template BasicTensor<T> cross_entropy_logit_grad(                              \
      const BasicTensor<T>&, const BasicTensor<T>&, const std::vector<T>&);      \
  template BasicTensor<T> one_hot(const std::vector<int>&, std::size_t);

CXR_INSTANTIATE(float)
CXR_INSTANTIATE(double)

#undef CXR_INSTANTIATE

}  // namespace cxr

#pragma once

// Differentiable operations over Tensor<T>. Each op computes its output
// eagerly and, when any input requires a gradient, appends a backward closure
// to the graph.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "synct/error.hpp"
#include "synct/mask.hpp"
#include "synct/tensor.hpp"

namespace synct {

namespace kernels {

// c[m×n] += a[m×k] · b[k×n]. The summation order over k is fixed per output
// element, independent of m, so row results do not depend on how many rows
// are computed together.
template <class T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a,
             const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    T* ci = c + i * n;
    const T* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = ai[p];
      if (av == T(0)) continue;
      const T* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// c[m×n] += a[m×k] · b[n×k]ᵀ
template <class T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a,
             const T* b, T* c) {
  std::vector<T> bt(k * n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
  gemm_nn(m, n, k, a, bt.data(), c);
}

// c[m×n] += a[k×m]ᵀ · b[k×n]
template <class T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a,
             const T* b, T* c) {
  for (std::size_t p = 0; p < k; ++p) {
    const T* ap = a + p * m;
    const T* bp = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T av = ap[i];
      if (av == T(0)) continue;
      T* ci = c + i * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

}  // namespace kernels

namespace detail {

template <class T>
std::size_t last_dim(const Tensor<T>& t) {
  if (t.rank() == 0) fail(ErrorCode::kShape, "rank-0 tensor");
  return t.shape().back();
}

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b,
                        const char* op) {
  if (a.shape() != b.shape()) {
    fail(ErrorCode::kShape, std::string(op) + ": shape mismatch " +
                                shape_string(a.shape()) + " vs " +
                                shape_string(b.shape()));
  }
}

template <class T>
Tensor<T> finish(Graph<T>& g, Tensor<T> out, const char* op) {
  check_finite(out, op);
  (void)g;
  return out;
}

}  // namespace detail

// a[m×k]·b[k×n], a[bt×m×k]·b[k×n] (shared right operand), or
// a[bt×m×k]·b[bt×k×n].
template <class T>
Tensor<T> matmul(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() < 2 || a.rank() > 3 || b.rank() < 2 || b.rank() > 3 ||
      (b.rank() == 3 && a.rank() != 3)) {
    fail(ErrorCode::kDimension, "matmul: unsupported ranks " +
                                    shape_string(a.shape()) + " x " +
                                    shape_string(b.shape()));
  }
  const std::size_t k = a.shape().back();
  const std::size_t m = a.dim(a.rank() - 2);
  const std::size_t kb = b.dim(b.rank() - 2);
  const std::size_t n = b.shape().back();
  const std::size_t batch = a.rank() == 3 ? a.dim(0) : 1;
  if (k != kb || (b.rank() == 3 && b.dim(0) != batch)) {
    fail(ErrorCode::kDimension, "matmul: inner dimensions disagree " +
                                    shape_string(a.shape()) + " x " +
                                    shape_string(b.shape()));
  }
  const bool shared_b = b.rank() == 2;
  Shape out_shape = a.rank() == 3 ? Shape{batch, m, n} : Shape{m, n};
  Tensor<T> out = Tensor<T>::zeros(out_shape);
  T* c = out.mutable_data().data();
  if (shared_b) {
    kernels::gemm_nn(batch * m, n, k, a.ptr(), b.ptr(), c);
  } else {
    for (std::size_t t = 0; t < batch; ++t)
      kernels::gemm_nn(m, n, k, a.ptr() + t * m * k, b.ptr() + t * k * n,
                       c + t * m * n);
  }
  if (g.wants_grad({&a, &b})) {
    g.record("matmul", out, [a, b, out, batch, m, n, k, shared_b]() mutable {
      const T* dc = out.grad().data();
      if (a.requires_grad()) {
        T* da = a.grad_accumulator().data();
        if (shared_b) {
          kernels::gemm_nt(batch * m, k, n, dc, b.ptr(), da);
        } else {
          for (std::size_t t = 0; t < batch; ++t)
            kernels::gemm_nt(m, k, n, dc + t * m * n, b.ptr() + t * k * n,
                             da + t * m * k);
        }
      }
      if (b.requires_grad()) {
        T* db = b.grad_accumulator().data();
        if (shared_b) {
          kernels::gemm_tn(k, n, batch * m, a.ptr(), dc, db);
        } else {
          for (std::size_t t = 0; t < batch; ++t)
            kernels::gemm_tn(k, n, m, a.ptr() + t * m * k, dc + t * m * n,
                             db + t * k * n);
        }
      }
    });
  }
  return detail::finish(g, out, "matmul");
}

// a[..×m×k]·b[..×n×k]ᵀ with equal ranks (2 or 3) and equal batch.
template <class T>
Tensor<T> matmul_nt(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != b.rank() || a.rank() < 2 || a.rank() > 3 ||
      (a.rank() == 3 && a.dim(0) != b.dim(0)) ||
      a.shape().back() != b.shape().back()) {
    fail(ErrorCode::kDimension, "matmul_nt: incompatible shapes " +
                                    shape_string(a.shape()) + " x " +
                                    shape_string(b.shape()) + "^T");
  }
  const std::size_t batch = a.rank() == 3 ? a.dim(0) : 1;
  const std::size_t m = a.dim(a.rank() - 2);
  const std::size_t n = b.dim(b.rank() - 2);
  const std::size_t k = a.shape().back();
  Tensor<T> out = Tensor<T>::zeros(a.rank() == 3 ? Shape{batch, m, n}
                                                 : Shape{m, n});
  T* c = out.mutable_data().data();
  for (std::size_t t = 0; t < batch; ++t)
    kernels::gemm_nt(m, n, k, a.ptr() + t * m * k, b.ptr() + t * n * k,
                     c + t * m * n);
  if (g.wants_grad({&a, &b})) {
    g.record("matmul_nt", out, [a, b, out, batch, m, n, k]() mutable {
      const T* dc = out.grad().data();
      for (std::size_t t = 0; t < batch; ++t) {
        if (a.requires_grad())
          kernels::gemm_nn(m, k, n, dc + t * m * n, b.ptr() + t * n * k,
                           a.grad_accumulator().data() + t * m * k);
        if (b.requires_grad())
          kernels::gemm_tn(n, k, m, dc + t * m * n, a.ptr() + t * m * k,
                           b.grad_accumulator().data() + t * n * k);
      }
    });
  }
  return detail::finish(g, out, "matmul_nt");
}

template <class T>
Tensor<T> add(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<T> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] + b.data()[i];
  Tensor<T> out = Tensor<T>::from(a.shape(), std::move(v));
  if (g.wants_grad({&a, &b})) {
    g.record("add", out, [a, b, out]() mutable {
      auto dc = out.grad();
      if (a.requires_grad()) {
        auto da = a.grad_accumulator();
        for (std::size_t i = 0; i < dc.size(); ++i) da[i] += dc[i];
      }
      if (b.requires_grad()) {
        auto db = b.grad_accumulator();
        for (std::size_t i = 0; i < dc.size(); ++i) db[i] += dc[i];
      }
    });
  }
  return detail::finish(g, out, "add");
}

// x[..×n] + bias[n], broadcast over leading dimensions.
template <class T>
Tensor<T> add_bias(Graph<T>& g, const Tensor<T>& x, const Tensor<T>& bias) {
  const std::size_t n = detail::last_dim(x);
  if (bias.rank() != 1 || bias.dim(0) != n) {
    fail(ErrorCode::kShape, "add_bias: bias " + shape_string(bias.shape()) +
                                " does not match " + shape_string(x.shape()));
  }
  std::vector<T> v(x.data().begin(), x.data().end());
  const std::size_t rows = x.size() / n;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < n; ++j) v[r * n + j] += bias.data()[j];
  Tensor<T> out = Tensor<T>::from(x.shape(), std::move(v));
  if (g.wants_grad({&x, &bias})) {
    g.record("add_bias", out, [x, bias, out, rows, n]() mutable {
      auto dc = out.grad();
      if (x.requires_grad()) {
        auto dx = x.grad_accumulator();
        for (std::size_t i = 0; i < dc.size(); ++i) dx[i] += dc[i];
      }
      if (bias.requires_grad()) {
        auto db = bias.grad_accumulator();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < n; ++j) db[j] += dc[r * n + j];
      }
    });
  }
  return detail::finish(g, out, "add_bias");
}

template <class T>
Tensor<T> scale(Graph<T>& g, const Tensor<T>& x, T factor) {
  std::vector<T> v(x.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = x.data()[i] * factor;
  Tensor<T> out = Tensor<T>::from(x.shape(), std::move(v));
  if (g.wants_grad({&x})) {
    g.record("scale", out, [x, out, factor]() mutable {
      auto dc = out.grad();
      auto dx = x.grad_accumulator();
      for (std::size_t i = 0; i < dc.size(); ++i) dx[i] += dc[i] * factor;
    });
  }
  return detail::finish(g, out, "scale");
}

// Elementwise product.
template <class T>
Tensor<T> mul(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<T> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] * b.data()[i];
  Tensor<T> out = Tensor<T>::from(a.shape(), std::move(v));
  if (g.wants_grad({&a, &b})) {
    g.record("mul", out, [a, b, out]() mutable {
      auto dc = out.grad();
      if (a.requires_grad()) {
        auto da = a.grad_accumulator();
        for (std::size_t i = 0; i < dc.size(); ++i) da[i] += dc[i] * b.data()[i];
      }
      if (b.requires_grad()) {
        auto db = b.grad_accumulator();
        for (std::size_t i = 0; i < dc.size(); ++i) db[i] += dc[i] * a.data()[i];
      }
    });
  }
  return detail::finish(g, out, "mul");
}

template <class T>
Tensor<T> relu(Graph<T>& g, const Tensor<T>& x) {
  std::vector<T> v(x.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::max(x.data()[i], T(0));
  Tensor<T> out = Tensor<T>::from(x.shape(), std::move(v));
  if (g.wants_grad({&x})) {
    g.record("relu", out, [x, out]() mutable {
      auto dc = out.grad();
      auto dx = x.grad_accumulator();
      for (std::size_t i = 0; i < dc.size(); ++i)
        if (x.data()[i] > T(0)) dx[i] += dc[i];
    });
  }
  return detail::finish(g, out, "relu");
}

template <class T>
Tensor<T> sum(Graph<T>& g, const Tensor<T>& x) {
  T total = 0;
  for (T v : x.data()) total += v;
  Tensor<T> out = Tensor<T>::scalar(total);
  if (g.wants_grad({&x})) {
    g.record("sum", out, [x, out]() mutable {
      const T d = out.grad()[0];
      for (T& v : x.grad_accumulator()) v += d;
    });
  }
  return detail::finish(g, out, "sum");
}

// Softmax over the last dimension restricted to mask-visible entries. The
// mask is [rows × n] where rows is the second-to-last dimension (1 for a
// vector); it is shared by every leading batch index. Masked entries get
// exactly zero probability.
template <class T>
Tensor<T> masked_softmax(Graph<T>& g, const Tensor<T>& scores,
                         const Mask& mask) {
  const std::size_t n = detail::last_dim(scores);
  const std::size_t mask_rows = scores.rank() >= 2 ? scores.dim(scores.rank() - 2) : 1;
  if (mask.cols != n || mask.rows != mask_rows) {
    fail(ErrorCode::kInvalidMask,
         "masked_softmax: mask " + std::to_string(mask.rows) + "x" +
             std::to_string(mask.cols) + " incompatible with scores " +
             shape_string(scores.shape()));
  }
  for (std::size_t r = 0; r < mask.rows; ++r) {
    bool any = false;
    for (std::size_t j = 0; j < n && !any; ++j) any = mask(r, j);
    if (!any) {
      fail(ErrorCode::kInvalidMask,
           "masked_softmax: row " + std::to_string(r) + " is fully masked");
    }
  }
  const std::size_t rows = scores.size() / n;
  std::vector<T> v(scores.size(), T(0));
  const T* s = scores.ptr();
  for (std::size_t r = 0; r < rows; ++r) {
    const std::uint8_t* allowed = mask.allowed.data() + (r % mask.rows) * n;
    const T* sr = s + r * n;
    T* vr = v.data() + r * n;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < n; ++j)
      if (allowed[j]) mx = std::max(mx, sr[j]);
    T z = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (allowed[j]) {
        vr[j] = std::exp(sr[j] - mx);
        z += vr[j];
      }
    }
    const T inv = T(1) / z;
    for (std::size_t j = 0; j < n; ++j) vr[j] *= inv;
  }
  Tensor<T> out = Tensor<T>::from(scores.shape(), std::move(v));
  if (g.wants_grad({&scores})) {
    g.record("masked_softmax", out, [scores, out, rows, n]() mutable {
      auto dy = out.grad();
      auto p = out.data();
      auto dx = scores.grad_accumulator();
      for (std::size_t r = 0; r < rows; ++r) {
        T dot = 0;
        for (std::size_t j = 0; j < n; ++j) dot += p[r * n + j] * dy[r * n + j];
        for (std::size_t j = 0; j < n; ++j) {
          const std::size_t i = r * n + j;
          if (p[i] != T(0)) dx[i] += p[i] * (dy[i] - dot);
        }
      }
    });
  }
  return detail::finish(g, out, "masked_softmax");
}

template <class T>
Tensor<T> log_softmax(Graph<T>& g, const Tensor<T>& x) {
  const std::size_t n = detail::last_dim(x);
  const std::size_t rows = x.size() / n;
  std::vector<T> v(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.ptr() + r * n;
    T mx = *std::max_element(xr, xr + n);
    T z = 0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(xr[j] - mx);
    const T lz = mx + std::log(z);
    for (std::size_t j = 0; j < n; ++j) v[r * n + j] = xr[j] - lz;
  }
  Tensor<T> out = Tensor<T>::from(x.shape(), std::move(v));
  if (g.wants_grad({&x})) {
    g.record("log_softmax", out, [x, out, rows, n]() mutable {
      auto dy = out.grad();
      auto y = out.data();
      auto dx = x.grad_accumulator();
      for (std::size_t r = 0; r < rows; ++r) {
        T total = 0;
        for (std::size_t j = 0; j < n; ++j) total += dy[r * n + j];
        for (std::size_t j = 0; j < n; ++j) {
          const std::size_t i = r * n + j;
          dx[i] += dy[i] - std::exp(y[i]) * total;
        }
      }
    });
  }
  return detail::finish(g, out, "log_softmax");
}

inline constexpr double kLayerNormEpsilon = 1e-5;

template <class T>
Tensor<T> layer_norm(Graph<T>& g, const Tensor<T>& x, const Tensor<T>& gain,
                     const Tensor<T>& bias) {
  const std::size_t d = detail::last_dim(x);
  if (gain.rank() != 1 || gain.dim(0) != d || bias.rank() != 1 ||
      bias.dim(0) != d) {
    fail(ErrorCode::kShape, "layer_norm: gain/bias must be [" +
                                std::to_string(d) + "]");
  }
  const std::size_t rows = x.size() / d;
  std::vector<T> normalized(x.size());
  std::vector<T> inv_std(rows);
  std::vector<T> v(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.ptr() + r * d;
    T mean = 0;
    for (std::size_t j = 0; j < d; ++j) mean += xr[j];
    mean /= T(d);
    T var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= T(d);
    const T is = T(1) / std::sqrt(var + T(kLayerNormEpsilon));
    inv_std[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const T xhat = (xr[j] - mean) * is;
      normalized[r * d + j] = xhat;
      v[r * d + j] = xhat * gain.data()[j] + bias.data()[j];
    }
  }
  Tensor<T> out = Tensor<T>::from(x.shape(), std::move(v));
  if (g.wants_grad({&x, &gain, &bias})) {
    g.record("layer_norm", out,
             [x, gain, bias, out, rows, d, normalized = std::move(normalized),
              inv_std = std::move(inv_std)]() mutable {
               auto dy = out.grad();
               if (gain.requires_grad()) {
                 auto dg = gain.grad_accumulator();
                 for (std::size_t i = 0; i < dy.size(); ++i)
                   dg[i % d] += dy[i] * normalized[i];
               }
               if (bias.requires_grad()) {
                 auto db = bias.grad_accumulator();
                 for (std::size_t i = 0; i < dy.size(); ++i) db[i % d] += dy[i];
               }
               if (x.requires_grad()) {
                 auto dx = x.grad_accumulator();
                 for (std::size_t r = 0; r < rows; ++r) {
                   T mean_dxhat = 0;
                   T mean_dxhat_xhat = 0;
                   for (std::size_t j = 0; j < d; ++j) {
                     const T dxhat = dy[r * d + j] * gain.data()[j];
                     mean_dxhat += dxhat;
                     mean_dxhat_xhat += dxhat * normalized[r * d + j];
                   }
                   mean_dxhat /= T(d);
                   mean_dxhat_xhat /= T(d);
                   for (std::size_t j = 0; j < d; ++j) {
                     const T dxhat = dy[r * d + j] * gain.data()[j];
                     dx[r * d + j] += inv_std[r] *
                                      (dxhat - mean_dxhat -
                                       normalized[r * d + j] * mean_dxhat_xhat);
                   }
                 }
               }
             });
  }
  return detail::finish(g, out, "layer_norm");
}

// Gated linear unit over the last dimension: first half ⊙ sigmoid(second half).
template <class T>
Tensor<T> glu(Graph<T>& g, const Tensor<T>& x) {
  const std::size_t two_d = detail::last_dim(x);
  if (two_d % 2 != 0) {
    fail(ErrorCode::kShape, "glu: last dimension " + std::to_string(two_d) +
                                " is odd");
  }
  const std::size_t d = two_d / 2;
  const std::size_t rows = x.size() / two_d;
  Shape shape = x.shape();
  shape.back() = d;
  std::vector<T> gate(rows * d);
  std::vector<T> v(rows * d);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < d; ++j) {
      const T a = x.ptr()[r * two_d + j];
      const T b = x.ptr()[r * two_d + d + j];
      const T sg = T(1) / (T(1) + std::exp(-b));
      gate[r * d + j] = sg;
      v[r * d + j] = a * sg;
    }
  }
  Tensor<T> out = Tensor<T>::from(std::move(shape), std::move(v));
  if (g.wants_grad({&x})) {
    g.record("glu", out, [x, out, rows, d, gate = std::move(gate)]() mutable {
      auto dy = out.grad();
      auto dx = x.grad_accumulator();
      const std::size_t two_d = 2 * d;
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < d; ++j) {
          const T sg = gate[r * d + j];
          const T a = x.ptr()[r * two_d + j];
          const T dyv = dy[r * d + j];
          dx[r * two_d + j] += dyv * sg;
          dx[r * two_d + d + j] += dyv * a * sg * (T(1) - sg);
        }
      }
    });
  }
  return detail::finish(g, out, "glu");
}

// Output length of a time convolution with symmetric zero padding
// (kernel-1)/2 on each side: ⌈frames/stride⌉.
constexpr std::size_t conv_output_length(std::size_t frames, std::size_t stride) {
  return (frames + stride - 1) / stride;
}

// Convolution along time. x is [T×d_in], kernels [k×d_in×d_out]. Output frame
// t reads input frames t·stride − (k−1)/2 + j for j ∈ [0, k); out-of-range
// frames are zero.
template <class T>
Tensor<T> conv1d_time(Graph<T>& g, const Tensor<T>& x, const Tensor<T>& kernels,
                      std::size_t stride) {
  if (x.rank() != 2 || kernels.rank() != 3 || kernels.dim(1) != x.dim(1)) {
    fail(ErrorCode::kShape, "conv1d_time: input " + shape_string(x.shape()) +
                                " incompatible with kernels " +
                                shape_string(kernels.shape()));
  }
  if (stride < 1 || kernels.dim(0) < 1) {
    fail(ErrorCode::kContract, "conv1d_time: stride and kernel size must be >= 1");
  }
  const std::size_t frames = x.dim(0);
  if (frames == 0) fail(ErrorCode::kEmptyInput, "conv1d_time: no input frames");
  const std::size_t width = kernels.dim(0);
  const std::size_t d_in = x.dim(1);
  const std::size_t d_out = kernels.dim(2);
  const std::size_t out_frames = conv_output_length(frames, stride);
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>((width - 1) / 2);
  const std::size_t patch = width * d_in;

  // im2col: row t holds the k input frames feeding output frame t.
  std::vector<T> columns(out_frames * patch, T(0));
  for (std::size_t t = 0; t < out_frames; ++t) {
    for (std::size_t j = 0; j < width; ++j) {
      const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(t * stride + j) - pad;
      if (r < 0 || r >= static_cast<std::ptrdiff_t>(frames)) continue;
      std::copy_n(x.ptr() + r * d_in, d_in, columns.data() + t * patch + j * d_in);
    }
  }
  Tensor<T> out = Tensor<T>::zeros({out_frames, d_out});
  kernels::gemm_nn(out_frames, d_out, patch, columns.data(), kernels.ptr(),
                   out.mutable_data().data());
  if (g.wants_grad({&x, &kernels})) {
    g.record("conv1d_time", out,
             [x, kernels, out, out_frames, width, d_in, d_out, frames, stride,
              pad, patch, columns = std::move(columns)]() mutable {
               const T* dy = out.grad().data();
               if (kernels.requires_grad()) {
                 kernels::gemm_tn(patch, d_out, out_frames, columns.data(), dy,
                                  kernels.grad_accumulator().data());
               }
               if (x.requires_grad()) {
                 std::vector<T> dcols(out_frames * patch, T(0));
                 kernels::gemm_nt(out_frames, patch, d_out, dy, kernels.ptr(),
                                  dcols.data());
                 auto dx = x.grad_accumulator();
                 for (std::size_t t = 0; t < out_frames; ++t) {
                   for (std::size_t j = 0; j < width; ++j) {
                     const std::ptrdiff_t r =
                         static_cast<std::ptrdiff_t>(t * stride + j) - pad;
                     if (r < 0 || r >= static_cast<std::ptrdiff_t>(frames)) continue;
                     for (std::size_t c = 0; c < d_in; ++c)
                       dx[r * d_in + c] += dcols[t * patch + j * d_in + c];
                   }
                 }
               }
             });
  }
  return detail::finish(g, out, "conv1d_time");
}

// [N×(h·dh)] → [h×N×dh]
template <class T>
Tensor<T> split_heads(Graph<T>& g, const Tensor<T>& x, std::size_t heads) {
  if (x.rank() != 2 || heads == 0 || x.dim(1) % heads != 0) {
    fail(ErrorCode::kShape, "split_heads: cannot split " +
                                shape_string(x.shape()) + " into " +
                                std::to_string(heads) + " heads");
  }
  const std::size_t n = x.dim(0);
  const std::size_t dh = x.dim(1) / heads;
  std::vector<T> v(x.size());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t h = 0; h < heads; ++h)
      std::copy_n(x.ptr() + i * heads * dh + h * dh, dh,
                  v.data() + (h * n + i) * dh);
  Tensor<T> out = Tensor<T>::from({heads, n, dh}, std::move(v));
  if (g.wants_grad({&x})) {
    g.record("split_heads", out, [x, out, heads, n, dh]() mutable {
      auto dy = out.grad();
      auto dx = x.grad_accumulator();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t h = 0; h < heads; ++h)
          for (std::size_t j = 0; j < dh; ++j)
            dx[i * heads * dh + h * dh + j] += dy[(h * n + i) * dh + j];
    });
  }
  return out;
}

// [h×N×dh] → [N×(h·dh)]
template <class T>
Tensor<T> merge_heads(Graph<T>& g, const Tensor<T>& x) {
  if (x.rank() != 3) {
    fail(ErrorCode::kShape, "merge_heads: expected rank 3, got " +
                                shape_string(x.shape()));
  }
  const std::size_t heads = x.dim(0);
  const std::size_t n = x.dim(1);
  const std::size_t dh = x.dim(2);
  std::vector<T> v(x.size());
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t i = 0; i < n; ++i)
      std::copy_n(x.ptr() + (h * n + i) * dh, dh,
                  v.data() + i * heads * dh + h * dh);
  Tensor<T> out = Tensor<T>::from({n, heads * dh}, std::move(v));
  if (g.wants_grad({&x})) {
    g.record("merge_heads", out, [x, out, heads, n, dh]() mutable {
      auto dy = out.grad();
      auto dx = x.grad_accumulator();
      for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < dh; ++j)
            dx[(h * n + i) * dh + j] += dy[i * heads * dh + h * dh + j];
    });
  }
  return out;
}

// Rows of table[V×d] selected by ids.
template <class T>
Tensor<T> embedding(Graph<T>& g, const Tensor<T>& table,
                    std::span<const std::int32_t> ids) {
  if (table.rank() != 2) {
    fail(ErrorCode::kShape, "embedding: table must be rank 2");
  }
  const std::size_t vocab = table.dim(0);
  const std::size_t d = table.dim(1);
  std::vector<std::int32_t> rows(ids.begin(), ids.end());
  std::vector<T> v(rows.size() * d);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || static_cast<std::size_t>(rows[i]) >= vocab) {
      fail(ErrorCode::kVocab, "embedding: id " + std::to_string(rows[i]) +
                                  " outside vocabulary of " +
                                  std::to_string(vocab));
    }
    std::copy_n(table.ptr() + rows[i] * d, d, v.data() + i * d);
  }
  Tensor<T> out = Tensor<T>::from({rows.size(), d}, std::move(v));
  if (g.wants_grad({&table})) {
    g.record("embedding", out, [table, out, d, rows = std::move(rows)]() mutable {
      auto dy = out.grad();
      auto dt = table.grad_accumulator();
      for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < d; ++j) dt[rows[i] * d + j] += dy[i * d + j];
    });
  }
  return out;
}

// Rows [begin, end) of a rank-2 tensor.
template <class T>
Tensor<T> slice_rows(Graph<T>& g, const Tensor<T>& x, std::size_t begin,
                     std::size_t end) {
  if (x.rank() != 2 || begin > end || end > x.dim(0)) {
    fail(ErrorCode::kShape, "slice_rows: [" + std::to_string(begin) + ", " +
                                std::to_string(end) + ") out of range for " +
                                shape_string(x.shape()));
  }
  const std::size_t d = x.dim(1);
  std::vector<T> v(x.ptr() + begin * d, x.ptr() + end * d);
  Tensor<T> out = Tensor<T>::from({end - begin, d}, std::move(v));
  if (g.wants_grad({&x})) {
    g.record("slice_rows", out, [x, out, begin, d]() mutable {
      auto dy = out.grad();
      auto dx = x.grad_accumulator();
      for (std::size_t i = 0; i < dy.size(); ++i) dx[begin * d + i] += dy[i];
    });
  }
  return out;
}

// Concatenates [h×n1×dh] and [h×n2×dh] along the middle axis.
template <class T>
Tensor<T> concat_tokens(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) ||
      a.dim(2) != b.dim(2)) {
    fail(ErrorCode::kShape, "concat_tokens: incompatible " +
                                shape_string(a.shape()) + " and " +
                                shape_string(b.shape()));
  }
  const std::size_t heads = a.dim(0);
  const std::size_t na = a.dim(1);
  const std::size_t nb = b.dim(1);
  const std::size_t dh = a.dim(2);
  std::vector<T> v(heads * (na + nb) * dh);
  for (std::size_t h = 0; h < heads; ++h) {
    std::copy_n(a.ptr() + h * na * dh, na * dh, v.data() + h * (na + nb) * dh);
    std::copy_n(b.ptr() + h * nb * dh, nb * dh,
                v.data() + (h * (na + nb) + na) * dh);
  }
  Tensor<T> out = Tensor<T>::from({heads, na + nb, dh}, std::move(v));
  if (g.wants_grad({&a, &b})) {
    g.record("concat_tokens", out, [a, b, out, heads, na, nb, dh]() mutable {
      auto dy = out.grad();
      for (std::size_t h = 0; h < heads; ++h) {
        if (a.requires_grad()) {
          auto da = a.grad_accumulator();
          for (std::size_t i = 0; i < na * dh; ++i)
            da[h * na * dh + i] += dy[h * (na + nb) * dh + i];
        }
        if (b.requires_grad()) {
          auto db = b.grad_accumulator();
          for (std::size_t i = 0; i < nb * dh; ++i)
            db[h * nb * dh + i] += dy[(h * (na + nb) + na) * dh + i];
        }
      }
    });
  }
  return out;
}

}  // namespace synct

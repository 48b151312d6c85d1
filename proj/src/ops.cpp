#include "regnet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <memory>
#include <string>

#ifdef REGNET_USE_BLAS
#include <cblas.h>
#endif

namespace regnet {
namespace {

using i64 = std::int64_t;

// Row-major C = alpha * op(A) * op(B) + beta * C.
template <typename T>
void gemm_rm(bool ta, bool tb, i64 M, i64 N, i64 K, T alpha, const T* A, i64 lda, const T* B,
             i64 ldb, T beta, T* C, i64 ldc);

#ifdef REGNET_USE_BLAS
template <>
void gemm_rm<float>(bool ta, bool tb, i64 M, i64 N, i64 K, float alpha, const float* A, i64 lda,
                    const float* B, i64 ldb, float beta, float* C, i64 ldc) {
  cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans,
              static_cast<int>(M), static_cast<int>(N), static_cast<int>(K), alpha, A,
              static_cast<int>(lda), B, static_cast<int>(ldb), beta, C, static_cast<int>(ldc));
}
template <>
void gemm_rm<double>(bool ta, bool tb, i64 M, i64 N, i64 K, double alpha, const double* A, i64 lda,
                     const double* B, i64 ldb, double beta, double* C, i64 ldc) {
  cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans,
              static_cast<int>(M), static_cast<int>(N), static_cast<int>(K), alpha, A,
              static_cast<int>(lda), B, static_cast<int>(ldb), beta, C, static_cast<int>(ldc));
}
#else
template <typename T>
void gemm_rm(bool ta, bool tb, i64 M, i64 N, i64 K, T alpha, const T* A, i64 lda, const T* B,
             i64 ldb, T beta, T* C, i64 ldc) {
  auto a_at = [&](i64 i, i64 k) { return ta ? A[k * lda + i] : A[i * lda + k]; };
  auto b_at = [&](i64 k, i64 j) { return tb ? B[j * ldb + k] : B[k * ldb + j]; };
#pragma omp parallel for
  for (i64 i = 0; i < M; ++i) {
    for (i64 j = 0; j < N; ++j) {
      T acc = 0;
      for (i64 k = 0; k < K; ++k) acc += a_at(i, k) * b_at(k, j);
      C[i * ldc + j] = alpha * acc + beta * C[i * ldc + j];
    }
  }
}
#endif

template <typename T>
std::vector<T>& scratch(int which, std::size_t need) {
  thread_local std::vector<T> bufs[3];
  auto& b = bufs[which];
  if (b.size() < need) b.resize(need);
  return b;
}

struct ConvDims {
  i64 n, in_c, h, w, out_c, icpg, ocpg, kh, kw, oh, ow;
  i64 stride, padding, groups;
};

template <typename T>
ConvDims conv_dims(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* b, int stride,
                   int padding, int groups) {
  if (stride < 1) throw InvalidArgument("conv2d: stride must be >= 1, got " + std::to_string(stride));
  if (padding < 0) throw InvalidArgument("conv2d: padding must be >= 0, got " + std::to_string(padding));
  if (groups < 1) throw InvalidArgument("conv2d: groups must be >= 1, got " + std::to_string(groups));
  ConvDims d;
  d.n = x.shape.n;
  d.in_c = x.shape.c;
  d.h = x.shape.h;
  d.w = x.shape.w;
  d.out_c = w.shape.n;
  d.kh = w.shape.h;
  d.kw = w.shape.w;
  d.stride = stride;
  d.padding = padding;
  d.groups = groups;
  if (d.in_c % groups != 0) {
    throw InvalidArgument("conv2d: input channels " + std::to_string(d.in_c) +
                          " not divisible by groups " + std::to_string(groups));
  }
  if (d.out_c % groups != 0) {
    throw InvalidArgument("conv2d: output channels " + std::to_string(d.out_c) +
                          " not divisible by groups " + std::to_string(groups));
  }
  d.icpg = d.in_c / groups;
  d.ocpg = d.out_c / groups;
  if (w.shape.c != d.icpg) {
    throw InvalidArgument("conv2d: weight expects " + std::to_string(w.shape.c) +
                          " channels per group, input provides " + std::to_string(d.icpg));
  }
  d.oh = (d.h + 2 * padding - d.kh) / stride + 1;
  d.ow = (d.w + 2 * padding - d.kw) / stride + 1;
  if (d.oh < 1 || d.ow < 1) {
    throw InvalidArgument("conv2d: kernel " + std::to_string(d.kh) + "x" + std::to_string(d.kw) +
                          " does not fit input " + x.shape.str() + " with padding " +
                          std::to_string(padding));
  }
  if (b != nullptr && b->shape.numel() != d.out_c) {
    throw InvalidArgument("conv2d: bias length " + std::to_string(b->shape.numel()) +
                          " != output channels " + std::to_string(d.out_c));
  }
  return d;
}

// Gathers one (sample, group) patch matrix. K = icpg*kh*kw rows of oh*ow
// entries; rows are spaced row_stride apart so a whole batch shares one
// matrix (sample s occupies columns [s*oh*ow, (s+1)*oh*ow)).
template <typename T>
void im2col(const T* xs, const ConvDims& d, i64 c0, T* col, i64 row_stride) {
  const i64 plane = d.h * d.w;
  for (i64 ic = 0; ic < d.icpg; ++ic) {
    const T* chan = xs + (c0 + ic) * plane;
    for (i64 r = 0; r < d.kh; ++r) {
      for (i64 q = 0; q < d.kw; ++q) {
        T* dst = col + ((ic * d.kh + r) * d.kw + q) * row_stride;
        for (i64 oy = 0; oy < d.oh; ++oy) {
          const i64 iy = oy * d.stride + r - d.padding;
          T* drow = dst + oy * d.ow;
          if (iy < 0 || iy >= d.h) {
            std::fill(drow, drow + d.ow, T(0));
            continue;
          }
          for (i64 ox = 0; ox < d.ow; ++ox) {
            const i64 ix = ox * d.stride + q - d.padding;
            drow[ox] = (ix >= 0 && ix < d.w) ? chan[iy * d.w + ix] : T(0);
          }
        }
      }
    }
  }
}

// Scatter-add transpose of im2col.
template <typename T>
void col2im_acc(const T* col, const ConvDims& d, i64 c0, T* dxs, i64 row_stride) {
  const i64 plane = d.h * d.w;
  for (i64 ic = 0; ic < d.icpg; ++ic) {
    T* chan = dxs + (c0 + ic) * plane;
    for (i64 r = 0; r < d.kh; ++r) {
      for (i64 q = 0; q < d.kw; ++q) {
        const T* src = col + ((ic * d.kh + r) * d.kw + q) * row_stride;
        for (i64 oy = 0; oy < d.oh; ++oy) {
          const i64 iy = oy * d.stride + r - d.padding;
          if (iy < 0 || iy >= d.h) continue;
          const T* srow = src + oy * d.ow;
          for (i64 ox = 0; ox < d.ow; ++ox) {
            const i64 ix = ox * d.stride + q - d.padding;
            if (ix >= 0 && ix < d.w) chan[iy * d.w + ix] += srow[ox];
          }
        }
      }
    }
  }
}

template <typename T>
void add_bias_rows(T* out, const T* bias, i64 n, i64 out_c, i64 plane) {
#pragma omp parallel for
  for (i64 s = 0; s < n; ++s) {
    for (i64 oc = 0; oc < out_c; ++oc) {
      T* row = out + (s * out_c + oc) * plane;
      const T b = bias[oc];
      for (i64 p = 0; p < plane; ++p) row[p] += b;
    }
  }
}

template <typename T>
void bias_grad(const Tensor<T>& dy, i64 out_c, i64 plane, Tensor<T>& db) {
  const i64 n = dy.shape.n;
#pragma omp parallel for
  for (i64 oc = 0; oc < out_c; ++oc) {
    T acc = 0;
    for (i64 s = 0; s < n; ++s) {
      const T* dys = dy.ptr() + (s * out_c + oc) * plane;
      for (i64 p = 0; p < plane; ++p) acc += dys[p];
    }
    db.data[static_cast<std::size_t>(oc)] += acc;
  }
}

// ---- depthwise direct kernels (icpg == ocpg == 1) ----

template <typename T>
void depthwise_forward(const Tensor<T>& x, const Tensor<T>& w, const T* bias, const ConvDims& d,
                       Tensor<T>& out) {
#pragma omp parallel for
  for (i64 sc = 0; sc < d.n * d.in_c; ++sc) {
    const i64 s = sc / d.in_c, c = sc % d.in_c;
    const T* xs = x.ptr() + (s * d.in_c + c) * d.h * d.w;
    const T* wc = w.ptr() + c * d.kh * d.kw;
    T* os = out.ptr() + (s * d.in_c + c) * d.oh * d.ow;
    const T b = bias ? bias[c] : T(0);
    for (i64 oy = 0; oy < d.oh; ++oy) {
      for (i64 ox = 0; ox < d.ow; ++ox) {
        T acc = b;
        for (i64 r = 0; r < d.kh; ++r) {
          const i64 iy = oy * d.stride + r - d.padding;
          if (iy < 0 || iy >= d.h) continue;
          for (i64 q = 0; q < d.kw; ++q) {
            const i64 ix = ox * d.stride + q - d.padding;
            if (ix >= 0 && ix < d.w) acc += wc[r * d.kw + q] * xs[iy * d.w + ix];
          }
        }
        os[oy * d.ow + ox] = acc;
      }
    }
  }
}

template <typename T>
void depthwise_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy,
                        const ConvDims& d, Tensor<T>* dx, Tensor<T>* dw, Tensor<T>* db) {
  if (dx) {
#pragma omp parallel for
    for (i64 sc = 0; sc < d.n * d.in_c; ++sc) {
      const i64 s = sc / d.in_c, c = sc % d.in_c;
      const T* dys = dy.ptr() + (s * d.in_c + c) * d.oh * d.ow;
      const T* wc = w.ptr() + c * d.kh * d.kw;
      T* dxs = dx->ptr() + (s * d.in_c + c) * d.h * d.w;
      for (i64 oy = 0; oy < d.oh; ++oy) {
        for (i64 ox = 0; ox < d.ow; ++ox) {
          const T go = dys[oy * d.ow + ox];
          for (i64 r = 0; r < d.kh; ++r) {
            const i64 iy = oy * d.stride + r - d.padding;
            if (iy < 0 || iy >= d.h) continue;
            for (i64 q = 0; q < d.kw; ++q) {
              const i64 ix = ox * d.stride + q - d.padding;
              if (ix >= 0 && ix < d.w) dxs[iy * d.w + ix] += wc[r * d.kw + q] * go;
            }
          }
        }
      }
    }
  }
  if (dw) {
#pragma omp parallel for
    for (i64 c = 0; c < d.in_c; ++c) {
      T* dwc = dw->ptr() + c * d.kh * d.kw;
      for (i64 s = 0; s < d.n; ++s) {
        const T* xs = x.ptr() + (s * d.in_c + c) * d.h * d.w;
        const T* dys = dy.ptr() + (s * d.in_c + c) * d.oh * d.ow;
        for (i64 oy = 0; oy < d.oh; ++oy) {
          for (i64 ox = 0; ox < d.ow; ++ox) {
            const T go = dys[oy * d.ow + ox];
            for (i64 r = 0; r < d.kh; ++r) {
              const i64 iy = oy * d.stride + r - d.padding;
              if (iy < 0 || iy >= d.h) continue;
              for (i64 q = 0; q < d.kw; ++q) {
                const i64 ix = ox * d.stride + q - d.padding;
                if (ix >= 0 && ix < d.w) dwc[r * d.kw + q] += xs[iy * d.w + ix] * go;
              }
            }
          }
        }
      }
    }
  }
  if (db) bias_grad(dy, d.out_c, d.oh * d.ow, *db);
}

// ---- grouped pointwise direct kernels (1x1, stride 1, small icpg) ----

template <typename T>
void grouped_pw_forward(const Tensor<T>& x, const Tensor<T>& w, const T* bias, const ConvDims& d,
                        Tensor<T>& out) {
  const i64 plane = d.h * d.w;
#pragma omp parallel for
  for (i64 so = 0; so < d.n * d.out_c; ++so) {
    const i64 s = so / d.out_c, oc = so % d.out_c;
    const i64 g = oc / d.ocpg;
    const T* ws = w.ptr() + oc * d.icpg;
    T* os = out.ptr() + (s * d.out_c + oc) * plane;
    const T b = bias ? bias[oc] : T(0);
    std::fill(os, os + plane, b);
    for (i64 ic = 0; ic < d.icpg; ++ic) {
      const T* xs = x.ptr() + (s * d.in_c + g * d.icpg + ic) * plane;
      const T wv = ws[ic];
      for (i64 p = 0; p < plane; ++p) os[p] += wv * xs[p];
    }
  }
}

template <typename T>
void grouped_pw_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy,
                         const ConvDims& d, Tensor<T>* dx, Tensor<T>* dw, Tensor<T>* db) {
  const i64 plane = d.h * d.w;
  if (dx) {
#pragma omp parallel for
    for (i64 si = 0; si < d.n * d.in_c; ++si) {
      const i64 s = si / d.in_c, cg = si % d.in_c;
      const i64 g = cg / d.icpg, ic = cg % d.icpg;
      T* dxs = dx->ptr() + (s * d.in_c + cg) * plane;
      for (i64 r = 0; r < d.ocpg; ++r) {
        const i64 oc = g * d.ocpg + r;
        const T wv = w.ptr()[oc * d.icpg + ic];
        const T* dys = dy.ptr() + (s * d.out_c + oc) * plane;
        for (i64 p = 0; p < plane; ++p) dxs[p] += wv * dys[p];
      }
    }
  }
  if (dw) {
#pragma omp parallel for
    for (i64 oc = 0; oc < d.out_c; ++oc) {
      const i64 g = oc / d.ocpg;
      for (i64 ic = 0; ic < d.icpg; ++ic) {
        T acc = 0;
        for (i64 s = 0; s < d.n; ++s) {
          const T* dys = dy.ptr() + (s * d.out_c + oc) * plane;
          const T* xs = x.ptr() + (s * d.in_c + g * d.icpg + ic) * plane;
          for (i64 p = 0; p < plane; ++p) acc += dys[p] * xs[p];
        }
        dw->data[static_cast<std::size_t>(oc * d.icpg + ic)] += acc;
      }
    }
  }
  if (db) bias_grad(dy, d.out_c, plane, *db);
}

// ---- dense pointwise (1x1 stride-1): per-sample GEMM straight into the
// output layout, no patch matrix needed ----

template <typename T>
void dense_pw_forward(const Tensor<T>& x, const Tensor<T>& w, const T* bias, const ConvDims& d,
                      Tensor<T>& out) {
  const i64 plane = d.h * d.w;
  for (i64 s = 0; s < d.n; ++s) {
    for (i64 g = 0; g < d.groups; ++g) {
      gemm_rm<T>(false, false, d.ocpg, plane, d.icpg, T(1), w.ptr() + g * d.ocpg * d.icpg, d.icpg,
                 x.ptr() + (s * d.in_c + g * d.icpg) * plane, plane, T(0),
                 out.ptr() + (s * d.out_c + g * d.ocpg) * plane, plane);
    }
  }
  if (bias) add_bias_rows(out.ptr(), bias, d.n, d.out_c, plane);
}

template <typename T>
void dense_pw_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy,
                       const ConvDims& d, Tensor<T>* dx, Tensor<T>* dw, Tensor<T>* db) {
  const i64 plane = d.h * d.w;
  for (i64 s = 0; s < d.n; ++s) {
    for (i64 g = 0; g < d.groups; ++g) {
      const T* dys = dy.ptr() + (s * d.out_c + g * d.ocpg) * plane;
      if (dx) {
        gemm_rm<T>(true, false, d.icpg, plane, d.ocpg, T(1), w.ptr() + g * d.ocpg * d.icpg, d.icpg,
                   dys, plane, T(1), dx->ptr() + (s * d.in_c + g * d.icpg) * plane, plane);
      }
      if (dw) {
        gemm_rm<T>(false, true, d.ocpg, d.icpg, plane, T(1), dys, plane,
                   x.ptr() + (s * d.in_c + g * d.icpg) * plane, plane, T(1),
                   dw->ptr() + g * d.ocpg * d.icpg, d.icpg);
      }
    }
  }
  if (db) bias_grad(dy, d.out_c, plane, *db);
}

// ---- generic path: whole-batch patch matrix per group + one large GEMM ----

template <typename T>
void generic_forward(const Tensor<T>& x, const Tensor<T>& w, const T* bias, const ConvDims& d,
                     Tensor<T>& out) {
  const i64 K = d.icpg * d.kh * d.kw;
  const i64 ohw = d.oh * d.ow;
  const i64 cols = d.n * ohw;
  auto& col = scratch<T>(0, static_cast<std::size_t>(K * cols));
  auto& y = scratch<T>(1, static_cast<std::size_t>(d.ocpg * cols));
  for (i64 g = 0; g < d.groups; ++g) {
#pragma omp parallel for
    for (i64 s = 0; s < d.n; ++s) {
      im2col(x.ptr() + s * d.in_c * d.h * d.w, d, g * d.icpg, col.data() + s * ohw, cols);
    }
    gemm_rm<T>(false, false, d.ocpg, cols, K, T(1), w.ptr() + g * d.ocpg * K, K, col.data(), cols,
               T(0), y.data(), cols);
#pragma omp parallel for
    for (i64 s = 0; s < d.n; ++s) {
      for (i64 r = 0; r < d.ocpg; ++r) {
        std::memcpy(out.ptr() + (s * d.out_c + g * d.ocpg + r) * ohw, y.data() + r * cols + s * ohw,
                    static_cast<std::size_t>(ohw) * sizeof(T));
      }
    }
  }
  if (bias) add_bias_rows(out.ptr(), bias, d.n, d.out_c, ohw);
}

template <typename T>
void generic_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy,
                      const ConvDims& d, Tensor<T>* dx, Tensor<T>* dw, Tensor<T>* db) {
  const i64 K = d.icpg * d.kh * d.kw;
  const i64 ohw = d.oh * d.ow;
  const i64 cols = d.n * ohw;
  auto& col = scratch<T>(0, static_cast<std::size_t>(K * cols));
  auto& pack = scratch<T>(1, static_cast<std::size_t>(d.ocpg * cols));
  auto& dcol = scratch<T>(2, static_cast<std::size_t>(K * cols));
  for (i64 g = 0; g < d.groups; ++g) {
#pragma omp parallel for
    for (i64 s = 0; s < d.n; ++s) {
      for (i64 r = 0; r < d.ocpg; ++r) {
        std::memcpy(pack.data() + r * cols + s * ohw,
                    dy.ptr() + (s * d.out_c + g * d.ocpg + r) * ohw,
                    static_cast<std::size_t>(ohw) * sizeof(T));
      }
    }
    if (dw) {
#pragma omp parallel for
      for (i64 s = 0; s < d.n; ++s) {
        im2col(x.ptr() + s * d.in_c * d.h * d.w, d, g * d.icpg, col.data() + s * ohw, cols);
      }
      gemm_rm<T>(false, true, d.ocpg, K, cols, T(1), pack.data(), cols, col.data(), cols, T(1),
                 dw->ptr() + g * d.ocpg * K, K);
    }
    if (dx) {
      gemm_rm<T>(true, false, K, cols, d.ocpg, T(1), w.ptr() + g * d.ocpg * K, K, pack.data(),
                 cols, T(0), dcol.data(), cols);
#pragma omp parallel for
      for (i64 s = 0; s < d.n; ++s) {
        col2im_acc(dcol.data() + s * ohw, d, g * d.icpg, dx->ptr() + s * d.in_c * d.h * d.w, cols);
      }
    }
  }
  if (db) bias_grad(dy, d.out_c, ohw, *db);
}

enum class ConvPath { depthwise, grouped_pw, dense_pw, generic };

ConvPath pick_conv_path(const ConvDims& d) {
  if (d.icpg == 1 && d.ocpg == 1) return ConvPath::depthwise;
  if (d.kh == 1 && d.kw == 1 && d.stride == 1 && d.padding == 0) {
    return (d.groups > 1 && d.icpg <= 4) ? ConvPath::grouped_pw : ConvPath::dense_pw;
  }
  return ConvPath::generic;
}

}  // namespace

template <typename T>
Var conv2d(Tape<T>& g, Var x, Var w, Var b, int stride, int padding, int groups) {
  const Tensor<T>& xv = g.value(x);
  const Tensor<T>& wv = g.value(w);
  const Tensor<T>* bv = b.valid() ? &g.value(b) : nullptr;
  const ConvDims d = conv_dims(xv, wv, bv, stride, padding, groups);
  Tensor<T> out(Shape{d.n, d.out_c, d.oh, d.ow});
  const ConvPath path = pick_conv_path(d);
  switch (path) {
    case ConvPath::depthwise: depthwise_forward(xv, wv, bv ? bv->ptr() : nullptr, d, out); break;
    case ConvPath::grouped_pw: grouped_pw_forward(xv, wv, bv ? bv->ptr() : nullptr, d, out); break;
    case ConvPath::dense_pw: dense_pw_forward(xv, wv, bv ? bv->ptr() : nullptr, d, out); break;
    case ConvPath::generic: generic_forward(xv, wv, bv ? bv->ptr() : nullptr, d, out); break;
  }
  return g.record("conv2d", std::move(out), [x, w, b, d, path](Tape<T>& t, Var out_v) {
    const Tensor<T>& dy = t.grad(out_v);
    const Tensor<T>& xv = t.value(x);
    const Tensor<T>& wv = t.value(w);
    Tensor<T>* dx = &t.grad_acc(x);
    Tensor<T>* dw = &t.grad_acc(w);
    Tensor<T>* db = b.valid() ? &t.grad_acc(b) : nullptr;
    switch (path) {
      case ConvPath::depthwise: depthwise_backward(xv, wv, dy, d, dx, dw, db); break;
      case ConvPath::grouped_pw: grouped_pw_backward(xv, wv, dy, d, dx, dw, db); break;
      case ConvPath::dense_pw: dense_pw_backward(xv, wv, dy, d, dx, dw, db); break;
      case ConvPath::generic: generic_backward(xv, wv, dy, d, dx, dw, db); break;
    }
  });
}

template <typename T>
Var batchnorm2d(Tape<T>& g, Var x, Var gamma, Var beta, BatchNormStats<T>& stats, Mode mode,
                T eps, T momentum) {
  const Tensor<T>& xv = g.value(x);
  const i64 n = xv.shape.n, c = xv.shape.c, plane = xv.shape.h * xv.shape.w;
  if (g.value(gamma).numel() != c || g.value(beta).numel() != c) {
    throw InvalidArgument("batchnorm2d: scale/shift length != channels " + std::to_string(c));
  }
  if (stats.running_mean.numel() != c) {
    throw InvalidArgument("batchnorm2d: running stats sized for " +
                          std::to_string(stats.running_mean.numel()) + " channels, input has " +
                          std::to_string(c));
  }
  const i64 count = n * plane;
  std::vector<T> mean(static_cast<std::size_t>(c)), invstd(static_cast<std::size_t>(c));
  if (mode == Mode::train) {
    if (count < 2) {
      throw InvalidArgument("batchnorm2d: train mode needs n*h*w >= 2 per channel, got " +
                            std::to_string(count));
    }
#pragma omp parallel for
    for (i64 ch = 0; ch < c; ++ch) {
      T sum = 0;
      for (i64 s = 0; s < n; ++s) {
        const T* p = xv.ptr() + (s * c + ch) * plane;
        for (i64 i = 0; i < plane; ++i) sum += p[i];
      }
      const T m = sum / static_cast<T>(count);
      T var = 0;
      for (i64 s = 0; s < n; ++s) {
        const T* p = xv.ptr() + (s * c + ch) * plane;
        for (i64 i = 0; i < plane; ++i) {
          const T dlt = p[i] - m;
          var += dlt * dlt;
        }
      }
      var /= static_cast<T>(count);
      mean[static_cast<std::size_t>(ch)] = m;
      invstd[static_cast<std::size_t>(ch)] = T(1) / std::sqrt(var + eps);
      // biased variance normalizes the batch; the running buffer keeps the
      // unbiased estimate
      const T unbiased = var * static_cast<T>(count) / static_cast<T>(count - 1);
      stats.running_mean.data[static_cast<std::size_t>(ch)] =
          (T(1) - momentum) * stats.running_mean.data[static_cast<std::size_t>(ch)] + momentum * m;
      stats.running_var.data[static_cast<std::size_t>(ch)] =
          (T(1) - momentum) * stats.running_var.data[static_cast<std::size_t>(ch)] +
          momentum * unbiased;
    }
    stats.updates++;
  } else {
    for (i64 ch = 0; ch < c; ++ch) {
      mean[static_cast<std::size_t>(ch)] = stats.running_mean.data[static_cast<std::size_t>(ch)];
      invstd[static_cast<std::size_t>(ch)] =
          T(1) / std::sqrt(stats.running_var.data[static_cast<std::size_t>(ch)] + eps);
    }
  }
  const Tensor<T>& gv = g.value(gamma);
  const Tensor<T>& bv = g.value(beta);
  Tensor<T> out(xv.shape);
#pragma omp parallel for
  for (i64 sc = 0; sc < n * c; ++sc) {
    const i64 ch = sc % c;
    const T m = mean[static_cast<std::size_t>(ch)];
    const T is = invstd[static_cast<std::size_t>(ch)];
    const T ga = gv.data[static_cast<std::size_t>(ch)];
    const T be = bv.data[static_cast<std::size_t>(ch)];
    const T* p = xv.ptr() + sc * plane;
    T* o = out.ptr() + sc * plane;
    for (i64 i = 0; i < plane; ++i) o[i] = (p[i] - m) * is * ga + be;
  }
  return g.record("batchnorm2d", std::move(out),
                  [x, gamma, beta, mode, mean = std::move(mean), invstd = std::move(invstd), n, c,
                   plane, count](Tape<T>& t, Var out_v) {
                    const Tensor<T>& dy = t.grad(out_v);
                    const Tensor<T>& xv = t.value(x);
                    const Tensor<T>& gv = t.value(gamma);
                    Tensor<T>& dx = t.grad_acc(x);
                    Tensor<T>& dg = t.grad_acc(gamma);
                    Tensor<T>& db = t.grad_acc(beta);
#pragma omp parallel for
                    for (i64 ch = 0; ch < c; ++ch) {
                      const T m = mean[static_cast<std::size_t>(ch)];
                      const T is = invstd[static_cast<std::size_t>(ch)];
                      const T ga = gv.data[static_cast<std::size_t>(ch)];
                      T sum_dy = 0, sum_dy_xhat = 0;
                      for (i64 s = 0; s < n; ++s) {
                        const T* dyp = dy.ptr() + (s * c + ch) * plane;
                        const T* xp = xv.ptr() + (s * c + ch) * plane;
                        for (i64 i = 0; i < plane; ++i) {
                          sum_dy += dyp[i];
                          sum_dy_xhat += dyp[i] * (xp[i] - m) * is;
                        }
                      }
                      dg.data[static_cast<std::size_t>(ch)] += sum_dy_xhat;
                      db.data[static_cast<std::size_t>(ch)] += sum_dy;
                      const T inv_count = T(1) / static_cast<T>(count);
                      for (i64 s = 0; s < n; ++s) {
                        const T* dyp = dy.ptr() + (s * c + ch) * plane;
                        const T* xp = xv.ptr() + (s * c + ch) * plane;
                        T* dxp = dx.ptr() + (s * c + ch) * plane;
                        for (i64 i = 0; i < plane; ++i) {
                          if (mode == Mode::train) {
                            const T xhat = (xp[i] - m) * is;
                            dxp[i] += ga * is *
                                      (dyp[i] - sum_dy * inv_count - xhat * sum_dy_xhat * inv_count);
                          } else {
                            dxp[i] += ga * is * dyp[i];
                          }
                        }
                      }
                    }
                  });
}

namespace {

template <typename T, typename FwdFn, typename DerivFn>
Var pointwise_op(Tape<T>& g, Var x, const char* name, FwdFn f, DerivFn dfdy) {
  const Tensor<T>& xv = g.value(x);
  Tensor<T> out(xv.shape);
  const i64 total = xv.numel();
#pragma omp parallel for
  for (i64 i = 0; i < total; ++i) out.data[static_cast<std::size_t>(i)] = f(xv.data[static_cast<std::size_t>(i)]);
  return g.record(name, std::move(out), [x, dfdy](Tape<T>& t, Var out_v) {
    const Tensor<T>& dy = t.grad(out_v);
    const Tensor<T>& xv = t.value(x);
    const Tensor<T>& yv = t.value(out_v);
    Tensor<T>& dx = t.grad_acc(x);
    const i64 total = xv.numel();
#pragma omp parallel for
    for (i64 i = 0; i < total; ++i) {
      const auto idx = static_cast<std::size_t>(i);
      dx.data[idx] += dy.data[idx] * dfdy(xv.data[idx], yv.data[idx]);
    }
  });
}

}  // namespace

template <typename T>
Var relu(Tape<T>& g, Var x) {
  return pointwise_op(
      g, x, "relu", [](T v) { return v > T(0) ? v : T(0); },
      [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Var tanh(Tape<T>& g, Var x) {
  return pointwise_op(
      g, x, "tanh", [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Var sigmoid(Tape<T>& g, Var x) {
  return pointwise_op(
      g, x, "sigmoid", [](T v) { return T(1) / (T(1) + std::exp(-v)); },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var concat_channels(Tape<T>& g, Var a, Var b) {
  const Tensor<T>& av = g.value(a);
  const Tensor<T>& bv = g.value(b);
  if (av.shape.n != bv.shape.n || av.shape.h != bv.shape.h || av.shape.w != bv.shape.w) {
    throw InvalidArgument("concat_channels: batch/spatial mismatch " + av.shape.str() + " vs " +
                          bv.shape.str());
  }
  const i64 n = av.shape.n, ca = av.shape.c, cb = bv.shape.c, plane = av.shape.h * av.shape.w;
  Tensor<T> out(Shape{n, ca + cb, av.shape.h, av.shape.w});
#pragma omp parallel for
  for (i64 s = 0; s < n; ++s) {
    std::memcpy(out.ptr() + s * (ca + cb) * plane, av.ptr() + s * ca * plane,
                static_cast<std::size_t>(ca * plane) * sizeof(T));
    std::memcpy(out.ptr() + (s * (ca + cb) + ca) * plane, bv.ptr() + s * cb * plane,
                static_cast<std::size_t>(cb * plane) * sizeof(T));
  }
  return g.record("concat_channels", std::move(out), [a, b, n, ca, cb, plane](Tape<T>& t, Var out_v) {
    const Tensor<T>& dy = t.grad(out_v);
    Tensor<T>& da = t.grad_acc(a);
    Tensor<T>& db = t.grad_acc(b);
#pragma omp parallel for
    for (i64 s = 0; s < n; ++s) {
      const T* src_a = dy.ptr() + s * (ca + cb) * plane;
      const T* src_b = dy.ptr() + (s * (ca + cb) + ca) * plane;
      T* pa = da.ptr() + s * ca * plane;
      T* pb = db.ptr() + s * cb * plane;
      for (i64 i = 0; i < ca * plane; ++i) pa[i] += src_a[i];
      for (i64 i = 0; i < cb * plane; ++i) pb[i] += src_b[i];
    }
  });
}

template <typename T>
Var add(Tape<T>& g, Var a, Var b) {
  const Tensor<T>& av = g.value(a);
  const Tensor<T>& bv = g.value(b);
  if (!(av.shape == bv.shape)) {
    throw InvalidArgument("add: shape mismatch " + av.shape.str() + " vs " + bv.shape.str());
  }
  Tensor<T> out(av.shape);
  const i64 total = av.numel();
#pragma omp parallel for
  for (i64 i = 0; i < total; ++i) {
    const auto idx = static_cast<std::size_t>(i);
    out.data[idx] = av.data[idx] + bv.data[idx];
  }
  return g.record("add", std::move(out), [a, b](Tape<T>& t, Var out_v) {
    const Tensor<T>& dy = t.grad(out_v);
    Tensor<T>& da = t.grad_acc(a);
    Tensor<T>& db = t.grad_acc(b);
    for (std::size_t i = 0; i < dy.data.size(); ++i) {
      da.data[i] += dy.data[i];
      db.data[i] += dy.data[i];
    }
  });
}

template <typename T>
Var ewise_mul(Tape<T>& g, Var a, Var b) {
  const Tensor<T>& av = g.value(a);
  const Tensor<T>& bv = g.value(b);
  if (!(av.shape == bv.shape)) {
    throw InvalidArgument("ewise_mul: shape mismatch " + av.shape.str() + " vs " + bv.shape.str());
  }
  Tensor<T> out(av.shape);
  const i64 total = av.numel();
#pragma omp parallel for
  for (i64 i = 0; i < total; ++i) {
    const auto idx = static_cast<std::size_t>(i);
    out.data[idx] = av.data[idx] * bv.data[idx];
  }
  return g.record("ewise_mul", std::move(out), [a, b](Tape<T>& t, Var out_v) {
    const Tensor<T>& dy = t.grad(out_v);
    const Tensor<T>& av = t.value(a);
    const Tensor<T>& bv = t.value(b);
    Tensor<T>& da = t.grad_acc(a);
    Tensor<T>& db = t.grad_acc(b);
    for (std::size_t i = 0; i < dy.data.size(); ++i) {
      da.data[i] += dy.data[i] * bv.data[i];
      db.data[i] += dy.data[i] * av.data[i];
    }
  });
}

template <typename T>
Var affine(Tape<T>& g, Var x, T scale, T shift) {
  const Tensor<T>& xv = g.value(x);
  Tensor<T> out(xv.shape);
  const i64 total = xv.numel();
#pragma omp parallel for
  for (i64 i = 0; i < total; ++i) {
    const auto idx = static_cast<std::size_t>(i);
    out.data[idx] = scale * xv.data[idx] + shift;
  }
  return g.record("affine", std::move(out), [x, scale](Tape<T>& t, Var out_v) {
    const Tensor<T>& dy = t.grad(out_v);
    Tensor<T>& dx = t.grad_acc(x);
    for (std::size_t i = 0; i < dy.data.size(); ++i) dx.data[i] += scale * dy.data[i];
  });
}

template <typename T>
Var global_avgpool(Tape<T>& g, Var x) {
  const Tensor<T>& xv = g.value(x);
  const i64 n = xv.shape.n, c = xv.shape.c, plane = xv.shape.h * xv.shape.w;
  if (plane == 0) throw InvalidArgument("global_avgpool: empty spatial extent " + xv.shape.str());
  Tensor<T> out(Shape{n, c, 1, 1});
#pragma omp parallel for
  for (i64 sc = 0; sc < n * c; ++sc) {
    const T* p = xv.ptr() + sc * plane;
    T acc = 0;
    for (i64 i = 0; i < plane; ++i) acc += p[i];
    out.data[static_cast<std::size_t>(sc)] = acc / static_cast<T>(plane);
  }
  return g.record("global_avgpool", std::move(out), [x, n, c, plane](Tape<T>& t, Var out_v) {
    const Tensor<T>& dy = t.grad(out_v);
    Tensor<T>& dx = t.grad_acc(x);
#pragma omp parallel for
    for (i64 sc = 0; sc < n * c; ++sc) {
      const T go = dy.data[static_cast<std::size_t>(sc)] / static_cast<T>(plane);
      T* p = dx.ptr() + sc * plane;
      for (i64 i = 0; i < plane; ++i) p[i] += go;
    }
  });
}

template <typename T>
Var maxpool2d(Tape<T>& g, Var x, int kernel, int stride, int padding) {
  const Tensor<T>& xv = g.value(x);
  const i64 n = xv.shape.n, c = xv.shape.c, h = xv.shape.h, w = xv.shape.w;
  const i64 oh = (h + 2 * padding - kernel) / stride + 1;
  const i64 ow = (w + 2 * padding - kernel) / stride + 1;
  if (kernel < 1 || stride < 1 || oh < 1 || ow < 1) {
    throw InvalidArgument("maxpool2d: kernel " + std::to_string(kernel) + " stride " +
                          std::to_string(stride) + " does not fit input " + xv.shape.str());
  }
  Tensor<T> out(Shape{n, c, oh, ow});
  auto argmax = std::make_shared<std::vector<i64>>(static_cast<std::size_t>(n * c * oh * ow));
#pragma omp parallel for
  for (i64 sc = 0; sc < n * c; ++sc) {
    const T* p = xv.ptr() + sc * h * w;
    T* o = out.ptr() + sc * oh * ow;
    i64* am = argmax->data() + sc * oh * ow;
    for (i64 oy = 0; oy < oh; ++oy) {
      for (i64 ox = 0; ox < ow; ++ox) {
        T best = -std::numeric_limits<T>::infinity();
        i64 best_i = -1;
        for (i64 r = 0; r < kernel; ++r) {
          const i64 iy = oy * stride + r - padding;
          if (iy < 0 || iy >= h) continue;
          for (i64 q = 0; q < kernel; ++q) {
            const i64 ix = ox * stride + q - padding;
            if (ix < 0 || ix >= w) continue;
            if (p[iy * w + ix] > best) {
              best = p[iy * w + ix];
              best_i = iy * w + ix;
            }
          }
        }
        o[oy * ow + ox] = best;
        am[oy * ow + ox] = best_i;
      }
    }
  }
  return g.record("maxpool2d", std::move(out), [x, argmax, n, c, h, w, oh, ow](Tape<T>& t, Var out_v) {
    const Tensor<T>& dy = t.grad(out_v);
    Tensor<T>& dx = t.grad_acc(x);
#pragma omp parallel for
    for (i64 sc = 0; sc < n * c; ++sc) {
      const T* dyp = dy.ptr() + sc * oh * ow;
      const i64* am = argmax->data() + sc * oh * ow;
      T* dxp = dx.ptr() + sc * h * w;
      for (i64 i = 0; i < oh * ow; ++i) {
        if (am[i] >= 0) dxp[am[i]] += dyp[i];
      }
    }
  });
}

template <typename T>
Var linear(Tape<T>& g, Var x, Var w, Var b) {
  const Tensor<T>& xv = g.value(x);
  const Tensor<T>& wv = g.value(w);
  if (xv.shape.h != 1 || xv.shape.w != 1) {
    throw InvalidArgument("linear: expected flattened input (n,k,1,1), got " + xv.shape.str());
  }
  const i64 n = xv.shape.n, k = xv.shape.c, m = wv.shape.n;
  if (wv.shape.c != k || wv.shape.h != 1 || wv.shape.w != 1) {
    throw InvalidArgument("linear: weight " + wv.shape.str() + " does not match input features " +
                          std::to_string(k));
  }
  if (b.valid() && g.value(b).numel() != m) {
    throw InvalidArgument("linear: bias length " + std::to_string(g.value(b).numel()) +
                          " != output features " + std::to_string(m));
  }
  Tensor<T> out(Shape{n, m, 1, 1});
  gemm_rm<T>(false, true, n, m, k, T(1), xv.ptr(), k, wv.ptr(), k, T(0), out.ptr(), m);
  if (b.valid()) {
    const Tensor<T>& bv = g.value(b);
#pragma omp parallel for
    for (i64 s = 0; s < n; ++s) {
      for (i64 j = 0; j < m; ++j) out.data[static_cast<std::size_t>(s * m + j)] += bv.data[static_cast<std::size_t>(j)];
    }
  }
  return g.record("linear", std::move(out), [x, w, b, n, k, m](Tape<T>& t, Var out_v) {
    const Tensor<T>& dy = t.grad(out_v);
    const Tensor<T>& xv = t.value(x);
    const Tensor<T>& wv = t.value(w);
    Tensor<T>& dx = t.grad_acc(x);
    Tensor<T>& dw = t.grad_acc(w);
    gemm_rm<T>(false, false, n, k, m, T(1), dy.ptr(), m, wv.ptr(), k, T(1), dx.ptr(), k);
    gemm_rm<T>(true, false, m, k, n, T(1), dy.ptr(), m, xv.ptr(), k, T(1), dw.ptr(), k);
    if (b.valid()) {
      Tensor<T>& db = t.grad_acc(b);
      for (i64 j = 0; j < m; ++j) {
        T acc = 0;
        for (i64 s = 0; s < n; ++s) acc += dy.data[static_cast<std::size_t>(s * m + j)];
        db.data[static_cast<std::size_t>(j)] += acc;
      }
    }
  });
}

template <typename T>
Var channel_scale(Tape<T>& g, Var x, Var s) {
  const Tensor<T>& xv = g.value(x);
  const Tensor<T>& sv = g.value(s);
  if (sv.shape.n != xv.shape.n || sv.shape.c != xv.shape.c || sv.shape.h != 1 || sv.shape.w != 1) {
    throw InvalidArgument("channel_scale: gate shape " + sv.shape.str() +
                          " must be (n,c,1,1) matching " + xv.shape.str());
  }
  const i64 n = xv.shape.n, c = xv.shape.c, plane = xv.shape.h * xv.shape.w;
  Tensor<T> out(xv.shape);
#pragma omp parallel for
  for (i64 sc = 0; sc < n * c; ++sc) {
    const T gate = sv.data[static_cast<std::size_t>(sc)];
    const T* p = xv.ptr() + sc * plane;
    T* o = out.ptr() + sc * plane;
    for (i64 i = 0; i < plane; ++i) o[i] = p[i] * gate;
  }
  return g.record("channel_scale", std::move(out), [x, s, n, c, plane](Tape<T>& t, Var out_v) {
    const Tensor<T>& dy = t.grad(out_v);
    const Tensor<T>& xv = t.value(x);
    const Tensor<T>& sv = t.value(s);
    Tensor<T>& dx = t.grad_acc(x);
    Tensor<T>& ds = t.grad_acc(s);
#pragma omp parallel for
    for (i64 sc = 0; sc < n * c; ++sc) {
      const T gate = sv.data[static_cast<std::size_t>(sc)];
      const T* dyp = dy.ptr() + sc * plane;
      const T* xp = xv.ptr() + sc * plane;
      T* dxp = dx.ptr() + sc * plane;
      T acc = 0;
      for (i64 i = 0; i < plane; ++i) {
        dxp[i] += dyp[i] * gate;
        acc += dyp[i] * xp[i];
      }
      ds.data[static_cast<std::size_t>(sc)] += acc;
    }
  });
}

template <typename T>
Var softmax_xent(Tape<T>& g, Var logits, const std::vector<int>& labels) {
  const Tensor<T>& lv = g.value(logits);
  if (lv.shape.h != 1 || lv.shape.w != 1) {
    throw InvalidArgument("softmax_xent: expected logits (n,m,1,1), got " + lv.shape.str());
  }
  const i64 n = lv.shape.n, m = lv.shape.c;
  if (static_cast<i64>(labels.size()) != n) {
    throw InvalidArgument("softmax_xent: " + std::to_string(labels.size()) + " labels for batch " +
                          std::to_string(n));
  }
  for (i64 s = 0; s < n; ++s) {
    if (labels[static_cast<std::size_t>(s)] < 0 || labels[static_cast<std::size_t>(s)] >= m) {
      throw InvalidArgument("softmax_xent: label " + std::to_string(labels[static_cast<std::size_t>(s)]) +
                            " out of range [0," + std::to_string(m) + ") at batch index " +
                            std::to_string(s));
    }
  }
  auto probs = std::make_shared<Tensor<T>>(Shape{n, m, 1, 1});
  T loss = 0;
  for (i64 s = 0; s < n; ++s) {
    const T* row = lv.ptr() + s * m;
    T* prow = probs->ptr() + s * m;
    T mx = row[0];
    for (i64 j = 1; j < m; ++j) mx = std::max(mx, row[j]);
    T denom = 0;
    for (i64 j = 0; j < m; ++j) {
      prow[j] = std::exp(row[j] - mx);
      denom += prow[j];
    }
    for (i64 j = 0; j < m; ++j) prow[j] /= denom;
    loss -= std::log(prow[labels[static_cast<std::size_t>(s)]]);
  }
  loss /= static_cast<T>(n);
  Tensor<T> out(Shape{1, 1, 1, 1});
  out.data[0] = loss;
  return g.record("softmax_xent", std::move(out), [logits, labels, probs, n, m](Tape<T>& t, Var out_v) {
    const T go = t.grad(out_v).data[0];
    Tensor<T>& dl = t.grad_acc(logits);
    const T scale = go / static_cast<T>(n);
    for (i64 s = 0; s < n; ++s) {
      const T* prow = probs->ptr() + s * m;
      T* drow = dl.ptr() + s * m;
      const int y = labels[static_cast<std::size_t>(s)];
      for (i64 j = 0; j < m; ++j) {
        drow[j] += scale * (prow[j] - (j == y ? T(1) : T(0)));
      }
    }
  });
}

template <typename T>
Var sum_all(Tape<T>& g, Var x) {
  const Tensor<T>& xv = g.value(x);
  T acc = 0;
  for (const T& v : xv.data) acc += v;
  Tensor<T> out(Shape{1, 1, 1, 1});
  out.data[0] = acc;
  return g.record("sum_all", std::move(out), [x](Tape<T>& t, Var out_v) {
    const T go = t.grad(out_v).data[0];
    Tensor<T>& dx = t.grad_acc(x);
    for (T& v : dx.data) v += go;
  });
}

#define REGNET_INSTANTIATE_OPS(T)                                                               \
  template Var conv2d<T>(Tape<T>&, Var, Var, Var, int, int, int);                               \
  template Var batchnorm2d<T>(Tape<T>&, Var, Var, Var, BatchNormStats<T>&, Mode, T, T);         \
  template Var relu<T>(Tape<T>&, Var);                                                         \
  template Var tanh<T>(Tape<T>&, Var);                                                         \
  template Var sigmoid<T>(Tape<T>&, Var);                                                      \
  template Var concat_channels<T>(Tape<T>&, Var, Var);                                         \
  template Var add<T>(Tape<T>&, Var, Var);                                                     \
  template Var ewise_mul<T>(Tape<T>&, Var, Var);                                               \
  template Var affine<T>(Tape<T>&, Var, T, T);                                                 \
  template Var global_avgpool<T>(Tape<T>&, Var);                                               \
  template Var maxpool2d<T>(Tape<T>&, Var, int, int, int);                                     \
  template Var linear<T>(Tape<T>&, Var, Var, Var);                                             \
  template Var channel_scale<T>(Tape<T>&, Var, Var);                                           \
  template Var softmax_xent<T>(Tape<T>&, Var, const std::vector<int>&);                        \
  template Var sum_all<T>(Tape<T>&, Var);

REGNET_INSTANTIATE_OPS(float)
REGNET_INSTANTIATE_OPS(double)

}  // namespace regnet

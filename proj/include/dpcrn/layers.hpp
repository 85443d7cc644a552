// Copyright 2026 The dpcrn Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "dpcrn/common.hpp"
#include "dpcrn/tensor.hpp"

// Layer primitives. Forward passes are written as per-frame kernels so the
// offline path and the streaming runtime run exactly the same arithmetic;
// the tensor-level wrappers just loop those kernels over time. Gradients are
// straightforward loops over the canonical weight layouts.
//
// Canonical layouts (also the weight-file layouts):
//   conv weight        [c_out, c_in, k_t, k_f]
//   deconv weight      [c_in, c_out, k_t, k_f]
//   lstm w_ih / w_hh   [4H, d_in] / [4H, H], gate order (i, f, g, o)
//   fc weight          [d_out, d_in]

namespace dpcrn {

template <typename T>
inline void axpy(T* __restrict y, const T* __restrict x, T a, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

template <typename T>
inline T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

// ---------------------------------------------------------------------------
// Convolution geometry

struct ConvGeom {
  std::size_t kt = 1, kf = 1;  // kernel (time, freq)
  std::size_t st = 1, sf = 1;  // stride (time, freq)
  std::size_t pad_lo = 0, pad_hi = 0;  // frequency zero padding

  std::size_t out_freq(std::size_t f_in) const {
    check(f_in + pad_lo + pad_hi >= kf, "frequency axis shorter than kernel");
    return (f_in + pad_lo + pad_hi - kf) / sf + 1;
  }
  // Left padding of k_t - 1 frames: output frame i reads inputs <= i*st.
  std::size_t out_time(std::size_t t_in) const {
    return t_in == 0 ? 0 : (t_in - 1) / st + 1;
  }
  // Frequency size of the adjoint map when the partner size is not given.
  std::size_t transpose_freq(std::size_t f_in) const {
    check(f_in > 0 && (f_in - 1) * sf + kf > pad_lo + pad_hi,
          "transposed conv output would be empty");
    return (f_in - 1) * sf + kf - pad_lo - pad_hi;
  }
  std::size_t transpose_time(std::size_t t_in) const {
    return t_in == 0 ? 0 : (t_in - 1) * st + 1;
  }
};

// Weights repacked as [k_t][k_f][c_in][c_out] so the innermost loop is a
// contiguous axpy over output channels.
template <typename T>
struct PackedConv {
  ConvGeom g;
  std::size_t cin = 0, cout = 0;
  std::vector<T> w;
  std::vector<T> bias;

  const T* tap(std::size_t a, std::size_t b, std::size_t ci) const {
    return w.data() + ((a * g.kf + b) * cin + ci) * cout;
  }

  static PackedConv conv(const Tensor<T>& weight, const Tensor<T>& b,
                         const ConvGeom& g) {
    check(weight.rank() == 4 && weight.dim(2) == g.kt && weight.dim(3) == g.kf,
          "conv weight shape " + shape_str(weight.shape()) +
              " does not match kernel");
    PackedConv p;
    p.g = g;
    p.cout = weight.dim(0);
    p.cin = weight.dim(1);
    check(b.size() == p.cout, "conv bias size mismatch");
    p.w.resize(weight.size());
    for (std::size_t co = 0; co < p.cout; ++co)
      for (std::size_t ci = 0; ci < p.cin; ++ci)
        for (std::size_t a = 0; a < g.kt; ++a)
          for (std::size_t f = 0; f < g.kf; ++f)
            p.w[((a * g.kf + f) * p.cin + ci) * p.cout + co] =
                weight(co, ci, a, f);
    p.bias = b.vec();
    return p;
  }

  // Transposed conv: channels flow c_in -> c_out with weight [c_in, c_out, ..].
  static PackedConv deconv(const Tensor<T>& weight, const Tensor<T>& b,
                           const ConvGeom& g) {
    check(weight.rank() == 4 && weight.dim(2) == g.kt && weight.dim(3) == g.kf,
          "deconv weight shape " + shape_str(weight.shape()) +
              " does not match kernel");
    PackedConv p;
    p.g = g;
    p.cin = weight.dim(0);
    p.cout = weight.dim(1);
    check(b.size() == p.cout, "deconv bias size mismatch");
    p.w.resize(weight.size());
    for (std::size_t ci = 0; ci < p.cin; ++ci)
      for (std::size_t co = 0; co < p.cout; ++co)
        for (std::size_t a = 0; a < g.kt; ++a)
          for (std::size_t f = 0; f < g.kf; ++f)
            p.w[((a * g.kf + f) * p.cin + ci) * p.cout + co] =
                weight(ci, co, a, f);
    p.bias = b.vec();
    return p;
  }
};

// One output frame of the causal conv. taps[a] is the input frame at time
// i*st + a - (k_t - 1), or nullptr for the zero left-padding.
template <typename T>
void conv_frame(const PackedConv<T>& p, std::size_t f_in,
                std::span<const T* const> taps, T* out) {
  const ConvGeom& g = p.g;
  const std::size_t f_out = g.out_freq(f_in);
  for (std::size_t j = 0; j < f_out; ++j)
    std::copy(p.bias.begin(), p.bias.end(), out + j * p.cout);
  for (std::size_t a = 0; a < g.kt; ++a) {
    const T* x = taps[a];
    if (!x) continue;
    for (std::size_t j = 0; j < f_out; ++j) {
      T* o = out + j * p.cout;
      for (std::size_t b = 0; b < g.kf; ++b) {
        const std::ptrdiff_t f = static_cast<std::ptrdiff_t>(j * g.sf + b) -
                                 static_cast<std::ptrdiff_t>(g.pad_lo);
        if (f < 0 || f >= static_cast<std::ptrdiff_t>(f_in)) continue;
        const T* xr = x + static_cast<std::size_t>(f) * p.cin;
        for (std::size_t ci = 0; ci < p.cin; ++ci)
          axpy(o, p.tap(a, b, ci), xr[ci], p.cout);
      }
    }
  }
}

// One output frame of the transposed conv. taps[a] is the input frame i with
// i*st + a == output time, or nullptr.
template <typename T>
void deconv_frame(const PackedConv<T>& p, std::size_t f_in, std::size_t f_out,
                  std::span<const T* const> taps, T* out) {
  const ConvGeom& g = p.g;
  for (std::size_t j = 0; j < f_out; ++j)
    std::copy(p.bias.begin(), p.bias.end(), out + j * p.cout);
  for (std::size_t a = 0; a < g.kt; ++a) {
    const T* x = taps[a];
    if (!x) continue;
    for (std::size_t i = 0; i < f_in; ++i) {
      const T* xr = x + i * p.cin;
      for (std::size_t b = 0; b < g.kf; ++b) {
        const std::ptrdiff_t j = static_cast<std::ptrdiff_t>(i * g.sf + b) -
                                 static_cast<std::ptrdiff_t>(g.pad_lo);
        if (j < 0 || j >= static_cast<std::ptrdiff_t>(f_out)) continue;
        T* o = out + static_cast<std::size_t>(j) * p.cout;
        for (std::size_t ci = 0; ci < p.cin; ++ci)
          axpy(o, p.tap(a, b, ci), xr[ci], p.cout);
      }
    }
  }
}

// x: [T, F, c_in] -> [T', F', c_out]. Time is left-padded with k_t - 1 zero
// frames so output frame i depends only on input frames <= i*st.
template <typename T>
Tensor<T> conv2d_causal(const Tensor<T>& x, const Tensor<T>& weight,
                        const Tensor<T>& bias, const ConvGeom& g) {
  auto p = PackedConv<T>::conv(weight, bias, g);
  check(x.rank() == 3 && x.dim(2) == p.cin,
        "conv input " + shape_str(x.shape()) + " does not match weight " +
            shape_str(weight.shape()));
  const std::size_t t_out = g.out_time(x.dim(0));
  const std::size_t f_out = g.out_freq(x.dim(1));
  auto y = Tensor<T>::tfc(t_out, f_out, p.cout);
  std::vector<const T*> taps(g.kt);
  for (std::size_t i = 0; i < t_out; ++i) {
    for (std::size_t a = 0; a < g.kt; ++a) {
      const std::ptrdiff_t ti = static_cast<std::ptrdiff_t>(i * g.st + a) -
                                static_cast<std::ptrdiff_t>(g.kt - 1);
      taps[a] = ti < 0 ? nullptr : x.row(static_cast<std::size_t>(ti));
    }
    conv_frame<T>(p, x.dim(1), taps, y.row(i));
  }
  return y;
}

namespace detail {

template <typename T>
Tensor<T> deconv_impl(const Tensor<T>& x, const Tensor<T>& weight,
                      const Tensor<T>& bias, const ConvGeom& g,
                      std::size_t f_out, std::size_t t_out) {
  auto p = PackedConv<T>::deconv(weight, bias, g);
  check(x.rank() == 3 && x.dim(2) == p.cin,
        "deconv input " + shape_str(x.shape()) + " does not match weight " +
            shape_str(weight.shape()));
  const std::size_t t_in = x.dim(0);
  auto y = Tensor<T>::tfc(t_out, f_out, p.cout);
  std::vector<const T*> taps(g.kt);
  for (std::size_t to = 0; to < t_out; ++to) {
    for (std::size_t a = 0; a < g.kt; ++a) {
      taps[a] = nullptr;
      if (to < a || (to - a) % g.st != 0) continue;
      const std::size_t ti = (to - a) / g.st;
      if (ti < t_in) taps[a] = x.row(ti);
    }
    deconv_frame<T>(p, x.dim(1), f_out, taps, y.row(to));
  }
  return y;
}

}  // namespace detail

// Causal transposed conv: the full transpose (length (T-1)*st + k_t) with the
// trailing k_t - 1 frames dropped, since those would need future inputs.
// f_out == 0 selects (F-1)*sf + k_f - pad_lo - pad_hi.
template <typename T>
Tensor<T> conv2d_transpose_causal(const Tensor<T>& x, const Tensor<T>& weight,
                                  const Tensor<T>& bias, const ConvGeom& g,
                                  std::size_t f_out = 0) {
  if (f_out == 0) f_out = g.transpose_freq(x.dim(1));
  return detail::deconv_impl(x, weight, bias, g, f_out,
                             g.transpose_time(x.dim(0)));
}

// Uncropped transpose in time. Frame t here is frame t - (k_t - 1) of the
// exact adjoint of conv2d_causal.
template <typename T>
Tensor<T> conv2d_transpose_full(const Tensor<T>& x, const Tensor<T>& weight,
                                const Tensor<T>& bias, const ConvGeom& g,
                                std::size_t f_out = 0) {
  if (f_out == 0) f_out = g.transpose_freq(x.dim(1));
  const std::size_t t_out = x.dim(0) == 0 ? 0 : (x.dim(0) - 1) * g.st + g.kt;
  return detail::deconv_impl(x, weight, bias, g, f_out, t_out);
}

template <typename T>
struct ConvGrads {
  Tensor<T> dx, dw, db;
};

template <typename T>
ConvGrads<T> conv2d_causal_backward(const Tensor<T>& x, const Tensor<T>& weight,
                                    const ConvGeom& g, const Tensor<T>& dy) {
  const std::size_t t_in = x.dim(0), f_in = x.dim(1), cin = x.dim(2);
  const std::size_t t_out = dy.dim(0), f_out = dy.dim(1), cout = dy.dim(2);
  ConvGrads<T> r{Tensor<T>::tfc(t_in, f_in, cin), Tensor<T>(weight.shape()),
                 Tensor<T>({cout})};
  for (std::size_t i = 0; i < t_out; ++i)
    for (std::size_t j = 0; j < f_out; ++j)
      for (std::size_t co = 0; co < cout; ++co) r.db[co] += dy(i, j, co);
  for (std::size_t i = 0; i < t_out; ++i) {
    for (std::size_t a = 0; a < g.kt; ++a) {
      const std::ptrdiff_t ti = static_cast<std::ptrdiff_t>(i * g.st + a) -
                                static_cast<std::ptrdiff_t>(g.kt - 1);
      if (ti < 0) continue;
      for (std::size_t j = 0; j < f_out; ++j) {
        for (std::size_t b = 0; b < g.kf; ++b) {
          const std::ptrdiff_t f = static_cast<std::ptrdiff_t>(j * g.sf + b) -
                                   static_cast<std::ptrdiff_t>(g.pad_lo);
          if (f < 0 || f >= static_cast<std::ptrdiff_t>(f_in)) continue;
          const std::size_t tu = static_cast<std::size_t>(ti);
          const std::size_t fu = static_cast<std::size_t>(f);
          for (std::size_t co = 0; co < cout; ++co) {
            const T d = dy(i, j, co);
            for (std::size_t ci = 0; ci < cin; ++ci) {
              r.dx(tu, fu, ci) += weight(co, ci, a, b) * d;
              r.dw(co, ci, a, b) += x(tu, fu, ci) * d;
            }
          }
        }
      }
    }
  }
  return r;
}

template <typename T>
ConvGrads<T> conv2d_transpose_causal_backward(const Tensor<T>& x,
                                              const Tensor<T>& weight,
                                              const ConvGeom& g,
                                              const Tensor<T>& dy) {
  const std::size_t t_in = x.dim(0), f_in = x.dim(1), cin = x.dim(2);
  const std::size_t t_out = dy.dim(0), f_out = dy.dim(1), cout = dy.dim(2);
  ConvGrads<T> r{Tensor<T>::tfc(t_in, f_in, cin), Tensor<T>(weight.shape()),
                 Tensor<T>({cout})};
  for (std::size_t i = 0; i < t_out; ++i)
    for (std::size_t j = 0; j < f_out; ++j)
      for (std::size_t co = 0; co < cout; ++co) r.db[co] += dy(i, j, co);
  for (std::size_t ti = 0; ti < t_in; ++ti) {
    for (std::size_t a = 0; a < g.kt; ++a) {
      const std::size_t to = ti * g.st + a;
      if (to >= t_out) continue;
      for (std::size_t i = 0; i < f_in; ++i) {
        for (std::size_t b = 0; b < g.kf; ++b) {
          const std::ptrdiff_t j = static_cast<std::ptrdiff_t>(i * g.sf + b) -
                                   static_cast<std::ptrdiff_t>(g.pad_lo);
          if (j < 0 || j >= static_cast<std::ptrdiff_t>(f_out)) continue;
          const std::size_t ju = static_cast<std::size_t>(j);
          for (std::size_t ci = 0; ci < cin; ++ci) {
            const T xv = x(ti, i, ci);
            T acc = T(0);
            for (std::size_t co = 0; co < cout; ++co) {
              const T d = dy(to, ju, co);
              acc += weight(ci, co, a, b) * d;
              r.dw(ci, co, a, b) += xv * d;
            }
            r.dx(ti, i, ci) += acc;
          }
        }
      }
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Batch normalization over the channel (last) axis

enum class BnMode { kInfer, kTrain };

template <typename T>
struct BnParams {
  const Tensor<T>& gamma;
  const Tensor<T>& beta;
  const Tensor<T>& running_mean;
  const Tensor<T>& running_var;
};

struct BnStats {
  std::vector<double> mean, var;
};

// rows x channels, inference statistics.
template <typename T>
void bn_infer_rows(const T* x, T* y, std::size_t rows, std::size_t c,
                   const T* gamma, const T* beta, const T* mean,
                   const T* var) {
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t k = 0; k < c; ++k) {
      const T inv = T(1) / std::sqrt(var[k] + static_cast<T>(kBnEps));
      y[r * c + k] = (x[r * c + k] - mean[k]) * inv * gamma[k] + beta[k];
    }
}

template <typename T>
BnStats bn_batch_stats(const Tensor<T>& x) {
  const std::size_t c = x.shape().back(), rows = x.size() / c;
  BnStats s{std::vector<double>(c, 0.0), std::vector<double>(c, 0.0)};
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t k = 0; k < c; ++k) s.mean[k] += x[r * c + k];
  for (auto& m : s.mean) m /= static_cast<double>(rows);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t k = 0; k < c; ++k) {
      const double d = static_cast<double>(x[r * c + k]) - s.mean[k];
      s.var[k] += d * d;
    }
  for (auto& v : s.var) v /= static_cast<double>(rows);
  return s;
}

// Train mode normalizes with the batch statistics over every row (time and
// frequency); the caller folds them into the running statistics.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const BnParams<T>& p, BnMode mode,
                     BnStats* batch_stats = nullptr) {
  const std::size_t c = x.shape().back(), rows = x.size() / c;
  check(p.gamma.size() == c && p.beta.size() == c &&
            p.running_mean.size() == c && p.running_var.size() == c,
        "batch norm parameters do not match channel axis");
  Tensor<T> y(x.shape());
  y.set_axes(x.axes());
  if (mode == BnMode::kInfer) {
    bn_infer_rows(x.data(), y.data(), rows, c, p.gamma.data(), p.beta.data(),
                  p.running_mean.data(), p.running_var.data());
    return y;
  }
  BnStats s = bn_batch_stats(x);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t k = 0; k < c; ++k) {
      const double inv = 1.0 / std::sqrt(s.var[k] + kBnEps);
      const double xh = (static_cast<double>(x[r * c + k]) - s.mean[k]) * inv;
      y[r * c + k] = static_cast<T>(xh * p.gamma[k] + p.beta[k]);
    }
  if (batch_stats) *batch_stats = std::move(s);
  return y;
}

// running = momentum * running + (1 - momentum) * batch
template <typename T>
void bn_update_running(Tensor<T>& running_mean, Tensor<T>& running_var,
                       const BnStats& s, double momentum = kBnMomentum) {
  for (std::size_t k = 0; k < running_mean.size(); ++k) {
    running_mean[k] = static_cast<T>(momentum * running_mean[k] +
                                     (1.0 - momentum) * s.mean[k]);
    running_var[k] = static_cast<T>(momentum * running_var[k] +
                                    (1.0 - momentum) * s.var[k]);
  }
}

template <typename T>
struct NormGrads {
  Tensor<T> dx, dgamma, dbeta;
};

template <typename T>
NormGrads<T> batch_norm_backward(const Tensor<T>& x, const BnParams<T>& p,
                                 BnMode mode, const Tensor<T>& dy) {
  const std::size_t c = x.shape().back(), rows = x.size() / c;
  NormGrads<T> g{Tensor<T>(x.shape()), Tensor<T>({c}), Tensor<T>({c})};
  if (mode == BnMode::kInfer) {
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t k = 0; k < c; ++k) {
        const T inv = T(1) / std::sqrt(p.running_var[k] + static_cast<T>(kBnEps));
        const T d = dy[r * c + k];
        g.dx[r * c + k] = d * p.gamma[k] * inv;
        g.dgamma[k] += d * (x[r * c + k] - p.running_mean[k]) * inv;
        g.dbeta[k] += d;
      }
    return g;
  }
  BnStats s = bn_batch_stats(x);
  const double n = static_cast<double>(rows);
  for (std::size_t k = 0; k < c; ++k) {
    const double inv = 1.0 / std::sqrt(s.var[k] + kBnEps);
    double sum_d = 0.0, sum_dx = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
      const double xh = (x[r * c + k] - s.mean[k]) * inv;
      const double d = dy[r * c + k];
      g.dgamma[k] += static_cast<T>(d * xh);
      g.dbeta[k] += static_cast<T>(d);
      sum_d += d * p.gamma[k];
      sum_dx += d * p.gamma[k] * xh;
    }
    for (std::size_t r = 0; r < rows; ++r) {
      const double xh = (x[r * c + k] - s.mean[k]) * inv;
      const double dxh = dy[r * c + k] * p.gamma[k];
      g.dx[r * c + k] =
          static_cast<T>(inv / n * (n * dxh - sum_d - xh * sum_dx));
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// PReLU with one slope per channel (last axis)

template <typename T>
void prelu_rows(const T* x, T* y, std::size_t rows, std::size_t c,
                const T* alpha) {
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t k = 0; k < c; ++k) {
      const T v = x[r * c + k];
      y[r * c + k] = v >= T(0) ? v : alpha[k] * v;
    }
}

template <typename T>
Tensor<T> prelu(const Tensor<T>& x, const Tensor<T>& alpha) {
  const std::size_t c = x.shape().back();
  check(alpha.size() == c, "prelu alpha does not match channel axis");
  Tensor<T> y(x.shape());
  y.set_axes(x.axes());
  prelu_rows(x.data(), y.data(), x.size() / c, c, alpha.data());
  return y;
}

template <typename T>
struct PreluGrads {
  Tensor<T> dx, dalpha;
};

template <typename T>
PreluGrads<T> prelu_backward(const Tensor<T>& x, const Tensor<T>& alpha,
                             const Tensor<T>& dy) {
  const std::size_t c = x.shape().back();
  PreluGrads<T> g{Tensor<T>(x.shape()), Tensor<T>({c})};
  for (std::size_t i = 0; i < x.size(); ++i) {
    const std::size_t k = i % c;
    if (x[i] >= T(0)) {
      g.dx[i] = dy[i];
    } else {
      g.dx[i] = alpha[k] * dy[i];
      g.dalpha[k] += x[i] * dy[i];
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Fully connected over the last axis

template <typename T>
struct PackedFc {
  std::size_t d_in = 0, d_out = 0;
  std::vector<T> wt;  // [d_in][d_out]
  std::vector<T> bias;

  static PackedFc from(const Tensor<T>& w, const Tensor<T>& b) {
    check(w.rank() == 2 && b.size() == w.dim(0), "fc weight/bias mismatch");
    PackedFc p;
    p.d_out = w.dim(0);
    p.d_in = w.dim(1);
    p.wt.resize(w.size());
    for (std::size_t o = 0; o < p.d_out; ++o)
      for (std::size_t i = 0; i < p.d_in; ++i) p.wt[i * p.d_out + o] = w(o, i);
    p.bias = b.vec();
    return p;
  }

  void apply(const T* x, T* y, std::size_t rows) const {
    for (std::size_t r = 0; r < rows; ++r) {
      T* yr = y + r * d_out;
      const T* xr = x + r * d_in;
      std::copy(bias.begin(), bias.end(), yr);
      for (std::size_t i = 0; i < d_in; ++i)
        axpy(yr, wt.data() + i * d_out, xr[i], d_out);
    }
  }
};

// y = W x + b on every row of the last axis.
template <typename T>
Tensor<T> fully_connected(const Tensor<T>& x, const Tensor<T>& w,
                          const Tensor<T>& b) {
  auto p = PackedFc<T>::from(w, b);
  check(x.shape().back() == p.d_in, "fc input width mismatch");
  Shape s = x.shape();
  s.back() = p.d_out;
  Tensor<T> y(s);
  y.set_axes(x.axes());
  p.apply(x.data(), y.data(), x.size() / p.d_in);
  return y;
}

template <typename T>
struct FcGrads {
  Tensor<T> dx, dw, db;
};

template <typename T>
FcGrads<T> fully_connected_backward(const Tensor<T>& x, const Tensor<T>& w,
                                    const Tensor<T>& dy) {
  const std::size_t d_out = w.dim(0), d_in = w.dim(1);
  const std::size_t rows = x.size() / d_in;
  FcGrads<T> g{Tensor<T>(x.shape()), Tensor<T>(w.shape()), Tensor<T>({d_out})};
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.data() + r * d_in;
    const T* dr = dy.data() + r * d_out;
    T* dxr = g.dx.data() + r * d_in;
    for (std::size_t o = 0; o < d_out; ++o) {
      const T d = dr[o];
      g.db[o] += d;
      for (std::size_t i = 0; i < d_in; ++i) {
        dxr[i] += w(o, i) * d;
        g.dw(o, i) += xr[i] * d;
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Instant layer norm: statistics per frame over (freq, channel), affine
// parameters shared across frames with shape [freq, channel].

template <typename T>
void iln_frame(const T* x, T* y, std::size_t m, const T* gamma, const T* beta,
               double eps = kIlnEps) {
  double mean = 0.0;
  for (std::size_t i = 0; i < m; ++i) mean += x[i];
  mean /= static_cast<double>(m);
  double var = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double d = x[i] - mean;
    var += d * d;
  }
  var /= static_cast<double>(m);
  const double inv = 1.0 / std::sqrt(var + eps);
  for (std::size_t i = 0; i < m; ++i)
    y[i] = static_cast<T>((x[i] - mean) * inv * gamma[i] + beta[i]);
}

// x: [frames, N, K] (or a single [N, K] frame).
template <typename T>
Tensor<T> iln(const Tensor<T>& x, const Tensor<T>& gamma,
              const Tensor<T>& beta, double eps = kIlnEps) {
  check(eps > 0.0, "iln eps must be positive");
  const std::size_t m = gamma.size();
  check(beta.size() == m && m > 0 && x.size() % m == 0,
        "iln parameters " + shape_str(gamma.shape()) +
            " do not tile input " + shape_str(x.shape()));
  Tensor<T> y(x.shape());
  y.set_axes(x.axes());
  for (std::size_t t = 0; t < x.size() / m; ++t)
    iln_frame(x.data() + t * m, y.data() + t * m, m, gamma.data(),
              beta.data(), eps);
  return y;
}

template <typename T>
NormGrads<T> iln_backward(const Tensor<T>& x, const Tensor<T>& gamma,
                          const Tensor<T>& dy, double eps = kIlnEps) {
  const std::size_t m = gamma.size();
  NormGrads<T> g{Tensor<T>(x.shape()), Tensor<T>(gamma.shape()),
                 Tensor<T>(gamma.shape())};
  std::vector<double> xh(m);
  for (std::size_t t = 0; t < x.size() / m; ++t) {
    const T* xr = x.data() + t * m;
    const T* dr = dy.data() + t * m;
    double mean = 0.0;
    for (std::size_t i = 0; i < m; ++i) mean += xr[i];
    mean /= static_cast<double>(m);
    double var = 0.0;
    for (std::size_t i = 0; i < m; ++i) var += (xr[i] - mean) * (xr[i] - mean);
    var /= static_cast<double>(m);
    const double inv = 1.0 / std::sqrt(var + eps);
    double sum_d = 0.0, sum_dx = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      xh[i] = (xr[i] - mean) * inv;
      const double dxh = static_cast<double>(dr[i]) * gamma[i];
      sum_d += dxh;
      sum_dx += dxh * xh[i];
      g.dgamma[i] += static_cast<T>(dr[i] * xh[i]);
      g.dbeta[i] += dr[i];
    }
    const double n = static_cast<double>(m);
    for (std::size_t i = 0; i < m; ++i) {
      const double dxh = static_cast<double>(dr[i]) * gamma[i];
      g.dx[t * m + i] =
          static_cast<T>(inv / n * (n * dxh - sum_d - xh[i] * sum_dx));
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// LSTM, gate order (input, forget, cell candidate, output)

template <typename T>
struct LstmWeights {
  const Tensor<T>& w_ih;  // [4H, d_in]
  const Tensor<T>& w_hh;  // [4H, H]
  const Tensor<T>& bias;  // [4H]

  std::size_t hidden() const { return w_hh.dim(1); }
  std::size_t input() const { return w_ih.dim(1); }
};

template <typename T>
struct LstmState {
  std::vector<T> h, c;
};

template <typename T>
struct PackedLstm {
  std::size_t d_in = 0, hidden = 0;
  std::vector<T> wih_t;  // [d_in][4H]
  std::vector<T> whh_t;  // [H][4H]
  std::vector<T> bias;

  static PackedLstm from(const LstmWeights<T>& w) {
    PackedLstm p;
    p.hidden = w.hidden();
    p.d_in = w.input();
    const std::size_t g4 = 4 * p.hidden;
    check(w.w_ih.rank() == 2 && w.w_ih.dim(0) == g4 && w.w_hh.dim(0) == g4 &&
              w.bias.size() == g4,
          "lstm weight shapes inconsistent");
    p.wih_t.resize(w.w_ih.size());
    p.whh_t.resize(w.w_hh.size());
    for (std::size_t r = 0; r < g4; ++r) {
      for (std::size_t i = 0; i < p.d_in; ++i) p.wih_t[i * g4 + r] = w.w_ih(r, i);
      for (std::size_t i = 0; i < p.hidden; ++i)
        p.whh_t[i * g4 + r] = w.w_hh(r, i);
    }
    p.bias = w.bias.vec();
    return p;
  }

  // One time step; h and c are updated in place. gates: scratch of 4H.
  void step(const T* x, T* h, T* c, T* gates) const {
    const std::size_t hd = hidden, g4 = 4 * hidden;
    std::copy(bias.begin(), bias.end(), gates);
    for (std::size_t i = 0; i < d_in; ++i)
      axpy(gates, wih_t.data() + i * g4, x[i], g4);
    for (std::size_t i = 0; i < hd; ++i)
      axpy(gates, whh_t.data() + i * g4, h[i], g4);
    for (std::size_t k = 0; k < hd; ++k) {
      const T ig = sigmoid(gates[k]);
      const T fg = sigmoid(gates[hd + k]);
      const T gg = std::tanh(gates[2 * hd + k]);
      const T og = sigmoid(gates[3 * hd + k]);
      c[k] = fg * c[k] + ig * gg;
      h[k] = og * std::tanh(c[k]);
    }
  }

  // Runs `steps` steps over x (row stride x_stride) writing h to y (row
  // stride y_stride). Direction reversed when `reverse`.
  void run(const T* x, std::size_t x_stride, std::size_t steps, T* y,
           std::size_t y_stride, T* h, T* c, T* gates, bool reverse) const {
    for (std::size_t n = 0; n < steps; ++n) {
      const std::size_t s = reverse ? steps - 1 - n : n;
      step(x + s * x_stride, h, c, gates);
      std::copy(h, h + hidden, y + s * y_stride);
    }
  }
};

template <typename T>
struct LstmSeqResult {
  Tensor<T> y;  // [steps, H]
  LstmState<T> state;
};

// x: [steps, d_in].
template <typename T>
LstmSeqResult<T> lstm_seq(const Tensor<T>& x, const LstmWeights<T>& w,
                          LstmState<T> state0 = {}) {
  auto p = PackedLstm<T>::from(w);
  check(x.rank() == 2 && x.dim(1) == p.d_in, "lstm input width mismatch");
  if (state0.h.empty()) state0.h.assign(p.hidden, T(0));
  if (state0.c.empty()) state0.c.assign(p.hidden, T(0));
  check(state0.h.size() == p.hidden && state0.c.size() == p.hidden,
        "lstm state dimension mismatch");
  LstmSeqResult<T> r{Tensor<T>({x.dim(0), p.hidden}), std::move(state0)};
  std::vector<T> gates(4 * p.hidden);
  p.run(x.data(), p.d_in, x.dim(0), r.y.data(), p.hidden, r.state.h.data(),
        r.state.c.data(), gates.data(), false);
  return r;
}

// Bidirectional pass over the rows of one frame, both directions from zero
// state. out: [steps][2H] as [forward | backward].
template <typename T>
void bilstm_frame(const PackedLstm<T>& fwd, const PackedLstm<T>& bwd,
                  const T* x, std::size_t steps, T* out,
                  std::vector<T>& scratch) {
  const std::size_t h = fwd.hidden;
  scratch.assign(2 * h + 4 * h, T(0));
  T* hs = scratch.data();
  T* cs = hs + h;
  T* gates = cs + h;
  fwd.run(x, fwd.d_in, steps, out, 2 * h, hs, cs, gates, false);
  std::fill(hs, hs + 2 * h, T(0));
  bwd.run(x, bwd.d_in, steps, out + h, 2 * h, hs, cs, gates, true);
}

template <typename T>
Tensor<T> bilstm_over_axis(const Tensor<T>& x, const LstmWeights<T>& fwd,
                           const LstmWeights<T>& bwd) {
  check(fwd.hidden() == bwd.hidden() && fwd.input() == bwd.input(),
        "bilstm directions configured differently");
  auto pf = PackedLstm<T>::from(fwd);
  auto pb = PackedLstm<T>::from(bwd);
  check(x.rank() == 2 && x.dim(1) == pf.d_in, "bilstm input width mismatch");
  Tensor<T> y({x.dim(0), 2 * pf.hidden});
  std::vector<T> scratch;
  bilstm_frame(pf, pb, x.data(), x.dim(0), y.data(), scratch);
  return y;
}

template <typename T>
struct LstmGrads {
  Tensor<T> dw_ih, dw_hh, dbias;
  explicit LstmGrads(const LstmWeights<T>& w)
      : dw_ih(w.w_ih.shape()), dw_hh(w.w_hh.shape()), dbias(w.bias.shape()) {}
};

// Backpropagation through time for one sequence starting from zero state.
// dx is accumulated (+=). Gates are recomputed from the inputs.
template <typename T>
void lstm_sequence_backward(const LstmWeights<T>& w, const T* x,
                            std::size_t x_stride, std::size_t steps,
                            bool reverse, const T* dy, std::size_t dy_stride,
                            T* dx, std::size_t dx_stride, LstmGrads<T>& g) {
  const std::size_t hd = w.hidden(), din = w.input(), g4 = 4 * hd;
  // Forward recompute in processing order.
  std::vector<T> gates(steps * g4), cs((steps + 1) * hd, T(0)),
      hs((steps + 1) * hd, T(0));
  auto pos = [&](std::size_t n) { return reverse ? steps - 1 - n : n; };
  for (std::size_t n = 0; n < steps; ++n) {
    const T* xn = x + pos(n) * x_stride;
    const T* hp = hs.data() + n * hd;
    T* gt = gates.data() + n * g4;
    for (std::size_t r = 0; r < g4; ++r) {
      T a = w.bias[r];
      for (std::size_t i = 0; i < din; ++i) a += w.w_ih(r, i) * xn[i];
      for (std::size_t i = 0; i < hd; ++i) a += w.w_hh(r, i) * hp[i];
      gt[r] = a;
    }
    for (std::size_t k = 0; k < hd; ++k) {
      gt[k] = sigmoid(gt[k]);
      gt[hd + k] = sigmoid(gt[hd + k]);
      gt[2 * hd + k] = std::tanh(gt[2 * hd + k]);
      gt[3 * hd + k] = sigmoid(gt[3 * hd + k]);
      const T c = gt[hd + k] * cs[n * hd + k] + gt[k] * gt[2 * hd + k];
      cs[(n + 1) * hd + k] = c;
      hs[(n + 1) * hd + k] = gt[3 * hd + k] * std::tanh(c);
    }
  }
  std::vector<T> dh(hd, T(0)), dc(hd, T(0)), da(g4);
  for (std::size_t n = steps; n-- > 0;) {
    const std::size_t s = pos(n);
    const T* gt = gates.data() + n * g4;
    const T* dyn = dy + s * dy_stride;
    for (std::size_t k = 0; k < hd; ++k) {
      const T ig = gt[k], fg = gt[hd + k], gg = gt[2 * hd + k],
              og = gt[3 * hd + k];
      const T c = cs[(n + 1) * hd + k];
      const T tc = std::tanh(c);
      const T dhk = dh[k] + dyn[k];
      const T dck = dc[k] + dhk * og * (T(1) - tc * tc);
      da[k] = dck * gg * ig * (T(1) - ig);
      da[hd + k] = dck * cs[n * hd + k] * fg * (T(1) - fg);
      da[2 * hd + k] = dck * ig * (T(1) - gg * gg);
      da[3 * hd + k] = dhk * tc * og * (T(1) - og);
      dc[k] = dck * fg;
    }
    const T* xn = x + s * x_stride;
    const T* hp = hs.data() + n * hd;
    T* dxn = dx ? dx + s * dx_stride : nullptr;
    std::fill(dh.begin(), dh.end(), T(0));
    for (std::size_t r = 0; r < g4; ++r) {
      const T d = da[r];
      g.dbias[r] += d;
      for (std::size_t i = 0; i < din; ++i) {
        g.dw_ih(r, i) += d * xn[i];
        if (dxn) dxn[i] += w.w_ih(r, i) * d;
      }
      for (std::size_t i = 0; i < hd; ++i) {
        g.dw_hh(r, i) += d * hp[i];
        dh[i] += w.w_hh(r, i) * d;
      }
    }
  }
}

}  // namespace dpcrn

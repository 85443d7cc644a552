// Copyright 2026 The dpcrn Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <vector>

#include "dpcrn/common.hpp"

namespace dpcrn {

// Mixed-radix decimation-in-time FFT for arbitrary sizes (radix 4, 2, 3, 5,
// then any remaining prime as a plain DFT). Always computed in double; the
// 400-point transform used here factors as 4*4*5*5.
class Fft {
 public:
  using cplx = std::complex<double>;

  explicit Fft(std::size_t n) : n_(n) {
    check(n > 0, "fft size must be positive");
    std::size_t m = n;
    for (std::size_t p : {4u, 2u, 3u, 5u}) {
      while (m % p == 0) {
        factors_.push_back(p);
        m /= p;
      }
    }
    for (std::size_t p = 7; m > 1; p += 2) {
      while (m % p == 0) {
        factors_.push_back(p);
        m /= p;
      }
    }
    twiddles_.resize(n);
    for (std::size_t k = 0; k < n; ++k)
      twiddles_[k] = std::polar(1.0, -2.0 * M_PI * static_cast<double>(k) /
                                         static_cast<double>(n));
  }

  std::size_t size() const { return n_; }

  // Unnormalized forward transform, X[k] = sum x[n] e^{-2 pi i k n / N}.
  void forward(const cplx* in, cplx* out) const {
    transform(in, 1, out, n_, 0, false);
  }

  // Unnormalized inverse transform (no 1/N).
  void inverse(const cplx* in, cplx* out) const {
    transform(in, 1, out, n_, 0, true);
  }

 private:
  cplx twiddle(std::size_t e, std::size_t n, bool inv) const {
    cplx w = twiddles_[(e % n) * (n_ / n)];
    return inv ? std::conj(w) : w;
  }

  void transform(const cplx* in, std::size_t stride, cplx* out, std::size_t n,
                 std::size_t level, bool inv) const {
    if (n == 1) {
      out[0] = in[0];
      return;
    }
    const std::size_t p = factors_[level];
    const std::size_t m = n / p;
    for (std::size_t q = 0; q < p; ++q)
      transform(in + q * stride, stride * p, out + q * m, m, level + 1, inv);

    cplx scratch[64];
    std::vector<cplx> big;
    cplx* tmp = scratch;
    if (p > 64) {
      big.resize(p);
      tmp = big.data();
    }
    for (std::size_t k = 0; k < m; ++k) {
      for (std::size_t q = 0; q < p; ++q) tmp[q] = out[q * m + k];
      for (std::size_t s = 0; s < p; ++s) {
        const std::size_t idx = k + s * m;
        cplx acc = tmp[0];
        for (std::size_t q = 1; q < p; ++q) acc += tmp[q] * twiddle(q * idx, n, inv);
        out[idx] = acc;
      }
    }
  }

  std::size_t n_;
  std::vector<std::size_t> factors_;
  std::vector<cplx> twiddles_;
};

}  // namespace dpcrn

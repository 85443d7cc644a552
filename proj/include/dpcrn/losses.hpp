// Copyright 2026 The dpcrn Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "dpcrn/audio.hpp"
#include "dpcrn/stft.hpp"

namespace dpcrn {

// Perfect-reconstruction guard: residual energy below this fraction of the
// reference energy reports the cap instead of -inf.
inline constexpr double kSnrCapDb = -100.0;
inline constexpr double kResidualFloor = 1e-12;
inline constexpr double kLogMseFloor = 1e-12;

namespace detail {

template <typename T>
void check_pair(std::span<const T> s, std::span<const T> s_hat) {
  if (s.size() != s_hat.size())
    fail("length mismatch: " + std::to_string(s.size()) + " vs " +
         std::to_string(s_hat.size()));
  if (s.empty()) fail("empty signal");
}

template <typename T>
double energy(std::span<const T> x) {
  double e = 0.0;
  for (T v : x) e += static_cast<double>(v) * static_cast<double>(v);
  return e;
}

template <typename T>
double residual_energy(std::span<const T> s, std::span<const T> s_hat) {
  double e = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double r = static_cast<double>(s[i]) - static_cast<double>(s_hat[i]);
    e += r * r;
  }
  return e;
}

}  // namespace detail

// -10 log10(sum s^2 / sum (s - s_hat)^2), lower is better.
template <typename T>
double loss_neg_snr(std::span<const T> s, std::span<const T> s_hat) {
  detail::check_pair(s, s_hat);
  const double es = detail::energy(s);
  if (!(es > 0.0)) fail("zero-energy reference");
  const double er = detail::residual_energy(s, s_hat);
  if (er < kResidualFloor * es) return kSnrCapDb;
  return -10.0 * std::log10(es / er);
}

inline double loss_neg_snr(const Signal& s, const Signal& s_hat) {
  return loss_neg_snr<float>(s.samples, s_hat.samples);
}

// d(loss_neg_snr)/d(s_hat). Zero inside the capped region.
template <typename T>
std::vector<T> loss_neg_snr_grad(std::span<const T> s,
                                 std::span<const T> s_hat) {
  detail::check_pair(s, s_hat);
  const double es = detail::energy(s);
  if (!(es > 0.0)) fail("zero-energy reference");
  const double er = detail::residual_energy(s, s_hat);
  std::vector<T> g(s.size(), T(0));
  if (er < kResidualFloor * es) return g;
  // loss = 10 log10(er) - 10 log10(es);  d er / d s_hat = -2 r
  const double k = -20.0 / (std::log(10.0) * er);
  for (std::size_t i = 0; i < s.size(); ++i)
    g[i] = static_cast<T>(
        k * (static_cast<double>(s[i]) - static_cast<double>(s_hat[i])));
  return g;
}

template <typename T>
double metric_snr(std::span<const T> s, std::span<const T> s_hat) {
  return -loss_neg_snr(s, s_hat);
}

inline double metric_snr(const Signal& s, const Signal& s_hat) {
  return -loss_neg_snr(s, s_hat);
}

// Projects s_hat onto s (optimal gain) before the ratio. The capped value
// (+100 dB) is reported when the projection residual vanishes.
template <typename T>
double metric_si_snr(std::span<const T> s, std::span<const T> s_hat) {
  detail::check_pair(s, s_hat);
  const double es = detail::energy(s);
  if (!(es > 0.0)) fail("zero-energy reference");
  if (!(detail::energy(s_hat) > 0.0)) fail("zero-energy estimate");
  double dot = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i)
    dot += static_cast<double>(s[i]) * static_cast<double>(s_hat[i]);
  const double alpha = dot / es;
  double et = 0.0, en = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double t = alpha * static_cast<double>(s[i]);
    const double n = static_cast<double>(s_hat[i]) - t;
    et += t * t;
    en += n * n;
  }
  if (en < kResidualFloor * et) return -kSnrCapDb;
  if (!(et > 0.0)) return kSnrCapDb;  // orthogonal estimate
  return 10.0 * std::log10(et / en);
}

inline double metric_si_snr(const Signal& s, const Signal& s_hat) {
  return metric_si_snr<float>(s.samples, s_hat.samples);
}

struct LossBreakdown {
  double neg_snr = 0.0;
  double mse_real = 0.0;
  double mse_imag = 0.0;
  double mse_mag = 0.0;
  double log_mse_term = 0.0;
  double total = 0.0;
};

// Spectral MSE terms between the reference S and the estimate S_hat, each a
// mean over all T*F entries.
template <typename T>
LossBreakdown spectral_mse(const BasicSpectrogram<T>& S,
                           const BasicSpectrogram<T>& S_hat) {
  if (!S.same_shape(S_hat)) fail("spectrogram shape mismatch in loss");
  const std::size_t n = S.real.size();
  if (n == 0) fail("empty spectrogram in loss");
  LossBreakdown b;
  for (std::size_t i = 0; i < n; ++i) {
    const double sr = S.real[i], si = S.imag[i];
    const double hr = S_hat.real[i], hi = S_hat.imag[i];
    const double dm = std::sqrt(sr * sr + si * si) - std::sqrt(hr * hr + hi * hi);
    b.mse_real += (sr - hr) * (sr - hr);
    b.mse_imag += (si - hi) * (si - hi);
    b.mse_mag += dm * dm;
  }
  b.mse_real /= static_cast<double>(n);
  b.mse_imag /= static_cast<double>(n);
  b.mse_mag /= static_cast<double>(n);
  b.log_mse_term =
      std::log(std::max(b.mse_real + b.mse_imag + b.mse_mag, kLogMseFloor));
  return b;
}

// Signal-level negative SNR plus the natural log of the summed spectral MSEs.
template <typename T>
LossBreakdown loss_snr_mse(std::span<const T> s, std::span<const T> s_hat,
                           const BasicSpectrogram<T>& S,
                           const BasicSpectrogram<T>& S_hat) {
  LossBreakdown b = spectral_mse(S, S_hat);
  b.neg_snr = loss_neg_snr(s, s_hat);
  b.total = b.neg_snr + b.log_mse_term;
  return b;
}

inline LossBreakdown loss_snr_mse(const Signal& s, const Signal& s_hat,
                                  const Spectrogram& S,
                                  const Spectrogram& S_hat) {
  return loss_snr_mse<float>(s.samples, s_hat.samples, S, S_hat);
}

// d(log_mse_term)/d(S_hat). Zero when the clamp is active. At |S_hat| = 0
// the magnitude term uses the zero subgradient.
template <typename T>
BasicSpectrogram<T> log_mse_grad(const BasicSpectrogram<T>& S,
                                 const BasicSpectrogram<T>& S_hat) {
  const LossBreakdown b = spectral_mse(S, S_hat);
  BasicSpectrogram<T> g(S.frames, S.bins);
  const double sum = b.mse_real + b.mse_imag + b.mse_mag;
  if (sum < kLogMseFloor) return g;
  const std::size_t n = S.real.size();
  const double k = -2.0 / (static_cast<double>(n) * sum);
  for (std::size_t i = 0; i < n; ++i) {
    const double sr = S.real[i], si = S.imag[i];
    const double hr = S_hat.real[i], hi = S_hat.imag[i];
    const double mh = std::sqrt(hr * hr + hi * hi);
    const double dm = std::sqrt(sr * sr + si * si) - mh;
    double gr = k * (sr - hr), gi = k * (si - hi);
    if (mh > 0.0) {
      gr += k * dm * hr / mh;
      gi += k * dm * hi / mh;
    }
    g.real[i] = static_cast<T>(gr);
    g.imag[i] = static_cast<T>(gi);
  }
  return g;
}

}  // namespace dpcrn

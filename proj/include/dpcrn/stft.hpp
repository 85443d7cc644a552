// Copyright 2026 The dpcrn Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "dpcrn/audio.hpp"
#include "dpcrn/common.hpp"
#include "dpcrn/fft.hpp"

namespace dpcrn {

struct StftConfig {
  std::size_t win_len = 400;
  std::size_t hop = 200;
  std::size_t fft_len = 400;

  std::size_t n_bins() const { return fft_len / 2 + 1; }

  void validate() const {
    check(win_len > 0 && win_len % 2 == 0, "window length must be even");
    check(hop * 2 == win_len, "hop must be half the window length");
    check(fft_len >= win_len, "fft length shorter than window");
  }

  std::size_t frames_for(std::size_t len) const {
    return len < win_len ? 0 : (len - win_len) / hop + 1;
  }

  std::size_t length_for(std::size_t frames) const {
    return frames == 0 ? 0 : (frames - 1) * hop + win_len;
  }
};

// Complex time-frequency matrix as separate real/imaginary planes, row-major
// [frame][bin]. The tag keeps spectrograms and masks from being mixed up.
template <typename T, typename Tag>
struct ComplexPlanes {
  std::size_t frames = 0;
  std::size_t bins = 0;
  std::vector<T> real;
  std::vector<T> imag;

  ComplexPlanes() = default;
  ComplexPlanes(std::size_t t, std::size_t f)
      : frames(t), bins(f), real(t * f, T(0)), imag(t * f, T(0)) {}

  T& re(std::size_t t, std::size_t f) { return real[t * bins + f]; }
  T& im(std::size_t t, std::size_t f) { return imag[t * bins + f]; }
  const T& re(std::size_t t, std::size_t f) const { return real[t * bins + f]; }
  const T& im(std::size_t t, std::size_t f) const { return imag[t * bins + f]; }

  bool same_shape(const auto& o) const {
    return frames == o.frames && bins == o.bins;
  }

  void validate() const {
    check(real.size() == frames * bins && imag.size() == frames * bins,
          "malformed complex planes");
  }

  template <typename U>
  ComplexPlanes<U, Tag> cast() const {
    ComplexPlanes<U, Tag> out(frames, bins);
    for (std::size_t i = 0; i < real.size(); ++i) {
      out.real[i] = static_cast<U>(real[i]);
      out.imag[i] = static_cast<U>(imag[i]);
    }
    return out;
  }
};

struct SpectrumTag {};
struct MaskTag {};

template <typename T>
using BasicSpectrogram = ComplexPlanes<T, SpectrumTag>;
using Spectrogram = BasicSpectrogram<float>;

// w[k] = sin(pi (k + 0.5) / n). With hop n/2, w^2 of overlapping frames sums
// to one (sin^2 + cos^2), so the same window serves analysis and synthesis.
template <typename T = float>
std::vector<T> sine_window(std::size_t n) {
  check(n > 0 && n % 2 == 0, "window length must be even and positive");
  std::vector<T> w(n);
  for (std::size_t k = 0; k < n; ++k)
    w[k] = static_cast<T>(std::sin(M_PI * (static_cast<double>(k) + 0.5) /
                                   static_cast<double>(n)));
  return w;
}

// Per-frame transform pair shared by the offline STFT and the streaming
// runtime. Forward is unnormalized, inverse carries the 1/fft_len.
template <typename T>
class FrameTransform {
 public:
  explicit FrameTransform(const StftConfig& cfg = {})
      : cfg_(cfg), fft_(cfg.fft_len), window_(sine_window<double>(cfg.win_len)),
        buf_(cfg.fft_len), spec_(cfg.fft_len) {
    cfg.validate();
  }

  const StftConfig& config() const { return cfg_; }

  // frame: win_len samples. re/im: n_bins each.
  void analyze(const T* frame, T* re, T* im) {
    const std::size_t nb = cfg_.n_bins();
    for (std::size_t k = 0; k < cfg_.fft_len; ++k)
      buf_[k] = k < cfg_.win_len
                    ? Fft::cplx(window_[k] * static_cast<double>(frame[k]), 0.0)
                    : Fft::cplx(0.0, 0.0);
    fft_.forward(buf_.data(), spec_.data());
    for (std::size_t k = 0; k < nb; ++k) {
      re[k] = static_cast<T>(spec_[k].real());
      im[k] = static_cast<T>(spec_[k].imag());
    }
  }

  // Inverse real FFT of one half-spectrum, synthesis-windowed. The imaginary
  // parts of the DC and Nyquist bins do not contribute (real output).
  void synthesize(const T* re, const T* im, T* frame) {
    const std::size_t n = cfg_.fft_len, nb = cfg_.n_bins();
    for (std::size_t k = 0; k < nb; ++k)
      spec_[k] = Fft::cplx(static_cast<double>(re[k]), static_cast<double>(im[k]));
    for (std::size_t k = nb; k < n; ++k) spec_[k] = std::conj(spec_[n - k]);
    if (n % 2 == 0) spec_[n / 2] = Fft::cplx(spec_[n / 2].real(), 0.0);
    spec_[0] = Fft::cplx(spec_[0].real(), 0.0);
    fft_.inverse(spec_.data(), buf_.data());
    const double scale = 1.0 / static_cast<double>(n);
    for (std::size_t k = 0; k < cfg_.win_len; ++k)
      frame[k] = static_cast<T>(buf_[k].real() * scale * window_[k]);
  }

  // Adjoint of synthesize(): maps d(loss)/d(frame) to d(loss)/d(re, im).
  void synthesize_adjoint(const T* dframe, T* dre, T* dim) {
    const std::size_t n = cfg_.fft_len, nb = cfg_.n_bins();
    for (std::size_t k = 0; k < n; ++k)
      buf_[k] = k < cfg_.win_len
                    ? Fft::cplx(window_[k] * static_cast<double>(dframe[k]), 0.0)
                    : Fft::cplx(0.0, 0.0);
    fft_.forward(buf_.data(), spec_.data());
    const double scale = 1.0 / static_cast<double>(n);
    for (std::size_t k = 0; k < nb; ++k) {
      const bool edge = k == 0 || (n % 2 == 0 && k == n / 2);
      const double c = edge ? scale : 2.0 * scale;
      dre[k] = static_cast<T>(c * spec_[k].real());
      dim[k] = edge ? T(0) : static_cast<T>(c * spec_[k].imag());
    }
  }

 private:
  StftConfig cfg_;
  Fft fft_;
  std::vector<double> window_;
  std::vector<Fft::cplx> buf_;
  std::vector<Fft::cplx> spec_;
};

// Frame t covers samples [t*hop, t*hop + win_len). No centering padding.
template <typename T>
BasicSpectrogram<T> analyze(std::span<const T> s, const StftConfig& cfg = {}) {
  cfg.validate();
  if (s.size() < cfg.win_len)
    fail("signal shorter than one window (" + std::to_string(s.size()) +
         " < " + std::to_string(cfg.win_len) + ")");
  const std::size_t frames = cfg.frames_for(s.size());
  BasicSpectrogram<T> out(frames, cfg.n_bins());
  FrameTransform<T> ft(cfg);
  for (std::size_t t = 0; t < frames; ++t)
    ft.analyze(s.data() + t * cfg.hop, &out.re(t, 0), &out.im(t, 0));
  return out;
}

inline Spectrogram analyze(const Signal& s, const StftConfig& cfg = {}) {
  return analyze<float>(std::span<const float>(s.samples), cfg);
}

// Overlap-add resynthesis, output length (T-1)*hop + win_len.
template <typename T>
std::vector<T> synthesize(const BasicSpectrogram<T>& spec,
                          const StftConfig& cfg = {}) {
  cfg.validate();
  spec.validate();
  if (spec.bins != cfg.n_bins())
    fail("spectrogram has " + std::to_string(spec.bins) + " bins, expected " +
         std::to_string(cfg.n_bins()));
  std::vector<T> out(cfg.length_for(spec.frames), T(0));
  std::vector<T> frame(cfg.win_len);
  FrameTransform<T> ft(cfg);
  for (std::size_t t = 0; t < spec.frames; ++t) {
    ft.synthesize(&spec.re(t, 0), &spec.im(t, 0), frame.data());
    T* dst = out.data() + t * cfg.hop;
    for (std::size_t k = 0; k < cfg.win_len; ++k) dst[k] += frame[k];
  }
  return out;
}

inline Signal synthesize_signal(const Spectrogram& spec,
                                const StftConfig& cfg = {}) {
  return Signal(synthesize<float>(spec, cfg));
}

// Adjoint of synthesize() with respect to the spectrogram.
template <typename T>
BasicSpectrogram<T> synthesize_adjoint(std::span<const T> grad,
                                       std::size_t frames,
                                       const StftConfig& cfg = {}) {
  check(grad.size() == cfg.length_for(frames),
        "gradient length does not match frame count");
  BasicSpectrogram<T> out(frames, cfg.n_bins());
  FrameTransform<T> ft(cfg);
  for (std::size_t t = 0; t < frames; ++t)
    ft.synthesize_adjoint(grad.data() + t * cfg.hop, &out.re(t, 0),
                          &out.im(t, 0));
  return out;
}

// Spectrogram dump: "DPSG", u32 frames, u32 bins, then the real plane and the
// imaginary plane as little-endian float32, time-major.
inline void save_spectrogram(const std::string& path, const Spectrogram& s) {
  s.validate();
  std::string out = "DPSG";
  detail::put_u32(out, static_cast<std::uint32_t>(s.frames));
  detail::put_u32(out, static_cast<std::uint32_t>(s.bins));
  for (const auto* plane : {&s.real, &s.imag})
    for (float v : *plane) {
      std::uint32_t b;
      std::memcpy(&b, &v, 4);
      detail::put_u32(out, b);
    }
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::kIo, "cannot write " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

inline Spectrogram load_spectrogram(const std::string& path) {
  auto buf = detail::slurp(path);
  if (buf.size() < 12 || std::memcmp(buf.data(), "DPSG", 4) != 0)
    fail("not a spectrogram dump");
  std::size_t t = detail::read_u32(buf.data() + 4);
  std::size_t f = detail::read_u32(buf.data() + 8);
  if (buf.size() != 12 + 8 * t * f) fail("truncated spectrogram dump");
  Spectrogram s(t, f);
  const unsigned char* p = buf.data() + 12;
  for (auto* plane : {&s.real, &s.imag})
    for (float& v : *plane) {
      std::uint32_t b = detail::read_u32(p);
      std::memcpy(&v, &b, 4);
      p += 4;
    }
  return s;
}

}  // namespace dpcrn

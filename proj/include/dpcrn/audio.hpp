// Copyright 2026 The dpcrn Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dpcrn/common.hpp"

namespace dpcrn {

// Mono 16 kHz waveform, linear amplitude.
struct Signal {
  std::vector<float> samples;
  int sample_rate = kSampleRate;

  Signal() = default;
  explicit Signal(std::vector<float> s) : samples(std::move(s)) {}

  std::size_t size() const { return samples.size(); }

  void validate() const {
    if (sample_rate != kSampleRate) fail("unsupported sample rate");
    for (float v : samples)
      if (!std::isfinite(v)) fail("signal contains non-finite samples");
  }

  double energy() const {
    double e = 0.0;
    for (float v : samples) e += static_cast<double>(v) * v;
    return e;
  }
};

enum class WavFormat { kPcm16, kFloat32 };

namespace detail {

inline std::uint32_t read_u32(const unsigned char* p) {
  return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 |
         std::uint32_t(p[2]) << 16 | std::uint32_t(p[3]) << 24;
}

inline std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | p[1] << 8);
}

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>(v >> (8 * i)));
}

inline void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>(v >> 8));
}

inline std::vector<unsigned char> slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace detail

// Parses a RIFF/WAVE image. Accepts PCM16 (format 1) or IEEE float32
// (format 3), mono, 16 kHz; anything else is rejected naming the property.
inline Signal parse_wav(std::span<const unsigned char> buf) {
  using detail::read_u16;
  using detail::read_u32;
  if (buf.size() < 12 || std::memcmp(buf.data(), "RIFF", 4) != 0 ||
      std::memcmp(buf.data() + 8, "WAVE", 4) != 0)
    fail("not a RIFF/WAVE file");

  bool have_fmt = false;
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  std::size_t pos = 12;
  while (pos + 8 <= buf.size()) {
    const unsigned char* hdr = buf.data() + pos;
    std::uint32_t len = read_u32(hdr + 4);
    std::size_t body = pos + 8;
    if (body + len > buf.size()) fail("truncated wav chunk");
    if (std::memcmp(hdr, "fmt ", 4) == 0) {
      if (len < 16) fail("malformed fmt chunk");
      const unsigned char* f = buf.data() + body;
      format = read_u16(f);
      channels = read_u16(f + 2);
      rate = read_u32(f + 4);
      bits = read_u16(f + 14);
      have_fmt = true;
    } else if (std::memcmp(hdr, "data", 4) == 0) {
      if (!have_fmt) fail("data chunk before fmt chunk");
      if (format == 1) {
        if (bits != 16) fail("unsupported bit depth " + std::to_string(bits));
      } else if (format == 3) {
        if (bits != 32) fail("unsupported bit depth " + std::to_string(bits));
      } else {
        fail("unsupported wav format tag " + std::to_string(format));
      }
      if (channels != 1)
        fail("unsupported channel count " + std::to_string(channels));
      if (rate != static_cast<std::uint32_t>(kSampleRate))
        fail("unsupported sample rate " + std::to_string(rate));

      const unsigned char* d = buf.data() + body;
      Signal s;
      if (format == 1) {
        s.samples.resize(len / 2);
        for (std::size_t i = 0; i < s.samples.size(); ++i) {
          auto v = static_cast<std::int16_t>(read_u16(d + 2 * i));
          s.samples[i] = static_cast<float>(v) / 32768.0f;
        }
      } else {
        s.samples.resize(len / 4);
        for (std::size_t i = 0; i < s.samples.size(); ++i) {
          std::uint32_t bitsv = read_u32(d + 4 * i);
          std::memcpy(&s.samples[i], &bitsv, 4);
        }
      }
      s.validate();
      return s;
    }
    pos = body + len + (len & 1);
  }
  fail(have_fmt ? "missing data chunk" : "missing fmt chunk");
}

inline Signal read_wav(const std::string& path) {
  auto buf = detail::slurp(path);
  return parse_wav(buf);
}

// PCM16 output clips to [-1, 1] and rounds to the nearest step of 1/32768.
inline std::string encode_wav(const Signal& s,
                              WavFormat fmt = WavFormat::kPcm16) {
  s.validate();
  const bool pcm = fmt == WavFormat::kPcm16;
  const std::uint16_t bytes_per = pcm ? 2 : 4;
  const auto data_len = static_cast<std::uint32_t>(s.size() * bytes_per);

  std::string out;
  out.reserve(44 + data_len);
  out += "RIFF";
  detail::put_u32(out, 36 + data_len);
  out += "WAVEfmt ";
  detail::put_u32(out, 16);
  detail::put_u16(out, pcm ? 1 : 3);
  detail::put_u16(out, 1);
  detail::put_u32(out, kSampleRate);
  detail::put_u32(out, kSampleRate * bytes_per);
  detail::put_u16(out, bytes_per);
  detail::put_u16(out, static_cast<std::uint16_t>(bytes_per * 8));
  out += "data";
  detail::put_u32(out, data_len);
  for (float v : s.samples) {
    if (pcm) {
      double q = std::nearbyint(std::clamp(static_cast<double>(v), -1.0, 1.0) *
                                32768.0);
      q = std::clamp(q, -32768.0, 32767.0);
      detail::put_u16(out, static_cast<std::uint16_t>(
                               static_cast<std::int16_t>(q)));
    } else {
      std::uint32_t bits;
      std::memcpy(&bits, &v, 4);
      detail::put_u32(out, bits);
    }
  }
  return out;
}

inline void write_wav(const std::string& path, const Signal& s,
                      WavFormat fmt = WavFormat::kPcm16) {
  std::string bytes = encode_wav(s, fmt);
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::kIo, "write failed for " + path);
}

struct MixSpec {
  double snr_db = 0.0;
  std::uint64_t seed = 0;
};

struct Mixture {
  Signal mixture;
  Signal scaled_noise;
};

// Crops `noise` to the speech length at a seed-chosen offset and scales it so
// that 10*log10(E_speech / E_noise) equals spec.snr_db.
inline Mixture mix_at_snr(const Signal& speech, const Signal& noise,
                          const MixSpec& spec) {
  speech.validate();
  noise.validate();
  if (!std::isfinite(spec.snr_db)) fail("snr_db must be finite");
  if (noise.size() < speech.size())
    fail("noise shorter than speech (" + std::to_string(noise.size()) +
         " < " + std::to_string(speech.size()) + ")");

  std::mt19937_64 rng(spec.seed);
  const std::size_t slack = noise.size() - speech.size();
  const std::size_t offset =
      slack == 0 ? 0 : static_cast<std::size_t>(rng() % (slack + 1));
  std::span<const float> seg(noise.samples.data() + offset, speech.size());

  double es = speech.energy();
  double en = 0.0;
  for (float v : seg) en += static_cast<double>(v) * v;
  if (!(es > 0.0) || !(en > 0.0)) fail("degenerate mixing input");

  const double gain = std::sqrt(es / (en * std::pow(10.0, spec.snr_db / 10.0)));
  Mixture out;
  out.scaled_noise.samples.resize(speech.size());
  out.mixture.samples.resize(speech.size());
  for (std::size_t i = 0; i < speech.size(); ++i) {
    float n = static_cast<float>(gain * seg[i]);
    out.scaled_noise.samples[i] = n;
    out.mixture.samples[i] = speech.samples[i] + n;
  }
  return out;
}

// Linear FIR convolution truncated to the input length (output stays aligned
// with the dry signal).
inline Signal convolve_rir(const Signal& speech, const Signal& rir) {
  if (rir.size() == 0) fail("empty rir");
  if (rir.size() > speech.size()) fail("rir longer than speech");
  const std::size_t n = speech.size(), k = rir.size();
  std::vector<double> acc(n, 0.0);
  for (std::size_t j = 0; j < k; ++j) {
    const double h = rir.samples[j];
    if (h == 0.0) continue;
    for (std::size_t i = j; i < n; ++i) acc[i] += h * speech.samples[i - j];
  }
  Signal out;
  out.samples.assign(acc.begin(), acc.end());
  return out;
}

enum class SynthKind { kTone, kChirp, kWhiteNoise, kSpeechLike };

struct SynthOptions {
  double freq_hz = 440.0;      // tone frequency / chirp start
  double freq_end_hz = 4000.0;  // chirp end
  double amplitude = 0.5;
};

inline SynthKind parse_synth_kind(const std::string& s) {
  if (s == "tone") return SynthKind::kTone;
  if (s == "chirp") return SynthKind::kChirp;
  if (s == "white-noise") return SynthKind::kWhiteNoise;
  if (s == "speech-like-harmonic") return SynthKind::kSpeechLike;
  fail("unknown synthetic signal kind: " + s);
}

// Deterministic synthetic sources standing in for a speech corpus.
inline Signal gen_synthetic(SynthKind kind, double duration_s,
                            std::uint64_t seed,
                            const SynthOptions& opt = {}) {
  if (!(duration_s > 0.0)) fail("duration must be positive");
  const auto n =
      static_cast<std::size_t>(std::llround(duration_s * kSampleRate));
  std::mt19937_64 rng(seed);
  Signal s;
  s.samples.resize(n);
  const double fs = kSampleRate;

  switch (kind) {
    case SynthKind::kTone: {
      const double phase = 2.0 * M_PI * uniform01(rng);
      for (std::size_t i = 0; i < n; ++i)
        s.samples[i] = static_cast<float>(
            opt.amplitude * std::sin(2.0 * M_PI * opt.freq_hz * i / fs + phase));
      break;
    }
    case SynthKind::kChirp: {
      const double rate = (opt.freq_end_hz - opt.freq_hz) / duration_s;
      for (std::size_t i = 0; i < n; ++i) {
        double t = i / fs;
        s.samples[i] = static_cast<float>(
            opt.amplitude *
            std::sin(2.0 * M_PI * (opt.freq_hz * t + 0.5 * rate * t * t)));
      }
      break;
    }
    case SynthKind::kWhiteNoise: {
      for (auto& v : s.samples)
        v = static_cast<float>(opt.amplitude * gaussian(rng));
      break;
    }
    case SynthKind::kSpeechLike: {
      // Drifting f0 with 8 harmonics (1/k rolloff) under a syllabic envelope.
      double f0 = uniform(rng, 100.0, 220.0);
      double phase = 0.0;
      const double syllable_hz = uniform(rng, 3.0, 6.0);
      const double env_phase = 2.0 * M_PI * uniform01(rng);
      double target = f0;
      for (std::size_t i = 0; i < n; ++i) {
        if (i % 800 == 0) target = std::clamp(f0 + uniform(rng, -30.0, 30.0),
                                              80.0, 300.0);
        f0 += (target - f0) * 0.001;
        phase += 2.0 * M_PI * f0 / fs;
        if (phase > 2.0 * M_PI) phase -= 2.0 * M_PI;
        double v = 0.0;
        for (int k = 1; k <= 8; ++k)
          if (k * f0 < fs / 2) v += std::sin(k * phase) / k;
        double env = 0.5 * (1.0 - std::cos(2.0 * M_PI * syllable_hz * i / fs +
                                           env_phase));
        s.samples[i] = static_cast<float>(opt.amplitude * 0.35 * env * v);
      }
      break;
    }
  }
  return s;
}

}  // namespace dpcrn

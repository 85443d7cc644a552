// Copyright 2026 The dpcrn Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <cstring>
#include <fstream>
#include <functional>

#include "test_util.hpp"

using namespace dpcrn;

namespace {

// Minimal WAV writer independent of encode_wav, for decoder tests.
std::string make_wav(std::uint16_t format, std::uint16_t channels, std::uint32_t rate,
                     std::uint16_t bits, const std::string& payload) {
  std::string out = "RIFF";
  detail::put_u32(out, static_cast<std::uint32_t>(36 + payload.size()));
  out += "WAVEfmt ";
  detail::put_u32(out, 16);
  detail::put_u16(out, format);
  detail::put_u16(out, channels);
  detail::put_u32(out, rate);
  detail::put_u32(out, rate * channels * bits / 8);
  detail::put_u16(out, static_cast<std::uint16_t>(channels * bits / 8));
  detail::put_u16(out, bits);
  out += "data";
  detail::put_u32(out, static_cast<std::uint32_t>(payload.size()));
  return out + payload;
}

Signal decode(const std::string& bytes) {
  return parse_wav(std::span<const unsigned char>(
      reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size()));
}

std::string pcm16_payload(std::initializer_list<std::int16_t> v) {
  std::string p;
  for (auto x : v) detail::put_u16(p, static_cast<std::uint16_t>(x));
  return p;
}

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(ReadWav, Pcm16ScalesByFullScale) {
  Signal s = decode(make_wav(1, 1, 16000, 16, pcm16_payload({0, 16384, -32768})));
  ASSERT_EQ(s.size(), 3u);
  EXPECT_EQ(s.samples[0], 0.0f);
  EXPECT_EQ(s.samples[1], 0.5f);
  EXPECT_EQ(s.samples[2], -1.0f);
}

TEST(ReadWav, RejectsOtherSampleRates) {
  auto msg = error_of([] { decode(make_wav(1, 1, 44100, 16, pcm16_payload({0}))); });
  EXPECT_NE(msg.find("unsupported sample rate"), std::string::npos) << msg;
  EXPECT_NE(msg.find("44100"), std::string::npos);
}

TEST(ReadWav, RejectsStereoBitDepthAndFormat) {
  EXPECT_NE(error_of([] { decode(make_wav(1, 2, 16000, 16, pcm16_payload({0, 0}))); })
                .find("channel count"),
            std::string::npos);
  EXPECT_NE(error_of([] { decode(make_wav(1, 1, 16000, 24, "abc")); }).find("bit depth"),
            std::string::npos);
  EXPECT_NE(error_of([] { decode(make_wav(2, 1, 16000, 16, "ab")); }).find("format tag"),
            std::string::npos);
  EXPECT_NE(error_of([] { decode("RIFX0000WAVE"); }).find("RIFF"), std::string::npos);
}

TEST(ReadWav, TruncatedChunkIsAnError) {
  std::string w = make_wav(1, 1, 16000, 16, pcm16_payload({1, 2, 3, 4}));
  w.resize(w.size() - 3);
  EXPECT_THROW(decode(w), Error);
}

TEST(ReadWav, Float32PassthroughIsBitIdentical) {
  Signal s = testutil::random_signal(16000, 3, 0.9);
  const std::string path = testutil::tmp_path("f32.wav");
  write_wav(path, s, WavFormat::kFloat32);
  Signal r = read_wav(path);
  ASSERT_EQ(r.size(), 16000u);
  EXPECT_EQ(std::memcmp(r.samples.data(), s.samples.data(), 16000 * 4), 0);
}

TEST(ReadWav, MissingFileIsIoError) {
  try {
    read_wav(testutil::tmp_path("does_not_exist.wav"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kIo);
  }
}

TEST(WriteWav, ZeroDecodesToZero) {
  Signal r = decode(encode_wav(Signal({0.0f})));
  EXPECT_EQ(r.samples.at(0), 0.0f);
}

TEST(WriteWav, ClipsBeforeQuantization) {
  Signal r = decode(encode_wav(Signal({2.0f, -3.0f, 1.0f})));
  EXPECT_EQ(r.samples[0], 32767.0f / 32768.0f);
  EXPECT_EQ(r.samples[1], -1.0f);
  EXPECT_EQ(r.samples[2], 32767.0f / 32768.0f);
}

TEST(WriteWav, RoundTripWithinOneStep) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Signal s = testutil::random_signal(20000, seed, 1.0);
    Signal r = decode(encode_wav(s));
    ASSERT_EQ(r.size(), s.size());
    double worst = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i)
      worst = std::max(worst, std::fabs(double(r.samples[i]) - s.samples[i]));
    EXPECT_LE(worst, 1.0 / 32768.0);
  }
}

TEST(WriteWav, RejectsNonFinite) {
  EXPECT_THROW(encode_wav(Signal({NAN})), Error);
}

TEST(MixAtSnr, EqualEnergyAtZeroDbHasUnitGain) {
  Signal s = testutil::random_signal(1000, 1);
  Signal n = s;
  for (auto& v : n.samples) v = -v;
  Mixture m = mix_at_snr(s, n, {0.0, 5});
  for (std::size_t i = 0; i < s.size(); ++i) EXPECT_FLOAT_EQ(m.scaled_noise.samples[i], n.samples[i]);
}

TEST(MixAtSnr, TenDbScalesBySqrtPointOne) {
  // Unit-energy speech and noise.
  Signal s({1.0f, 0.0f}), n({0.0f, 1.0f});
  Mixture m = mix_at_snr(s, n, {10.0, 0});
  EXPECT_FLOAT_EQ(m.scaled_noise.samples[1], static_cast<float>(std::sqrt(0.1)));
  EXPECT_FLOAT_EQ(m.mixture.samples[0], 1.0f);
}

TEST(MixAtSnr, MeasuredSnrMatchesRequest) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 40; ++trial) {
    const double snr = trial < 3 ? -5.0 + 5.0 * trial : uniform(rng, -20.0, 20.0);
    Signal s = gen_synthetic(SynthKind::kSpeechLike, 1.0, trial);
    Signal n = gen_synthetic(SynthKind::kWhiteNoise, 1.5, 100 + trial);
    Mixture m = mix_at_snr(s, n, {snr, static_cast<std::uint64_t>(trial)});
    const double measured = 10.0 * std::log10(s.energy() / m.scaled_noise.energy());
    EXPECT_NEAR(measured, snr, 1e-6);
    for (std::size_t i = 0; i < s.size(); i += 97)
      EXPECT_EQ(m.mixture.samples[i], s.samples[i] + m.scaled_noise.samples[i]);
  }
}

TEST(MixAtSnr, CropIsDeterministicPerSeed) {
  Signal s = testutil::random_signal(500, 1);
  Signal n = testutil::random_signal(5000, 2);
  auto a = mix_at_snr(s, n, {0.0, 9});
  auto b = mix_at_snr(s, n, {0.0, 9});
  auto c = mix_at_snr(s, n, {0.0, 10});
  EXPECT_EQ(a.mixture.samples, b.mixture.samples);
  EXPECT_NE(a.mixture.samples, c.mixture.samples);
}

TEST(MixAtSnr, DegenerateInputs) {
  Signal s = testutil::random_signal(100, 1);
  Signal zero(std::vector<float>(100, 0.0f));
  EXPECT_NE(error_of([&] { mix_at_snr(zero, s, {0.0, 0}); }).find("degenerate mixing input"),
            std::string::npos);
  EXPECT_NE(error_of([&] { mix_at_snr(s, zero, {0.0, 0}); }).find("degenerate mixing input"),
            std::string::npos);
  EXPECT_THROW(mix_at_snr(s, Signal(std::vector<float>(50, 1.0f)), {0.0, 0}), Error);
  EXPECT_THROW(mix_at_snr(s, s, {NAN, 0}), Error);
}

TEST(ConvolveRir, UnitImpulseIsIdentity) {
  Signal s = testutil::random_signal(300, 4);
  EXPECT_EQ(convolve_rir(s, Signal({1.0f})).samples, s.samples);
}

TEST(ConvolveRir, ShiftKernelDelaysByOne) {
  Signal s = testutil::random_signal(300, 4);
  Signal y = convolve_rir(s, Signal({0.0f, 1.0f}));
  EXPECT_EQ(y.samples[0], 0.0f);
  for (std::size_t i = 1; i < s.size(); ++i) EXPECT_EQ(y.samples[i], s.samples[i - 1]);
}

TEST(ConvolveRir, MatchesDirectConvolution) {
  Signal s = testutil::random_signal(2000, 5);
  Signal r = testutil::random_signal(64, 6, 0.3);
  Signal y = convolve_rir(s, r);
  ASSERT_EQ(y.size(), s.size());
  for (std::size_t n = 0; n < s.size(); ++n) {
    double acc = 0.0;
    for (std::size_t k = 0; k < r.size() && k <= n; ++k)
      acc += double(r.samples[k]) * double(s.samples[n - k]);
    ASSERT_NEAR(y.samples[n], acc, 1e-6) << n;
  }
}

TEST(ConvolveRir, IsLinear) {
  Signal x = testutil::random_signal(1000, 7), y = testutil::random_signal(1000, 8);
  Signal r = testutil::random_signal(32, 9, 0.3);
  const float a = 0.7f, b = -1.3f;
  Signal comb(std::vector<float>(1000));
  for (std::size_t i = 0; i < 1000; ++i) comb.samples[i] = a * x.samples[i] + b * y.samples[i];
  Signal lhs = convolve_rir(comb, r), cx = convolve_rir(x, r), cy = convolve_rir(y, r);
  for (std::size_t i = 0; i < 1000; ++i)
    EXPECT_NEAR(lhs.samples[i], a * cx.samples[i] + b * cy.samples[i], 1e-6);
}

TEST(ConvolveRir, Errors) {
  Signal s = testutil::random_signal(10, 1);
  EXPECT_NE(error_of([&] { convolve_rir(s, Signal{}); }).find("empty rir"), std::string::npos);
  EXPECT_THROW(convolve_rir(s, testutil::random_signal(11, 2)), Error);
}

TEST(GenSynthetic, TonePeaksAt440) {
  Signal s = gen_synthetic(SynthKind::kTone, 1.0, 1);
  ASSERT_EQ(s.size(), 16000u);
  // 1 s at 16 kHz: DFT bin k is k Hz. Scan a band around the tone.
  std::size_t best = 0;
  double best_mag = 0.0;
  for (std::size_t k = 300; k <= 600; ++k) {
    std::complex<double> acc = 0.0;
    for (std::size_t n = 0; n < s.size(); ++n)
      acc += double(s.samples[n]) * std::polar(1.0, -2.0 * M_PI * double(k * n) / 16000.0);
    if (std::abs(acc) > best_mag) {
      best_mag = std::abs(acc);
      best = k;
    }
  }
  EXPECT_EQ(best, 440u);
}

TEST(GenSynthetic, SameSeedIsBitIdentical) {
  for (auto kind : {SynthKind::kTone, SynthKind::kChirp, SynthKind::kWhiteNoise,
                    SynthKind::kSpeechLike}) {
    auto a = gen_synthetic(kind, 0.5, 42), b = gen_synthetic(kind, 0.5, 42);
    EXPECT_EQ(a.samples, b.samples);
    EXPECT_NO_THROW(a.validate());
  }
  EXPECT_NE(gen_synthetic(SynthKind::kWhiteNoise, 0.5, 1).samples,
            gen_synthetic(SynthKind::kWhiteNoise, 0.5, 2).samples);
}

TEST(GenSynthetic, WhiteNoiseMeanWithinThreeSigma) {
  SynthOptions opt;
  Signal s = gen_synthetic(SynthKind::kWhiteNoise, 1.0, 77, opt);
  double mean = 0.0;
  for (float v : s.samples) mean += v;
  mean /= double(s.size());
  EXPECT_LE(std::fabs(mean), 3.0 * opt.amplitude / std::sqrt(double(s.size())));
}

TEST(GenSynthetic, SpeechLikeHasSyllabicEnvelopeAndHarmonics) {
  Signal s = gen_synthetic(SynthKind::kSpeechLike, 2.0, 3);
  double peak = 0.0;
  for (float v : s.samples) peak = std::max(peak, double(std::fabs(v)));
  EXPECT_GT(peak, 0.05);
  EXPECT_LE(peak, 0.5);
  EXPECT_THROW(gen_synthetic(SynthKind::kTone, 0.0, 1), Error);
  EXPECT_EQ(parse_synth_kind("speech-like-harmonic"), SynthKind::kSpeechLike);
  EXPECT_THROW(parse_synth_kind("pink"), Error);
}

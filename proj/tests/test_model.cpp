// Copyright 2026 The dpcrn Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <gtest/gtest.h>

#include <complex>
#include <set>

#include "test_util.hpp"

using namespace dpcrn;

namespace {

// Independent count straight from the layer arithmetic.
std::size_t count_by_hand(const ModelConfig& c) {
  std::size_t n = 2 * 201 * 2;  // input iLN
  const std::size_t L = c.layers();
  for (std::size_t i = 0; i < L; ++i) {
    const std::size_t ci = i == 0 ? 2 : c.enc_channels[i - 1], co = c.enc_channels[i];
    const std::size_t k = c.kernels[i].f * c.kernels[i].t;
    n += co * ci * k + co + 3 * co;              // conv + BN affine + PReLU
    n += 2 * co * ci * k + ci + (i > 0 ? 3 * ci : 0);  // deconv (+ BN/PReLU)
  }
  const std::size_t C = c.enc_channels.back(), F = c.encoder_freqs().back();
  const std::size_t hi = c.intra_hidden, he = c.inter_hidden;
  auto lstm = [](std::size_t d, std::size_t h) { return 4 * h * (d + h) + 4 * h; };
  n += c.n_dprnn * (2 * lstm(C, hi) + C * 2 * hi + C + 2 * F * C +  //
                    lstm(C, he) + C * he + C + 2 * F * C);
  return n;
}

Signal tone_plus_noise(double seconds, std::uint64_t seed) {
  Signal s = gen_synthetic(SynthKind::kSpeechLike, seconds, seed);
  Signal n = gen_synthetic(SynthKind::kWhiteNoise, seconds, seed + 1);
  for (std::size_t i = 0; i < s.size(); ++i) s.samples[i] += 0.2f * n.samples[i];
  return s;
}

}  // namespace

TEST(Manifest, DefaultNameSetIsCanonical) {
  ModelConfig cfg;
  auto w = build<float>(cfg, 1);
  std::set<std::string> names;
  for (const auto& e : w.entries()) names.insert(e.name);
  EXPECT_EQ(names.size(), w.size());
  EXPECT_EQ(names.size(), manifest(cfg).size());
  for (const char* n : {"input_iln.gamma", "enc0.conv.weight", "enc4.prelu.alpha",
                        "dprnn0.intra_fwd.w_ih", "dprnn1.inter_iln.beta", "dec0.deconv.bias",
                        "dec4.bn.running_var"})
    EXPECT_TRUE(names.count(n)) << n;
  EXPECT_FALSE(names.count("dec0.bn.gamma"));  // linear mask head
  EXPECT_FALSE(names.count("dprnn2.intra_fwd.w_ih"));
  EXPECT_NO_THROW(validate_weights(w, cfg));
  EXPECT_EQ(w.at("dprnn0.intra_fwd.w_ih").shape(), (Shape{256, 128}));
  EXPECT_EQ(w.at("dprnn0.intra_fc.weight").shape(), (Shape{128, 128}));
  EXPECT_EQ(w.at("dprnn0.intra_iln.gamma").shape(), (Shape{50, 128}));
  EXPECT_EQ(w.at("dec4.deconv.weight").shape(), (Shape{256, 64, 2, 3}));
  EXPECT_EQ(w.at("dec0.deconv.weight").shape(), (Shape{64, 2, 2, 5}));
}

TEST(Manifest, InitializationConventions) {
  auto w = build<float>(ModelConfig{}, 3);
  for (float v : w.at("enc1.bn.gamma").vec()) EXPECT_EQ(v, 1.0f);
  for (float v : w.at("enc1.bn.running_var").vec()) EXPECT_EQ(v, 1.0f);
  for (float v : w.at("enc1.prelu.alpha").vec()) EXPECT_EQ(v, 0.25f);
  const auto& b = w.at("dprnn0.inter_lstm.bias");
  for (std::size_t k = 0; k < b.size(); ++k) EXPECT_EQ(b[k], (k >= 128 && k < 256) ? 1.0f : 0.0f);
  const float bound = 1.0f / std::sqrt(2.0f * 2 * 5);
  for (float v : w.at("enc0.conv.weight").vec()) EXPECT_LE(std::fabs(v), bound);
}

TEST(Build, SameSeedBitIdentical) {
  ModelConfig cfg;
  EXPECT_TRUE(build<float>(cfg, 7) == build<float>(cfg, 7));
  EXPECT_FALSE(build<float>(cfg, 7) == build<float>(cfg, 8));
  // The serialized bytes agree too.
  EXPECT_EQ(encode_weights(build<float>(cfg, 7), cfg), encode_weights(build<float>(cfg, 7), cfg));
}

TEST(Build, Dpcrn3HalvesFrequencyAndDoublesIntraHidden) {
  auto c3 = ModelConfig::for_variant(Variant::kDpcrn3);
  EXPECT_EQ(c3.dprnn_freq(), 25u);
  EXPECT_EQ(c3.intra_hidden, 2 * ModelConfig{}.intra_hidden);
  auto w = build<float>(c3, 1);
  EXPECT_EQ(w.at("dprnn0.intra_fwd.w_hh").shape(), (Shape{512, 128}));
  EXPECT_EQ(w.at("dprnn0.intra_iln.gamma").shape(), (Shape{25, 128}));
  EXPECT_EQ(param_count(w), count_by_hand(c3));
  EXPECT_EQ(param_count(w), 1139622u);
}

TEST(Config, FrequencyAlgebraAndValidation) {
  EXPECT_EQ(ModelConfig{}.encoder_freqs(), (std::vector<std::size_t>{201, 100, 50, 50, 50, 50}));
  EXPECT_EQ(ModelConfig::for_variant(Variant::kDpcrn3).encoder_freqs(),
            (std::vector<std::size_t>{201, 100, 50, 25, 25, 25}));
  ModelConfig bad;
  bad.freq_pads[1] = {0, 0};
  EXPECT_THROW(bad.validate(), Error);
  ModelConfig c;
  c.strides[0].t = 2;
  EXPECT_THROW(c.validate(), Error);
  ModelConfig r = ModelConfig::from_text(ModelConfig::for_variant(Variant::kDpcrn2).to_text());
  EXPECT_TRUE(r == ModelConfig::for_variant(Variant::kDpcrn2));
  EXPECT_THROW(ModelConfig::from_text("variant=DPCRN-9\n"), Error);
}

TEST(ParamCount, FrozenRegressionValues) {
  ModelConfig cfg;
  auto w = build<float>(cfg, 0);
  EXPECT_EQ(param_count(w), 803750u);
  EXPECT_EQ(param_count(w), count_by_hand(cfg));
  EXPECT_GE(param_count(w), 700000u);
  EXPECT_LE(param_count(w), 900000u);
  // 128 per direction: the alternative reading of the hidden width.
  ModelConfig wide = cfg;
  wide.intra_hidden = 128;
  EXPECT_EQ(param_count(build<float>(wide, 0)), count_by_hand(wide));
  EXPECT_GT(param_count(build<float>(wide, 0)), 900000u);
}

TEST(ParamCount, SingleFcAndEmpty) {
  ModelWeights<float> w;
  EXPECT_EQ(param_count(w), 0u);
  w.add("fc.weight", Tensor<float>({128, 128}));
  w.add("fc.bias", Tensor<float>({128}));
  w.add("bn.running_mean", Tensor<float>({128}), false);
  EXPECT_EQ(param_count(w), 16512u);
}

TEST(Forward, ShapeContractAndFinite) {
  auto cfg = testutil::micro_config();
  auto w = testutil::perturbed_weights(cfg, 2);
  for (std::size_t frames : {1u, 2u, 9u}) {
    auto s = testutil::random_signal(400 + 200 * (frames - 1), frames);
    auto X = analyze(s);
    auto r = forward(w, cfg, X);
    EXPECT_EQ(r.mask.frames, frames);
    EXPECT_EQ(r.mask.bins, 201u);
    for (float v : r.mask.real) ASSERT_TRUE(std::isfinite(v));
  }
  Spectrogram bad(3, 200);
  EXPECT_THROW(forward(w, cfg, bad), Error);
}

TEST(Forward, DefaultModelShapeContract) {
  ModelConfig cfg;
  auto w = build<float>(cfg, 1);
  auto X = analyze(testutil::random_signal(400 + 200 * 3, 1));
  auto r = forward(w, cfg, X);
  EXPECT_EQ(r.mask.frames, 4u);
  EXPECT_EQ(r.mask.bins, 201u);
}

TEST(Forward, InvariantToInputGain) {
  auto cfg = testutil::micro_config();
  auto w = testutil::perturbed_weights(cfg, 4);
  auto X = analyze(tone_plus_noise(0.5, 3));
  auto m = forward(w, cfg, X).mask;
  for (float alpha : {0.1f, 10.0f}) {
    auto Y = X;
    for (auto& v : Y.real) v *= alpha;
    for (auto& v : Y.imag) v *= alpha;
    auto ma = forward(w, cfg, Y).mask;
    for (std::size_t i = 0; i < m.real.size(); ++i) {
      ASSERT_NEAR(ma.real[i], m.real[i], 1e-3);
      ASSERT_NEAR(ma.imag[i], m.imag[i], 1e-3);
    }
  }
}

TEST(Forward, CausalEndToEnd) {
  auto cfg = testutil::micro_config();
  auto w = testutil::perturbed_weights(cfg, 5);
  auto X = analyze(tone_plus_noise(0.3, 4));
  auto m = forward(w, cfg, X).mask;
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t t0 = rng() % (X.frames - 1);
    auto Y = X;
    for (std::size_t t = t0 + 1; t < X.frames; ++t)
      for (std::size_t k = 0; k < 201; ++k) Y.re(t, k) = Y.im(t, k) = 0.0f;
    auto my = forward(w, cfg, Y).mask;
    for (std::size_t t = 0; t <= t0; ++t)
      for (std::size_t k = 0; k < 201; ++k) {
        ASSERT_EQ(my.re(t, k), m.re(t, k));
        ASSERT_EQ(my.im(t, k), m.im(t, k));
      }
  }
}

TEST(ApplyMask, ComplexProductExamples) {
  Spectrogram X(1, 1);
  X.real[0] = 1;
  X.imag[0] = 2;
  CrmMask M(1, 1);
  M.real[0] = 3;
  M.imag[0] = 4;
  auto S = apply_mask(X, M);
  EXPECT_EQ(S.real[0], -5.0f);
  EXPECT_EQ(S.imag[0], 10.0f);
  EXPECT_THROW(apply_mask(X, CrmMask(2, 1)), Error);
}

TEST(ApplyMask, IdentityAndComplexOracle) {
  auto X = analyze(testutil::random_signal(2000, 7));
  CrmMask one(X.frames, X.bins);
  std::fill(one.real.begin(), one.real.end(), 1.0f);
  auto S = apply_mask(X, one);
  EXPECT_EQ(S.real, X.real);
  EXPECT_EQ(S.imag, X.imag);

  std::mt19937_64 rng(8);
  CrmMask M(X.frames, X.bins);
  for (std::size_t i = 0; i < M.real.size(); ++i) {
    M.real[i] = float(uniform(rng, -2, 2));
    M.imag[i] = float(uniform(rng, -2, 2));
  }
  auto P = apply_mask(X, M);
  for (std::size_t i = 0; i < M.real.size(); ++i) {
    // Same float operations in the same order as the textbook formula.
    const std::complex<double> ref = std::complex<double>(X.real[i], X.imag[i]) *
                                     std::complex<double>(M.real[i], M.imag[i]);
    ASSERT_EQ(P.real[i], X.real[i] * M.real[i] - X.imag[i] * M.imag[i]);
    ASSERT_EQ(P.imag[i], X.real[i] * M.imag[i] + X.imag[i] * M.real[i]);
    ASSERT_NEAR(P.real[i], ref.real(), 1e-4 * (1 + std::abs(ref)));
    ASSERT_NEAR(P.imag[i], ref.imag(), 1e-4 * (1 + std::abs(ref)));
  }
}

TEST(EnhanceOffline, RandomModelSmoke) {
  auto cfg = testutil::micro_config();
  auto w = build<float>(cfg, 9);
  auto s = tone_plus_noise(0.5, 9);
  auto y = enhance_offline(w, cfg, s);
  EXPECT_EQ(y.size(), StftConfig{}.length_for(StftConfig{}.frames_for(s.size())));
  EXPECT_NO_THROW(y.validate());
  EXPECT_THROW(enhance_offline(w, cfg, Signal(std::vector<float>(399, 0.1f))), Error);
}

TEST(EnhanceOffline, UnitMaskIsStftPassthrough) {
  auto cfg = testutil::micro_config();
  auto w = testutil::perturbed_weights(cfg, 10);
  w.at("dec0.deconv.weight").fill(0.0f);
  w.at("dec0.deconv.bias")[0] = 1.0f;
  w.at("dec0.deconv.bias")[1] = 0.0f;
  auto s = tone_plus_noise(0.5, 10);
  auto y = enhance_offline(w, cfg, s);
  auto ref = synthesize<float>(analyze(s));
  ASSERT_EQ(y.size(), ref.size());
  for (std::size_t i = 0; i < ref.size(); ++i) ASSERT_EQ(y.samples[i], ref[i]);
  for (std::size_t i = 400; i + 400 < ref.size(); ++i) ASSERT_NEAR(y.samples[i], s.samples[i], 1e-5);
}

TEST(EnhanceOffline, ScalesLinearlyWithInput) {
  auto cfg = testutil::micro_config();
  auto w = testutil::perturbed_weights(cfg, 11);
  auto s = tone_plus_noise(0.5, 11);
  auto y = enhance_offline(w, cfg, s);
  double ey = 0;
  for (float v : y.samples) ey += double(v) * v;
  for (float alpha : {0.1f, 10.0f}) {
    Signal sa = s;
    for (auto& v : sa.samples) v *= alpha;
    auto ya = enhance_offline(w, cfg, sa);
    double num = 0;
    for (std::size_t i = 0; i < y.size(); ++i) num += std::pow(double(ya.samples[i]) - alpha * y.samples[i], 2);
    EXPECT_LE(std::sqrt(num / ey) / alpha, 1e-3);
  }
}

// With the FC weights and iLN gain of every DPRNN sub-block zeroed, each
// sub-block contributes only its iLN beta; with beta zero the whole DPRNN
// stack is a passthrough and the model equals one without DPRNN blocks.
TEST(Residual, ZeroedDprnnIsPassthrough) {
  auto cfg = testutil::micro_config();
  auto w = testutil::perturbed_weights(cfg, 12);
  for (const char* n : {"dprnn0.intra_fc.weight", "dprnn0.inter_fc.weight",
                        "dprnn0.intra_iln.gamma", "dprnn0.inter_iln.gamma",
                        "dprnn0.intra_iln.beta", "dprnn0.inter_iln.beta"})
    w.at(n).fill(0.0f);
  ModelConfig bare = cfg;
  bare.n_dprnn = 0;
  ModelWeights<float> wb;
  for (const auto& e : w.entries())
    if (!e.name.starts_with("dprnn")) wb.add(e.name, e.value, e.trainable);
  EXPECT_NO_THROW(validate_weights(wb, bare));
  auto X = analyze(tone_plus_noise(0.3, 12));
  auto a = forward(w, cfg, X).mask, b = forward(wb, bare, X).mask;
  EXPECT_EQ(a.real, b.real);
  EXPECT_EQ(a.imag, b.imag);

  // A nonzero beta shifts the features, so the output must move.
  w.at("dprnn0.inter_iln.beta").fill(0.5f);
  auto c = forward(w, cfg, X).mask;
  EXPECT_NE(c.real, a.real);
}

TEST(ValidateWeights, MissingUnexpectedAndShape) {
  auto cfg = testutil::micro_config();
  auto w = build<float>(cfg, 1);
  ModelWeights<float> missing;
  for (const auto& e : w.entries())
    if (e.name != "enc2.conv.bias") missing.add(e.name, e.value, e.trainable);
  try {
    validate_weights(missing, cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(std::string(e.what()), "missing tensor: enc2.conv.bias");
  }
  auto extra = w;
  extra.add("bogus", Tensor<float>({1}));
  EXPECT_THROW(validate_weights(extra, cfg), Error);
  auto neg = w;
  neg.at("enc0.bn.running_var")[0] = -1.0f;
  EXPECT_THROW(validate_weights(neg, cfg), Error);
}

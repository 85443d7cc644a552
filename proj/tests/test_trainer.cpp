// Copyright 2026 The dpcrn Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"

using namespace dpcrn;

namespace {

std::vector<double> rand_vec(std::size_t n, std::mt19937_64& rng, double amp = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = uniform(rng, -amp, amp);
  return v;
}

// Defining formulas, written independently of losses.hpp.
double ref_snr(const std::vector<double>& s, const std::vector<double>& e) {
  long double num = 0, den = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    num += (long double)s[i] * s[i];
    den += ((long double)s[i] - e[i]) * ((long double)s[i] - e[i]);
  }
  return double(10.0L * std::log10(num / den));
}

double ref_si_snr(const std::vector<double>& s, const std::vector<double>& e) {
  long double se = 0, ss = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    se += (long double)s[i] * e[i];
    ss += (long double)s[i] * s[i];
  }
  const long double a = se / ss;
  long double t = 0, r = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    t += a * a * s[i] * s[i];
    r += (e[i] - a * s[i]) * (e[i] - a * s[i]);
  }
  return double(10.0L * std::log10(t / r));
}

TrainSchedule tiny_schedule() {
  TrainSchedule s;
  s.batch = 2;
  s.segment_s = 0.1;
  s.eval_every = 1;
  s.val_items = 1;
  return s;
}

}  // namespace

TEST(NegSnr, Examples) {
  std::mt19937_64 rng(1);
  auto s = rand_vec(1000, rng);
  std::vector<double> zero(1000, 0.0);
  EXPECT_NEAR(loss_neg_snr<double>(s, zero), 0.0, 1e-12);

  // Noise with exactly 1/100 of the reference energy.
  auto n = rand_vec(1000, rng);
  double es = 0, en = 0;
  for (std::size_t i = 0; i < 1000; ++i) {
    es += s[i] * s[i];
    en += n[i] * n[i];
  }
  std::vector<double> est(1000);
  for (std::size_t i = 0; i < 1000; ++i) est[i] = s[i] + n[i] * std::sqrt(es / (100 * en));
  EXPECT_NEAR(loss_neg_snr<double>(s, est), -20.0, 1e-9);

  EXPECT_EQ(loss_neg_snr<double>(s, s), kSnrCapDb);
  EXPECT_THROW(loss_neg_snr<double>(zero, s), Error);
  EXPECT_THROW(loss_neg_snr<double>(s, std::vector<double>(3)), Error);
}

TEST(NegSnr, IsExactlyMinusMetricAndMatchesOracle) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 16 + rng() % 500;
    auto s = rand_vec(n, rng), e = rand_vec(n, rng);
    const double l = loss_neg_snr<double>(s, e);
    ASSERT_EQ(l, -metric_snr<double>(s, e));
    ASSERT_NEAR(-l, ref_snr(s, e), 1e-9);
  }
}

TEST(NegSnr, GradientMatchesFiniteDifference) {
  std::mt19937_64 rng(3);
  auto s = rand_vec(64, rng), e = rand_vec(64, rng);
  auto g = loss_neg_snr_grad<double>(s, e);
  for (std::size_t i = 0; i < 64; ++i) {
    auto p = e, m = e;
    p[i] += 1e-6;
    m[i] -= 1e-6;
    const double fd = (loss_neg_snr<double>(s, p) - loss_neg_snr<double>(s, m)) / 2e-6;
    EXPECT_NEAR(g[i], fd, 1e-6 * std::max(1.0, std::fabs(fd)));
  }
  for (double v : loss_neg_snr_grad<double>(s, s)) EXPECT_EQ(v, 0.0);
}

TEST(SiSnr, ScaleInvarianceAndContrast) {
  std::mt19937_64 rng(4);
  auto s = rand_vec(800, rng), e = rand_vec(800, rng);
  for (auto& v : e) v += 0.0;
  for (std::size_t i = 0; i < 800; ++i) e[i] = s[i] + 0.3 * e[i];
  const double base = metric_si_snr<double>(s, e);
  for (double a : {0.01, 0.5, 3.0, 100.0}) {
    auto ea = e;
    for (auto& v : ea) v *= a;
    EXPECT_NEAR(metric_si_snr<double>(s, ea), base, 1e-9);
  }
  auto twice = s;
  for (auto& v : twice) v *= 2.0;
  EXPECT_NEAR(metric_snr<double>(s, twice), 0.0, 1e-12);
  EXPECT_EQ(metric_si_snr<double>(s, twice), 100.0);
  EXPECT_THROW(metric_si_snr<double>(s, std::vector<double>(800, 0.0)), Error);
}

TEST(SiSnr, MatchesOracle) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 16 + rng() % 300;
    auto s = rand_vec(n, rng), e = rand_vec(n, rng);
    ASSERT_NEAR(metric_si_snr<double>(s, e), ref_si_snr(s, e), 1e-9);
  }
}

TEST(SnrMse, SingleBinArithmetic) {
  BasicSpectrogram<double> S(1, 1), H(1, 1);
  S.real[0] = 3;
  S.imag[0] = 4;
  auto b = spectral_mse(S, H);
  EXPECT_DOUBLE_EQ(b.mse_real, 9.0);
  EXPECT_DOUBLE_EQ(b.mse_imag, 16.0);
  EXPECT_DOUBLE_EQ(b.mse_mag, 25.0);
  EXPECT_DOUBLE_EQ(b.log_mse_term, std::log(50.0));
}

TEST(SnrMse, DegenerateIdentityIsClamped) {
  auto x = testutil::random_signal(2000, 6);
  auto X = analyze(x);
  auto b = loss_snr_mse(x, x, X, X);
  EXPECT_EQ(b.neg_snr, kSnrCapDb);
  EXPECT_DOUBLE_EQ(b.log_mse_term, std::log(1e-12));
  EXPECT_DOUBLE_EQ(b.total, kSnrCapDb + std::log(1e-12));
}

TEST(SnrMse, DecompositionIdentity) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t frames = 1 + rng() % 3, bins = 1 + rng() % 9;
    BasicSpectrogram<double> S(frames, bins), H(frames, bins);
    for (auto* v : {&S.real, &S.imag, &H.real, &H.imag})
      for (auto& x : *v) x = uniform(rng, -2, 2);
    auto s = rand_vec(50, rng), e = rand_vec(50, rng);
    auto b = loss_snr_mse<double>(s, e, S, H);
    double mr = 0, mi = 0, mm = 0;
    for (std::size_t i = 0; i < S.real.size(); ++i) {
      mr += std::pow(S.real[i] - H.real[i], 2);
      mi += std::pow(S.imag[i] - H.imag[i], 2);
      mm += std::pow(std::hypot(S.real[i], S.imag[i]) - std::hypot(H.real[i], H.imag[i]), 2);
    }
    const double n = double(S.real.size());
    ASSERT_NEAR(b.total - b.neg_snr, std::log(mr / n + mi / n + mm / n), 1e-9);
  }
}

TEST(SnrMse, LogMseGradientMatchesFiniteDifference) {
  std::mt19937_64 rng(8);
  BasicSpectrogram<double> S(2, 5), H(2, 5);
  for (auto* v : {&S.real, &S.imag, &H.real, &H.imag})
    for (auto& x : *v) x = uniform(rng, -2, 2);
  auto g = log_mse_grad(S, H);
  for (std::size_t i = 0; i < 10; ++i)
    for (int part = 0; part < 2; ++part) {
      auto p = H, m = H;
      (part ? p.imag : p.real)[i] += 1e-6;
      (part ? m.imag : m.real)[i] -= 1e-6;
      const double fd = (spectral_mse(S, p).log_mse_term - spectral_mse(S, m).log_mse_term) / 2e-6;
      EXPECT_NEAR((part ? g.imag : g.real)[i], fd, 1e-6);
    }
}

TEST(Adam, ZeroGradientKeepsParamsAndDecaysMoments) {
  ModelWeights<double> w;
  w.add("x", Tensor<double>({2}, 1.5));
  AdamState st;
  GradMap<double> g{{"x", Tensor<double>({2}, 1.0)}};
  adam_step<double>(w, g, st, 0.1);
  const double m1 = st.m["x"][0], v1 = st.v["x"][0];
  const double x1 = w.at("x")[0];
  g["x"].fill(0.0);
  adam_step<double>(w, g, st, 0.0);
  EXPECT_EQ(w.at("x")[0], x1);
  EXPECT_DOUBLE_EQ(st.m["x"][0], 0.9 * m1);
  EXPECT_DOUBLE_EQ(st.v["x"][0], 0.999 * v1);
}

TEST(Adam, FirstStepIsSignTimesLr) {
  for (double gval : {3.0, -0.02, 1e-3}) {
    ModelWeights<double> w;
    w.add("x", Tensor<double>({1}, 0.0));
    AdamState st;
    adam_step<double>(w, GradMap<double>{{"x", Tensor<double>({1}, gval)}}, st, 0.01);
    EXPECT_NEAR(w.at("x")[0], -0.01 * (gval > 0 ? 1 : -1), 1e-7);
  }
}

TEST(Adam, DescendsOnSquare) {
  ModelWeights<double> w;
  w.add("x", Tensor<double>({1}, 1.0));
  AdamState st;
  double prev = 1.0;
  for (int k = 0; k < 10; ++k) {
    adam_step<double>(w, GradMap<double>{{"x", Tensor<double>({1}, 2.0 * w.at("x")[0])}}, st, 0.1);
    EXPECT_LT(std::fabs(w.at("x")[0]), prev);
    prev = std::fabs(w.at("x")[0]);
  }
}

TEST(Adam, NonFiniteGradientDiverges) {
  ModelWeights<double> w;
  w.add("x", Tensor<double>({1}, 1.0));
  AdamState st;
  try {
    adam_step<double>(w, GradMap<double>{{"x", Tensor<double>({1}, NAN)}}, st, 0.1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kDivergence);
    EXPECT_NE(std::string(e.what()).find("diverged"), std::string::npos);
  }
  EXPECT_EQ(w.at("x")[0], 1.0);
  EXPECT_EQ(st.step, 0u);
}

TEST(Plateau, TwoHalvingsGiveQuarterLr) {
  TrainSchedule s;
  s.stop_patience = 20;
  PlateauScheduler p(s);
  EXPECT_FALSE(p.observe(1.0));
  for (int k = 0; k < 10; ++k) EXPECT_FALSE(p.observe(1.0));
  EXPECT_EQ(p.halvings(), 2u);
  EXPECT_DOUBLE_EQ(p.lr(), 2.5e-4);
  EXPECT_FALSE(p.observe(0.5));  // improvement resets the count
  EXPECT_EQ(p.bad_evals(), 0u);
}

TEST(Plateau, StopsAfterStopPatience) {
  TrainSchedule s;
  PlateauScheduler p(s);
  int evals = 0;
  while (!p.observe(1.0)) ++evals;
  EXPECT_EQ(evals + 1, 11);  // one improving evaluation, then ten flat ones
  EXPECT_DOUBLE_EQ(p.lr(), 5e-4);
}

TEST(Schedule, Validation) {
  TrainSchedule s;
  s.stop_patience = 3;
  EXPECT_THROW(s.validate(), Error);
  EXPECT_THROW(TrainConfig::from_kv(KeyValues::parse("bogus=1\n")), Error);
  auto tc = TrainConfig::from_kv(KeyValues::parse("batch=3\nlr0=0.01\n"));
  EXPECT_EQ(tc.schedule.batch, 3u);
  EXPECT_DOUBLE_EQ(tc.schedule.lr0, 0.01);
}

TEST(TrainToy, ConstantValidationStopsAtDocumentedStep) {
  auto cfg = testutil::micro_config();
  auto s = tiny_schedule();
  s.lr0 = 0.0;  // weights never move, so validation loss is constant
  auto r = train_toy(cfg, s, 100, 1);
  EXPECT_TRUE(r.stopped_early);
  EXPECT_EQ(r.steps_run, 11u * s.eval_every);
  EXPECT_EQ(r.evals.size(), 11u);
}

TEST(TrainToy, BitReproducibleForSeed) {
  auto cfg = testutil::micro_config();
  auto s = tiny_schedule();
  auto a = train_toy(cfg, s, 4, 7), b = train_toy(cfg, s, 4, 7), c = train_toy(cfg, s, 4, 8);
  EXPECT_TRUE(a.weights == b.weights);
  EXPECT_EQ(curve_csv(a.curve), curve_csv(b.curve));
  EXPECT_FALSE(a.weights == c.weights);
  EXPECT_EQ(curve_csv(a.curve).substr(0, 29), "step,neg_snr,log_mse,total,lr");
}

TEST(TrainToy, Dpcrn2AddsLogMseTerm) {
  auto cfg = testutil::micro_config();
  cfg.variant = Variant::kDpcrn2;
  auto item = make_toy_item(tiny_schedule(), 3);
  auto w = build<float>(cfg, 3);
  auto lg = loss_and_grad<float>(w, cfg, item.mixture.samples, item.clean.samples, false);
  EXPECT_NEAR(lg.loss.total, lg.loss.neg_snr + lg.loss.log_mse_term, 1e-9);
  cfg.variant = Variant::kDpcrn1;
  auto l1 = loss_and_grad<float>(w, cfg, item.mixture.samples, item.clean.samples, false);
  EXPECT_EQ(l1.loss.total, l1.loss.neg_snr);
}

TEST(TrainToy, ShortRunReducesLoss) {
  auto cfg = testutil::micro_config();
  auto s = tiny_schedule();
  s.lr0 = 3e-3;
  s.eval_every = 50;
  s.segment_s = 0.25;
  auto r = train_toy(cfg, s, 40, 2);
  double head = 0, tail = 0;
  for (int k = 0; k < 5; ++k) {
    head += r.curve[k].neg_snr / 5;
    tail += r.curve[r.curve.size() - 1 - k].neg_snr / 5;
  }
  EXPECT_LT(tail, head);
}

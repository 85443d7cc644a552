// Copyright 2026 The dpcrn Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "dpcrn/adam.hpp"
#include "dpcrn/audio.hpp"
#include "dpcrn/config.hpp"
#include "dpcrn/losses.hpp"
#include "dpcrn/model.hpp"

namespace dpcrn {

// Patience is counted in evaluations; one evaluation every `eval_every`
// optimizer steps stands in for an epoch.
struct TrainSchedule {
  double lr0 = 1e-3;
  std::size_t batch = 8;
  std::size_t halve_patience = 5;
  std::size_t stop_patience = 10;
  double segment_s = 5.0;
  std::size_t eval_every = 50;
  // Toy data.
  double snr_db = 0.0;
  std::size_t val_items = 4;
  double tone_min_hz = 200.0;
  double tone_max_hz = 2000.0;

  void validate() const {
    check(lr0 >= 0.0 && std::isfinite(lr0), "lr0 must be finite and >= 0");
    check(batch > 0, "batch must be positive");
    check(halve_patience > 0 && stop_patience > 0, "patience values must be positive");
    check(stop_patience >= halve_patience, "stop_patience must be >= halve_patience");
    check(segment_s > 0.0, "segment_s must be positive");
    check(static_cast<std::size_t>(segment_s * kSampleRate) >= 400,
          "segment_s shorter than one STFT window");
    check(eval_every > 0, "eval_every must be positive");
    check(val_items > 0, "val_items must be positive");
    check(tone_min_hz > 0.0 && tone_max_hz >= tone_min_hz &&
              tone_max_hz < kSampleRate / 2.0,
          "tone range must lie in (0, 8000) Hz");
  }
};

// Halves the LR every `halve_patience` non-improving evaluations and asks to
// stop after `stop_patience` of them.
class PlateauScheduler {
 public:
  explicit PlateauScheduler(const TrainSchedule& s)
      : lr_(s.lr0), halve_(s.halve_patience), stop_(s.stop_patience) {}

  // Returns true when training should stop.
  bool observe(double val_loss) {
    if (val_loss < best_) {
      best_ = val_loss;
      bad_ = 0;
      return false;
    }
    ++bad_;
    if (bad_ >= stop_) return true;
    if (bad_ % halve_ == 0) {
      lr_ *= 0.5;
      ++halvings_;
    }
    return false;
  }

  double lr() const { return lr_; }
  double best() const { return best_; }
  std::size_t bad_evals() const { return bad_; }
  std::size_t halvings() const { return halvings_; }

 private:
  double lr_;
  std::size_t halve_, stop_;
  double best_ = std::numeric_limits<double>::infinity();
  std::size_t bad_ = 0;
  std::size_t halvings_ = 0;
};

// Training config file: model keys (see ModelConfig::to_text) plus the
// schedule keys above, all as key=value.
struct TrainConfig {
  ModelConfig model;
  TrainSchedule schedule;

  static TrainConfig from_kv(const KeyValues& kv) {
    TrainConfig c;
    c.model = ModelConfig::from_kv(kv);
    auto& s = c.schedule;
    if (kv.has("lr0")) s.lr0 = kv.get_double("lr0");
    if (kv.has("batch")) s.batch = kv.get_size("batch");
    if (kv.has("halve_patience")) s.halve_patience = kv.get_size("halve_patience");
    if (kv.has("stop_patience")) s.stop_patience = kv.get_size("stop_patience");
    if (kv.has("segment_s")) s.segment_s = kv.get_double("segment_s");
    if (kv.has("eval_every")) s.eval_every = kv.get_size("eval_every");
    if (kv.has("snr_db")) s.snr_db = kv.get_double("snr_db");
    if (kv.has("val_items")) s.val_items = kv.get_size("val_items");
    if (kv.has("tone_min_hz")) s.tone_min_hz = kv.get_double("tone_min_hz");
    if (kv.has("tone_max_hz")) s.tone_max_hz = kv.get_double("tone_max_hz");
    if (auto extra = kv.unused(); !extra.empty()) fail("unknown config key: " + extra[0]);
    s.validate();
    return c;
  }

  static TrainConfig load(const std::string& path) {
    return from_kv(KeyValues::load(path));
  }
};

struct ToyItem {
  Signal clean;
  Signal mixture;
};

// Random-frequency tone plus white noise at the requested SNR.
inline ToyItem make_toy_item(const TrainSchedule& s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  SynthOptions opt;
  opt.freq_hz = uniform(rng, s.tone_min_hz, s.tone_max_hz);
  opt.amplitude = uniform(rng, 0.1, 0.5);
  const std::uint64_t tone_seed = rng(), noise_seed = rng(), mix_seed = rng();
  ToyItem item;
  item.clean = gen_synthetic(SynthKind::kTone, s.segment_s, tone_seed, opt);
  SynthOptions nopt;
  nopt.amplitude = 0.3;
  Signal noise = gen_synthetic(SynthKind::kWhiteNoise, s.segment_s, noise_seed, nopt);
  item.mixture = mix_at_snr(item.clean, noise, MixSpec{s.snr_db, mix_seed}).mixture;
  return item;
}

template <typename T>
struct LossAndGrad {
  LossBreakdown loss;
  GradMap<T> grads;
};

// Loss on one (mixture, clean) pair and, when `want_grad`, its gradient with
// respect to every trainable tensor. DPCRN-2 adds the log spectral MSE term.
// BN runs on its stored statistics (see README, toy training).
template <typename T>
LossAndGrad<T> loss_and_grad(const ModelWeights<T>& w, const ModelConfig& cfg,
                             std::span<const T> mixture, std::span<const T> clean,
                             bool want_grad = true, const StftConfig& stft = {}) {
  if (mixture.size() != clean.size()) fail("mixture/clean length mismatch");
  const BasicSpectrogram<T> X = analyze<T>(mixture, stft);
  const std::size_t len = stft.length_for(X.frames);
  const std::span<const T> s = clean.first(len);

  GradTape<T> tape;
  auto res = forward(w, cfg, X, want_grad ? &tape : nullptr, BnMode::kInfer);
  const BasicSpectrogram<T> S_hat = apply_mask(X, res.mask);
  const std::vector<T> s_hat = synthesize<T>(S_hat, stft);

  const bool with_mse = cfg.variant == Variant::kDpcrn2;
  LossAndGrad<T> out;
  const BasicSpectrogram<T> S = analyze<T>(s, stft);
  out.loss = loss_snr_mse<T>(s, s_hat, S, S_hat);
  if (!with_mse) out.loss.total = out.loss.neg_snr;
  if (!std::isfinite(out.loss.total))
    fail(ErrorKind::kDivergence, "diverged: non-finite loss");
  if (!want_grad) return out;

  const std::vector<T> gs = loss_neg_snr_grad<T>(s, s_hat);
  BasicSpectrogram<T> dS = synthesize_adjoint<T>(gs, X.frames, stft);
  if (with_mse) {
    const auto dl = log_mse_grad(S, S_hat);
    for (std::size_t i = 0; i < dS.real.size(); ++i) {
      dS.real[i] += dl.real[i];
      dS.imag[i] += dl.imag[i];
    }
  }
  out.grads = backward(tape, mask_to_tensor(apply_mask_backward(X, dS)));
  return out;
}

struct CurvePoint {
  std::size_t step = 0;
  double neg_snr = 0.0;
  double log_mse = 0.0;
  double total = 0.0;
  double lr = 0.0;
};

struct EvalPoint {
  std::size_t step = 0;
  double val_loss = 0.0;
  double lr = 0.0;  // after the scheduler saw this evaluation
};

struct TrainResult {
  ModelWeights<float> weights;
  std::vector<CurvePoint> curve;
  std::vector<EvalPoint> evals;
  std::size_t steps_run = 0;
  bool stopped_early = false;
  double final_lr = 0.0;
};

inline std::string curve_csv(const std::vector<CurvePoint>& curve) {
  std::ostringstream os;
  os.precision(10);
  os << "step,neg_snr,log_mse,total,lr\n";
  for (const auto& p : curve)
    os << p.step << "," << p.neg_snr << "," << p.log_mse << "," << p.total << ","
       << p.lr << "\n";
  return os.str();
}

inline void write_curve_csv(const std::string& path,
                            const std::vector<CurvePoint>& curve) {
  std::ofstream f(path);
  if (!f) fail(ErrorKind::kIo, "cannot write " + path);
  f << curve_csv(curve);
  if (!f) fail(ErrorKind::kIo, "write failed for " + path);
}

// mix -> analyze -> taped forward -> mask -> synthesize -> loss -> backward
// -> Adam. Step k of the curve is the batch loss measured before update k.
// Evaluations on a fixed validation set run after every `eval_every`
// updates and drive the plateau scheduler. Single-threaded and deterministic
// for a given seed.
inline TrainResult train_toy(const ModelConfig& cfg, const TrainSchedule& sched,
                             std::size_t steps, std::uint64_t seed,
                             const std::function<void(const CurvePoint&)>& on_step = {}) {
  cfg.validate();
  sched.validate();
  std::mt19937_64 rng(seed);
  TrainResult r;
  r.weights = build<float>(cfg, rng());
  const std::uint64_t data_seed = rng(), val_seed = rng();

  std::vector<ToyItem> val;
  for (std::size_t i = 0; i < sched.val_items; ++i)
    val.push_back(make_toy_item(sched, val_seed + 7919 * i));
  auto validate_loss = [&] {
    double sum = 0.0;
    for (const auto& it : val)
      sum += loss_and_grad<float>(r.weights, cfg, it.mixture.samples,
                                  it.clean.samples, false)
                 .loss.total;
    return sum / static_cast<double>(val.size());
  };

  PlateauScheduler plateau(sched);
  AdamState adam;
  std::mt19937_64 data_rng(data_seed);
  for (std::size_t step = 0; step < steps; ++step) {
    GradMap<float> grads;
    CurvePoint pt;
    pt.step = step;
    pt.lr = plateau.lr();
    for (std::size_t b = 0; b < sched.batch; ++b) {
      ToyItem it = make_toy_item(sched, data_rng());
      auto lg = loss_and_grad<float>(r.weights, cfg, it.mixture.samples,
                                     it.clean.samples);
      pt.neg_snr += lg.loss.neg_snr;
      pt.log_mse += lg.loss.log_mse_term;
      pt.total += lg.loss.total;
      if (b == 0) {
        grads = std::move(lg.grads);
      } else {
        for (auto& [name, g] : lg.grads) grads.at(name) += g;
      }
    }
    const double inv = 1.0 / static_cast<double>(sched.batch);
    pt.neg_snr *= inv;
    pt.log_mse *= inv;
    pt.total *= inv;
    for (auto& [name, g] : grads)
      for (auto& v : g.vec()) v = static_cast<float>(v * inv);
    r.curve.push_back(pt);
    if (on_step) on_step(pt);

    adam_step<float>(r.weights, grads, adam, plateau.lr());
    r.steps_run = step + 1;

    if ((step + 1) % sched.eval_every == 0) {
      const double v = validate_loss();
      if (!std::isfinite(v)) fail(ErrorKind::kDivergence, "diverged: non-finite validation loss");
      const bool stop = plateau.observe(v);
      r.evals.push_back({step + 1, v, plateau.lr()});
      if (stop) {
        r.stopped_early = true;
        break;
      }
    }
  }
  r.final_lr = plateau.lr();
  return r;
}

}  // namespace dpcrn

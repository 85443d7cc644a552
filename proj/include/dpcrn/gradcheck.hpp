// Copyright 2026 The dpcrn Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "dpcrn/trainer.hpp"

namespace dpcrn {

// Round-off in a float64 loss of order one is about 1e-14, so a central
// difference with h = 1e-4 resolves gradients only to about 1e-10 absolute.
// Below |g| = 1e-6 a relative error of 1e-4 is unmeasurable; that magnitude is
// used as the denominator floor.
inline constexpr double kGradFloor = 1e-6;

// |a - n| / max(|a|, |n|, floor).
inline double grad_rel_error(double analytic, double numeric,
                             double floor = kGradFloor) {
  const double d = std::max({std::fabs(analytic), std::fabs(numeric), floor});
  return std::fabs(analytic - numeric) / d;
}

struct GradcheckReport {
  std::size_t coords = 0;
  std::size_t within_tol = 0;
  double tol = 1e-4;
  double floor = kGradFloor;
  double max_rel_err = 0.0;
  // Same count with a 1e-12 floor (nearly pure relative error), for reference.
  std::size_t within_tol_strict = 0;
  std::string worst;  // "tensor[index]"
  // Out-of-tolerance coordinates whose difference quotient at h/10 agrees
  // with the analytic value: the h stencil straddled a kink (PReLU at 0).
  std::size_t kinks = 0;
  double max_rel_err_smooth = 0.0;  // max over coordinates not flagged as kinks

  double fraction_within() const {
    return coords == 0 ? 1.0 : static_cast<double>(within_tol) / static_cast<double>(coords);
  }
  double fraction_within_strict() const {
    return coords == 0 ? 1.0
                       : static_cast<double>(within_tol_strict) / static_cast<double>(coords);
  }
  void add(const std::string& name, std::size_t i, double a, double n,
           bool kink = false) {
    const double e = grad_rel_error(a, n, floor);
    ++coords;
    if (kink) ++kinks;
    else max_rel_err_smooth = std::max(max_rel_err_smooth, e);
    if (e <= tol) ++within_tol;
    if (grad_rel_error(a, n, 1e-12) <= tol) ++within_tol_strict;
    if (e > max_rel_err || coords == 1) {
      max_rel_err = e;
      worst = name + "[" + std::to_string(i) + "]";
    }
  }
  void merge(const GradcheckReport& o) {
    coords += o.coords;
    within_tol += o.within_tol;
    within_tol_strict += o.within_tol_strict;
    kinks += o.kinks;
    max_rel_err_smooth = std::max(max_rel_err_smooth, o.max_rel_err_smooth);
    if (o.max_rel_err > max_rel_err) {
      max_rel_err = o.max_rel_err;
      worst = o.worst;
    }
  }
};

// Central difference of `loss` with respect to every entry of `p`, compared
// against `analytic`. `p` is perturbed in place and restored.
inline void check_tensor_grad(const std::string& name, Tensor<double>& p,
                              const Tensor<double>& analytic,
                              const std::function<double()>& loss,
                              GradcheckReport& rep, double h = 1e-4) {
  check(p.shape() == analytic.shape(), "gradient shape mismatch for " + name);
  auto diff = [&](std::size_t i, double step) {
    const double orig = p[i];
    p[i] = orig + step;
    const double lp = loss();
    p[i] = orig - step;
    const double lm = loss();
    p[i] = orig;
    return (lp - lm) / (2.0 * step);
  };
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double n = diff(i, h);
    bool kink = false;
    if (grad_rel_error(analytic[i], n, rep.floor) > rep.tol)
      kink = grad_rel_error(analytic[i], diff(i, h / 10.0), rep.floor) <= rep.tol;
    rep.add(name, i, analytic[i], n, kink);
  }
}

namespace detail {

inline Tensor<double> random_tensor(std::mt19937_64& rng, Shape shape,
                                    double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.vec()) v = uniform(rng, lo, hi);
  return t;
}

// Checks one taped op against central differences of sum(out * R) for a
// random R. Inputs with grad[k] == false are fed as constants.
inline GradcheckReport check_op(
    std::mt19937_64& rng, std::vector<Tensor<double>> inputs,
    std::vector<bool> grad,
    const std::function<Var<double>(Graph<double>&, const std::vector<Var<double>>&)>& op,
    double h) {
  grad.resize(inputs.size(), true);
  GradTape<double> tape;
  Graph<double> g(&tape);
  std::vector<Var<double>> vars;
  for (std::size_t k = 0; k < inputs.size(); ++k)
    vars.push_back(g.param("in" + std::to_string(k), inputs[k], grad[k]));
  const Var<double> out = op(g, vars);
  tape.mark_output(out.node);
  const Tensor<double> r = random_tensor(rng, out->shape());
  const GradMap<double> grads = backward(tape, r);

  auto loss = [&] {
    Graph<double> eager;
    std::vector<Var<double>> v;
    for (std::size_t k = 0; k < inputs.size(); ++k)
      v.push_back(eager.param("in" + std::to_string(k), inputs[k]));
    const Var<double> y = op(eager, v);
    double acc = 0.0;
    for (std::size_t i = 0; i < y->size(); ++i) acc += (*y)[i] * r[i];
    return acc;
  };
  GradcheckReport rep;
  for (std::size_t k = 0; k < inputs.size(); ++k)
    if (grad[k])
      check_tensor_grad("in" + std::to_string(k), inputs[k],
                        grads.at("in" + std::to_string(k)), loss, rep, h);
  return rep;
}

}  // namespace detail

// Gradient check of every differentiable building block on small random
// shapes: the taped layer ops plus the mask product, the synthesis adjoint
// and the two loss terms.
inline std::vector<std::pair<std::string, GradcheckReport>> gradcheck_layers(
    std::uint64_t seed, double h = 1e-4) {
  std::mt19937_64 rng(seed);
  using V = std::vector<Var<double>>;
  using G = Graph<double>;
  std::vector<std::pair<std::string, GradcheckReport>> out;
  auto rt = [&](Shape s, double lo = -1.0, double hi = 1.0) {
    return detail::random_tensor(rng, std::move(s), lo, hi);
  };

  const ConvGeom cg{2, 3, 1, 2, 1, 1};
  out.emplace_back("conv2d_causal",
                   detail::check_op(rng, {rt({4, 7, 3}), rt({2, 3, 2, 3}), rt({2})}, {},
                                    [&](G& g, const V& v) { return g.conv(v[0], v[1], v[2], cg); },
                                    h));
  const ConvGeom dg{2, 3, 1, 2, 1, 0};
  out.emplace_back("conv2d_transpose_causal",
                   detail::check_op(rng, {rt({4, 4, 3}), rt({3, 2, 2, 3}), rt({2})}, {},
                                    [&](G& g, const V& v) {
                                      return g.deconv(v[0], v[1], v[2], dg, 8);
                                    },
                                    h));
  for (BnMode mode : {BnMode::kInfer, BnMode::kTrain}) {
    const bool train = mode == BnMode::kTrain;
    out.emplace_back(
        train ? "batch_norm_train" : "batch_norm_infer",
        detail::check_op(rng,
                         {rt({3, 5, 4}), rt({4}, 0.5, 1.5), rt({4}), rt({4}, -0.2, 0.2),
                          rt({4}, 0.5, 1.5)},
                         {true, true, true, false, false},
                         [mode](G& g, const V& v) {
                           return g.batch_norm(v[0], v[1], v[2], v[3], v[4], mode);
                         },
                         h));
  }
  out.emplace_back("prelu", detail::check_op(rng, {rt({3, 5, 4}), rt({4}, 0.0, 0.5)}, {},
                                             [](G& g, const V& v) { return g.prelu(v[0], v[1]); },
                                             h));
  out.emplace_back("fully_connected",
                   detail::check_op(rng, {rt({3, 5, 4}), rt({6, 4}), rt({6})}, {},
                                    [](G& g, const V& v) { return g.fc(v[0], v[1], v[2]); }, h));
  out.emplace_back("iln", detail::check_op(rng, {rt({3, 5, 4}), rt({5, 4}, 0.5, 1.5), rt({5, 4})},
                                           {},
                                           [](G& g, const V& v) { return g.iln(v[0], v[1], v[2]); },
                                           h));
  const std::size_t c = 3, hd = 2;
  out.emplace_back(
      "intra_bilstm",
      detail::check_op(rng,
                       {rt({3, 5, c}), rt({4 * hd, c}), rt({4 * hd, hd}), rt({4 * hd}),
                        rt({4 * hd, c}), rt({4 * hd, hd}), rt({4 * hd})},
                       {},
                       [](G& g, const V& v) {
                         return g.intra_bilstm(v[0], v[1], v[2], v[3], v[4], v[5], v[6]);
                       },
                       h));
  out.emplace_back("inter_lstm",
                   detail::check_op(rng,
                                    {rt({5, 3, c}), rt({4 * hd, c}), rt({4 * hd, hd}), rt({4 * hd})},
                                    {},
                                    [](G& g, const V& v) {
                                      return g.inter_lstm(v[0], v[1], v[2], v[3]);
                                    },
                                    h));
  out.emplace_back("add", detail::check_op(rng, {rt({2, 3, 4}), rt({2, 3, 4})}, {},
                                           [](G& g, const V& v) { return g.add(v[0], v[1]); }, h));
  out.emplace_back("concat",
                   detail::check_op(rng, {rt({2, 3, 4}), rt({2, 3, 2})}, {},
                                    [](G& g, const V& v) { return g.concat(v[0], v[1]); }, h));

  // Mask product, synthesis and the signal-domain losses, checked together
  // through d(loss)/d(mask): the same chain the trainer uses.
  {
    const StftConfig stft;
    const std::size_t frames = 3, n = stft.length_for(frames);
    std::vector<double> clean(n), mix(n);
    for (std::size_t i = 0; i < n; ++i) {
      clean[i] = uniform(rng, -0.5, 0.5);
      mix[i] = clean[i] + uniform(rng, -0.3, 0.3);
    }
    const auto X = analyze<double>(mix, stft);
    const auto S = analyze<double>(clean, stft);
    Tensor<double> m = rt({frames, stft.n_bins(), 2});
    for (bool with_mse : {false, true}) {
      auto loss = [&] {
        const auto S_hat = apply_mask(X, tensor_to_mask(m));
        const auto s_hat = synthesize<double>(S_hat, stft);
        auto b = loss_snr_mse<double>(clean, s_hat, S, S_hat);
        return with_mse ? b.total : b.neg_snr;
      };
      const auto S_hat = apply_mask(X, tensor_to_mask(m));
      const auto s_hat = synthesize<double>(S_hat, stft);
      auto dS = synthesize_adjoint<double>(loss_neg_snr_grad<double>(clean, s_hat),
                                           frames, stft);
      if (with_mse) {
        const auto dl = log_mse_grad(S, S_hat);
        for (std::size_t i = 0; i < dS.real.size(); ++i) {
          dS.real[i] += dl.real[i];
          dS.imag[i] += dl.imag[i];
        }
      }
      const Tensor<double> dm = mask_to_tensor(apply_mask_backward(X, dS));
      GradcheckReport rep;
      check_tensor_grad("mask", m, dm, loss, rep, h);
      out.emplace_back(with_mse ? "mask_istft_neg_snr_log_mse" : "mask_istft_neg_snr",
                       rep);
    }
  }
  return out;
}

// End-to-end check of d(training loss)/d(theta) for a small model on a short
// random mixture, in float64.
inline GradcheckReport gradcheck_model(const ModelConfig& cfg, std::uint64_t seed,
                                       double input_s = 0.1, double h = 1e-4) {
  std::mt19937_64 rng(seed);
  ModelWeights<double> w = build<double>(cfg, rng());
  // Move BN statistics and affine terms off their identity initialization so
  // every term of the inference-mode normalization is exercised.
  for (auto& e : w.entries()) {
    const bool var = e.name.ends_with("running_var");
    const bool shift = e.name.ends_with("running_mean") ||
                       e.name.ends_with(".beta") || e.name.ends_with(".bias");
    const bool scale = e.name.ends_with(".gamma");
    for (auto& v : e.value.vec()) {
      if (var) v = uniform(rng, 0.5, 1.5);
      else if (shift) v += uniform(rng, -0.1, 0.1);
      else if (scale) v *= uniform(rng, 0.8, 1.2);
    }
  }
  const auto n = static_cast<std::size_t>(std::llround(input_s * kSampleRate));
  std::vector<double> clean(n), mix(n);
  for (std::size_t i = 0; i < n; ++i) {
    clean[i] = 0.5 * std::sin(2.0 * M_PI * 440.0 * static_cast<double>(i) / kSampleRate);
    mix[i] = clean[i] + 0.3 * gaussian(rng);
  }
  const auto lg = loss_and_grad<double>(w, cfg, mix, clean);
  auto loss = [&] {
    return loss_and_grad<double>(w, cfg, mix, clean, false).loss.total;
  };
  GradcheckReport rep;
  for (auto& e : w.entries()) {
    if (!e.trainable) continue;
    check_tensor_grad(e.name, e.value, lg.grads.at(e.name), loss, rep, h);
  }
  return rep;
}

}  // namespace dpcrn

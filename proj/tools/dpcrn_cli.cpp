// Copyright 2026 The dpcrn Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Command-line front end. Exit codes: 0 ok, 2 validation, 3 divergence,
// 4 I/O.

#include <cstdio>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "dpcrn/dpcrn.hpp"
#include "json.hpp"

namespace {

using namespace dpcrn;

WavFormat parse_format(const std::string& s) {
  if (s == "pcm16") return WavFormat::kPcm16;
  if (s == "float32") return WavFormat::kFloat32;
  fail("unknown wav format: " + s);
}

ModelConfig load_model_config(const std::string& path) {
  if (path.empty()) return ModelConfig{};
  return TrainConfig::load(path).model;
}

int cmd_enhance(const std::string& in, const std::string& out,
                const std::string& weights, bool offline,
                const std::string& format) {
  auto [w, cfg] = load_weights(weights);
  const Signal x = read_wav(in);
  const Signal y = offline ? enhance_offline_padded(w, cfg, x)
                           : enhance_streaming(w, cfg, x, 200);
  write_wav(out, y, parse_format(format));
  std::printf("samples=%zu mode=%s\n", y.size(), offline ? "offline" : "stream");
  return 0;
}

int cmd_mix(const std::string& speech, const std::string& noise, double snr,
            std::uint64_t seed, const std::string& out,
            const std::string& noise_out, const std::string& format) {
  const Signal s = read_wav(speech);
  const Signal n = read_wav(noise);
  const Mixture m = mix_at_snr(s, n, MixSpec{snr, seed});
  write_wav(out, m.mixture, parse_format(format));
  if (!noise_out.empty()) write_wav(noise_out, m.scaled_noise, WavFormat::kFloat32);
  const double measured = 10.0 * std::log10(s.energy() / m.scaled_noise.energy());
  std::printf("requested_snr_db=%.6f measured_snr_db=%.9f\n", snr, measured);
  return 0;
}

int cmd_eval(const std::string& ref, const std::string& est) {
  const Signal s = read_wav(ref);
  const Signal e = read_wav(est);
  std::printf("snr_db=%.6f si_snr_db=%.6f\n", metric_snr(s, e), metric_si_snr(s, e));
  return 0;
}

int cmd_train_toy(const std::string& config, std::size_t steps,
                  std::uint64_t seed, const std::string& out,
                  const std::string& curve, bool quiet) {
  const TrainConfig tc = TrainConfig::load(config);
  const auto r = train_toy(tc.model, tc.schedule, steps, seed, [&](const CurvePoint& p) {
    if (!quiet && p.step % 10 == 0)
      std::fprintf(stderr, "step %zu neg_snr %.4f total %.4f lr %.3g\n", p.step,
                   p.neg_snr, p.total, p.lr);
  });
  save_weights(r.weights, tc.model, out);
  if (!curve.empty()) write_curve_csv(curve, r.curve);
  double tail = 0.0;
  const std::size_t k = std::min<std::size_t>(10, r.curve.size());
  for (std::size_t i = r.curve.size() - k; i < r.curve.size(); ++i)
    tail += r.curve[i].neg_snr / static_cast<double>(k);
  std::printf("steps=%zu params=%zu first_neg_snr=%.4f last10_neg_snr=%.4f "
              "improvement_db=%.4f final_lr=%.6g stopped_early=%d\n",
              r.steps_run, param_count(r.weights), r.curve.front().neg_snr, tail,
              r.curve.front().neg_snr - tail, r.final_lr, r.stopped_early ? 1 : 0);
  return 0;
}

int cmd_gradcheck(const std::string& config, std::uint64_t seed, bool layers) {
  // Pass rule: at least 99% of coordinates of every report within 1e-4.
  constexpr double kMinFraction = 0.99;
  const ModelConfig cfg = load_model_config(config);
  GradcheckReport all = gradcheck_model(cfg, seed);
  double worst_fraction = all.fraction_within();
  std::printf("model params=%zu coords=%zu within_tol=%.6f kinks=%zu "
              "max_rel_err=%.3e max_rel_err_smooth=%.3e worst=%s\n",
              param_count(build<float>(cfg, 0)), all.coords, all.fraction_within(),
              all.kinks, all.max_rel_err, all.max_rel_err_smooth, all.worst.c_str());
  if (layers)
    for (const auto& [name, r] : gradcheck_layers(seed)) {
      std::printf("layer %s coords=%zu within_tol=%.6f max_rel_err=%.3e\n",
                  name.c_str(), r.coords, r.fraction_within(), r.max_rel_err);
      worst_fraction = std::min(worst_fraction, r.fraction_within());
      all.merge(r);
    }
  std::printf("min_within_tol=%.6f max_rel_err=%.3e excluding_kinks=%zu\n", worst_fraction,
              all.max_rel_err_smooth, all.kinks);
  return worst_fraction < kMinFraction ? 3 : 0;
}

int cmd_bench(const std::string& weights, double seconds, std::size_t threads) {
  auto [w, cfg] = load_weights(weights);
  const BenchReport r = bench_rtf(w, cfg, seconds, threads);
  nlohmann::ordered_json j;
  j["variant"] = variant_name(cfg.variant);
  j["duration_s"] = r.duration_s;
  j["threads"] = r.threads;
  j["frames"] = r.frames;
  j["mean_ms"] = r.mean_ms;
  j["median_ms"] = r.median_ms;
  j["p99_ms"] = r.p99_ms;
  j["rtf"] = r.rtf;
  j["flops_per_frame"] = r.flops_per_frame;
  j["flops_per_second"] = r.flops_per_second;
  j["reference_flops_per_second"] = r.reference_flops_per_second;
  j["state_bytes"] = r.state_bytes;
  std::printf("%s\n", j.dump(2).c_str());
  return 0;
}

int cmd_inspect(const std::string& weights) {
  auto [w, cfg] = load_weights(weights);
  std::printf("%s", cfg.to_text().c_str());
  const auto f = cfg.encoder_freqs();
  std::printf("freqs=");
  for (std::size_t i = 0; i < f.size(); ++i) std::printf("%s%zu", i ? "," : "", f[i]);
  std::printf("\n");
  for (const auto& e : w.entries())
    std::printf("%-36s %-16s %s\n", e.name.c_str(), shape_str(e.value.shape()).c_str(),
                e.trainable ? "trainable" : "buffer");
  std::printf("param_count=%zu\n", param_count(w));
  return 0;
}

int cmd_init(const std::string& config, const std::string& variant,
             std::uint64_t seed, const std::string& out) {
  ModelConfig cfg = config.empty() ? ModelConfig::for_variant(parse_variant(variant))
                                   : load_model_config(config);
  save_weights(build<float>(cfg, seed), cfg, out);
  std::printf("param_count=%zu\n", param_count(build<float>(cfg, seed)));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DPCRN speech enhancement: streaming inference, toy training, tools"};
  app.require_subcommand(1);

  std::string in, out, weights, format = "pcm16";
  bool stream = false, offline = false;
  auto* enhance = app.add_subcommand("enhance", "Enhance a 16 kHz mono WAV file");
  enhance->add_option("--in", in, "Noisy input WAV")->required();
  enhance->add_option("--out", out, "Enhanced output WAV")->required();
  enhance->add_option("--weights", weights, "DPCW weight file")->required();
  auto* fs = enhance->add_flag("--stream", stream, "Frame-by-frame runtime (default)");
  auto* fo = enhance->add_flag("--offline", offline, "Whole-utterance forward pass");
  fs->excludes(fo);
  enhance->add_option("--format", format, "pcm16 or float32");

  std::string speech, noise, noise_out;
  double snr = 0.0;
  std::uint64_t seed = 0;
  auto* mix = app.add_subcommand("mix", "Mix speech and noise at a given SNR");
  mix->add_option("--speech", speech)->required();
  mix->add_option("--noise", noise)->required();
  mix->add_option("--snr", snr, "dB")->required();
  mix->add_option("--seed", seed, "Noise crop offset seed")->required();
  mix->add_option("--out", out)->required();
  mix->add_option("--noise-out", noise_out, "Also write the scaled noise (float32)");
  mix->add_option("--format", format, "pcm16 or float32");

  std::string ref, est;
  auto* eval = app.add_subcommand("eval", "SNR and SI-SNR of an estimate");
  eval->add_option("--ref", ref)->required();
  eval->add_option("--est", est)->required();

  std::string config, curve;
  std::size_t steps = 200;
  bool quiet = false;
  auto* train = app.add_subcommand("train-toy", "Train a small model on synthetic mixtures");
  train->add_option("--config", config)->required();
  train->add_option("--steps", steps)->required();
  train->add_option("--seed", seed)->required();
  train->add_option("--out", out)->required();
  train->add_option("--curve", curve, "Loss curve CSV");
  train->add_flag("--quiet", quiet);

  bool layers = false;
  auto* gc = app.add_subcommand("gradcheck", "Analytic vs central-difference gradients");
  gc->add_option("--config", config)->required();
  gc->add_option("--seed", seed)->required();
  gc->add_flag("--layers", layers, "Also check every layer kind in isolation");

  double seconds = 10.0;
  std::size_t threads = 1;
  auto* bench = app.add_subcommand("bench", "Per-frame timing of the streaming runtime");
  bench->add_option("--weights", weights)->required();
  bench->add_option("--seconds", seconds)->required();
  bench->add_option("--threads", threads)->required();

  auto* inspect = app.add_subcommand("inspect", "Print config, manifest and parameter count");
  inspect->add_option("--weights", weights)->required();

  std::string variant = "DPCRN-1";
  auto* init = app.add_subcommand("init", "Write randomly initialized weights");
  init->add_option("--config", config, "Model config (key=value)");
  init->add_option("--variant", variant, "DPCRN-1, DPCRN-2 or DPCRN-3");
  init->add_option("--seed", seed);
  init->add_option("--out", out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*enhance) return cmd_enhance(in, out, weights, offline, format);
    if (*mix) return cmd_mix(speech, noise, snr, seed, out, noise_out, format);
    if (*eval) return cmd_eval(ref, est);
    if (*train) return cmd_train_toy(config, steps, seed, out, curve, quiet);
    if (*gc) return cmd_gradcheck(config, seed, layers);
    if (*bench) {
      if (seconds < 10.0) fail("bench needs at least 10 s of input");
      return cmd_bench(weights, seconds, threads);
    }
    if (*inspect) return cmd_inspect(weights);
    if (*init) return cmd_init(config, variant, seed, out);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 2;
}

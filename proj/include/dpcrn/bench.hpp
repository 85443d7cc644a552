// Copyright 2026 The dpcrn Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <string>
#include <thread>
#include <vector>

#include "dpcrn/stream.hpp"

namespace dpcrn {

inline constexpr double kFramesPerSecond = 80.0;  // 16 kHz / 200-sample hop
inline constexpr double kHopMs = 12.5;
// Published complexity of the default model, in FLOP per second of audio.
inline constexpr double kReferenceFlopsPerSecond = 7.45e9;

struct FlopBreakdown {
  double encoder = 0, dprnn = 0, decoder = 0;
  double total() const { return encoder + dprnn + decoder; }
};

// Two FLOPs per multiply-accumulate of the conv, deconv, LSTM and FC layers
// for one frame. Norms, activations, the mask product and the FFTs are
// elementwise or O(N log N) and left out.
inline FlopBreakdown frame_flops(const ModelConfig& cfg) {
  cfg.validate();
  FlopBreakdown fb;
  const auto f = cfg.encoder_freqs();
  for (std::size_t i = 0; i < cfg.layers(); ++i) {
    const double taps = static_cast<double>(cfg.kernels[i].t * cfg.kernels[i].f);
    const double ci = static_cast<double>(cfg.in_channels(i));
    const double co = static_cast<double>(cfg.enc_channels[i]);
    fb.encoder += 2.0 * static_cast<double>(f[i + 1]) * co * ci * taps;
    // Decoder stage i scatters each of its f[i+1] inputs through every tap.
    fb.decoder += 2.0 * static_cast<double>(f[i + 1]) * (2.0 * co) * ci * taps;
  }
  const double fq = static_cast<double>(cfg.dprnn_freq());
  const double c = static_cast<double>(cfg.dprnn_channels());
  const double hi = static_cast<double>(cfg.intra_hidden);
  const double he = static_cast<double>(cfg.inter_hidden);
  const double per_block = 2.0 * fq * 4.0 * hi * (c + hi) * 2.0  // BiLSTM
                           + 2.0 * fq * c * 2.0 * hi             // intra FC
                           + 2.0 * fq * 4.0 * he * (c + he)      // inter LSTM
                           + 2.0 * fq * c * he;                  // inter FC
  fb.dprnn = per_block * static_cast<double>(cfg.n_dprnn);
  return fb;
}

struct BenchReport {
  std::size_t frames = 0;  // per stream
  std::size_t threads = 1;
  double duration_s = 0;
  double mean_ms = 0, median_ms = 0, p99_ms = 0;
  double rtf = 0;  // mean per-frame time / 12.5 ms
  double flops_per_frame = 0;
  double flops_per_second = 0;  // analytic, at 80 frames/s
  double reference_flops_per_second = kReferenceFlopsPerSecond;
  std::size_t state_bytes = 0;
};

namespace detail {

inline double percentile(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace detail

// Runs `threads` independent streams over the same synthetic input, timing
// every hop that completes a frame. Wall-clock numbers describe this
// machine only.
inline BenchReport bench_rtf(const ModelWeights<float>& w, const ModelConfig& cfg,
                             double duration_s, std::size_t threads = 1,
                             std::uint64_t seed = 1) {
  check(duration_s > 0.0, "duration must be positive");
  check(threads > 0, "threads must be positive");
  const Signal input = gen_synthetic(SynthKind::kSpeechLike, duration_s, seed);
  auto shared = std::make_shared<const ModelWeights<float>>(w);
  const std::size_t hop = 200;

  std::vector<std::vector<double>> times(threads);
  std::vector<std::size_t> state_bytes(threads, 0);
  auto worker = [&](std::size_t k) {
    StreamState st(shared, cfg);
    std::span<const float> x(input.samples);
    for (std::size_t pos = 0; pos < x.size(); pos += hop) {
      const std::size_t before = st.frames_processed();
      const auto t0 = std::chrono::steady_clock::now();
      st.push(x.subspan(pos, std::min(hop, x.size() - pos)));
      const auto t1 = std::chrono::steady_clock::now();
      if (st.frames_processed() > before)
        times[k].push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    state_bytes[k] = st.state_bytes();
  };
  if (threads == 1) {
    worker(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t k = 0; k < threads; ++k) pool.emplace_back(worker, k);
    for (auto& t : pool) t.join();
  }

  std::vector<double> all;
  for (const auto& t : times) all.insert(all.end(), t.begin(), t.end());
  BenchReport r;
  r.frames = times[0].size();
  r.threads = threads;
  r.duration_s = duration_s;
  double sum = 0.0;
  for (double t : all) sum += t;
  r.mean_ms = all.empty() ? 0.0 : sum / static_cast<double>(all.size());
  r.median_ms = detail::percentile(all, 0.5);
  r.p99_ms = detail::percentile(all, 0.99);
  r.rtf = r.mean_ms / kHopMs;
  r.flops_per_frame = frame_flops(cfg).total();
  r.flops_per_second = r.flops_per_frame * kFramesPerSecond;
  r.state_bytes = state_bytes[0];
  return r;
}

}  // namespace dpcrn

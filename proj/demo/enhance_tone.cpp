// Copyright 2026 The dpcrn Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Trains a micro model for a few steps on tone + noise, then runs it as a
// stream in 10 ms pushes and compares against the offline pass.

#include <cstdio>

#include "dpcrn/dpcrn.hpp"

int main(int argc, char** argv) {
  using namespace dpcrn;
  const std::size_t steps = argc > 1 ? std::stoul(argv[1]) : 30;

  ModelConfig cfg = ModelConfig::from_text(
      "enc_channels=8,8,8,8,16\nn_dprnn=1\nintra_hidden=8\ninter_hidden=16\n");
  TrainSchedule sched;
  sched.lr0 = 3e-3;
  sched.batch = 2;
  sched.segment_s = 0.5;
  TrainResult tr = train_toy(cfg, sched, steps, 7);
  std::printf("trained %zu steps: neg-SNR %.2f dB -> %.2f dB\n", tr.steps_run,
              tr.curve.front().neg_snr, tr.curve.back().neg_snr);

  ToyItem item = make_toy_item(sched, 12345);
  StreamState st(tr.weights, cfg);
  Signal enhanced;
  for (std::size_t pos = 0; pos < item.mixture.size(); pos += 160) {
    std::span<const float> x(item.mixture.samples);
    auto y = st.push(x.subspan(pos, std::min<std::size_t>(160, x.size() - pos)));
    enhanced.samples.insert(enhanced.samples.end(), y.begin(), y.end());
  }
  auto tail = st.flush();
  enhanced.samples.insert(enhanced.samples.end(), tail.begin(), tail.end());

  const Signal offline = enhance_offline_padded(tr.weights, cfg, item.mixture);
  double max_diff = 0.0;
  for (std::size_t i = 0; i < offline.size(); ++i)
    max_diff = std::max(max_diff, double(std::fabs(offline.samples[i] - enhanced.samples[i])));

  std::printf("input  SNR %.2f dB\n", metric_snr(item.clean, item.mixture));
  std::printf("output SNR %.2f dB (stream), max |stream - offline| = %.3g\n",
              metric_snr(item.clean, enhanced), max_diff);
  std::printf("state %zu bytes, %zu frames\n", st.state_bytes(), st.frames_processed());
  return 0;
}

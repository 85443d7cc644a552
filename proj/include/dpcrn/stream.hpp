// Copyright 2026 The dpcrn Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <algorithm>
#include <memory>
#include <span>
#include <vector>

#include "dpcrn/model.hpp"
#include "dpcrn/stft.hpp"

namespace dpcrn {

// Frame-synchronous runtime: the same per-frame kernels as the offline
// forward pass, with explicit carried state.
//
// Timing. Frame k covers input samples [200k, 200k + 400) and runs once they
// have all arrived. After frame k, output samples [200k, 200k + 200) have
// received both overlap-add contributions, but they are held back one more
// hop and emitted together with frame k + 1. Output sample n is therefore
// the offline output sample n, and the first 200 samples come out of the
// push that delivers input sample 600.
class StreamState {
 public:
  StreamState(std::shared_ptr<const ModelWeights<float>> w, const ModelConfig& cfg,
              const StftConfig& stft = {})
      : w_(std::move(w)), cfg_(cfg), stft_(stft), ft_(stft) {
    cfg_.validate();
    validate_weights(*w_, cfg_);
    if (cfg_.n_bins != stft_.n_bins())
      fail("model expects " + std::to_string(cfg_.n_bins) + " bins, STFT gives " +
           std::to_string(stft_.n_bins()));
    pack();
    allocate();
  }

  StreamState(const ModelWeights<float>& w, const ModelConfig& cfg,
              const StftConfig& stft = {})
      : StreamState(std::make_shared<const ModelWeights<float>>(w), cfg, stft) {}

  const ModelConfig& config() const { return cfg_; }
  std::size_t frames_processed() const { return frames_; }
  std::size_t samples_in() const { return samples_in_; }
  std::size_t samples_out() const { return samples_out_; }
  bool closed() const { return closed_; }
  // Number of per-bin inter-LSTM states in each DPRNN block.
  std::size_t inter_states() const { return cfg_.dprnn_freq(); }

  std::vector<float> push(std::span<const float> chunk) {
    if (closed_) fail("push after close");
    std::vector<float> out;
    for (std::size_t pos = 0; pos < chunk.size();) {
      const std::size_t take = std::min(chunk.size() - pos, stft_.win_len - fill_);
      std::copy_n(chunk.begin() + static_cast<std::ptrdiff_t>(pos), take,
                  window_.begin() + static_cast<std::ptrdiff_t>(fill_));
      fill_ += take;
      pos += take;
      samples_in_ += take;
      if (fill_ == stft_.win_len) step(out);
    }
    return out;
  }

  // Zero-pads the last partial window (at most win_len zeros), runs every
  // frame that still touches real input and emits the rest, so the total
  // output length equals the total input length. Closes the stream.
  std::vector<float> flush() {
    if (closed_) fail("double flush");
    closed_ = true;
    std::vector<float> out;
    const std::size_t n = samples_in_, before = samples_out_;
    if (n > 0) {
      const std::size_t last = (n - 1) / stft_.hop;
      while (frames_ <= last) {
        std::fill(window_.begin() + static_cast<std::ptrdiff_t>(fill_),
                  window_.end(), 0.0f);
        fill_ = stft_.win_len;
        step(out);
      }
      if (have_held_) out.insert(out.end(), held_.begin(), held_.end());
      out.insert(out.end(), ola_.begin(), ola_.begin() + static_cast<std::ptrdiff_t>(stft_.hop));
    }
    out.resize(std::min(out.size(), n - before));
    samples_out_ = before + out.size();
    return out;
  }

  // Bytes held in carried buffers; independent of stream length.
  std::size_t state_bytes() const {
    std::size_t n = window_.size() + ola_.size() + held_.size();
    for (const auto& l : enc_) n += l.hist.size();
    for (const auto& l : dec_) n += l.hist.size();
    for (const auto& b : blocks_) n += b.h.size() + b.c.size();
    return n * sizeof(float);
  }

  bool operator==(const StreamState& o) const {
    if (window_ != o.window_ || ola_ != o.ola_ || held_ != o.held_ ||
        fill_ != o.fill_ || frames_ != o.frames_)
      return false;
    for (std::size_t i = 0; i < enc_.size(); ++i)
      if (enc_[i].hist != o.enc_[i].hist || dec_[i].hist != o.dec_[i].hist)
        return false;
    for (std::size_t i = 0; i < blocks_.size(); ++i)
      if (blocks_[i].h != o.blocks_[i].h || blocks_[i].c != o.blocks_[i].c)
        return false;
    return true;
  }

 private:
  // Per-layer history of the last k_t - 1 input frames, oldest first.
  struct ConvLayer {
    PackedConv<float> p;
    std::size_t f_in = 0, f_out = 0;
    std::vector<float> hist;
    std::vector<float> out;
    bool has_norm = false;
    const float *gamma = nullptr, *beta = nullptr, *mean = nullptr,
                *var = nullptr, *alpha = nullptr;
  };
  struct Block {
    PackedLstm<float> intra_f, intra_b, inter;
    PackedFc<float> intra_fc, inter_fc;
    const float *intra_g = nullptr, *intra_be = nullptr;
    const float *inter_g = nullptr, *inter_be = nullptr;
    std::vector<float> h, c;  // [F][H_inter]
  };

  void pack() {
    const ModelWeights<float>& w = *w_;
    const auto freqs = cfg_.encoder_freqs();
    const std::size_t L = cfg_.layers();
    auto norm = [&](ConvLayer& l, const std::string& pre) {
      l.has_norm = true;
      l.gamma = w.at(pre + ".bn.gamma").data();
      l.beta = w.at(pre + ".bn.beta").data();
      l.mean = w.at(pre + ".bn.running_mean").data();
      l.var = w.at(pre + ".bn.running_var").data();
      l.alpha = w.at(pre + ".prelu.alpha").data();
    };
    for (std::size_t i = 0; i < L; ++i) {
      const std::string pre = "enc" + std::to_string(i);
      ConvLayer l;
      l.p = PackedConv<float>::conv(w.at(pre + ".conv.weight"),
                                    w.at(pre + ".conv.bias"), cfg_.geom(i));
      l.f_in = freqs[i];
      l.f_out = freqs[i + 1];
      norm(l, pre);
      enc_.push_back(std::move(l));
    }
    dec_.resize(L);
    for (std::size_t i = L; i-- > 0;) {
      const std::string pre = "dec" + std::to_string(i);
      ConvLayer& l = dec_[i];
      l.p = PackedConv<float>::deconv(w.at(pre + ".deconv.weight"),
                                      w.at(pre + ".deconv.bias"), cfg_.geom(i));
      l.f_in = freqs[i + 1];
      l.f_out = freqs[i];
      if (i > 0) norm(l, pre);
    }
    for (std::size_t k = 0; k < cfg_.n_dprnn; ++k) {
      const std::string pre = "dprnn" + std::to_string(k);
      auto lstm = [&](const std::string& p) {
        return PackedLstm<float>::from(LstmWeights<float>{
            w.at(p + ".w_ih"), w.at(p + ".w_hh"), w.at(p + ".bias")});
      };
      Block b;
      b.intra_f = lstm(pre + ".intra_fwd");
      b.intra_b = lstm(pre + ".intra_bwd");
      b.inter = lstm(pre + ".inter_lstm");
      b.intra_fc = PackedFc<float>::from(w.at(pre + ".intra_fc.weight"),
                                         w.at(pre + ".intra_fc.bias"));
      b.inter_fc = PackedFc<float>::from(w.at(pre + ".inter_fc.weight"),
                                         w.at(pre + ".inter_fc.bias"));
      b.intra_g = w.at(pre + ".intra_iln.gamma").data();
      b.intra_be = w.at(pre + ".intra_iln.beta").data();
      b.inter_g = w.at(pre + ".inter_iln.gamma").data();
      b.inter_be = w.at(pre + ".inter_iln.beta").data();
      blocks_.push_back(std::move(b));
    }
    in_gamma_ = w.at("input_iln.gamma").data();
    in_beta_ = w.at("input_iln.beta").data();
  }

  void allocate() {
    const std::size_t hop = stft_.hop, nb = stft_.n_bins();
    window_.assign(stft_.win_len, 0.0f);
    ola_.assign(stft_.win_len, 0.0f);
    held_.assign(hop, 0.0f);
    frame_.assign(stft_.win_len, 0.0f);
    re_.assign(nb, 0.0f);
    im_.assign(nb, 0.0f);
    x_.assign(2 * nb, 0.0f);
    for (auto& l : enc_) {
      l.hist.assign((l.p.g.kt - 1) * l.f_in * l.p.cin, 0.0f);
      l.out.assign(l.f_out * l.p.cout, 0.0f);
    }
    for (auto& l : dec_) {
      l.hist.assign((l.p.g.kt - 1) * l.f_in * l.p.cin, 0.0f);
      l.out.assign(l.f_out * l.p.cout, 0.0f);
    }
    const std::size_t fq = cfg_.dprnn_freq();
    for (auto& b : blocks_) {
      b.h.assign(fq * b.inter.hidden, 0.0f);
      b.c.assign(fq * b.inter.hidden, 0.0f);
    }
  }

  // Conv or deconv on one new frame, then the history shifts by one frame.
  // Taps older than the stream start stay null (the causal zero padding).
  void run_conv(ConvLayer& l, const float* in, bool transpose) {
    const std::size_t kt = l.p.g.kt, fr = l.f_in * l.p.cin;
    taps_.assign(kt, nullptr);
    for (std::size_t a = 0; a < kt; ++a) {
      // Conv tap a reads frame t - (kt-1-a); deconv tap a reads frame t - a.
      const std::size_t back = transpose ? a : kt - 1 - a;
      if (back == 0) {
        taps_[a] = in;
      } else if (back <= frames_) {
        taps_[a] = l.hist.data() + (kt - 1 - back) * fr;
      }
    }
    if (transpose)
      deconv_frame<float>(l.p, l.f_in, l.f_out, taps_, l.out.data());
    else
      conv_frame<float>(l.p, l.f_in, taps_, l.out.data());
    if (kt > 1) {
      std::copy(l.hist.begin() + static_cast<std::ptrdiff_t>(fr), l.hist.end(),
                l.hist.begin());
      std::copy(in, in + fr, l.hist.end() - static_cast<std::ptrdiff_t>(fr));
    }
    if (l.has_norm) {
      bn_infer_rows(l.out.data(), l.out.data(), l.f_out, l.p.cout, l.gamma,
                    l.beta, l.mean, l.var);
      prelu_rows(l.out.data(), l.out.data(), l.f_out, l.p.cout, l.alpha);
    }
  }

  void run_block(Block& b, std::vector<float>& h) {
    const std::size_t fq = cfg_.dprnn_freq(), c = cfg_.dprnn_channels();
    const std::size_t hi = b.intra_f.hidden, he = b.inter.hidden;
    tmp_.assign(fq * 2 * hi, 0.0f);
    bilstm_frame(b.intra_f, b.intra_b, h.data(), fq, tmp_.data(), scratch_);
    r_.assign(fq * c, 0.0f);
    b.intra_fc.apply(tmp_.data(), r_.data(), fq);
    iln_frame(r_.data(), r_.data(), fq * c, b.intra_g, b.intra_be);
    for (std::size_t i = 0; i < h.size(); ++i) h[i] += r_[i];

    tmp_.assign(fq * he, 0.0f);
    gates_.assign(4 * he, 0.0f);
    for (std::size_t j = 0; j < fq; ++j) {
      b.inter.step(h.data() + j * c, b.h.data() + j * he, b.c.data() + j * he,
                   gates_.data());
      std::copy_n(b.h.data() + j * he, he, tmp_.data() + j * he);
    }
    b.inter_fc.apply(tmp_.data(), r_.data(), fq);
    iln_frame(r_.data(), r_.data(), fq * c, b.inter_g, b.inter_be);
    for (std::size_t i = 0; i < h.size(); ++i) h[i] += r_[i];
  }

  // One hop: analysis, network, mask, synthesis, overlap-add, emission.
  void step(std::vector<float>& out) {
    const std::size_t nb = stft_.n_bins(), hop = stft_.hop;
    ft_.analyze(window_.data(), re_.data(), im_.data());
    for (std::size_t f = 0; f < nb; ++f) {
      x_[2 * f] = re_[f];
      x_[2 * f + 1] = im_[f];
    }
    cur_.resize(2 * nb);
    iln_frame(x_.data(), cur_.data(), 2 * nb, in_gamma_, in_beta_);

    for (auto& l : enc_) {
      run_conv(l, cur_.data(), false);
      cur_ = l.out;
    }
    for (auto& b : blocks_) run_block(b, cur_);
    for (std::size_t i = dec_.size(); i-- > 0;) {
      const ConvLayer& e = enc_[i];
      const std::size_t ca = cur_.size() / e.f_out, cb = e.p.cout;
      cat_.resize(e.f_out * (ca + cb));
      for (std::size_t r = 0; r < e.f_out; ++r) {
        std::copy_n(cur_.data() + r * ca, ca, cat_.data() + r * (ca + cb));
        std::copy_n(e.out.data() + r * cb, cb, cat_.data() + r * (ca + cb) + ca);
      }
      run_conv(dec_[i], cat_.data(), true);
      cur_ = dec_[i].out;
    }

    // S = X * M, then inverse transform and overlap-add.
    for (std::size_t f = 0; f < nb; ++f) {
      const float xr = x_[2 * f], xi = x_[2 * f + 1];
      const float mr = cur_[2 * f], mi = cur_[2 * f + 1];
      re_[f] = xr * mr - xi * mi;
      im_[f] = xr * mi + xi * mr;
    }
    ft_.synthesize(re_.data(), im_.data(), frame_.data());
    for (std::size_t k = 0; k < stft_.win_len; ++k) ola_[k] += frame_[k];

    if (have_held_) {
      out.insert(out.end(), held_.begin(), held_.end());
      samples_out_ += hop;
    }
    std::copy_n(ola_.begin(), hop, held_.begin());
    have_held_ = true;
    std::copy(ola_.begin() + static_cast<std::ptrdiff_t>(hop), ola_.end(), ola_.begin());
    std::fill(ola_.end() - static_cast<std::ptrdiff_t>(hop), ola_.end(), 0.0f);

    std::copy(window_.begin() + static_cast<std::ptrdiff_t>(hop), window_.end(),
              window_.begin());
    fill_ = stft_.win_len - hop;
    ++frames_;
  }

  std::shared_ptr<const ModelWeights<float>> w_;
  ModelConfig cfg_;
  StftConfig stft_;
  FrameTransform<float> ft_;

  std::vector<ConvLayer> enc_, dec_;
  std::vector<Block> blocks_;
  const float *in_gamma_ = nullptr, *in_beta_ = nullptr;

  std::vector<float> window_;  // the current analysis window
  std::size_t fill_ = 0;
  std::vector<float> ola_;     // overlap-add accumulator for the next 400 samples
  std::vector<float> held_;    // finished block awaiting emission
  bool have_held_ = false;

  std::size_t frames_ = 0, samples_in_ = 0, samples_out_ = 0;
  bool closed_ = false;

  // Per-frame scratch, reused.
  std::vector<float> frame_, re_, im_, x_, cur_, cat_, tmp_, r_, gates_, scratch_;
  std::vector<const float*> taps_;
};

inline StreamState stream_create(const ModelWeights<float>& w,
                                 const ModelConfig& cfg) {
  return StreamState(w, cfg);
}

inline std::vector<float> stream_push(StreamState& s, std::span<const float> chunk) {
  return s.push(chunk);
}

inline std::vector<float> stream_flush(StreamState& s) { return s.flush(); }

// Offline counterpart of a flushed stream: zero-pads to the last frame that
// touches real input, enhances, and truncates back to the input length.
inline Signal enhance_offline_padded(const ModelWeights<float>& w,
                                     const ModelConfig& cfg, const Signal& in,
                                     const StftConfig& stft = {}) {
  in.validate();
  if (in.size() == 0) return Signal{};
  const std::size_t last = (in.size() - 1) / stft.hop;
  Signal padded = in;
  padded.samples.resize(stft.length_for(last + 1), 0.0f);
  Signal out = enhance_offline(w, cfg, padded, stft);
  out.samples.resize(in.size());
  return out;
}

// Streams a whole signal through a fresh state in `chunk`-sample pushes.
inline Signal enhance_streaming(const ModelWeights<float>& w,
                                const ModelConfig& cfg, const Signal& in,
                                std::size_t chunk = 200) {
  in.validate();
  check(chunk > 0, "chunk must be positive");
  StreamState st(w, cfg);
  Signal out;
  std::span<const float> x(in.samples);
  for (std::size_t pos = 0; pos < x.size(); pos += chunk) {
    auto y = st.push(x.subspan(pos, std::min(chunk, x.size() - pos)));
    out.samples.insert(out.samples.end(), y.begin(), y.end());
  }
  auto tail = st.flush();
  out.samples.insert(out.samples.end(), tail.begin(), tail.end());
  return out;
}

}  // namespace dpcrn

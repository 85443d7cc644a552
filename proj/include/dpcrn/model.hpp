// Copyright 2026 The dpcrn Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "dpcrn/audio.hpp"
#include "dpcrn/config.hpp"
#include "dpcrn/layers.hpp"
#include "dpcrn/stft.hpp"
#include "dpcrn/tape.hpp"

namespace dpcrn {

template <typename T>
using BasicCrmMask = ComplexPlanes<T, MaskTag>;
using CrmMask = BasicCrmMask<float>;

enum class InitKind {
  kFanIn,       // uniform(-1/sqrt(fan_in), 1/sqrt(fan_in))
  kZero,
  kOne,
  kLstmBias,    // zero except forget gate = 1
  kPrelu,
};

struct ManifestEntry {
  std::string name;
  Shape shape;
  bool trainable = true;
  InitKind init = InitKind::kZero;
  std::size_t fan_in = 0;
};

// Canonical parameter list, in execution order. Decoder stage i mirrors
// encoder layer i; stage 0 is the linear 2-channel mask head.
inline std::vector<ManifestEntry> manifest(const ModelConfig& cfg) {
  cfg.validate();
  std::vector<ManifestEntry> m;
  auto add = [&](std::string name, Shape shape, InitKind init,
                 std::size_t fan_in = 0, bool trainable = true) {
    m.push_back({std::move(name), std::move(shape), trainable, init, fan_in});
  };
  auto bn_prelu = [&](const std::string& p, std::size_t c) {
    add(p + ".bn.gamma", {c}, InitKind::kOne);
    add(p + ".bn.beta", {c}, InitKind::kZero);
    add(p + ".bn.running_mean", {c}, InitKind::kZero, 0, false);
    add(p + ".bn.running_var", {c}, InitKind::kOne, 0, false);
    add(p + ".prelu.alpha", {c}, InitKind::kPrelu);
  };
  auto lstm = [&](const std::string& p, std::size_t d_in, std::size_t h) {
    add(p + ".w_ih", {4 * h, d_in}, InitKind::kFanIn, h);
    add(p + ".w_hh", {4 * h, h}, InitKind::kFanIn, h);
    add(p + ".bias", {4 * h}, InitKind::kLstmBias);
  };

  add("input_iln.gamma", {cfg.n_bins, 2}, InitKind::kOne);
  add("input_iln.beta", {cfg.n_bins, 2}, InitKind::kZero);
  for (std::size_t i = 0; i < cfg.layers(); ++i) {
    const std::string p = "enc" + std::to_string(i);
    const std::size_t ci = cfg.in_channels(i), co = cfg.enc_channels[i];
    const std::size_t kt = cfg.kernels[i].t, kf = cfg.kernels[i].f;
    add(p + ".conv.weight", {co, ci, kt, kf}, InitKind::kFanIn, ci * kt * kf);
    add(p + ".conv.bias", {co}, InitKind::kZero);
    bn_prelu(p, co);
  }
  const std::size_t c = cfg.dprnn_channels(), fq = cfg.dprnn_freq();
  const std::size_t hi = cfg.intra_hidden, he = cfg.inter_hidden;
  for (std::size_t k = 0; k < cfg.n_dprnn; ++k) {
    const std::string p = "dprnn" + std::to_string(k);
    lstm(p + ".intra_fwd", c, hi);
    lstm(p + ".intra_bwd", c, hi);
    add(p + ".intra_fc.weight", {c, 2 * hi}, InitKind::kFanIn, 2 * hi);
    add(p + ".intra_fc.bias", {c}, InitKind::kZero);
    add(p + ".intra_iln.gamma", {fq, c}, InitKind::kOne);
    add(p + ".intra_iln.beta", {fq, c}, InitKind::kZero);
    lstm(p + ".inter_lstm", c, he);
    add(p + ".inter_fc.weight", {c, he}, InitKind::kFanIn, he);
    add(p + ".inter_fc.bias", {c}, InitKind::kZero);
    add(p + ".inter_iln.gamma", {fq, c}, InitKind::kOne);
    add(p + ".inter_iln.beta", {fq, c}, InitKind::kZero);
  }
  for (std::size_t i = cfg.layers(); i-- > 0;) {
    const std::string p = "dec" + std::to_string(i);
    const std::size_t cin = 2 * cfg.enc_channels[i], cout = cfg.in_channels(i);
    const std::size_t kt = cfg.kernels[i].t, kf = cfg.kernels[i].f;
    add(p + ".deconv.weight", {cin, cout, kt, kf}, InitKind::kFanIn,
        cin * kt * kf);
    add(p + ".deconv.bias", {cout}, InitKind::kZero);
    if (i > 0) bn_prelu(p, cout);
  }
  return m;
}

// Ordered name -> tensor map. BN running statistics are stored but are not
// trainable.
template <typename T>
class ModelWeights {
 public:
  struct Entry {
    std::string name;
    Tensor<T> value;
    bool trainable = true;
  };

  void add(std::string name, Tensor<T> value, bool trainable = true) {
    if (index_.count(name)) fail("duplicate tensor name: " + name);
    index_[name] = entries_.size();
    entries_.push_back({std::move(name), std::move(value), trainable});
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  const Tensor<T>& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) fail("missing tensor: " + name);
    return entries_[it->second].value;
  }
  Tensor<T>& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) fail("missing tensor: " + name);
    return entries_[it->second].value;
  }

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }
  std::size_t size() const { return entries_.size(); }

  template <typename U>
  ModelWeights<U> cast() const {
    ModelWeights<U> out;
    for (const auto& e : entries_)
      out.add(e.name, e.value.template cast<U>(), e.trainable);
    return out;
  }

  friend bool operator==(const ModelWeights& a, const ModelWeights& b) {
    if (a.entries_.size() != b.entries_.size()) return false;
    for (std::size_t i = 0; i < a.entries_.size(); ++i)
      if (a.entries_[i].name != b.entries_[i].name ||
          !(a.entries_[i].value == b.entries_[i].value))
        return false;
    return true;
  }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Sum of element counts over trainable tensors.
template <typename T>
std::size_t param_count(const ModelWeights<T>& w) {
  std::size_t n = 0;
  for (const auto& e : w.entries())
    if (e.trainable) n += e.value.size();
  return n;
}

// Checks that `w` holds exactly the manifest of `cfg` with matching shapes.
template <typename T>
void validate_weights(const ModelWeights<T>& w, const ModelConfig& cfg) {
  const auto man = manifest(cfg);
  std::map<std::string, const ManifestEntry*> expected;
  for (const auto& e : man) expected[e.name] = &e;
  for (const auto& e : man) {
    if (!w.contains(e.name)) fail("missing tensor: " + e.name);
    const auto& t = w.at(e.name);
    if (t.shape() != e.shape)
      fail("tensor " + e.name + " has shape " + shape_str(t.shape()) +
           ", expected " + shape_str(e.shape));
  }
  for (const auto& e : w.entries())
    if (!expected.count(e.name)) fail("unexpected tensor: " + e.name);
  for (std::size_t i = 0; i < cfg.layers(); ++i)
    for (const std::string p : {"enc", "dec"}) {
      const std::string name = p + std::to_string(i) + ".bn.running_var";
      if (!w.contains(name)) continue;
      for (T v : w.at(name).vec())
        if (!(v >= T(0))) fail(name + " has negative entries");
    }
}

// Deterministic initialization in manifest order.
template <typename T = float>
ModelWeights<T> build(const ModelConfig& cfg, std::uint64_t init_seed) {
  std::mt19937_64 rng(init_seed);
  ModelWeights<T> w;
  for (const auto& e : manifest(cfg)) {
    Tensor<T> t(e.shape);
    switch (e.init) {
      case InitKind::kFanIn: {
        const double bound = 1.0 / std::sqrt(static_cast<double>(e.fan_in));
        for (auto& v : t.vec()) v = static_cast<T>(uniform(rng, -bound, bound));
        break;
      }
      case InitKind::kZero: break;
      case InitKind::kOne: t.fill(T(1)); break;
      case InitKind::kPrelu: t.fill(static_cast<T>(kPreluInit)); break;
      case InitKind::kLstmBias: {
        const std::size_t h = t.size() / 4;
        for (std::size_t k = h; k < 2 * h; ++k) t[k] = T(1);
        break;
      }
    }
    w.add(e.name, std::move(t), e.trainable);
  }
  return w;
}

// ---------------------------------------------------------------------------
// Forward pass

template <typename T>
Tensor<T> spectrogram_to_tensor(const BasicSpectrogram<T>& x) {
  auto t = Tensor<T>::tfc(x.frames, x.bins, 2);
  for (std::size_t i = 0; i < x.frames * x.bins; ++i) {
    t[2 * i] = x.real[i];
    t[2 * i + 1] = x.imag[i];
  }
  return t;
}

template <typename T>
BasicCrmMask<T> tensor_to_mask(const Tensor<T>& t) {
  BasicCrmMask<T> m(t.dim(0), t.dim(1));
  for (std::size_t i = 0; i < m.frames * m.bins; ++i) {
    m.real[i] = t[2 * i];
    m.imag[i] = t[2 * i + 1];
  }
  return m;
}

template <typename T>
Tensor<T> mask_to_tensor(const BasicCrmMask<T>& m) {
  auto t = Tensor<T>::tfc(m.frames, m.bins, 2);
  for (std::size_t i = 0; i < m.frames * m.bins; ++i) {
    t[2 * i] = m.real[i];
    t[2 * i + 1] = m.imag[i];
  }
  return t;
}

template <typename T>
struct ForwardResult {
  BasicCrmMask<T> mask;
  int mask_node = -1;  // tape id of the [T, bins, 2] mask tensor
  std::map<std::string, BnStats> bn_stats;  // train mode only, keyed by prefix
};

// Input iLN -> encoder (conv, BN, PReLU) -> DPRNN blocks -> decoder with
// concatenated skips -> linear (M_r, M_i).
template <typename T>
ForwardResult<T> forward(const ModelWeights<T>& w, const ModelConfig& cfg,
                         const BasicSpectrogram<T>& x,
                         GradTape<T>* tape = nullptr,
                         BnMode bn_mode = BnMode::kInfer) {
  x.validate();
  if (x.bins != cfg.n_bins)
    fail("spectrogram has " + std::to_string(x.bins) + " bins, model expects " +
         std::to_string(cfg.n_bins));
  check(x.frames > 0, "empty spectrogram");
  Graph<T> g(tape);
  ForwardResult<T> res;
  auto p = [&](const std::string& name) { return g.param(name, w.at(name)); };
  auto bn = [&](const Var<T>& v, const std::string& pre) {
    BnStats stats;
    auto out = g.batch_norm(v, p(pre + ".bn.gamma"), p(pre + ".bn.beta"),
                            g.param(pre + ".bn.running_mean",
                                    w.at(pre + ".bn.running_mean"), false),
                            g.param(pre + ".bn.running_var",
                                    w.at(pre + ".bn.running_var"), false),
                            bn_mode, &stats);
    if (bn_mode == BnMode::kTrain) res.bn_stats[pre] = std::move(stats);
    return g.prelu(out, p(pre + ".prelu.alpha"));
  };

  Var<T> h = g.input(spectrogram_to_tensor(x));
  h = g.iln(h, p("input_iln.gamma"), p("input_iln.beta"));

  const auto freqs = cfg.encoder_freqs();
  std::vector<Var<T>> skips;
  for (std::size_t i = 0; i < cfg.layers(); ++i) {
    const std::string pre = "enc" + std::to_string(i);
    h = g.conv(h, p(pre + ".conv.weight"), p(pre + ".conv.bias"), cfg.geom(i));
    h = bn(h, pre);
    skips.push_back(h);
  }

  for (std::size_t k = 0; k < cfg.n_dprnn; ++k) {
    const std::string pre = "dprnn" + std::to_string(k);
    Var<T> r = g.intra_bilstm(
        h, p(pre + ".intra_fwd.w_ih"), p(pre + ".intra_fwd.w_hh"),
        p(pre + ".intra_fwd.bias"), p(pre + ".intra_bwd.w_ih"),
        p(pre + ".intra_bwd.w_hh"), p(pre + ".intra_bwd.bias"));
    r = g.fc(r, p(pre + ".intra_fc.weight"), p(pre + ".intra_fc.bias"));
    r = g.iln(r, p(pre + ".intra_iln.gamma"), p(pre + ".intra_iln.beta"));
    h = g.add(h, r);

    r = g.inter_lstm(h, p(pre + ".inter_lstm.w_ih"), p(pre + ".inter_lstm.w_hh"),
                     p(pre + ".inter_lstm.bias"));
    r = g.fc(r, p(pre + ".inter_fc.weight"), p(pre + ".inter_fc.bias"));
    r = g.iln(r, p(pre + ".inter_iln.gamma"), p(pre + ".inter_iln.beta"));
    h = g.add(h, r);
  }

  for (std::size_t i = cfg.layers(); i-- > 0;) {
    const std::string pre = "dec" + std::to_string(i);
    h = g.concat(h, skips[i]);
    h = g.deconv(h, p(pre + ".deconv.weight"), p(pre + ".deconv.bias"),
                 cfg.geom(i), freqs[i]);
    if (i > 0) h = bn(h, pre);
  }

  if (tape) {
    tape->mark_output(h.node);
    res.mask_node = h.node;
  }
  res.mask = tensor_to_mask(*h);
  return res;
}

// Enhanced spectrogram S = X * M (complex, elementwise):
//   S_r = X_r M_r - X_i M_i,  S_i = X_r M_i + X_i M_r
template <typename T>
BasicSpectrogram<T> apply_mask(const BasicSpectrogram<T>& x,
                               const BasicCrmMask<T>& m) {
  if (!x.same_shape(m))
    fail("mask shape does not match spectrogram shape");
  BasicSpectrogram<T> s(x.frames, x.bins);
  for (std::size_t i = 0; i < x.real.size(); ++i) {
    const T xr = x.real[i], xi = x.imag[i], mr = m.real[i], mi = m.imag[i];
    s.real[i] = xr * mr - xi * mi;
    s.imag[i] = xr * mi + xi * mr;
  }
  return s;
}

// d(loss)/d(mask) from d(loss)/d(enhanced spectrogram).
template <typename T>
BasicCrmMask<T> apply_mask_backward(const BasicSpectrogram<T>& x,
                                    const BasicSpectrogram<T>& ds) {
  BasicCrmMask<T> dm(x.frames, x.bins);
  for (std::size_t i = 0; i < x.real.size(); ++i) {
    dm.real[i] = ds.real[i] * x.real[i] + ds.imag[i] * x.imag[i];
    dm.imag[i] = ds.imag[i] * x.real[i] - ds.real[i] * x.imag[i];
  }
  return dm;
}

// analyze -> forward -> apply_mask -> synthesize.
inline Signal enhance_offline(const ModelWeights<float>& w,
                              const ModelConfig& cfg, const Signal& s,
                              const StftConfig& stft = {}) {
  s.validate();
  if (s.size() < stft.win_len)
    fail("signal shorter than one window (" + std::to_string(s.size()) + ")");
  Spectrogram x = analyze(s, stft);
  auto res = forward(w, cfg, x);
  return synthesize_signal(apply_mask(x, res.mask), stft);
}

}  // namespace dpcrn

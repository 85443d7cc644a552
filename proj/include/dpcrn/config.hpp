// Copyright 2026 The dpcrn Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "dpcrn/common.hpp"
#include "dpcrn/layers.hpp"

namespace dpcrn {

// Plain `key=value` text, one pair per line, '#' comments.
class KeyValues {
 public:
  static KeyValues parse(const std::string& text) {
    KeyValues kv;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (auto hash = line.find('#'); hash != std::string::npos)
        line.erase(hash);
      line = trim(line);
      if (line.empty()) continue;
      auto eq = line.find('=');
      if (eq == std::string::npos)
        fail("line " + std::to_string(lineno) + ": expected key=value");
      std::string key = trim(line.substr(0, eq));
      if (kv.values_.count(key)) fail("duplicate key: " + key);
      kv.values_[key] = trim(line.substr(eq + 1));
      kv.order_.push_back(key);
    }
    return kv;
  }

  static KeyValues load(const std::string& path) {
    std::ifstream f(path);
    if (!f) fail(ErrorKind::kIo, "cannot open " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse(ss.str());
  }

  bool has(const std::string& k) const { return values_.count(k) != 0; }

  const std::string& get(const std::string& k) const {
    auto it = values_.find(k);
    if (it == values_.end()) fail("missing key: " + k);
    used_.insert(k);
    return it->second;
  }

  double get_double(const std::string& k) const {
    const std::string& v = get(k);
    try {
      std::size_t pos = 0;
      double d = std::stod(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return d;
    } catch (const std::exception&) {
      fail("key " + k + ": not a number: " + v);
    }
  }

  std::size_t get_size(const std::string& k) const {
    const double d = get_double(k);
    if (d < 0 || d != static_cast<double>(static_cast<std::size_t>(d)))
      fail("key " + k + ": expected a non-negative integer");
    return static_cast<std::size_t>(d);
  }

  // Keys present but never read.
  std::vector<std::string> unused() const {
    std::vector<std::string> out;
    for (const auto& k : order_)
      if (!used_.count(k)) out.push_back(k);
    return out;
  }

  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

 private:
  std::map<std::string, std::string> values_;
  std::vector<std::string> order_;
  mutable std::set<std::string> used_;
};

enum class Variant { kDpcrn1, kDpcrn2, kDpcrn3 };

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::kDpcrn1: return "DPCRN-1";
    case Variant::kDpcrn2: return "DPCRN-2";
    case Variant::kDpcrn3: return "DPCRN-3";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  if (s == "DPCRN-1") return Variant::kDpcrn1;
  if (s == "DPCRN-2") return Variant::kDpcrn2;
  if (s == "DPCRN-3") return Variant::kDpcrn3;
  fail("unknown variant: " + s);
}

struct FreqTime {
  std::size_t f = 1, t = 1;
  friend bool operator==(const FreqTime&, const FreqTime&) = default;
};

struct FreqPad {
  std::size_t lo = 0, hi = 0;
  friend bool operator==(const FreqPad&, const FreqPad&) = default;
};

struct ModelConfig {
  Variant variant = Variant::kDpcrn1;
  std::size_t n_bins = 201;
  std::vector<std::size_t> enc_channels{32, 32, 32, 64, 128};
  std::vector<FreqTime> kernels{{5, 2}, {3, 2}, {3, 2}, {3, 2}, {3, 2}};
  std::vector<FreqTime> strides{{2, 1}, {2, 1}, {1, 1}, {1, 1}, {1, 1}};
  std::vector<FreqPad> freq_pads{{1, 1}, {1, 0}, {1, 1}, {1, 1}, {1, 1}};
  std::size_t n_dprnn = 2;
  std::size_t intra_hidden = 64;  // per direction
  std::size_t inter_hidden = 128;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;

  static ModelConfig for_variant(Variant v) {
    ModelConfig c;
    c.variant = v;
    if (v == Variant::kDpcrn3) {
      c.strides = {{2, 1}, {2, 1}, {2, 1}, {1, 1}, {1, 1}};
      c.intra_hidden *= 2;
    }
    return c;
  }

  std::size_t layers() const { return enc_channels.size(); }
  std::size_t dprnn_channels() const { return enc_channels.back(); }

  ConvGeom geom(std::size_t i) const {
    return ConvGeom{kernels[i].t, kernels[i].f, strides[i].t, strides[i].f,
                    freq_pads[i].lo, freq_pads[i].hi};
  }

  std::size_t in_channels(std::size_t i) const {
    return i == 0 ? 2 : enc_channels[i - 1];
  }

  // Frequency size entering each encoder layer, plus the DPRNN size last.
  std::vector<std::size_t> encoder_freqs() const {
    std::vector<std::size_t> f{n_bins};
    for (std::size_t i = 0; i < layers(); ++i)
      f.push_back(geom(i).out_freq(f.back()));
    return f;
  }

  std::size_t dprnn_freq() const { return encoder_freqs().back(); }

  // The frequency length the DPRNN is expected to see for each variant.
  std::size_t expected_dprnn_freq() const {
    return variant == Variant::kDpcrn3 ? 25 : 50;
  }

  void validate() const {
    const std::size_t n = layers();
    check(n > 0, "config has no encoder layers");
    check(kernels.size() == n && strides.size() == n && freq_pads.size() == n,
          "enc_channels, kernels, strides and freq_pads must have equal length");
    check(n_bins > 0, "n_bins must be positive");
    check(intra_hidden > 0 && inter_hidden > 0, "rnn widths must be positive");
    for (std::size_t i = 0; i < n; ++i) {
      check(enc_channels[i] > 0, "channel counts must be positive");
      check(kernels[i].f > 0 && kernels[i].t > 0, "kernel sizes must be positive");
      check(strides[i].f > 0, "frequency stride must be positive");
      // One new frame per hop everywhere; streaming relies on it.
      check(strides[i].t == 1, "time stride must be 1 (streaming contract)");
    }
    std::vector<std::size_t> f{n_bins};
    for (std::size_t i = 0; i < n; ++i) {
      check(f.back() + freq_pads[i].lo + freq_pads[i].hi >= kernels[i].f,
            "layer " + std::to_string(i) + " kernel exceeds padded frequency axis");
      f.push_back(geom(i).out_freq(f.back()));
    }
    if (n_bins == 201 && n == 5 && kernels[0].f == 5)
      check(f.back() == expected_dprnn_freq(),
            "DPRNN frequency length " + std::to_string(f.back()) + ", expected " +
                std::to_string(expected_dprnn_freq()) + " for " +
                variant_name(variant));
  }

  std::string to_text() const {
    std::ostringstream os;
    os << "variant=" << variant_name(variant) << "\n";
    os << "n_bins=" << n_bins << "\n";
    os << "enc_channels=";
    for (std::size_t i = 0; i < layers(); ++i) os << (i ? "," : "") << enc_channels[i];
    os << "\nkernels=";
    for (std::size_t i = 0; i < kernels.size(); ++i)
      os << (i ? "," : "") << kernels[i].f << "x" << kernels[i].t;
    os << "\nstrides=";
    for (std::size_t i = 0; i < strides.size(); ++i)
      os << (i ? "," : "") << strides[i].f << "x" << strides[i].t;
    os << "\nfreq_pads=";
    for (std::size_t i = 0; i < freq_pads.size(); ++i)
      os << (i ? "," : "") << freq_pads[i].lo << ":" << freq_pads[i].hi;
    os << "\nn_dprnn=" << n_dprnn << "\n";
    os << "intra_hidden=" << intra_hidden << "\n";
    os << "inter_hidden=" << inter_hidden << "\n";
    return os.str();
  }

  // Starts from the variant's defaults and overrides whatever keys exist.
  static ModelConfig from_kv(const KeyValues& kv) {
    ModelConfig c = for_variant(kv.has("variant") ? parse_variant(kv.get("variant"))
                                                  : Variant::kDpcrn1);
    if (kv.has("n_bins")) c.n_bins = kv.get_size("n_bins");
    if (kv.has("enc_channels")) c.enc_channels = parse_list(kv.get("enc_channels"));
    if (kv.has("kernels")) c.kernels = parse_pairs<FreqTime>(kv.get("kernels"), 'x');
    if (kv.has("strides")) c.strides = parse_pairs<FreqTime>(kv.get("strides"), 'x');
    if (kv.has("freq_pads"))
      c.freq_pads = parse_pairs<FreqPad>(kv.get("freq_pads"), ':');
    if (kv.has("n_dprnn")) c.n_dprnn = kv.get_size("n_dprnn");
    if (kv.has("intra_hidden")) c.intra_hidden = kv.get_size("intra_hidden");
    if (kv.has("inter_hidden")) c.inter_hidden = kv.get_size("inter_hidden");
    c.validate();
    return c;
  }

  static ModelConfig from_text(const std::string& text) {
    return from_kv(KeyValues::parse(text));
  }

 private:
  static std::size_t parse_num(const std::string& s) {
    try {
      std::size_t pos = 0;
      unsigned long v = std::stoul(s, &pos);
      if (pos != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      fail("bad integer in config: '" + s + "'");
    }
  }

  static std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(s);
    while (std::getline(in, item, sep)) out.push_back(KeyValues::trim(item));
    return out;
  }

  static std::vector<std::size_t> parse_list(const std::string& s) {
    std::vector<std::size_t> out;
    for (const auto& p : split(s, ',')) out.push_back(parse_num(p));
    return out;
  }

  template <typename P>
  static std::vector<P> parse_pairs(const std::string& s, char sep) {
    std::vector<P> out;
    for (const auto& item : split(s, ',')) {
      auto parts = split(item, sep);
      if (parts.size() != 2) fail("bad pair in config: '" + item + "'");
      out.push_back(P{parse_num(parts[0]), parse_num(parts[1])});
    }
    return out;
  }
};

}  // namespace dpcrn

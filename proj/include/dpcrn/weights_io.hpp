// Copyright 2026 The dpcrn Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "dpcrn/audio.hpp"
#include "dpcrn/model.hpp"

// DPCW weight file, all integers little-endian:
//
//   "DPCW"                     magic
//   u32  version               (1)
//   u32  header_len, header    text: ModelConfig key=value lines followed by
//                              the frozen front-end/layout conventions
//   u32  tensor_count
//   per tensor:
//     u16 name_len, name
//     u8  dtype                (1 = float32)
//     u8  trainable            (0/1)
//     u8  rank, u32 dims[rank]
//     u64 offset               byte offset into the payload
//   u64  payload_len
//   payload                    float32 tensors, row-major
//   u32  crc32(payload)
//
// See docs/weight_format.md.

namespace dpcrn {

inline constexpr std::uint32_t kWeightFileVersion = 1;

// Conventions that the weights are only meaningful under.
inline std::string frozen_conventions() {
  return "stft=400/200/400\n"
         "window=sin(pi*(k+0.5)/n)\n"
         "fft_norm=forward:1,inverse:1/n\n"
         "lstm_gate_order=i,f,g,o\n"
         "conv_layout=out,in,kt,kf\n"
         "deconv_layout=in,out,kt,kf\n";
}

inline std::uint32_t crc32_of(const unsigned char* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const uInt chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, data, chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

namespace detail {

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(std::span<const unsigned char> buf) : buf_(buf) {}

  const unsigned char* take(std::size_t n) {
    if (pos_ + n > buf_.size() || pos_ + n < pos_) fail("corrupt weight file");
    const unsigned char* p = buf_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::uint8_t u8() { return *take(1); }
  std::uint16_t u16() { return read_u16(take(2)); }
  std::uint32_t u32() { return read_u32(take(4)); }
  std::uint64_t u64() {
    const unsigned char* p = take(8);
    return std::uint64_t(read_u32(p)) | std::uint64_t(read_u32(p + 4)) << 32;
  }
  std::string str(std::size_t n) {
    const unsigned char* p = take(n);
    return std::string(reinterpret_cast<const char*>(p), n);
  }
  std::size_t remaining() const { return buf_.size() - pos_; }

 private:
  std::span<const unsigned char> buf_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_weights(const ModelWeights<float>& w,
                                  const ModelConfig& cfg) {
  validate_weights(w, cfg);
  const std::string header = cfg.to_text() + frozen_conventions();
  std::string out = "DPCW";
  detail::put_u32(out, kWeightFileVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(header.size()));
  out += header;
  detail::put_u32(out, static_cast<std::uint32_t>(w.size()));
  std::uint64_t offset = 0;
  for (const auto& e : w.entries()) {
    detail::put_u16(out, static_cast<std::uint16_t>(e.name.size()));
    out += e.name;
    out.push_back(1);
    out.push_back(e.trainable ? 1 : 0);
    out.push_back(static_cast<char>(e.value.rank()));
    for (std::size_t d : e.value.shape())
      detail::put_u32(out, static_cast<std::uint32_t>(d));
    detail::put_u64(out, offset);
    offset += 4 * e.value.size();
  }
  detail::put_u64(out, offset);
  const std::size_t payload_start = out.size();
  for (const auto& e : w.entries())
    for (float v : e.value.vec()) {
      std::uint32_t bits;
      std::memcpy(&bits, &v, 4);
      detail::put_u32(out, bits);
    }
  const auto* payload =
      reinterpret_cast<const unsigned char*>(out.data()) + payload_start;
  detail::put_u32(out, crc32_of(payload, out.size() - payload_start));
  return out;
}

inline std::pair<ModelWeights<float>, ModelConfig> decode_weights(
    std::span<const unsigned char> buf) {
  detail::Reader r(buf);
  if (buf.size() < 4 || std::memcmp(r.take(4), "DPCW", 4) != 0)
    fail("not a DPCW weight file");
  const std::uint32_t version = r.u32();
  if (version != kWeightFileVersion)
    fail("unknown weight file version " + std::to_string(version));
  const std::string header = r.str(r.u32());
  KeyValues kv = KeyValues::parse(header);
  ModelConfig cfg = ModelConfig::from_kv(kv);

  struct Dir {
    std::string name;
    bool trainable;
    Shape shape;
    std::uint64_t offset;
  };
  std::vector<Dir> dir(r.u32());
  for (auto& d : dir) {
    d.name = r.str(r.u16());
    if (r.u8() != 1) fail("unsupported dtype for tensor " + d.name);
    d.trainable = r.u8() != 0;
    d.shape.resize(r.u8());
    for (auto& s : d.shape) s = r.u32();
    d.offset = r.u64();
  }
  const std::uint64_t payload_len = r.u64();
  if (payload_len + 4 != r.remaining()) fail("corrupt weight file");
  const unsigned char* payload = r.take(payload_len);
  const std::uint32_t crc = r.u32();
  if (crc != crc32_of(payload, payload_len))
    fail("weight file checksum mismatch");

  ModelWeights<float> w;
  for (const auto& d : dir) {
    const std::uint64_t bytes = 4 * shape_size(d.shape);
    if (d.offset + bytes > payload_len) fail("corrupt weight file");
    Tensor<float> t(d.shape);
    const unsigned char* p = payload + d.offset;
    for (std::size_t i = 0; i < t.size(); ++i) {
      std::uint32_t bits = detail::read_u32(p + 4 * i);
      std::memcpy(&t[i], &bits, 4);
    }
    w.add(d.name, std::move(t), d.trainable);
  }
  validate_weights(w, cfg);
  return {std::move(w), std::move(cfg)};
}

inline void save_weights(const ModelWeights<float>& w, const ModelConfig& cfg,
                         const std::string& path) {
  const std::string bytes = encode_weights(w, cfg);
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::kIo, "cannot write " + path);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) fail(ErrorKind::kIo, "write failed for " + path);
}

inline std::pair<ModelWeights<float>, ModelConfig> load_weights(
    const std::string& path) {
  auto buf = detail::slurp(path);
  return decode_weights(buf);
}

}  // namespace dpcrn

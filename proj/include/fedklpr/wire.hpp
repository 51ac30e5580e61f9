// Copyright 2026 The FedKLPR Simulator Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Sparse model message codec and communication-cost accounting.
//
// Layout, all integers and floats little-endian:
//
//   "FKLP"            magic, 4 bytes
//   version           u16 (= 1)
//   client_id         u16
//   round             u16
//   pruning_ratio     f32
//   klaw_raw          f32
//   layer_count       u16
//   per layer:
//     name_len        u16, followed by name_len bytes of UTF-8
//     rank            u8, followed by rank x u32 dims
//     mask            ceil(n / 8) bytes, bit j of the layer is
//                     (byte j/8 >> (j%8)) & 1; padding bits are zero
//     nonzero_count   u32, equal to the mask popcount
//     values          nonzero_count x f32, the kept values in index order
//
// The layout has no prunable flag; decode marks layers of rank >= 2 as
// prunable, matching how the network names weights and biases.

#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include "fedklpr/agg.hpp"
#include "fedklpr/error.hpp"
#include "fedklpr/params.hpp"

namespace fedklpr::wire {

inline constexpr char kMagic[4] = {'F', 'K', 'L', 'P'};
inline constexpr std::uint16_t kVersion = 1;
inline constexpr std::size_t kHeaderBytes = 4 + 2 + 2 + 2 + 4 + 4 + 2;

namespace detail {

class Writer {
 public:
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    out_.insert(out_.end(), p, p + n);
  }
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) {
    out_.push_back(static_cast<std::uint8_t>(v));
    out_.push_back(static_cast<std::uint8_t>(v >> 8));
  }
  void u32(std::uint32_t v) {
    for (int s = 0; s < 32; s += 8) out_.push_back(static_cast<std::uint8_t>(v >> s));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  std::size_t remaining() const { return in_.size() - pos_; }

  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    if (n > remaining())
      throw Error(ErrorCode::kTruncated, std::string("message ends inside ") + what);
    auto s = in_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint8_t u8(const char* what) { return take(1, what)[0]; }
  std::uint16_t u16(const char* what) {
    auto b = take(2, what);
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
  }
  std::uint32_t u32(const char* what) {
    auto b = take(4, what);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) |
           (static_cast<std::uint32_t>(b[3]) << 24);
  }
  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

inline std::size_t mask_bytes(std::size_t n) { return (n + 7) / 8; }

inline void check_ratio(const ClientReport& report) {
  const std::size_t prunable = prunable_count(report.mask);
  if (prunable == 0) {
    if (report.pruning_ratio != 0.0f)
      throw Error(ErrorCode::kRatioMaskInconsistent,
                  "nonzero pruning ratio on a model without prunable layers");
    return;
  }
  const double actual = pruning_ratio(report.mask);
  if (!(std::fabs(static_cast<double>(report.pruning_ratio) - actual) <=
        1.0 / static_cast<double>(prunable)))
    throw Error(ErrorCode::kRatioMaskInconsistent,
                "header pruning ratio disagrees with mask popcount");
}

}  // namespace detail

// Bytes of one layer's mask bitmap plus its packed kept values.
inline std::size_t layer_body_bytes(std::size_t n, std::size_t kept) {
  return detail::mask_bytes(n) + 4 * kept;
}

inline std::size_t layer_meta_bytes(const ParamLayer& layer) {
  return 2 + layer.name.size() + 1 + 4 * layer.shape.size() + 4;
}

inline std::vector<std::uint8_t> encode(const ClientReport& report) {
  require_same_structure(report.model, report.mask, "wire::encode");
  detail::check_ratio(report);
  if (report.model.layers.size() > 0xFFFF)
    throw Error(ErrorCode::kMalformed, "too many layers for a u16 count");

  detail::Writer w;
  w.bytes(kMagic, 4);
  w.u16(kVersion);
  w.u16(report.client_id);
  w.u16(report.round);
  w.f32(report.pruning_ratio);
  w.f32(report.klaw_raw);
  w.u16(static_cast<std::uint16_t>(report.model.layers.size()));
  for (std::size_t li = 0; li < report.model.layers.size(); ++li) {
    const auto& layer = report.model.layers[li];
    const auto& bits = report.mask.layers[li].bits;
    if (layer.name.size() > 0xFFFF || layer.shape.size() > 0xFF)
      throw Error(ErrorCode::kMalformed, "layer name or rank too large: " + layer.name);
    if (shape_size(layer.shape) != layer.size())
      throw Error(ErrorCode::kStructuralMismatch,
                  "layer shape disagrees with value count: " + layer.name);
    w.u16(static_cast<std::uint16_t>(layer.name.size()));
    w.bytes(layer.name.data(), layer.name.size());
    w.u8(static_cast<std::uint8_t>(layer.shape.size()));
    for (auto d : layer.shape) w.u32(d);
    std::vector<std::uint8_t> packed(detail::mask_bytes(bits.size()), 0);
    std::uint32_t kept = 0;
    for (std::size_t j = 0; j < bits.size(); ++j) {
      if (!bits[j]) continue;
      packed[j / 8] |= static_cast<std::uint8_t>(1u << (j % 8));
      ++kept;
    }
    w.bytes(packed.data(), packed.size());
    w.u32(kept);
    for (std::size_t j = 0; j < bits.size(); ++j)
      if (bits[j]) w.f32(layer.values[j]);
  }
  return w.take();
}

// Exact inverse of encode. dataset_size is not part of the message and comes
// back as 0.
inline ClientReport decode(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw Error(ErrorCode::kBadMagic, "message does not start with FKLP");
  detail::Reader r(bytes.subspan(4));
  const std::uint16_t version = r.u16("version");
  if (version != kVersion)
    throw Error(ErrorCode::kVersionMismatch,
                "unsupported message version " + std::to_string(version));
  ClientReport out;
  out.client_id = r.u16("client_id");
  out.round = r.u16("round");
  out.pruning_ratio = r.f32("pruning_ratio");
  out.klaw_raw = r.f32("klaw_raw");
  const std::uint16_t layer_count = r.u16("layer_count");
  for (std::uint16_t li = 0; li < layer_count; ++li) {
    ParamLayer layer;
    MaskLayer mask;
    const std::uint16_t name_len = r.u16("layer name length");
    auto name = r.take(name_len, "layer name");
    layer.name.assign(name.begin(), name.end());
    const std::uint8_t rank = r.u8("layer rank");
    std::size_t n = 1;
    for (std::uint8_t d = 0; d < rank; ++d) {
      const std::uint32_t dim = r.u32("layer dims");
      layer.shape.push_back(dim);
      // The mask alone needs n/8 bytes, so anything larger cannot be real.
      if (dim != 0 && n > (r.remaining() * 8 + 8) / dim)
        throw Error(ErrorCode::kTruncated,
                    "layer " + layer.name + " declares more values than remain");
      n *= dim;
    }
    auto packed = r.take(detail::mask_bytes(n), "mask bitmap");
    mask.bits.resize(n);
    std::size_t popcount = 0;
    for (std::size_t j = 0; j < n; ++j) {
      mask.bits[j] = (packed[j / 8] >> (j % 8)) & 1u;
      popcount += mask.bits[j];
    }
    if (n % 8 != 0 && (packed.back() >> (n % 8)) != 0)
      throw Error(ErrorCode::kMalformed, "nonzero padding bits in mask of " + layer.name);
    const std::uint32_t nonzero = r.u32("nonzero count");
    if (nonzero != popcount)
      throw Error(ErrorCode::kPopcountMismatch,
                  "layer " + layer.name + " declares " + std::to_string(nonzero) +
                      " values but its mask keeps " + std::to_string(popcount));
    auto raw = r.take(4 * static_cast<std::size_t>(nonzero), "value block");
    layer.values.assign(n, 0.0f);
    std::size_t k = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (!mask.bits[j]) continue;
      const std::uint8_t* b = raw.data() + 4 * k++;
      const std::uint32_t u = static_cast<std::uint32_t>(b[0]) |
                              (static_cast<std::uint32_t>(b[1]) << 8) |
                              (static_cast<std::uint32_t>(b[2]) << 16) |
                              (static_cast<std::uint32_t>(b[3]) << 24);
      layer.values[j] = std::bit_cast<float>(u);
    }
    layer.prunable = rank >= 2;
    mask.name = layer.name;
    mask.prunable = layer.prunable;
    out.model.layers.push_back(std::move(layer));
    out.mask.layers.push_back(std::move(mask));
  }
  if (r.remaining() != 0)
    throw Error(ErrorCode::kMalformed, "trailing bytes after last layer");
  return out;
}

// -- cost accounting ---------------------------------------------------------

// Size of encode(report) without building it.
inline std::size_t encoded_size(const ParamVector& structure, const PruneMask& mask) {
  require_same_structure(structure, mask, "wire::encoded_size");
  std::size_t bytes = kHeaderBytes;
  for (std::size_t li = 0; li < structure.layers.size(); ++li) {
    std::size_t kept = 0;
    for (auto b : mask.layers[li].bits) kept += b;
    bytes += layer_meta_bytes(structure.layers[li]) +
             layer_body_bytes(structure.layers[li].size(), kept);
  }
  return bytes;
}

// A dense broadcast of the model: same header and layer metadata, all values,
// no mask or count.
inline std::size_t dense_message_bytes(const ParamVector& structure) {
  std::size_t bytes = kHeaderBytes;
  for (const auto& l : structure.layers)
    bytes += 2 + l.name.size() + 1 + 4 * l.shape.size() + 4 * l.size();
  return bytes;
}

struct TrafficTotals {
  std::uint64_t upload = 0;
  std::uint64_t download = 0;
  std::uint64_t total() const { return upload + download; }
};

// Traffic of one client-round: sparse upload, dense download.
inline TrafficTotals round_traffic(const ParamVector& structure,
                                   const PruneMask& mask) {
  return {encoded_size(structure, mask), dense_message_bytes(structure)};
}

// Relative saving of `actual` against `baseline`; negative when larger.
inline double reduction(std::uint64_t actual, std::uint64_t baseline) {
  return baseline == 0 ? 0.0
                       : 1.0 - static_cast<double>(actual) / static_cast<double>(baseline);
}

}  // namespace fedklpr::wire

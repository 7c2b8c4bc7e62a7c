// Copyright 2026 The tgrow Authors
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

// .tgrw checkpoint format, bit-exact by construction:
//
//   bytes 0..3   magic "TGRW"
//   bytes 4..7   version, u32 little-endian (currently 1)
//   bytes 8..15  header_len, u64 little-endian
//   then         UTF-8 JSON header: {"config": {...}, "tensors": [...]}
//   then         payload: raw little-endian f64, row-major, directory order
//
// The JSON is space-padded to a multiple of 8 so the payload starts 8-byte
// aligned; directory offsets are payload-relative, ascending, 8-byte aligned.
// Tensors are laid out in the canonical for_each_tensor order, which makes
// identical models produce byte-identical files.

#pragma once

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "tgrow/model.hpp"

namespace tgrow::checkpoint {

inline constexpr char kMagic[4] = {'T', 'G', 'R', 'W'};
inline constexpr std::uint32_t kVersion = 1;

/// Malformed or unreadable checkpoint/plan/config data. Distinct from
/// std::invalid_argument, which marks domain errors on well-formed data.
class FormatError : public std::runtime_error {
 public:
  explicit FormatError(const std::string& why) : std::runtime_error(why) {}
};

inline std::string_view activation_name(Activation a) {
  return a == Activation::Relu ? "relu" : "gelu";
}

inline Activation activation_from_name(const std::string& name) {
  if (name == "relu") return Activation::Relu;
  if (name == "gelu") return Activation::Gelu;
  throw FormatError("unknown activation '" + name + "' (expected relu|gelu)");
}

inline nlohmann::json config_to_json(const ModelConfig& c) {
  return nlohmann::json{
      {"num_layers", c.num_layers}, {"hidden", c.hidden},
      {"mlp_inner", c.mlp_inner},   {"num_heads", c.num_heads},
      {"key_dim", c.key_dim},       {"value_dim", c.value_dim},
      {"out_dim", c.out_dim},       {"max_seq", c.max_seq},
      {"vocab", c.vocab},           {"activation", std::string(activation_name(c.activation))},
  };
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
  try {
    ModelConfig c;
    c.num_layers = j.at("num_layers").get<std::size_t>();
    c.hidden = j.at("hidden").get<std::size_t>();
    c.mlp_inner = j.at("mlp_inner").get<std::size_t>();
    c.num_heads = j.at("num_heads").get<std::size_t>();
    c.key_dim = j.at("key_dim").get<std::size_t>();
    c.value_dim = j.at("value_dim").get<std::size_t>();
    c.out_dim = j.at("out_dim").get<std::size_t>();
    c.max_seq = j.at("max_seq").get<std::size_t>();
    c.vocab = j.at("vocab").get<std::size_t>();
    c.activation = activation_from_name(j.at("activation").get<std::string>());
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad config object: ") + e.what());
  }
}

namespace detail {

static_assert(sizeof(double) == 8 && std::numeric_limits<double>::is_iec559);

inline void put_u32_le(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64_le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint32_t get_u32_le(const unsigned char* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}

inline std::uint64_t get_u64_le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

inline void put_f64_le(std::string& out, double d) {
  put_u64_le(out, std::bit_cast<std::uint64_t>(d));
}

inline double get_f64_le(const unsigned char* p) {
  return std::bit_cast<double>(get_u64_le(p));
}

}  // namespace detail

/// Writes the checkpoint atomically (temp file in place, then rename).
/// Throws std::invalid_argument if the model fails validate, FormatError on
/// I/O trouble.
inline void save(const ModelConfig& config, const ModelParams& params, const std::string& path) {
  auto errs = validate(params, config);
  if (!errs.empty())
    throw std::invalid_argument("save: model fails validation: " + errs.front());

  nlohmann::json dir = nlohmann::json::array();
  std::uint64_t offset = 0;
  const ModelParams& cp = params;
  for_each_tensor(cp, [&](const std::string& name, const Matrix& m) {
    dir.push_back({{"name", name},
                   {"rows", m.rows()},
                   {"cols", m.cols()},
                   {"offset_bytes", offset}});
    offset += m.size() * sizeof(double);
  });
  nlohmann::json header{{"config", config_to_json(config)}, {"tensors", dir}};
  std::string htext = header.dump();
  while ((16 + htext.size()) % 8 != 0) htext.push_back(' ');  // align the payload

  std::string blob;
  blob.reserve(16 + htext.size() + offset);
  blob.append(kMagic, 4);
  detail::put_u32_le(blob, kVersion);
  detail::put_u64_le(blob, htext.size());
  blob += htext;
  for_each_tensor(cp, [&](const std::string&, const Matrix& m) {
    for (std::size_t i = 0; i < m.size(); ++i) detail::put_f64_le(blob, m.data()[i]);
  });

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out.good()) throw FormatError("save: cannot open " + tmp);
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!out.good()) throw FormatError("save: write failed for " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw FormatError("save: rename to " + path + " failed");
}

inline void save(const Model& m, const std::string& path) { save(m.config, m.params, path); }

inline Model load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in.good()) throw FormatError("load: cannot open " + path);
  std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto* bytes = reinterpret_cast<const unsigned char*>(blob.data());

  if (blob.size() < 16) throw FormatError("load: file too short for header");
  if (std::memcmp(blob.data(), kMagic, 4) != 0) throw FormatError("load: bad magic");
  const std::uint32_t version = detail::get_u32_le(bytes + 4);
  if (version != kVersion)
    throw FormatError("load: unsupported version " + std::to_string(version));
  const std::uint64_t header_len = detail::get_u64_le(bytes + 8);
  if (16 + header_len > blob.size()) throw FormatError("load: truncated header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(blob.substr(16, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("load: header is not valid JSON: ") + e.what());
  }
  if (!header.contains("config") || !header.contains("tensors"))
    throw FormatError("load: header missing config or tensors");
  ModelConfig config = config_from_json(header.at("config"));
  auto cfg_errs = validate_config(config);
  if (!cfg_errs.empty()) throw FormatError("load: " + cfg_errs.front());

  const char* payload = blob.data() + 16 + header_len;
  const std::uint64_t payload_len = blob.size() - 16 - header_len;

  Model model{config, zero_params(config)};
  std::map<std::string, Matrix*> slots;
  for_each_tensor(model.params, [&](const std::string& name, Matrix& m) { slots[name] = &m; });

  std::uint64_t expected_offset = 0;
  std::size_t seen = 0;
  try {
    for (const auto& entry : header.at("tensors")) {
      const std::string name = entry.at("name").get<std::string>();
      const auto rows = entry.at("rows").get<std::size_t>();
      const auto cols = entry.at("cols").get<std::size_t>();
      const auto offset = entry.at("offset_bytes").get<std::uint64_t>();
      auto it = slots.find(name);
      if (it == slots.end() || it->second == nullptr)
        throw FormatError("load: unexpected or duplicate tensor '" + name + "'");
      Matrix& m = *it->second;
      if (rows != m.rows() || cols != m.cols())
        throw FormatError("load: tensor '" + name + "' shape " + std::to_string(rows) + "x" +
                          std::to_string(cols) + " conflicts with config (" +
                          std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + ")");
      if (offset < expected_offset || offset % 8 != 0)
        throw FormatError("load: tensor '" + name + "' offset " + std::to_string(offset) +
                          " overlaps, descends, or is misaligned");
      const std::uint64_t nbytes = m.size() * sizeof(double);
      if (offset + nbytes > payload_len)
        throw FormatError("load: payload truncated inside tensor '" + name + "'");
      const auto* src = reinterpret_cast<const unsigned char*>(payload + offset);
      for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = detail::get_f64_le(src + 8 * i);
      expected_offset = offset + nbytes;
      it->second = nullptr;  // each tensor appears exactly once
      ++seen;
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("load: bad tensor directory entry: ") + e.what());
  }
  if (seen != slots.size()) {
    std::string missing;
    for (const auto& [name, slot] : slots)
      if (slot != nullptr) missing += missing.empty() ? name : ", " + name;
    throw FormatError("load: tensor directory is missing " + missing);
  }
  return model;
}

struct DiffEntry {
  std::string name;
  std::string status;  // "common" | "reshaped" | "added" | "removed"
  std::size_t rows_a = 0, cols_a = 0;
  std::size_t rows_b = 0, cols_b = 0;
  double max_abs = 0.0;  // over the overlapping region when reshaped
};

/// Per-tensor comparison by name. Expansions show up as a handful of
/// "reshaped" rows with zero overlap diff and exact zeros everywhere else.
inline std::vector<DiffEntry> diff(const Model& a, const Model& b) {
  std::map<std::string, const Matrix*> ta, tb;
  for_each_tensor(a.params, [&](const std::string& n, const Matrix& m) { ta[n] = &m; });
  for_each_tensor(b.params, [&](const std::string& n, const Matrix& m) { tb[n] = &m; });
  std::vector<DiffEntry> out;
  for (const auto& [name, ma] : ta) {
    DiffEntry d;
    d.name = name;
    d.rows_a = ma->rows();
    d.cols_a = ma->cols();
    auto it = tb.find(name);
    if (it == tb.end()) {
      d.status = "removed";
    } else {
      const Matrix& mb = *it->second;
      d.rows_b = mb.rows();
      d.cols_b = mb.cols();
      d.status = ma->same_shape(mb) ? "common" : "reshaped";
      for (std::size_t i = 0; i < std::min(ma->rows(), mb.rows()); ++i)
        for (std::size_t j = 0; j < std::min(ma->cols(), mb.cols()); ++j)
          d.max_abs = std::max(d.max_abs, std::abs((*ma)(i, j) - mb(i, j)));
    }
    out.push_back(std::move(d));
  }
  for (const auto& [name, mb] : tb) {
    if (ta.count(name)) continue;
    DiffEntry d;
    d.name = name;
    d.status = "added";
    d.rows_b = mb->rows();
    d.cols_b = mb->cols();
    out.push_back(std::move(d));
  }
  return out;
}

inline std::vector<DiffEntry> diff(const std::string& path_a, const std::string& path_b) {
  Model a = load(path_a);
  Model b = load(path_b);
  return diff(a, b);
}

}  // namespace tgrow::checkpoint

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

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tgrow/matrix.hpp"
#include "tgrow/prng.hpp"

namespace tgrow {

using TokenId = std::uint32_t;
using TokenSeq = std::vector<TokenId>;

enum class Activation { Relu, Gelu };

inline Matrix apply_activation(const Matrix& x, Activation act) {
  return act == Activation::Relu ? relu(x) : gelu(x);
}

/// Architecture hyper-parameters. Every expansion dimension is independent:
/// num_layers, hidden, mlp_inner, num_heads, key_dim, value_dim can each be
/// grown on its own.
struct ModelConfig {
  std::size_t num_layers = 1;  // transformer layers (0 allowed: pure embedding+readout)
  std::size_t hidden = 1;      // residual-stream width
  std::size_t mlp_inner = 1;   // feed-forward inner width
  std::size_t num_heads = 1;   // attention heads per layer
  std::size_t key_dim = 1;     // query/key width
  std::size_t value_dim = 1;   // per-head value width
  std::size_t out_dim = 1;     // readout width
  std::size_t max_seq = 1;     // positional-table length
  std::size_t vocab = 1;       // embedding-table rows
  Activation activation = Activation::Relu;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// One attention head: query/key projections (hidden x key_dim) and the value
/// projection (hidden x value_dim).
struct HeadParams {
  Matrix wq;
  Matrix wk;
  Matrix wv;
};

struct LayerParams {
  Matrix g_mha;                   // 1 x hidden, attention-branch norm gains
  std::vector<HeadParams> heads;  // num_heads entries
  Matrix wo;                      // (num_heads * value_dim) x hidden
  Matrix g_mlp;                   // 1 x hidden, mlp-branch norm gains
  Matrix wl1;                     // hidden x mlp_inner
  Matrix bl1;                     // 1 x mlp_inner
  Matrix wl2;                     // mlp_inner x hidden
  Matrix bl2;                     // 1 x hidden
};

struct ModelParams {
  Matrix embedding;                // vocab x hidden
  Matrix pos;                      // max_seq x hidden
  std::vector<LayerParams> layers; // num_layers entries
  Matrix w_out;                    // hidden x out_dim
};

/// A config with its matching weights; what checkpoints store and
/// transformations map between.
struct Model {
  ModelConfig config;
  ModelParams params;
};

// ---------------------------------------------------------------------------
// Canonical tensor traversal
//
// The order below (embedding, pos, layers ascending with fields in declaration
// order, w_out) is the canonical order everywhere: parameter initialization,
// checkpoint layout, optimizer buffers, finite differences.
// ---------------------------------------------------------------------------

template <class Params, class Fn>
void for_each_tensor(Params& p, Fn&& fn) {
  fn("embedding", p.embedding);
  fn("pos", p.pos);
  for (std::size_t n = 0; n < p.layers.size(); ++n) {
    auto& layer = p.layers[n];
    const std::string base = "layers." + std::to_string(n) + ".";
    fn(base + "g_mha", layer.g_mha);
    for (std::size_t e = 0; e < layer.heads.size(); ++e) {
      const std::string head = base + "heads." + std::to_string(e) + ".";
      fn(head + "wq", layer.heads[e].wq);
      fn(head + "wk", layer.heads[e].wk);
      fn(head + "wv", layer.heads[e].wv);
    }
    fn(base + "wo", layer.wo);
    fn(base + "g_mlp", layer.g_mlp);
    fn(base + "wl1", layer.wl1);
    fn(base + "bl1", layer.bl1);
    fn(base + "wl2", layer.wl2);
    fn(base + "bl2", layer.bl2);
  }
  fn("w_out", p.w_out);
}

inline std::vector<std::string> validate_config(const ModelConfig& c) {
  std::vector<std::string> errs;
  auto positive = [&](std::size_t v, const char* name) {
    if (v == 0) errs.push_back(std::string("config.") + name + " must be >= 1");
  };
  positive(c.hidden, "hidden");
  positive(c.mlp_inner, "mlp_inner");
  positive(c.num_heads, "num_heads");
  positive(c.key_dim, "key_dim");
  positive(c.value_dim, "value_dim");
  positive(c.out_dim, "out_dim");
  positive(c.max_seq, "max_seq");
  positive(c.vocab, "vocab");
  return errs;
}

/// Checks every tensor shape against the config. Returns the full list of
/// problems rather than stopping at the first.
inline std::vector<std::string> validate(const ModelParams& p, const ModelConfig& c) {
  std::vector<std::string> errs = validate_config(c);
  auto expect = [&](const std::string& name, const Matrix& m, std::size_t r, std::size_t cc) {
    if (m.rows() != r || m.cols() != cc) {
      errs.push_back(name + ": expected " + std::to_string(r) + "x" + std::to_string(cc) +
                     ", got " + detail::shape_str(m));
    }
  };
  expect("embedding", p.embedding, c.vocab, c.hidden);
  expect("pos", p.pos, c.max_seq, c.hidden);
  if (p.layers.size() != c.num_layers) {
    errs.push_back("layers: expected " + std::to_string(c.num_layers) + " entries, got " +
                   std::to_string(p.layers.size()));
  }
  for (std::size_t n = 0; n < p.layers.size(); ++n) {
    const auto& layer = p.layers[n];
    const std::string base = "layers." + std::to_string(n) + ".";
    expect(base + "g_mha", layer.g_mha, 1, c.hidden);
    if (layer.heads.size() != c.num_heads) {
      errs.push_back(base + "heads: expected " + std::to_string(c.num_heads) +
                     " entries, got " + std::to_string(layer.heads.size()));
    }
    for (std::size_t e = 0; e < layer.heads.size(); ++e) {
      const std::string head = base + "heads." + std::to_string(e) + ".";
      expect(head + "wq", layer.heads[e].wq, c.hidden, c.key_dim);
      expect(head + "wk", layer.heads[e].wk, c.hidden, c.key_dim);
      expect(head + "wv", layer.heads[e].wv, c.hidden, c.value_dim);
    }
    expect(base + "wo", layer.wo, c.num_heads * c.value_dim, c.hidden);
    expect(base + "g_mlp", layer.g_mlp, 1, c.hidden);
    expect(base + "wl1", layer.wl1, c.hidden, c.mlp_inner);
    expect(base + "bl1", layer.bl1, 1, c.mlp_inner);
    expect(base + "wl2", layer.wl2, c.mlp_inner, c.hidden);
    expect(base + "bl2", layer.bl2, 1, c.hidden);
  }
  expect("w_out", p.w_out, c.hidden, c.out_dim);
  return errs;
}

inline std::size_t param_count(const ModelConfig& c) {
  const std::size_t h = c.hidden, p = c.mlp_inner, e = c.num_heads, k = c.key_dim,
                    v = c.value_dim;
  return c.vocab * h + c.max_seq * h +
         c.num_layers * (2 * h + e * (2 * h * k + h * v) + e * v * h + h * p + p + p * h + h) +
         h * c.out_dim;
}

/// Params with the correct shapes, all entries zero, norm gains one.
inline ModelParams zero_params(const ModelConfig& c) {
  ModelParams p;
  p.embedding = Matrix(c.vocab, c.hidden);
  p.pos = Matrix(c.max_seq, c.hidden);
  p.layers.resize(c.num_layers);
  for (auto& layer : p.layers) {
    layer.g_mha = Matrix::ones(1, c.hidden);
    layer.heads.resize(c.num_heads);
    for (auto& head : layer.heads) {
      head.wq = Matrix(c.hidden, c.key_dim);
      head.wk = Matrix(c.hidden, c.key_dim);
      head.wv = Matrix(c.hidden, c.value_dim);
    }
    layer.wo = Matrix(c.num_heads * c.value_dim, c.hidden);
    layer.g_mlp = Matrix::ones(1, c.hidden);
    layer.wl1 = Matrix(c.hidden, c.mlp_inner);
    layer.bl1 = Matrix(1, c.mlp_inner);
    layer.wl2 = Matrix(c.mlp_inner, c.hidden);
    layer.bl2 = Matrix(1, c.hidden);
  }
  p.w_out = Matrix(c.hidden, c.out_dim);
  return p;
}

/// Gradient/moment buffers: same shapes as the params, every entry zero
/// (including the norm gains).
inline ModelParams zero_like(const ModelParams& params) {
  ModelParams z = params;
  for_each_tensor(z, [](const std::string&, Matrix& m) {
    std::fill(m.data(), m.data() + m.size(), 0.0);
  });
  return z;
}

/// Weights i.i.d. normal(0, stddev^2) drawn from one seeded stream in
/// canonical traversal order; norm gains start at one and consume no draws.
inline ModelParams init_params(const ModelConfig& c, std::uint64_t seed, double stddev) {
  detail::require(stddev > 0.0, "init_params: stddev must be > 0");
  ModelParams p = zero_params(c);
  Prng rng(seed);
  for_each_tensor(p, [&](const std::string& name, Matrix& m) {
    if (name.find("g_mha") != std::string::npos || name.find("g_mlp") != std::string::npos)
      return;  // gains stay at one
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = rng.next_normal() * stddev;
  });
  return p;
}

// ---------------------------------------------------------------------------
// Forward pass
// ---------------------------------------------------------------------------

/// Row i of the result is the embedding-table row for tokens[i]. Positional
/// embeddings are added by forward(), not here.
inline Matrix embed(const ModelParams& p, const TokenSeq& tokens, const ModelConfig& c) {
  detail::require(!tokens.empty(), "embed: empty token sequence");
  detail::require(tokens.size() <= c.max_seq,
                  "embed: sequence length " + std::to_string(tokens.size()) +
                      " exceeds max_seq " + std::to_string(c.max_seq));
  Matrix out(tokens.size(), c.hidden);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    detail::require(tokens[i] < c.vocab, "embed: token " + std::to_string(tokens[i]) +
                                             " out of range [0," + std::to_string(c.vocab) + ")");
    for (std::size_t j = 0; j < c.hidden; ++j) out(i, j) = p.embedding(tokens[i], j);
  }
  return out;
}

/// softmax(q k^T / sqrt(key_dim)) v, with key_dim taken from q's width.
inline Matrix attention(const Matrix& q, const Matrix& k, const Matrix& v) {
  detail::require(q.cols() == k.cols(), "attention: q/k widths disagree");
  detail::require(q.rows() == k.rows() && k.rows() == v.rows(),
                  "attention: sequence lengths disagree");
  const double inv_sqrt_k = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  Matrix logits = scale(matmul(q, transpose(k)), inv_sqrt_k);
  return matmul(row_softmax(logits), v);
}

/// Concatenated per-head attention outputs times the output projection.
inline Matrix mha_forward(const LayerParams& layer, const Matrix& x, const ModelConfig& c) {
  detail::require(layer.heads.size() == c.num_heads, "mha_forward: head count mismatch");
  Matrix heads_out;
  for (std::size_t e = 0; e < layer.heads.size(); ++e) {
    const auto& head = layer.heads[e];
    Matrix he = attention(matmul(x, head.wq), matmul(x, head.wk), matmul(x, head.wv));
    heads_out = e == 0 ? std::move(he) : concat_cols(heads_out, he);
  }
  return matmul(heads_out, layer.wo);
}

inline Matrix mlp_forward(const LayerParams& layer, const Matrix& x, const ModelConfig& c) {
  Matrix pre = add_row_broadcast(matmul(x, layer.wl1), layer.bl1);
  return add_row_broadcast(matmul(apply_activation(pre, c.activation), layer.wl2), layer.bl2);
}

/// Pre-norm residual layer:
///   x' = x + MHA(Norm(x)); return x' + MLP(Norm(x')).
inline Matrix layer_forward(const LayerParams& layer, const Matrix& x, const ModelConfig& c) {
  Matrix x_mid = add(x, mha_forward(layer, rmsnorm_rows(x, layer.g_mha), c));
  return add(x_mid, mlp_forward(layer, rmsnorm_rows(x_mid, layer.g_mlp), c));
}

/// Full model: layers applied to embed(tokens) + positional rows, then the
/// output projection. Output is seq x out_dim logits.
inline Matrix forward(const ModelParams& p, const TokenSeq& tokens, const ModelConfig& c) {
  Matrix x = add(embed(p, tokens, c), slice_rows(p.pos, 0, tokens.size()));
  for (const auto& layer : p.layers) x = layer_forward(layer, x, c);
  return matmul(x, p.w_out);
}

inline Matrix forward(const Model& m, const TokenSeq& tokens) {
  return forward(m.params, tokens, m.config);
}

}  // namespace tgrow

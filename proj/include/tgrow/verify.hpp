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

// Preservation harness: does an expanded model compute the same function as
// the original? Diffs are taken on final logits; the identities the proofs
// lean on (norm padding, attention logit rescaling, fresh-layer identity) get
// dedicated direct checks.

#pragma once

#include <cstdio>
#include <string>
#include <vector>

#include "tgrow/matrix.hpp"
#include "tgrow/model.hpp"
#include "tgrow/prng.hpp"

namespace tgrow::verify {

struct PreservationReport {
  std::size_t num_inputs = 0;
  double max_abs_diff = 0.0;
  double max_rel_diff = 0.0;
  std::vector<double> per_input_diffs;  // max abs diff per input
  bool pass = false;
  double tolerance = 0.0;
};

/// `count` deterministic token sequences with lengths cycling 1..max_seq and
/// tokens uniform over the vocabulary.
inline std::vector<TokenSeq> sample_inputs(const ModelConfig& c, std::size_t count,
                                           std::uint64_t seed) {
  tgrow::detail::require(count >= 1, "sample_inputs: count must be >= 1");
  std::vector<TokenSeq> out;
  out.reserve(count);
  Prng rng(derive_seed(seed, 0x494e5055 /* "INPU" */));
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t len = 1 + i % c.max_seq;
    TokenSeq seq(len);
    for (auto& t : seq) t = static_cast<TokenId>(rng.next_below(c.vocab));
    out.push_back(std::move(seq));
  }
  return out;
}

/// Runs both models over every input and reports worst-case logit diffs.
/// Relative diffs divide by max(1, |reference|) so near-zero logits cannot
/// blow the ratio up.
inline PreservationReport preservation_report(const ModelConfig& cfg_a, const ModelParams& p_a,
                                              const ModelConfig& cfg_b, const ModelParams& p_b,
                                              const std::vector<TokenSeq>& inputs, double tol) {
  using tgrow::detail::require;
  require(cfg_a.out_dim == cfg_b.out_dim, "preservation_report: out_dim mismatch");
  require(cfg_a.vocab == cfg_b.vocab, "preservation_report: vocab mismatch");
  require(cfg_a.max_seq <= cfg_b.max_seq, "preservation_report: model b cannot take a's inputs");
  PreservationReport r;
  r.num_inputs = inputs.size();
  r.tolerance = tol;
  for (const auto& tokens : inputs) {
    Matrix ref = forward(p_a, tokens, cfg_a);
    Matrix got = forward(p_b, tokens, cfg_b);
    require(ref.rows() == got.rows() && ref.cols() == got.cols(),
            "preservation_report: output shape mismatch");
    double abs_d = 0.0, rel_d = 0.0;
    for (std::size_t i = 0; i < ref.size(); ++i) {
      const double a = ref.data()[i], b = got.data()[i];
      const double d = std::abs(a - b);
      abs_d = std::max(abs_d, d);
      rel_d = std::max(rel_d, d / std::max(1.0, std::abs(a)));
    }
    r.per_input_diffs.push_back(abs_d);
    r.max_abs_diff = std::max(r.max_abs_diff, abs_d);
    r.max_rel_diff = std::max(r.max_rel_diff, rel_d);
  }
  r.pass = r.max_abs_diff <= tol;
  return r;
}

inline PreservationReport preservation_report(const Model& a, const Model& b,
                                              const std::vector<TokenSeq>& inputs, double tol) {
  return preservation_report(a.config, a.params, b.config, b.params, inputs, tol);
}

/// Stable machine-parseable one-liner for the CLI.
inline std::string summary_line(const PreservationReport& r) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "inputs=%zu max_abs=%.17g max_rel=%.17g pass=%s", r.num_inputs,
                r.max_abs_diff, r.max_rel_diff, r.pass ? "true" : "false");
  return buf;
}

/// The norm step of the depth-induction argument: padding rows with zeros
/// and scaling the gains by sqrt(h/new_h) commutes with the norm. The gain
/// entries over the zero pad multiply zeros, so they are drawn at random
/// here to show any value works.
inline double check_norm_padding_identity(const LayerParams& layer, const Matrix& x,
                                          std::size_t new_h) {
  const std::size_t h = x.cols();
  tgrow::detail::require(new_h > h, "check_norm_padding_identity: new_h must exceed h");
  tgrow::detail::require(layer.g_mha.cols() == h, "check_norm_padding_identity: gain width");
  const double gain_scale = std::sqrt(static_cast<double>(h) / static_cast<double>(new_h));
  Prng rng(derive_seed(0x4e4f524d /* "NORM" */, h, new_h));
  Matrix x_pad = concat_cols(x, Matrix(x.rows(), new_h - h));
  Matrix g_pad = concat_cols(scale(layer.g_mha, gain_scale),
                             random_normal(1, new_h - h, rng, 1.0));
  Matrix lhs = rmsnorm_rows(x_pad, g_pad);
  Matrix rhs = concat_cols(rmsnorm_rows(x, layer.g_mha), Matrix(x.rows(), new_h - h));
  return max_abs_diff(lhs, rhs);
}

/// Pre-softmax attention logits before vs. after a key/query width change:
/// (1/sqrt(new_k)) (x wq')(x wk')^T must equal (1/sqrt(k)) (x wq)(x wk)^T.
inline double check_attention_logit_identity(const HeadParams& head_before,
                                             const HeadParams& head_after, const Matrix& x,
                                             std::size_t k, std::size_t new_k) {
  tgrow::detail::require(head_before.wq.cols() == k && head_after.wq.cols() == new_k,
                         "check_attention_logit_identity: widths disagree with k/new_k");
  auto logits = [&](const HeadParams& head, std::size_t width) {
    Matrix q = matmul(x, head.wq), ky = matmul(x, head.wk);
    return scale(matmul(q, transpose(ky)), 1.0 / std::sqrt(static_cast<double>(width)));
  };
  return max_abs_diff(logits(head_after, new_k), logits(head_before, k));
}

/// A layer built by add_layer must be the identity map.
inline double check_layer_identity(const LayerParams& layer, const Matrix& x,
                                   const ModelConfig& c) {
  return max_abs_diff(layer_forward(layer, x, c), x);
}

}  // namespace tgrow::verify

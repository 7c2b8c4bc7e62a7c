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

// The six function-preserving expansion transformations. Each one returns a
// fresh (config, params) pair; inputs are never mutated. Blocks that must be
// zero for preservation to hold are zero-filled regardless of the init
// policy; the unsafe_fill escape hatch exists only so tests can prove the
// preservation harness notices when the constraint is violated.

#pragma once

#include <algorithm>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tgrow/matrix.hpp"
#include "tgrow/model.hpp"
#include "tgrow/prng.hpp"

namespace tgrow::transforms {

enum class InitKind { Zeros, Constant, RandomNormal };

/// How to fill newly created weight blocks that carry no preservation
/// constraint (they multiply zeros or feed dead units until trained).
struct InitPolicy {
  InitKind kind = InitKind::Zeros;
  double value = 0.0;        // Constant
  std::uint64_t seed = 0;    // RandomNormal
  double stddev = 1.0;       // RandomNormal

  static InitPolicy zeros() { return {}; }
  static InitPolicy constant(double v) { return {InitKind::Constant, v, 0, 1.0}; }
  static InitPolicy random_normal(std::uint64_t seed, double stddev) {
    return {InitKind::RandomNormal, 0.0, seed, stddev};
  }
};

enum class TransformKind {
  MlpExpand,
  AddHeads,
  HeadsExpand,
  AttentionExpand,
  HiddenExpand,
  AddLayer,
};

inline std::string_view kind_name(TransformKind k) {
  switch (k) {
    case TransformKind::MlpExpand: return "mlp_expand";
    case TransformKind::AddHeads: return "add_heads";
    case TransformKind::HeadsExpand: return "heads_expand";
    case TransformKind::AttentionExpand: return "attention_expand";
    case TransformKind::HiddenExpand: return "hidden_expand";
    case TransformKind::AddLayer: return "add_layer";
  }
  return "?";
}

inline std::optional<TransformKind> kind_from_name(std::string_view name) {
  for (TransformKind k : {TransformKind::MlpExpand, TransformKind::AddHeads,
                          TransformKind::HeadsExpand, TransformKind::AttentionExpand,
                          TransformKind::HiddenExpand, TransformKind::AddLayer}) {
    if (kind_name(k) == name) return k;
  }
  return std::nullopt;
}

/// Names of the zero-constrained blocks a transformation creates. These are
/// the valid values for TransformSpec::unsafe_block.
inline std::vector<std::string> constrained_blocks(TransformKind k) {
  switch (k) {
    case TransformKind::MlpExpand: return {"wl2"};
    case TransformKind::AddHeads: return {"wo"};
    case TransformKind::HeadsExpand: return {"wo"};
    case TransformKind::AttentionExpand: return {"wk"};
    case TransformKind::HiddenExpand: return {"pos", "embedding", "wl2", "bl2", "wo"};
    case TransformKind::AddLayer: return {"wo", "wl2", "bl2"};
  }
  return {};
}

/// One schedule step. `target` is the transform's single integer argument:
/// new_p / count / new_v / new_k / new_h / position. When unsafe_fill is set
/// it overrides the zero constraint on every constrained block, or on just
/// one block when unsafe_block names it.
struct TransformSpec {
  TransformKind kind = TransformKind::MlpExpand;
  std::size_t target = 0;
  InitPolicy init;
  std::optional<InitPolicy> unsafe_fill;
  std::string unsafe_block;  // "" = all constrained blocks
};

namespace detail {

using tgrow::detail::require;

constexpr std::uint64_t site_tag(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;  // FNV-1a 64
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ull;
  }
  return h;
}

/// Internal fill configuration. The moment-buffer expansion reuses the shape
/// logic with everything zeroed and no rescaling.
struct FillPlan {
  InitPolicy unconstrained;
  std::optional<InitPolicy> unsafe_policy;
  std::string unsafe_block;
  bool rescale = true;
  bool new_gains_one = true;
};

inline Matrix fill_block(std::size_t rows, std::size_t cols, const InitPolicy& init,
                         std::string_view site, std::uint64_t a, std::uint64_t b) {
  switch (init.kind) {
    case InitKind::Zeros:
      return Matrix(rows, cols);
    case InitKind::Constant:
      return Matrix::filled(rows, cols, init.value);
    case InitKind::RandomNormal: {
      require(init.stddev > 0.0, "InitPolicy: stddev must be > 0");
      // Each fill site gets its own substream so that, e.g., add_heads twice
      // with count=1 matches add_heads once with count=2 bit for bit.
      Prng rng(derive_seed(init.seed, site_tag(site), a, b));
      return random_normal(rows, cols, rng, init.stddev);
    }
  }
  return Matrix(rows, cols);
}

inline Matrix unconstrained_block(const FillPlan& plan, std::size_t rows, std::size_t cols,
                                  std::string_view site, std::uint64_t a = 0,
                                  std::uint64_t b = 0) {
  return fill_block(rows, cols, plan.unconstrained, site, a, b);
}

inline Matrix constrained_block(const FillPlan& plan, std::size_t rows, std::size_t cols,
                                std::string_view site, std::uint64_t a = 0,
                                std::uint64_t b = 0) {
  if (plan.unsafe_policy && (plan.unsafe_block.empty() || plan.unsafe_block == site))
    return fill_block(rows, cols, *plan.unsafe_policy, site, a, b);
  return Matrix(rows, cols);
}

inline Model mlp_expand(const ModelConfig& c, const ModelParams& p, std::size_t new_p,
                        const FillPlan& plan) {
  require(new_p > c.mlp_inner, "mlp_expand: new_p (" + std::to_string(new_p) +
                                   ") must exceed mlp_inner (" + std::to_string(c.mlp_inner) + ")");
  const std::size_t dp = new_p - c.mlp_inner;
  Model m{c, p};
  m.config.mlp_inner = new_p;
  for (std::size_t n = 0; n < m.params.layers.size(); ++n) {
    auto& layer = m.params.layers[n];
    layer.wl1 = concat_cols(layer.wl1, unconstrained_block(plan, c.hidden, dp, "wl1", n));
    layer.bl1 = concat_cols(layer.bl1, unconstrained_block(plan, 1, dp, "bl1", n));
    layer.wl2 = concat_rows(layer.wl2, constrained_block(plan, dp, c.hidden, "wl2", n));
  }
  return m;
}

inline Model add_heads(const ModelConfig& c, const ModelParams& p, std::size_t count,
                       const FillPlan& plan) {
  require(count >= 1, "add_heads: count must be >= 1");
  Model m{c, p};
  m.config.num_heads = c.num_heads + count;
  for (std::size_t n = 0; n < m.params.layers.size(); ++n) {
    auto& layer = m.params.layers[n];
    for (std::size_t i = 0; i < count; ++i) {
      const std::size_t e = c.num_heads + i;  // absolute index of the new head
      HeadParams head;
      head.wq = unconstrained_block(plan, c.hidden, c.key_dim, "wq", n, e);
      head.wk = unconstrained_block(plan, c.hidden, c.key_dim, "wk", n, e);
      head.wv = unconstrained_block(plan, c.hidden, c.value_dim, "wv", n, e);
      layer.heads.push_back(std::move(head));
    }
    layer.wo =
        concat_rows(layer.wo, constrained_block(plan, count * c.value_dim, c.hidden, "wo", n));
  }
  return m;
}

inline Model heads_expand(const ModelConfig& c, const ModelParams& p, std::size_t new_v,
                          const FillPlan& plan) {
  require(new_v > c.value_dim, "heads_expand: new_v (" + std::to_string(new_v) +
                                   ") must exceed value_dim (" + std::to_string(c.value_dim) + ")");
  const std::size_t v = c.value_dim, dv = new_v - v;
  Model m{c, p};
  m.config.value_dim = new_v;
  for (std::size_t n = 0; n < m.params.layers.size(); ++n) {
    auto& layer = m.params.layers[n];
    for (std::size_t e = 0; e < layer.heads.size(); ++e) {
      layer.heads[e].wv =
          concat_cols(layer.heads[e].wv, unconstrained_block(plan, c.hidden, dv, "wv", n, e));
    }
    // wo is E stacked v x h splits; each split grows dv zero rows in place,
    // so the new rows are interleaved rather than appended at the bottom.
    Matrix wo(c.num_heads * new_v, c.hidden);
    for (std::size_t e = 0; e < c.num_heads; ++e) {
      for (std::size_t r = 0; r < v; ++r)
        for (std::size_t j = 0; j < c.hidden; ++j) wo(e * new_v + r, j) = layer.wo(e * v + r, j);
      Matrix block = constrained_block(plan, dv, c.hidden, "wo", n, e);
      for (std::size_t r = 0; r < dv; ++r)
        for (std::size_t j = 0; j < c.hidden; ++j) wo(e * new_v + v + r, j) = block(r, j);
    }
    layer.wo = std::move(wo);
  }
  return m;
}

inline Model attention_expand(const ModelConfig& c, const ModelParams& p, std::size_t new_k,
                              const FillPlan& plan) {
  require(new_k > c.key_dim, "attention_expand: new_k (" + std::to_string(new_k) +
                                 ") must exceed key_dim (" + std::to_string(c.key_dim) + ")");
  const std::size_t dk = new_k - c.key_dim;
  // Existing key columns pick up sqrt(new_k)/sqrt(k) so the 1/sqrt(new_k)
  // logit scaling cancels back to the original 1/sqrt(k).
  const double key_scale =
      std::sqrt(static_cast<double>(new_k)) / std::sqrt(static_cast<double>(c.key_dim));
  Model m{c, p};
  m.config.key_dim = new_k;
  for (std::size_t n = 0; n < m.params.layers.size(); ++n) {
    auto& layer = m.params.layers[n];
    for (std::size_t e = 0; e < layer.heads.size(); ++e) {
      auto& head = layer.heads[e];
      head.wq = concat_cols(head.wq, unconstrained_block(plan, c.hidden, dk, "wq", n, e));
      Matrix wk_scaled = plan.rescale ? scale(head.wk, key_scale) : head.wk;
      head.wk = concat_cols(wk_scaled, constrained_block(plan, c.hidden, dk, "wk", n, e));
    }
  }
  return m;
}

inline Model hidden_expand(const ModelConfig& c, const ModelParams& p, std::size_t new_h,
                           const FillPlan& plan) {
  require(new_h > c.hidden, "hidden_expand: new_h (" + std::to_string(new_h) +
                                ") must exceed hidden (" + std::to_string(c.hidden) + ")");
  const std::size_t dh = new_h - c.hidden;
  // Gains shrink by sqrt(h)/sqrt(new_h): the norm divides by the root mean
  // square over new_h entries, of which the added dh stay zero.
  const double gain_scale =
      std::sqrt(static_cast<double>(c.hidden)) / std::sqrt(static_cast<double>(new_h));
  Model m{c, p};
  m.config.hidden = new_h;
  auto& mp = m.params;
  mp.embedding = concat_cols(mp.embedding, constrained_block(plan, c.vocab, dh, "embedding"));
  mp.pos = concat_cols(mp.pos, constrained_block(plan, c.max_seq, dh, "pos"));
  for (std::size_t n = 0; n < mp.layers.size(); ++n) {
    auto& layer = mp.layers[n];
    Matrix g_mha = plan.rescale ? scale(layer.g_mha, gain_scale) : layer.g_mha;
    layer.g_mha = concat_cols(g_mha, unconstrained_block(plan, 1, dh, "g_mha", n));
    for (std::size_t e = 0; e < layer.heads.size(); ++e) {
      auto& head = layer.heads[e];
      head.wq = concat_rows(head.wq, unconstrained_block(plan, dh, c.key_dim, "wq", n, e));
      head.wk = concat_rows(head.wk, unconstrained_block(plan, dh, c.key_dim, "wk", n, e));
      head.wv = concat_rows(head.wv, unconstrained_block(plan, dh, c.value_dim, "wv", n, e));
    }
    layer.wo = concat_cols(layer.wo,
                           constrained_block(plan, c.num_heads * c.value_dim, dh, "wo", n));
    Matrix g_mlp = plan.rescale ? scale(layer.g_mlp, gain_scale) : layer.g_mlp;
    layer.g_mlp = concat_cols(g_mlp, unconstrained_block(plan, 1, dh, "g_mlp", n));
    layer.wl1 = concat_rows(layer.wl1, unconstrained_block(plan, dh, c.mlp_inner, "wl1", n));
    layer.wl2 = concat_cols(layer.wl2, constrained_block(plan, c.mlp_inner, dh, "wl2", n));
    layer.bl2 = concat_cols(layer.bl2, constrained_block(plan, 1, dh, "bl2", n));
  }
  mp.w_out = concat_rows(mp.w_out, unconstrained_block(plan, dh, c.out_dim, "w_out"));
  return m;
}

inline Model add_layer(const ModelConfig& c, const ModelParams& p, std::size_t position,
                       const FillPlan& plan) {
  require(position >= 1 && position <= c.num_layers + 1,
          "add_layer: position (" + std::to_string(position) + ") must be in [1, " +
              std::to_string(c.num_layers + 1) + "]");
  const std::size_t n = position - 1;
  Model m{c, p};
  m.config.num_layers = c.num_layers + 1;
  LayerParams layer;
  auto gains = [&] {
    return plan.new_gains_one ? Matrix::ones(1, c.hidden) : Matrix(1, c.hidden);
  };
  layer.g_mha = gains();
  for (std::size_t e = 0; e < c.num_heads; ++e) {
    HeadParams head;
    head.wq = unconstrained_block(plan, c.hidden, c.key_dim, "wq", n, e);
    head.wk = unconstrained_block(plan, c.hidden, c.key_dim, "wk", n, e);
    head.wv = unconstrained_block(plan, c.hidden, c.value_dim, "wv", n, e);
    layer.heads.push_back(std::move(head));
  }
  layer.wo = constrained_block(plan, c.num_heads * c.value_dim, c.hidden, "wo", n);
  layer.g_mlp = gains();
  layer.wl1 = unconstrained_block(plan, c.hidden, c.mlp_inner, "wl1", n);
  layer.bl1 = unconstrained_block(plan, 1, c.mlp_inner, "bl1", n);
  layer.wl2 = constrained_block(plan, c.mlp_inner, c.hidden, "wl2", n);
  layer.bl2 = constrained_block(plan, 1, c.hidden, "bl2", n);
  m.params.layers.insert(m.params.layers.begin() + static_cast<std::ptrdiff_t>(n),
                         std::move(layer));
  return m;
}

inline Model dispatch(const ModelConfig& c, const ModelParams& p, const TransformSpec& spec,
                      FillPlan plan) {
  if (!spec.unsafe_block.empty()) {
    const auto blocks = constrained_blocks(spec.kind);
    require(std::find(blocks.begin(), blocks.end(), spec.unsafe_block) != blocks.end(),
            "unsafe_block '" + spec.unsafe_block + "' is not a constrained block of " +
                std::string(kind_name(spec.kind)));
    plan.unsafe_block = spec.unsafe_block;
  }
  switch (spec.kind) {
    case TransformKind::MlpExpand: return mlp_expand(c, p, spec.target, plan);
    case TransformKind::AddHeads: return add_heads(c, p, spec.target, plan);
    case TransformKind::HeadsExpand: return heads_expand(c, p, spec.target, plan);
    case TransformKind::AttentionExpand: return attention_expand(c, p, spec.target, plan);
    case TransformKind::HiddenExpand: return hidden_expand(c, p, spec.target, plan);
    case TransformKind::AddLayer: return add_layer(c, p, spec.target, plan);
  }
  throw std::invalid_argument("apply_transform: unknown transform kind");
}

}  // namespace detail

inline Model mlp_expand(const ModelConfig& c, const ModelParams& p, std::size_t new_p,
                        const InitPolicy& init) {
  return detail::mlp_expand(c, p, new_p, {init, std::nullopt, ""});
}

inline Model add_heads(const ModelConfig& c, const ModelParams& p, std::size_t count,
                       const InitPolicy& init) {
  return detail::add_heads(c, p, count, {init, std::nullopt, ""});
}

inline Model heads_expand(const ModelConfig& c, const ModelParams& p, std::size_t new_v,
                          const InitPolicy& init) {
  return detail::heads_expand(c, p, new_v, {init, std::nullopt, ""});
}

inline Model attention_expand(const ModelConfig& c, const ModelParams& p, std::size_t new_k,
                              const InitPolicy& init) {
  return detail::attention_expand(c, p, new_k, {init, std::nullopt, ""});
}

inline Model hidden_expand(const ModelConfig& c, const ModelParams& p, std::size_t new_h,
                           const InitPolicy& init) {
  return detail::hidden_expand(c, p, new_h, {init, std::nullopt, ""});
}

inline Model add_layer(const ModelConfig& c, const ModelParams& p, std::size_t position,
                       const InitPolicy& init) {
  return detail::add_layer(c, p, position, {init, std::nullopt, ""});
}

inline Model apply_transform(const ModelConfig& c, const ModelParams& p,
                             const TransformSpec& spec) {
  return detail::dispatch(c, p, spec, {spec.init, spec.unsafe_fill, spec.unsafe_block});
}

/// Which config field a transform grows, for audit trails.
inline std::string_view dim_label(TransformKind k) {
  switch (k) {
    case TransformKind::MlpExpand: return "p";
    case TransformKind::AddHeads: return "E";
    case TransformKind::HeadsExpand: return "v";
    case TransformKind::AttentionExpand: return "k";
    case TransformKind::HiddenExpand: return "h";
    case TransformKind::AddLayer: return "N";
  }
  return "?";
}

inline std::size_t dim_value(const ModelConfig& c, TransformKind k) {
  switch (k) {
    case TransformKind::MlpExpand: return c.mlp_inner;
    case TransformKind::AddHeads: return c.num_heads;
    case TransformKind::HeadsExpand: return c.value_dim;
    case TransformKind::AttentionExpand: return c.key_dim;
    case TransformKind::HiddenExpand: return c.hidden;
    case TransformKind::AddLayer: return c.num_layers;
  }
  return 0;
}

struct ScheduleStep {
  TransformKind kind;
  ModelConfig before;
  ModelConfig after;
};

inline std::string step_summary(std::size_t index, const ScheduleStep& s) {
  return "step " + std::to_string(index) + ": " + std::string(kind_name(s.kind)) + " " +
         std::string(dim_label(s.kind)) + " " + std::to_string(dim_value(s.before, s.kind)) +
         " -> " + std::to_string(dim_value(s.after, s.kind));
}

/// Raised when a schedule step is invalid; carries the 0-based step index.
class ScheduleError : public std::runtime_error {
 public:
  ScheduleError(std::size_t index, const std::string& why)
      : std::runtime_error("schedule step " + std::to_string(index) + ": " + why),
        step_index(index) {}
  std::size_t step_index;
};

struct ScheduleResult {
  ModelConfig config;
  ModelParams params;
  std::vector<ScheduleStep> audit;
};

/// Folds the specs left to right. The first invalid spec aborts with its
/// index; nothing is partially applied to the caller's inputs.
inline ScheduleResult apply_schedule(const ModelConfig& c, const ModelParams& p,
                                     const std::vector<TransformSpec>& specs) {
  ScheduleResult r{c, p, {}};
  for (std::size_t i = 0; i < specs.size(); ++i) {
    ModelConfig before = r.config;
    try {
      Model next = apply_transform(r.config, r.params, specs[i]);
      r.config = std::move(next.config);
      r.params = std::move(next.params);
    } catch (const std::invalid_argument& e) {
      throw ScheduleError(i, e.what());
    }
    r.audit.push_back({specs[i].kind, before, r.config});
  }
  return r;
}

/// Grows optimizer moment buffers to match a schedule's shape changes: every
/// new slot is zero, every surviving slot keeps its value (no rescaling, and
/// a fresh layer's gain moments start at zero like everything else).
inline ModelParams expand_moment_buffers(const ModelConfig& c, const ModelParams& moments,
                                         const std::vector<TransformSpec>& specs) {
  detail::FillPlan plan{InitPolicy::zeros(), std::nullopt, "",
                        /*rescale=*/false, /*new_gains_one=*/false};
  ModelConfig cfg = c;
  ModelParams out = moments;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    TransformSpec shape_only = specs[i];
    shape_only.unsafe_fill.reset();
    shape_only.unsafe_block.clear();
    try {
      Model next = detail::dispatch(cfg, out, shape_only, plan);
      cfg = std::move(next.config);
      out = std::move(next.params);
    } catch (const std::invalid_argument& e) {
      throw ScheduleError(i, e.what());
    }
  }
  return out;
}

}  // namespace tgrow::transforms

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

// Hand-written reverse mode for the exact forward pass: a tape of
// intermediates plus the analytic adjoints of matmul, softmax, RMSNorm and
// the activations. Kept deliberately explicit so each adjoint can be audited
// against the finite-difference oracle below.

#pragma once

#include <numbers>
#include <string>
#include <vector>

#include "tgrow/matrix.hpp"
#include "tgrow/model.hpp"

namespace tgrow::autograd {

using ParamGrads = ModelParams;  // same shapes, gradient values

struct HeadTape {
  Matrix q;     // s x k
  Matrix k;     // s x k
  Matrix v;     // s x v
  Matrix attn;  // s x s, post-softmax weights
};

struct LayerTape {
  Matrix x_in;          // layer input
  Matrix norm_mha;      // Norm(x_in)
  std::vector<HeadTape> heads;
  Matrix heads_concat;  // s x E*v
  Matrix x_mid;         // x_in + attention branch
  Matrix norm_mlp;      // Norm(x_mid)
  Matrix mlp_pre;       // before activation
  Matrix mlp_act;       // after activation
};

struct Tape {
  TokenSeq tokens;
  Matrix x0;       // embedding + positional rows
  std::vector<LayerTape> layers;
  Matrix x_final;  // input to the output projection
  Matrix logits;
};

/// Same computation as model forward, recording every intermediate the
/// backward pass needs. Kernel calls appear in the same order as in
/// layer_forward, so the logits match bit for bit.
inline Tape forward_with_tape(const ModelParams& p, const TokenSeq& tokens,
                              const ModelConfig& c) {
  Tape t;
  t.tokens = tokens;
  t.x0 = add(embed(p, tokens, c), slice_rows(p.pos, 0, tokens.size()));
  Matrix x = t.x0;
  for (const auto& layer : p.layers) {
    LayerTape lt;
    lt.x_in = x;
    lt.norm_mha = rmsnorm_rows(lt.x_in, layer.g_mha);
    for (std::size_t e = 0; e < layer.heads.size(); ++e) {
      const auto& head = layer.heads[e];
      HeadTape ht;
      ht.q = matmul(lt.norm_mha, head.wq);
      ht.k = matmul(lt.norm_mha, head.wk);
      ht.v = matmul(lt.norm_mha, head.wv);
      const double inv_sqrt_k = 1.0 / std::sqrt(static_cast<double>(ht.q.cols()));
      ht.attn = row_softmax(scale(matmul(ht.q, transpose(ht.k)), inv_sqrt_k));
      Matrix he = matmul(ht.attn, ht.v);
      lt.heads_concat = e == 0 ? std::move(he) : concat_cols(lt.heads_concat, he);
      lt.heads.push_back(std::move(ht));
    }
    lt.x_mid = add(lt.x_in, matmul(lt.heads_concat, layer.wo));
    lt.norm_mlp = rmsnorm_rows(lt.x_mid, layer.g_mlp);
    lt.mlp_pre = add_row_broadcast(matmul(lt.norm_mlp, layer.wl1), layer.bl1);
    lt.mlp_act = apply_activation(lt.mlp_pre, c.activation);
    x = add(lt.x_mid,
            add_row_broadcast(matmul(lt.mlp_act, layer.wl2), layer.bl2));
    t.layers.push_back(std::move(lt));
  }
  t.x_final = x;
  t.logits = matmul(t.x_final, p.w_out);
  return t;
}

struct LossGrad {
  double loss = 0.0;
  Matrix dlogits;
};

/// Mean over positions of -log softmax(logits)[i][target_i]. The loss uses
/// log-sum-exp directly; the gradient is (softmax - onehot) / positions.
inline LossGrad cross_entropy_loss(const Matrix& logits, const TokenSeq& targets) {
  using tgrow::detail::require;
  require(targets.size() == logits.rows(),
          "cross_entropy_loss: targets length " + std::to_string(targets.size()) +
              " != positions " + std::to_string(logits.rows()));
  const std::size_t s = logits.rows(), o = logits.cols();
  LossGrad out;
  out.dlogits = Matrix(s, o);
  Matrix probs = row_softmax(logits);
  double total = 0.0;
  for (std::size_t i = 0; i < s; ++i) {
    require(targets[i] < o, "cross_entropy_loss: target " + std::to_string(targets[i]) +
                                " out of range [0," + std::to_string(o) + ")");
    double mx = logits(i, 0);
    for (std::size_t j = 1; j < o; ++j) mx = std::max(mx, logits(i, j));
    double sum_exp = 0.0;
    for (std::size_t j = 0; j < o; ++j) sum_exp += std::exp(logits(i, j) - mx);
    total += std::log(sum_exp) + mx - logits(i, targets[i]);
    for (std::size_t j = 0; j < o; ++j) {
      const double onehot = j == targets[i] ? 1.0 : 0.0;
      out.dlogits(i, j) = (probs(i, j) - onehot) / static_cast<double>(s);
    }
  }
  out.loss = total / static_cast<double>(s);
  return out;
}

inline double loss_value(const ModelParams& p, const TokenSeq& tokens, const TokenSeq& targets,
                         const ModelConfig& c) {
  return cross_entropy_loss(forward(p, tokens, c), targets).loss;
}

namespace detail {

using tgrow::detail::require;

/// Adjoint of y = rmsnorm_rows(x, g). Rows whose mean square is exactly zero
/// produced zero output; their gradient contribution is zero to match.
inline void rmsnorm_backward(const Matrix& x, const Matrix& g, const Matrix& dy, Matrix& dx,
                             Matrix& dg) {
  const std::size_t h = x.cols();
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double ms = 0.0;
    for (std::size_t j = 0; j < h; ++j) ms += x(i, j) * x(i, j);
    ms /= static_cast<double>(h);
    if (ms == 0.0) continue;
    const double r = std::sqrt(ms);
    double coupling = 0.0;  // sum_l dy_l * g_l * x_l
    for (std::size_t j = 0; j < h; ++j) coupling += dy(i, j) * g(0, j) * x(i, j);
    const double inv_hr3 = 1.0 / (static_cast<double>(h) * r * r * r);
    for (std::size_t j = 0; j < h; ++j) {
      dx(i, j) += dy(i, j) * g(0, j) / r - x(i, j) * coupling * inv_hr3;
      dg(0, j) += dy(i, j) * x(i, j) / r;
    }
  }
}

/// Adjoint of row-wise softmax: dl = s (ds - <ds, s>) per row.
inline Matrix softmax_backward(const Matrix& s, const Matrix& ds) {
  Matrix dl(s.rows(), s.cols());
  for (std::size_t i = 0; i < s.rows(); ++i) {
    double dot = 0.0;
    for (std::size_t j = 0; j < s.cols(); ++j) dot += ds(i, j) * s(i, j);
    for (std::size_t j = 0; j < s.cols(); ++j) dl(i, j) = s(i, j) * (ds(i, j) - dot);
  }
  return dl;
}

inline Matrix activation_grad(const Matrix& pre, Activation act) {
  Matrix g(pre.rows(), pre.cols());
  constexpr double inv_sqrt_2pi = 0.39894228040143268;
  for (std::size_t i = 0; i < pre.size(); ++i) {
    const double x = pre.data()[i];
    if (act == Activation::Relu) {
      g.data()[i] = x > 0.0 ? 1.0 : 0.0;
    } else {
      const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * x * x);
      g.data()[i] = cdf + x * pdf;
    }
  }
  return g;
}

}  // namespace detail

/// Gradients of the loss w.r.t. every parameter, given d(loss)/d(logits).
inline ParamGrads backward(const Tape& tape, const Matrix& dlogits, const ModelParams& p,
                           const ModelConfig& c) {
  using tgrow::detail::require;
  require(tape.layers.size() == p.layers.size(), "backward: tape/params layer count mismatch");
  require(dlogits.rows() == tape.logits.rows() && dlogits.cols() == tape.logits.cols(),
          "backward: dlogits shape mismatch");
  require(tape.x_final.cols() == p.w_out.rows(), "backward: tape/params width mismatch");

  ParamGrads g = zero_like(p);
  g.w_out = matmul(transpose(tape.x_final), dlogits);
  Matrix dx = matmul(dlogits, transpose(p.w_out));

  for (std::size_t n = p.layers.size(); n-- > 0;) {
    const auto& layer = p.layers[n];
    const auto& lt = tape.layers[n];
    auto& gl = g.layers[n];
    require(lt.heads.size() == layer.heads.size(), "backward: tape/params head count mismatch");

    // x_out = x_mid + (act(Norm(x_mid) wl1 + bl1) wl2 + bl2)
    const Matrix& dmlp_out = dx;
    gl.wl2 = add(gl.wl2, matmul(transpose(lt.mlp_act), dmlp_out));
    gl.bl2 = add(gl.bl2, col_sums(dmlp_out));
    Matrix dmlp_pre =
        hadamard(matmul(dmlp_out, transpose(layer.wl2)), detail::activation_grad(lt.mlp_pre, c.activation));
    gl.wl1 = add(gl.wl1, matmul(transpose(lt.norm_mlp), dmlp_pre));
    gl.bl1 = add(gl.bl1, col_sums(dmlp_pre));
    Matrix dnorm_mlp = matmul(dmlp_pre, transpose(layer.wl1));
    Matrix dx_mid = dx;  // residual path
    detail::rmsnorm_backward(lt.x_mid, layer.g_mlp, dnorm_mlp, dx_mid, gl.g_mlp);

    // x_mid = x_in + [H_1 ... H_E] wo
    const Matrix& dmha_out = dx_mid;
    gl.wo = add(gl.wo, matmul(transpose(lt.heads_concat), dmha_out));
    Matrix dheads = matmul(dmha_out, transpose(layer.wo));
    Matrix dnorm_mha(lt.norm_mha.rows(), lt.norm_mha.cols());
    for (std::size_t e = 0; e < layer.heads.size(); ++e) {
      const auto& head = layer.heads[e];
      const auto& ht = lt.heads[e];
      Matrix dh = slice_cols(dheads, e * c.value_dim, (e + 1) * c.value_dim);
      Matrix ds = matmul(dh, transpose(ht.v));
      Matrix dv = matmul(transpose(ht.attn), dh);
      Matrix dlog = detail::softmax_backward(ht.attn, ds);
      const double inv_sqrt_k = 1.0 / std::sqrt(static_cast<double>(c.key_dim));
      Matrix dq = scale(matmul(dlog, ht.k), inv_sqrt_k);
      Matrix dk = scale(matmul(transpose(dlog), ht.q), inv_sqrt_k);
      gl.heads[e].wq = add(gl.heads[e].wq, matmul(transpose(lt.norm_mha), dq));
      gl.heads[e].wk = add(gl.heads[e].wk, matmul(transpose(lt.norm_mha), dk));
      gl.heads[e].wv = add(gl.heads[e].wv, matmul(transpose(lt.norm_mha), dv));
      dnorm_mha = add(dnorm_mha, matmul(dq, transpose(head.wq)));
      dnorm_mha = add(dnorm_mha, matmul(dk, transpose(head.wk)));
      dnorm_mha = add(dnorm_mha, matmul(dv, transpose(head.wv)));
    }
    Matrix dx_in = dx_mid;  // residual path
    detail::rmsnorm_backward(lt.x_in, layer.g_mha, dnorm_mha, dx_in, gl.g_mha);
    dx = std::move(dx_in);
  }

  // x0 = embedding rows + positional rows; duplicate tokens accumulate.
  for (std::size_t i = 0; i < tape.tokens.size(); ++i) {
    for (std::size_t j = 0; j < c.hidden; ++j) {
      g.embedding(tape.tokens[i], j) += dx(i, j);
      g.pos(i, j) += dx(i, j);
    }
  }
  return g;
}

/// Central finite differences per scalar parameter; the independent oracle
/// for backward. Costs two forward passes per parameter.
inline ParamGrads finite_diff_grad(const ModelParams& p, const TokenSeq& tokens,
                                   const TokenSeq& targets, const ModelConfig& c,
                                   double epsilon) {
  tgrow::detail::require(epsilon > 0.0, "finite_diff_grad: epsilon must be > 0");
  ModelParams work = p;
  ParamGrads g = zero_like(p);
  std::vector<std::pair<Matrix*, Matrix*>> pairs;
  for_each_tensor(work, [&](const std::string&, Matrix& m) { pairs.emplace_back(&m, nullptr); });
  std::size_t idx = 0;
  for_each_tensor(g, [&](const std::string&, Matrix& m) { pairs[idx++].second = &m; });
  for (auto [wm, gm] : pairs) {
    for (std::size_t i = 0; i < wm->size(); ++i) {
      const double saved = wm->data()[i];
      wm->data()[i] = saved + epsilon;
      const double up = loss_value(work, tokens, targets, c);
      wm->data()[i] = saved - epsilon;
      const double down = loss_value(work, tokens, targets, c);
      wm->data()[i] = saved;
      gm->data()[i] = (up - down) / (2.0 * epsilon);
    }
  }
  return g;
}

/// Scalar central difference, for oracle self-tests.
template <class F>
double central_diff(F&& f, double theta, double epsilon) {
  return (f(theta + epsilon) - f(theta - epsilon)) / (2.0 * epsilon);
}

}  // namespace tgrow::autograd

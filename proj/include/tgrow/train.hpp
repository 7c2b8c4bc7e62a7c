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

// Toy-task training loop: train small, expand in place, keep training. The
// loop is single-threaded and fully seeded so expansion-continuity tests can
// demand bit-exact behavior.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "tgrow/autograd.hpp"
#include "tgrow/matrix.hpp"
#include "tgrow/model.hpp"
#include "tgrow/prng.hpp"
#include "tgrow/transforms.hpp"

namespace tgrow::train {

enum class TaskKind { Copy, Reverse };

/// Position-wise classification: predict the input sequence itself (Copy) or
/// its reversal (Reverse) at every position.
struct Task {
  TaskKind kind = TaskKind::Copy;
  std::size_t seq_len = 1;
  std::size_t vocab = 2;
};

struct Example {
  TokenSeq tokens;
  TokenSeq targets;
};

inline std::vector<Example> make_batch(const Task& task, std::size_t batch_size,
                                       std::uint64_t seed) {
  tgrow::detail::require(batch_size >= 1, "make_batch: batch_size must be >= 1");
  tgrow::detail::require(task.seq_len >= 1 && task.vocab >= 1, "make_batch: degenerate task");
  Prng rng(derive_seed(seed, 0x42415443 /* "BATC" */));
  std::vector<Example> batch(batch_size);
  for (auto& ex : batch) {
    ex.tokens.resize(task.seq_len);
    for (auto& t : ex.tokens) t = static_cast<TokenId>(rng.next_below(task.vocab));
    ex.targets = ex.tokens;
    if (task.kind == TaskKind::Reverse) std::reverse(ex.targets.begin(), ex.targets.end());
  }
  return batch;
}

enum class OptKind { Sgd, Adam };

struct OptimizerState {
  OptKind kind = OptKind::Sgd;
  double lr = 0.0;
  double momentum = 0.0;  // SGD only
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;  // Adam only
  std::uint64_t step = 0;
  ModelParams m;  // momentum / first moment
  ModelParams v;  // second moment (unused by SGD, kept shape-congruent)

  static OptimizerState sgd(const ModelParams& params, double lr, double momentum = 0.0) {
    OptimizerState s;
    s.kind = OptKind::Sgd;
    s.lr = lr;
    s.momentum = momentum;
    s.m = zero_like(params);
    s.v = zero_like(params);
    return s;
  }

  static OptimizerState adam(const ModelParams& params, double lr) {
    OptimizerState s = sgd(params, lr);
    s.kind = OptKind::Adam;
    return s;
  }
};

class TrainingDivergence : public std::runtime_error {
 public:
  TrainingDivergence(std::uint64_t step, const std::string& why)
      : std::runtime_error("training step " + std::to_string(step) + ": " + why),
        step_index(step) {}
  std::uint64_t step_index;
};

namespace detail {

inline std::vector<Matrix*> tensor_list(ModelParams& p) {
  std::vector<Matrix*> out;
  for_each_tensor(p, [&](const std::string&, Matrix& m) { out.push_back(&m); });
  return out;
}

inline std::vector<const Matrix*> tensor_list(const ModelParams& p) {
  std::vector<const Matrix*> out;
  for_each_tensor(p, [&](const std::string&, const Matrix& m) { out.push_back(&m); });
  return out;
}

inline void apply_update(ModelParams& params, const ModelParams& grads, OptimizerState& opt) {
  opt.step += 1;
  auto ps = tensor_list(params);
  auto ms = tensor_list(opt.m);
  auto vs = tensor_list(opt.v);
  auto gs = tensor_list(grads);
  for (std::size_t t = 0; t < ps.size(); ++t) {
    double* p = ps[t]->data();
    double* m = ms[t]->data();
    double* v = vs[t]->data();
    const double* g = gs[t]->data();
    const std::size_t n = ps[t]->size();
    if (opt.kind == OptKind::Sgd) {
      for (std::size_t i = 0; i < n; ++i) {
        m[i] = opt.momentum * m[i] + g[i];
        p[i] -= opt.lr * m[i];
      }
    } else {
      const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.step));
      const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.step));
      for (std::size_t i = 0; i < n; ++i) {
        m[i] = opt.beta1 * m[i] + (1.0 - opt.beta1) * g[i];
        v[i] = opt.beta2 * v[i] + (1.0 - opt.beta2) * g[i] * g[i];
        const double m_hat = m[i] / bc1;
        const double v_hat = v[i] / bc2;
        p[i] -= opt.lr * m_hat / (std::sqrt(v_hat) + opt.eps);
      }
    }
  }
}

inline void check_task_fits(const Task& task, const ModelConfig& c) {
  using tgrow::detail::require;
  require(task.seq_len <= c.max_seq, "task seq_len exceeds max_seq");
  require(task.vocab <= c.vocab, "task vocab exceeds model vocab");
  require(task.vocab <= c.out_dim, "task vocab exceeds model out_dim");
}

}  // namespace detail

/// Mean cross-entropy of the model over a batch, no parameter updates.
inline double eval_loss(const Model& model, const std::vector<Example>& batch) {
  double total = 0.0;
  for (const auto& ex : batch)
    total += autograd::loss_value(model.params, ex.tokens, ex.targets, model.config);
  return total / static_cast<double>(batch.size());
}

struct TrainResult {
  Model model;
  OptimizerState opt;
  std::vector<double> loss_curve;  // pre-update mean batch loss per step
};

/// Runs `steps` optimizer steps. Batches are seeded by (seed, first_step + i)
/// so a run split across two calls reproduces a single longer run exactly.
inline TrainResult train_steps(const Model& model, const OptimizerState& opt, const Task& task,
                               std::size_t steps, std::uint64_t seed,
                               std::size_t batch_size = 8, std::uint64_t first_step = 0) {
  detail::check_task_fits(task, model.config);
  TrainResult r{model, opt, {}};
  r.loss_curve.reserve(steps);
  for (std::size_t i = 0; i < steps; ++i) {
    const std::uint64_t global_step = first_step + i;
    auto batch = make_batch(task, batch_size, derive_seed(seed, global_step));
    ModelParams grads = zero_like(r.model.params);
    double loss_sum = 0.0;
    for (const auto& ex : batch) {
      autograd::Tape tape = autograd::forward_with_tape(r.model.params, ex.tokens, r.model.config);
      autograd::LossGrad lg = autograd::cross_entropy_loss(tape.logits, ex.targets);
      loss_sum += lg.loss;
      autograd::ParamGrads g =
          autograd::backward(tape, lg.dlogits, r.model.params, r.model.config);
      auto acc = detail::tensor_list(grads);
      auto inc = detail::tensor_list(g);
      for (std::size_t t = 0; t < acc.size(); ++t)
        for (std::size_t j = 0; j < acc[t]->size(); ++j) acc[t]->data()[j] += inc[t]->data()[j];
    }
    const double inv_bs = 1.0 / static_cast<double>(batch_size);
    for (Matrix* gm : detail::tensor_list(grads))
      for (std::size_t j = 0; j < gm->size(); ++j) gm->data()[j] *= inv_bs;
    const double mean_loss = loss_sum * inv_bs;
    if (!std::isfinite(mean_loss))
      throw TrainingDivergence(global_step, "non-finite loss");
    r.loss_curve.push_back(mean_loss);
    detail::apply_update(r.model.params, grads, r.opt);
  }
  return r;
}

struct ContinuityReport {
  double loss_before = 0.0;
  double loss_after = 0.0;
  double rel_delta = 0.0;  // |after - before| / max(1, |before|)
};

struct ExpandResult {
  Model model;
  OptimizerState opt;
  ContinuityReport report;
  std::vector<transforms::ScheduleStep> audit;
};

/// Applies an expansion schedule mid-run. Optimizer moments grow with zeros
/// in every new slot and keep their old values elsewhere; the continuity
/// report evaluates one held-out batch immediately before and after.
inline ExpandResult expand_mid_training(const Model& model, const OptimizerState& opt,
                                        const std::vector<transforms::TransformSpec>& schedule,
                                        const Task& task, std::uint64_t eval_seed = 0xe7a1,
                                        std::size_t eval_batch_size = 16) {
  detail::check_task_fits(task, model.config);
  auto batch = make_batch(task, eval_batch_size, eval_seed);
  ExpandResult r;
  r.report.loss_before = eval_loss(model, batch);
  auto expanded = transforms::apply_schedule(model.config, model.params, schedule);
  r.audit = std::move(expanded.audit);
  r.model = Model{std::move(expanded.config), std::move(expanded.params)};
  r.opt = opt;
  r.opt.m = transforms::expand_moment_buffers(model.config, opt.m, schedule);
  r.opt.v = transforms::expand_moment_buffers(model.config, opt.v, schedule);
  r.report.loss_after = eval_loss(r.model, batch);
  r.report.rel_delta = std::abs(r.report.loss_after - r.report.loss_before) /
                       std::max(1.0, std::abs(r.report.loss_before));
  return r;
}

/// CSV with full f64 round-trip precision: header then one step,loss row per
/// recorded step.
inline void write_curve_csv(const std::string& path, const std::vector<double>& curve,
                            std::uint64_t first_step = 0) {
  std::ofstream out(path);
  tgrow::detail::require(out.good(), "write_curve_csv: cannot open " + path);
  out << "step,loss\n";
  char buf[64];
  for (std::size_t i = 0; i < curve.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%llu,%.17g\n",
                  static_cast<unsigned long long>(first_step + i), curve[i]);
    out << buf;
  }
  tgrow::detail::require(out.good(), "write_curve_csv: write failed for " + path);
}

}  // namespace tgrow::train

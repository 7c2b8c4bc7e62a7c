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

// tgrow CLI: create, expand, verify, inspect, and train .tgrw checkpoints.
//
// Exit codes: 0 success / verification pass, 1 domain failure (validation,
// failed verification, invalid schedule, diverged training), 2 usage or
// file-format errors.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "tgrow/autograd.hpp"
#include "tgrow/checkpoint.hpp"
#include "tgrow/model.hpp"
#include "tgrow/plan.hpp"
#include "tgrow/train.hpp"
#include "tgrow/transforms.hpp"
#include "tgrow/verify.hpp"

namespace {

using tgrow::Model;
using tgrow::ModelConfig;
using tgrow::checkpoint::FormatError;

ModelConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in.good()) throw FormatError("cannot open config file " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("config file " + path + " is not valid JSON: " + e.what());
  }
  ModelConfig c = tgrow::checkpoint::config_from_json(j);
  auto errs = tgrow::validate_config(c);
  if (!errs.empty()) throw std::invalid_argument(errs.front());
  return c;
}

std::vector<tgrow::transforms::TransformSpec> load_gated_plan(const std::string& path,
                                                              bool allow_unsafe, int& usage_rc) {
  auto specs = tgrow::plan::load_plan(path);
  if (tgrow::plan::has_unsafe(specs) && !allow_unsafe) {
    std::cerr << "error: plan " << path
              << " contains unsafe_fill; pass --allow-unsafe to run negative controls\n";
    usage_rc = 2;
  }
  return specs;
}

template <class Body>
int guarded(Body&& body) {
  try {
    return body();
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const tgrow::transforms::ScheduleError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const tgrow::train::TrainingDivergence& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"grow transformer checkpoints without changing their function"};
  app.require_subcommand(1);
  int rc = 0;

  // ---- init --------------------------------------------------------------
  auto* init = app.add_subcommand("init", "create a freshly initialized checkpoint");
  std::string init_config, init_out;
  std::uint64_t init_seed = 0;
  double init_stddev = 0.02;
  init->add_option("--config", init_config, "model config JSON file")->required();
  init->add_option("--seed", init_seed, "weight init seed");
  init->add_option("--stddev", init_stddev, "weight init stddev");
  init->add_option("--out", init_out, "output checkpoint path")->required();
  init->callback([&] {
    rc = guarded([&] {
      ModelConfig config = load_config_file(init_config);
      tgrow::ModelParams params = tgrow::init_params(config, init_seed, init_stddev);
      tgrow::checkpoint::save(config, params, init_out);
      std::printf("params=%zu\n", tgrow::param_count(config));
      std::printf("out=%s\n", init_out.c_str());
      return 0;
    });
  });

  // ---- apply -------------------------------------------------------------
  auto* apply = app.add_subcommand("apply", "apply an expansion plan to a checkpoint");
  std::string apply_in, apply_plan, apply_out;
  bool apply_allow_unsafe = false;
  apply->add_option("--in", apply_in, "input checkpoint")->required();
  apply->add_option("--plan", apply_plan, "plan JSON file")->required();
  apply->add_option("--out", apply_out, "output checkpoint path")->required();
  apply->add_flag("--allow-unsafe", apply_allow_unsafe,
                  "permit plans that unsafe-fill zero-constrained blocks");
  apply->callback([&] {
    rc = guarded([&] {
      int usage_rc = 0;
      auto specs = load_gated_plan(apply_plan, apply_allow_unsafe, usage_rc);
      if (usage_rc != 0) return usage_rc;
      Model model = tgrow::checkpoint::load(apply_in);
      auto result = tgrow::transforms::apply_schedule(model.config, model.params, specs);
      for (std::size_t i = 0; i < result.audit.size(); ++i)
        std::printf("%s\n", tgrow::transforms::step_summary(i, result.audit[i]).c_str());
      tgrow::checkpoint::save(result.config, result.params, apply_out);
      std::printf("steps=%zu\n", result.audit.size());
      std::printf("out=%s\n", apply_out.c_str());
      return 0;
    });
  });

  // ---- verify ------------------------------------------------------------
  auto* verify = app.add_subcommand("verify", "check two checkpoints compute the same function");
  std::string verify_a, verify_b;
  std::size_t verify_inputs = 32;
  std::uint64_t verify_seed = 0;
  double verify_tol = 1e-10;
  verify->add_option("--a", verify_a, "reference checkpoint")->required();
  verify->add_option("--b", verify_b, "candidate checkpoint")->required();
  verify->add_option("--inputs", verify_inputs, "number of sampled token sequences");
  verify->add_option("--seed", verify_seed, "input sampling seed");
  verify->add_option("--tol", verify_tol, "max abs logit difference to pass");
  verify->callback([&] {
    rc = guarded([&] {
      Model a = tgrow::checkpoint::load(verify_a);
      Model b = tgrow::checkpoint::load(verify_b);
      auto inputs = tgrow::verify::sample_inputs(a.config, verify_inputs, verify_seed);
      auto report = tgrow::verify::preservation_report(a, b, inputs, verify_tol);
      std::printf("%s\n", tgrow::verify::summary_line(report).c_str());
      return report.pass ? 0 : 1;
    });
  });

  // ---- info --------------------------------------------------------------
  auto* info = app.add_subcommand("info", "print checkpoint config and tensor shapes");
  std::string info_path;
  info->add_option("ckpt", info_path, "checkpoint path")->required();
  info->callback([&] {
    rc = guarded([&] {
      Model model = tgrow::checkpoint::load(info_path);
      nlohmann::json cfg = tgrow::checkpoint::config_to_json(model.config);
      for (const auto& [key, value] : cfg.items())
        std::printf("config.%s=%s\n", key.c_str(), value.dump().c_str());
      std::size_t total = 0;
      tgrow::for_each_tensor(model.params, [&](const std::string& name, const tgrow::Matrix& m) {
        std::printf("tensor=%s shape=%zux%zu\n", name.c_str(), m.rows(), m.cols());
        total += m.size();
      });
      std::printf("params=%zu\n", total);
      return 0;
    });
  });

  // ---- train -------------------------------------------------------------
  auto* train = app.add_subcommand("train", "train on a toy task, optionally expanding mid-run");
  std::string train_ckpt, train_out, train_curve, train_plan, train_task = "copy",
              train_opt = "sgd";
  std::size_t train_steps_n = 0, train_batch = 8, train_task_len = 0, train_task_vocab = 0;
  std::uint64_t train_seed = 0;
  double train_lr = 0.05, train_momentum = 0.0;
  long long train_expand_at = -1;
  bool train_allow_unsafe = false;
  train->add_option("--ckpt", train_ckpt, "input checkpoint")->required();
  train->add_option("--task", train_task, "toy task")->check(CLI::IsMember({"copy", "reverse"}));
  train->add_option("--steps", train_steps_n, "optimizer steps")->required();
  train->add_option("--lr", train_lr, "learning rate");
  train->add_option("--opt", train_opt, "optimizer")->check(CLI::IsMember({"sgd", "adam"}));
  train->add_option("--momentum", train_momentum, "sgd momentum");
  train->add_option("--batch", train_batch, "batch size");
  train->add_option("--seed", train_seed, "batch sampling seed");
  train->add_option("--task-len", train_task_len, "task sequence length (0 = model max_seq)");
  train->add_option("--task-vocab", train_task_vocab, "task vocab (0 = min(vocab, out_dim))");
  train->add_option("--out", train_out, "output checkpoint path")->required();
  train->add_option("--curve", train_curve, "write per-step loss CSV here");
  train->add_option("--expand-at", train_expand_at, "apply --plan after this many steps");
  train->add_option("--plan", train_plan, "expansion plan for --expand-at");
  train->add_flag("--allow-unsafe", train_allow_unsafe,
                  "permit plans that unsafe-fill zero-constrained blocks");
  train->callback([&] {
    rc = guarded([&] {
      Model model = tgrow::checkpoint::load(train_ckpt);
      tgrow::train::Task task;
      task.kind = train_task == "copy" ? tgrow::train::TaskKind::Copy
                                       : tgrow::train::TaskKind::Reverse;
      task.seq_len = train_task_len != 0 ? train_task_len : model.config.max_seq;
      task.vocab = train_task_vocab != 0
                       ? train_task_vocab
                       : std::min(model.config.vocab, model.config.out_dim);
      tgrow::train::OptimizerState opt =
          train_opt == "sgd"
              ? tgrow::train::OptimizerState::sgd(model.params, train_lr, train_momentum)
              : tgrow::train::OptimizerState::adam(model.params, train_lr);

      std::vector<double> curve;
      if (train_expand_at >= 0) {
        const auto split = static_cast<std::size_t>(train_expand_at);
        if (split > train_steps_n) {
          std::cerr << "error: --expand-at must not exceed --steps\n";
          return 2;
        }
        if (train_plan.empty()) {
          std::cerr << "error: --expand-at requires --plan\n";
          return 2;
        }
        int usage_rc = 0;
        auto specs = load_gated_plan(train_plan, train_allow_unsafe, usage_rc);
        if (usage_rc != 0) return usage_rc;
        auto phase1 = tgrow::train::train_steps(model, opt, task, split, train_seed, train_batch,
                                                /*first_step=*/0);
        curve = phase1.loss_curve;
        auto expanded = tgrow::train::expand_mid_training(phase1.model, phase1.opt, specs, task);
        std::printf("expand@%zu loss_before=%.17g loss_after=%.17g rel_delta=%.17g\n", split,
                    expanded.report.loss_before, expanded.report.loss_after,
                    expanded.report.rel_delta);
        auto phase2 =
            tgrow::train::train_steps(expanded.model, expanded.opt, task, train_steps_n - split,
                                      train_seed, train_batch, /*first_step=*/split);
        curve.insert(curve.end(), phase2.loss_curve.begin(), phase2.loss_curve.end());
        model = std::move(phase2.model);
      } else {
        auto result =
            tgrow::train::train_steps(model, opt, task, train_steps_n, train_seed, train_batch);
        curve = std::move(result.loss_curve);
        model = std::move(result.model);
      }

      if (!train_curve.empty()) tgrow::train::write_curve_csv(train_curve, curve);
      tgrow::checkpoint::save(model, train_out);
      if (curve.empty())
        std::printf("steps=0\n");
      else
        std::printf("steps=%zu final_loss=%.17g\n", curve.size(), curve.back());
      std::printf("out=%s\n", train_out.c_str());
      return 0;
    });
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }
  return rc;
}

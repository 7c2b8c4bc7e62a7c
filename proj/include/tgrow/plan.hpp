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

// Plan files: expansion schedules as JSON data.
//
// {"steps": [{"transform": "mlp_expand", "target": 48,
//             "init": {"kind": "random_normal", "seed": 7, "stddev": 0.02}}]}
//
// "target" carries new_p / count / new_v / new_k / new_h / position depending
// on the transform. Optional "unsafe_fill" (same shape as "init") and
// "unsafe_block" exist for negative-control testing only.

#pragma once

#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "tgrow/checkpoint.hpp"
#include "tgrow/transforms.hpp"

namespace tgrow::plan {

using checkpoint::FormatError;

inline transforms::InitPolicy init_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("kind"))
    throw FormatError("plan: init must be an object with a 'kind'");
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "zeros") return transforms::InitPolicy::zeros();
  if (kind == "constant") {
    if (!j.contains("value")) throw FormatError("plan: constant init needs 'value'");
    return transforms::InitPolicy::constant(j.at("value").get<double>());
  }
  if (kind == "random_normal") {
    if (!j.contains("seed") || !j.contains("stddev"))
      throw FormatError("plan: random_normal init needs 'seed' and 'stddev'");
    const double stddev = j.at("stddev").get<double>();
    if (!(stddev > 0.0)) throw FormatError("plan: random_normal stddev must be > 0");
    return transforms::InitPolicy::random_normal(j.at("seed").get<std::uint64_t>(), stddev);
  }
  throw FormatError("plan: unknown init kind '" + kind + "'");
}

inline nlohmann::json init_to_json(const transforms::InitPolicy& p) {
  switch (p.kind) {
    case transforms::InitKind::Zeros: return {{"kind", "zeros"}};
    case transforms::InitKind::Constant: return {{"kind", "constant"}, {"value", p.value}};
    case transforms::InitKind::RandomNormal:
      return {{"kind", "random_normal"}, {"seed", p.seed}, {"stddev", p.stddev}};
  }
  return {};
}

inline std::vector<transforms::TransformSpec> parse_plan(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("steps") || !j.at("steps").is_array())
    throw FormatError("plan: expected an object with a 'steps' array");
  std::vector<transforms::TransformSpec> specs;
  std::size_t i = 0;
  for (const auto& step : j.at("steps")) {
    try {
      transforms::TransformSpec spec;
      const std::string name = step.at("transform").get<std::string>();
      auto kind = transforms::kind_from_name(name);
      if (!kind) throw FormatError("unknown transform '" + name + "'");
      spec.kind = *kind;
      spec.target = step.at("target").get<std::size_t>();
      spec.init = step.contains("init") ? init_from_json(step.at("init"))
                                        : transforms::InitPolicy::zeros();
      if (step.contains("unsafe_fill")) spec.unsafe_fill = init_from_json(step.at("unsafe_fill"));
      if (step.contains("unsafe_block"))
        spec.unsafe_block = step.at("unsafe_block").get<std::string>();
      specs.push_back(std::move(spec));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("plan: step " + std::to_string(i) + ": " + e.what());
    } catch (const FormatError& e) {
      throw FormatError("plan: step " + std::to_string(i) + ": " + e.what());
    }
    ++i;
  }
  return specs;
}

inline std::vector<transforms::TransformSpec> load_plan(const std::string& path) {
  std::ifstream in(path);
  if (!in.good()) throw FormatError("plan: cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("plan: " + path + " is not valid JSON: " + e.what());
  }
  return parse_plan(j);
}

inline bool has_unsafe(const std::vector<transforms::TransformSpec>& specs) {
  for (const auto& s : specs)
    if (s.unsafe_fill) return true;
  return false;
}

}  // namespace tgrow::plan

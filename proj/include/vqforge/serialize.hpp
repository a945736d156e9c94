// Copyright 2026 The vqforge Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "vqforge/budget.hpp"
#include "vqforge/error.hpp"
#include "vqforge/pipeline.hpp"

// JSON forms of the configuration types. Readers reject unknown keys and
// wrongly typed values with ConfigError; missing keys keep their defaults.
namespace vqforge {

using Json = nlohmann::ordered_json;

namespace detail {

inline void reject_unknown(const Json& j, std::string_view where, std::initializer_list<std::string_view> keys) {
  if (!j.is_object()) throw ConfigError(std::string(where) + ": expected a JSON object");
  for (const auto& [key, value] : j.items()) {
    bool known = false;
    for (std::string_view k : keys) known = known || key == k;
    if (!known) throw ConfigError(std::string(where) + ": unknown key '" + key + "'");
  }
}

template <class T>
void read_field(const Json& j, std::string_view where, const char* key, T& out) {
  const auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->template get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(std::string(where) + "." + key + ": wrong type (" + it->dump() + ")");
  }
}

}  // namespace detail

inline Json to_json(const SingleBudget& b) {
  return Json{{"height", b.height}, {"width", b.width}, {"channels", b.channels}, {"codes", b.codes},
              {"code_dim", b.code_dim}};
}

inline SingleBudget single_budget_from_json(const Json& j) {
  constexpr const char* w = "single budget";
  detail::reject_unknown(j, w, {"height", "width", "channels", "codes", "code_dim"});
  SingleBudget b;
  detail::read_field(j, w, "height", b.height);
  detail::read_field(j, w, "width", b.width);
  detail::read_field(j, w, "channels", b.channels);
  detail::read_field(j, w, "codes", b.codes);
  detail::read_field(j, w, "code_dim", b.code_dim);
  return b;
}

inline Json to_json(const HierBudget& b) {
  return Json{{"bottom_height", b.bottom_height}, {"bottom_width", b.bottom_width}, {"top_height", b.top_height},
              {"top_width", b.top_width},         {"channels", b.channels},         {"codes", b.codes},
              {"code_dim", b.code_dim}};
}

inline HierBudget hier_budget_from_json(const Json& j) {
  constexpr const char* w = "hier budget";
  detail::reject_unknown(j, w,
                         {"bottom_height", "bottom_width", "top_height", "top_width", "channels", "codes", "code_dim"});
  HierBudget b;
  detail::read_field(j, w, "bottom_height", b.bottom_height);
  detail::read_field(j, w, "bottom_width", b.bottom_width);
  detail::read_field(j, w, "top_height", b.top_height);
  detail::read_field(j, w, "top_width", b.top_width);
  detail::read_field(j, w, "channels", b.channels);
  detail::read_field(j, w, "codes", b.codes);
  detail::read_field(j, w, "code_dim", b.code_dim);
  return b;
}

inline Json to_json(const ModelOptions& o) {
  return Json{{"patch_size", o.patch_size},
              {"channels", o.channels},
              {"learning_rate", o.learning_rate},
              {"beta", o.beta},
              {"decay", o.decay},
              {"smoothing_eps", o.smoothing_eps},
              {"window", o.window},
              {"threshold", o.threshold},
              {"reset_sample_size", o.reset.sample_size},
              {"reset_jitter", o.reset.jitter_scale},
              {"init_jitter", o.init_jitter},
              {"init_images", o.init_images}};
}

inline ModelOptions model_options_from_json(const Json& j) {
  constexpr const char* w = "options";
  detail::reject_unknown(j, w,
                         {"patch_size", "channels", "learning_rate", "beta", "decay", "smoothing_eps", "window",
                          "threshold", "reset_sample_size", "reset_jitter", "init_jitter", "init_images"});
  ModelOptions o;
  detail::read_field(j, w, "patch_size", o.patch_size);
  detail::read_field(j, w, "channels", o.channels);
  detail::read_field(j, w, "learning_rate", o.learning_rate);
  detail::read_field(j, w, "beta", o.beta);
  detail::read_field(j, w, "decay", o.decay);
  detail::read_field(j, w, "smoothing_eps", o.smoothing_eps);
  detail::read_field(j, w, "window", o.window);
  detail::read_field(j, w, "threshold", o.threshold);
  detail::read_field(j, w, "reset_sample_size", o.reset.sample_size);
  detail::read_field(j, w, "reset_jitter", o.reset.jitter_scale);
  detail::read_field(j, w, "init_jitter", o.init_jitter);
  detail::read_field(j, w, "init_images", o.init_images);
  return o;
}

inline Json to_json(const Schedule& s) {
  return Json{{"steps", s.steps},
              {"batch", s.batch},
              {"seed", s.seed},
              {"init", to_string(s.init)},
              {"dead_code_reset", s.dead_code_reset}};
}

inline Schedule schedule_from_json(const Json& j) {
  constexpr const char* w = "schedule";
  detail::reject_unknown(j, w, {"steps", "batch", "seed", "init", "dead_code_reset"});
  Schedule s;
  detail::read_field(j, w, "steps", s.steps);
  detail::read_field(j, w, "batch", s.batch);
  detail::read_field(j, w, "seed", s.seed);
  std::string init = to_string(s.init);
  detail::read_field(j, w, "init", init);
  s.init = init_mode_from_string(init);
  detail::read_field(j, w, "dead_code_reset", s.dead_code_reset);
  return s;
}

}  // namespace vqforge

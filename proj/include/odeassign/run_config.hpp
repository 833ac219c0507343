/*
 * Copyright 2026 The odeassign Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "odeassign/pipeline.hpp"
#include "odeassign/taskgen.hpp"

namespace odeassign {

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Everything a command needs, resolvable to flat `key = value` lines.
struct RunConfig {
  TaskConfig task;
  std::size_t n_scenes = 500;
  std::array<double, 3> split{0.8, 0.1, 0.1};
  ModelConfig model;
  TrainConfig train;
  std::string eval_setting = "sgcls";
  std::string eval_split = "val";
  std::vector<double> sweep_grid = default_sweep_grid();
  std::vector<double> probe_times{0.0, 0.5, 1.0, 1.5, 2.0, 2.5};
  std::size_t probe_scenes = 50;
  std::filesystem::path data_dir = "data";
  std::filesystem::path out_dir = "out";
  /// Checkpoint directory read by eval/sweep/probe; empty means
  /// `<out_dir>/checkpoint`.
  std::filesystem::path model_dir;
  std::size_t threads = 1;

  RunConfig();

  /// Applies one `key = value` setting.
  void set(const std::string& key, const std::string& value);
  /// Every key with its current value, sorted by key.
  std::map<std::string, std::string> resolved() const;
  void write_resolved(std::ostream& os) const;
  void save_resolved(const std::filesystem::path& dir) const;
  void validate() const;

  std::filesystem::path checkpoint_dir() const;
  static std::vector<std::string> keys();
};

/// Reads `key = value` lines; '#' starts a comment.
void apply_config_file(RunConfig& rc, const std::filesystem::path& path);
void apply_config_text(RunConfig& rc, std::istream& is,
                       const std::string& origin = "<config>");
/// Parses a `key=value` override.
void apply_override(RunConfig& rc, const std::string& assignment);

}  // namespace odeassign

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

#include <filesystem>
#include <iosfwd>
#include <string>

#include "odeassign/diagnostics.hpp"
#include "odeassign/pipeline.hpp"
#include "odeassign/run_config.hpp"

namespace odeassign {

/// Trained (or in-training) model with everything needed to resume it.
struct Checkpoint {
  ModelConfig model;
  std::size_t feat_dim = 0;
  std::size_t n_obj_labels = 0;
  std::size_t n_pred_labels = 0;
  TrainConfig train;
  TrainState state;

  Model make_model() const {
    return Model(model, feat_dim, n_obj_labels, n_pred_labels);
  }
};

/// params.bin, adam_m.bin, adam_v.bin and state.json under `dir`.
void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::filesystem::path& dir);
bool has_checkpoint(const std::filesystem::path& dir);

/// Scenes of a named split ("train", "val" or "test").
const std::vector<SyntheticScene>& dataset_split(const Dataset& data,
                                                 const std::string& name);

// Each command throws on invalid input and returns a process exit code.
int cmd_gen(const RunConfig& rc, std::ostream& log);
int cmd_train(const RunConfig& rc, bool resume, std::ostream& log);
int cmd_eval(const RunConfig& rc, std::ostream& log);
int cmd_sweep(const RunConfig& rc, std::ostream& log);
int cmd_probe(const RunConfig& rc, std::ostream& log);
/// `solver` is exact, greedy or enumerate. Writes the assignment JSON to
/// `out` and, when `out_dir` is non-empty, to `out_dir/assignment.json`.
int cmd_ilp(const std::filesystem::path& problem, const std::string& solver,
            const std::filesystem::path& out_dir, std::ostream& out);
int cmd_check(const CheckOptions& opt, std::ostream& log);

}  // namespace odeassign

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
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "odeassign/ilp.hpp"

namespace odeassign {

class TaskError : public Error {
 public:
  using Error::Error;
};

/// Knobs of the synthetic scene generator.
struct TaskConfig {
  std::size_t n_obj_labels = 10;
  /// Includes the background predicate at index 0.
  std::size_t n_pred_labels = 6;
  std::size_t feat_dim = 16;
  std::size_t min_objects = 3;
  std::size_t max_objects = 8;
  double cluster_spread = 0.35;
  double coupling_strength = 4.0;
  double context_fraction = 0.25;
  double background_prob = 0.7;
  std::size_t n_topics = 3;
  std::size_t topic_core = 3;
  double obj_weight = 1.0;
  double pred_weight = 1.0;
  bool allow_empty = false;
  std::uint64_t seed = 7;

  void validate() const;
};

nlohmann::json to_json(const TaskConfig& cfg);
TaskConfig task_config_from_json(const nlohmann::json& j);

/// Label co-occurrence statistics shared by every scene of a world.
struct CooccurrencePrior {
  std::size_t n_obj_labels = 0;
  std::size_t n_pred_labels = 0;
  /// Symmetric pointwise mutual information of label pairs, row-major.
  std::vector<double> obj_pair_prior;
  struct PredEntry {
    std::size_t subj;
    std::size_t obj;
    std::size_t pred;
    double log_prob;
  };
  /// log q(pred | subj, obj, related) for every non-background predicate.
  std::vector<PredEntry> pred_context_prior;
  /// Preferred predicate of each (subj, obj) label pair, row-major.
  std::vector<std::size_t> preferred;

  double pair(std::size_t a, std::size_t b) const {
    return obj_pair_prior[a * n_obj_labels + b];
  }
  double pred_log_prob(std::size_t subj, std::size_t obj,
                       std::size_t pred) const;
};

/// Fixed generative model derived from a TaskConfig's seed.
struct World {
  TaskConfig cfg;
  /// n_obj_labels x feat_dim, row-major.
  std::vector<double> prototypes;
  /// n_topics x n_obj_labels label distributions.
  std::vector<std::vector<double>> topic_label_probs;
  std::vector<std::vector<std::size_t>> topic_cores;
  std::vector<double> label_prior;
  CooccurrencePrior prior;
};

World make_world(const TaskConfig& cfg);

struct SceneObject {
  std::vector<double> feature;
  std::array<double, 4> box{};  // x1, y1, x2, y2 in [0, 1]
  std::size_t gt_label = 0;
};

struct ScenePair {
  std::size_t subj = 0;
  std::size_t obj = 0;
  std::size_t gt_predicate = 0;
};

struct SyntheticScene {
  std::uint64_t id = 0;
  std::size_t topic = 0;
  std::vector<SceneObject> objects;
  std::vector<ScenePair> pairs;
  /// Unary object scores, n_objects x n_obj_labels.
  std::vector<double> obj_alpha;
  std::vector<std::size_t> oracle_obj;
  double oracle_obj_objective = 0.0;
  std::vector<std::size_t> oracle_pred;
  double oracle_pred_objective = 0.0;

  std::size_t n_objects() const noexcept { return objects.size(); }
};

/// Ordered pairs (s, o), s != o, in row-major order.
std::vector<std::pair<std::size_t, std::size_t>> ordered_pairs(std::size_t n);

/// Object-labelling problem of a scene under its world.
ilp::AssignmentProblem object_problem(const World& world,
                                      const SyntheticScene& scene);
/// Predicate-labelling problem given subject/object labels.
ilp::AssignmentProblem predicate_problem(const World& world,
                                         const SyntheticScene& scene,
                                         const std::vector<std::size_t>& labels);

/// Per-object argmax of the unary scores.
std::vector<std::size_t> greedy_labels(const SyntheticScene& scene,
                                       std::size_t n_labels);

SyntheticScene gen_scene(const World& world, std::uint64_t scene_seed);
SyntheticScene gen_scene(const TaskConfig& cfg, std::uint64_t scene_seed);

/// Fraction of objects whose oracle label differs from the greedy label.
double context_difficulty(const SyntheticScene& scene, std::size_t n_labels);

struct Dataset {
  TaskConfig cfg;
  std::vector<SyntheticScene> train;
  std::vector<SyntheticScene> val;
  std::vector<SyntheticScene> test;

  std::size_t size() const { return train.size() + val.size() + test.size(); }
};

/// Largest-remainder split sizes. Ratios must be non-negative and sum to 1.
std::array<std::size_t, 3> split_sizes(std::size_t n,
                                       const std::array<double, 3>& ratios);

/// Scenes 0..n-1 split into contiguous train/val/test blocks.
Dataset gen_dataset(const TaskConfig& cfg, std::size_t n_scenes,
                    const std::array<double, 3>& ratios,
                    std::size_t threads = 1);

nlohmann::json to_json(const SyntheticScene& scene);
SyntheticScene scene_from_json(const nlohmann::json& j);

/// FNV-1a over the serialized scenes of all splits, as 16 hex digits.
std::string content_hash(const Dataset& data);

/// Writes train.jsonl, val.jsonl, test.jsonl and manifest.json.
void save_dataset(const Dataset& data, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace odeassign

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

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "odeassign/nodelayer.hpp"
#include "odeassign/odesolve.hpp"
#include "odeassign/param_set.hpp"
#include "odeassign/taskgen.hpp"

namespace odeassign {

class PipelineError : public Error {
 public:
  using Error::Error;
};

class DivergenceError : public PipelineError {
 public:
  using PipelineError::PipelineError;
};

enum class Preproc { kFc, kGcnn };
Preproc parse_preproc(const std::string& name);
std::string to_string(Preproc p);

enum class Setting { kPredcls, kSgcls };
Setting parse_setting(const std::string& name);
std::string to_string(Setting s);

/// Architecture sizes. Label/feature counts come from the task.
struct ModelConfig {
  std::size_t obj_state = 64;
  std::size_t pair_state = 64;
  std::size_t ode_hidden = 64;
  std::size_t ode_layers = 2;
  std::size_t embed_dim = 8;
  /// Width of each of the two fc pre-processor branches.
  std::size_t preproc_width = 32;
  std::size_t pred_hidden = 64;
  Preproc preproc = Preproc::kFc;
  /// false replaces the corresponding flow by the identity.
  bool use_o_ode = true;
  bool use_p_ode = true;

  void validate() const;
};

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

struct TrainConfig {
  double lr = 1e-4;
  std::size_t batch_size = 6;
  std::size_t epochs = 10;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  SolverConfig solver;
  GradPath grad_path = GradPath::kDiscretize;
  std::uint64_t seed = 1;
  std::size_t threads = 1;

  void validate() const;
};

nlohmann::json to_json(const SolverConfig& c);
SolverConfig solver_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

/// Solver settings used by the pipeline: the library defaults plus the
/// automatic initial step.
SolverConfig pipeline_solver_defaults();

/// Parameter layout of the two-stage classifier.
class Model {
 public:
  Model(ModelConfig cfg, std::size_t feat_dim, std::size_t n_obj_labels,
        std::size_t n_pred_labels);

  const ModelConfig& config() const noexcept { return cfg_; }
  std::size_t feat_dim() const noexcept { return feat_dim_; }
  std::size_t n_obj_labels() const noexcept { return n_obj_; }
  std::size_t n_pred_labels() const noexcept { return n_pred_; }
  std::size_t obj_input_dim() const noexcept;
  std::size_t visual_dim() const noexcept;
  std::size_t semantic_dim() const noexcept;
  const OdeFunc& o_ode() const noexcept { return o_ode_; }
  const OdeFunc& p_ode() const noexcept { return p_ode_; }

  /// Fresh parameters. Each tensor is seeded from (seed, its name).
  ParamSet init(std::uint64_t seed) const;

 private:
  ModelConfig cfg_;
  std::size_t feat_dim_;
  std::size_t n_obj_;
  std::size_t n_pred_;
  OdeFunc o_ode_;
  OdeFunc p_ode_;
};

/// Encoder input rows: feature, box, softmax of the unary score row.
Tensor object_inputs(const Model& model, const SyntheticScene& scene);
/// Per ordered pair: features, union box, centre offset, log size ratios.
Tensor pair_visual(const Model& model, const SyntheticScene& scene);
/// Per ordered pair: label embeddings of subject and object.
Tensor pair_semantic(const ParamSet& params, const SyntheticScene& scene,
                     const std::vector<std::size_t>& labels);

Tensor preprocess_fc(const ParamSet& params, const Tensor& visual,
                     const Tensor& semantic);
/// Row-stochastic neighbourhood mixing: 0.8 on the diagonal, the rest spread
/// evenly.
Tensor gcnn_adjacency(std::size_t n);
Tensor preprocess_gcnn(const ParamSet& params, const Tensor& pair_vectors);

struct ObjectOutput {
  Tensor logits;  // n x n_obj_labels
  std::vector<std::size_t> labels;
  SolveStats stats;
};

struct PredicateOutput {
  Tensor logits;  // pairs x n_pred_labels
  SolveStats stats;
};

/// Forward options; grad_path matters only when a tape is active.
struct ForwardOptions {
  SolverConfig solver;
  GradPath grad_path = GradPath::kDiscretize;
};

Tensor encode_objects(const Model& model, const ParamSet& params,
                      const SyntheticScene& scene);
Tensor object_head(const ParamSet& params, const Tensor& state);
Tensor encode_pairs(const Model& model, const ParamSet& params,
                    const SyntheticScene& scene,
                    const std::vector<std::size_t>& labels);
Tensor predicate_head(const ParamSet& params, const Tensor& state);

ObjectOutput classify_objects(const Model& model, const ParamSet& params,
                              const SyntheticScene& scene,
                              const ForwardOptions& opt);
PredicateOutput classify_predicates(const Model& model, const ParamSet& params,
                                    const SyntheticScene& scene,
                                    const std::vector<std::size_t>& labels,
                                    const ForwardOptions& opt);

std::vector<std::size_t> gt_labels(const SyntheticScene& scene);

/// Mean object cross entropy plus mean predicate cross entropy, with ground
/// truth labels fed to the semantic branch.
Tensor scene_loss(const Model& model, const ParamSet& params,
                  const SyntheticScene& scene, const ForwardOptions& opt,
                  std::size_t* nfe = nullptr);

struct LossGrad {
  double loss = 0.0;
  ParamSet grads;
  std::size_t nfe = 0;
};
LossGrad scene_loss_grad(const Model& model, const ParamSet& params,
                         const SyntheticScene& scene, const ForwardOptions& opt);

struct AdamState {
  ParamSet m;
  ParamSet v;
  std::uint64_t step = 0;
};

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_obj_acc = 0.0;
  double val_recall50 = 0.0;
  double nfe_mean = 0.0;
};

void write_log_header(std::ostream& os);
void write_log_row(std::ostream& os, const EpochLog& row);

struct TrainState {
  ParamSet params;
  AdamState adam;
  std::size_t epochs_done = 0;
  std::vector<EpochLog> log;
};

TrainState initial_state(const Model& model, const TrainConfig& tc);

/// Runs epochs until `state.epochs_done == tc.epochs`. `on_epoch` is called
/// after each epoch.
void train(const Model& model, const Dataset& data, const TrainConfig& tc,
           TrainState& state,
           const std::function<void(const TrainState&)>& on_epoch = {});

struct EvalReport {
  Setting setting = Setting::kSgcls;
  std::map<std::size_t, double> recall;
  double obj_accuracy = 0.0;
  double oracle_agreement = 0.0;
  double greedy_agreement = 0.0;
  double nfe_mean = 0.0;
  double time_mean = 0.0;
  std::size_t n_scenes = 0;
  std::size_t n_objects = 0;
  std::size_t scored_scenes = 0;
};

nlohmann::json to_json(const EvalReport& r, bool with_time = true);

/// Ranked relation candidates of one scene and its non-background ground
/// truth. Each ordered pair contributes its best non-background predicate,
/// scored by p(pred)·conf(subj)·conf(obj); a candidate matches only when
/// subject, object and predicate labels are all right.
struct SceneRanking {
  std::vector<ilp::RankedPrediction> ranked;
  std::vector<ilp::LabeledPair> truth;
};
SceneRanking rank_relations(const SyntheticScene& scene,
                            const std::vector<std::size_t>& labels,
                            const std::vector<double>& label_conf,
                            const Tensor& pred_probs, std::size_t n_obj_labels);

EvalReport evaluate(const Model& model, const ParamSet& params,
                    const std::vector<SyntheticScene>& scenes, Setting setting,
                    const SolverConfig& solver);

struct SweepRow {
  double t_end = 0.0;
  double obj_acc = 0.0;
  double recall50 = 0.0;
  double nfe_mean = 0.0;
  double time_mean = 0.0;
};

std::vector<double> default_sweep_grid();
std::vector<SweepRow> sweep_tend(const Model& model, const ParamSet& params,
                                 const std::vector<SyntheticScene>& scenes,
                                 const std::vector<double>& grid,
                                 const SolverConfig& solver);
void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows);

struct ProbeStep {
  double t = 0.0;
  std::vector<std::size_t> obj_labels;
  std::vector<std::size_t> pred_labels;
  std::size_t correct_objects = 0;
  std::size_t correct_predicates = 0;
};

/// Object flow integrated once through the sorted `times`; predicates use the
/// labels predicted at each time.
std::vector<ProbeStep> trajectory_probe(const Model& model,
                                        const ParamSet& params,
                                        const SyntheticScene& scene,
                                        const std::vector<double>& times,
                                        const SolverConfig& solver);

/// Spearman rank correlation with average ranks for ties.
double spearman(const std::vector<double>& a, const std::vector<double>& b);

std::string format_double(double v);

}  // namespace odeassign

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

#include "odeassign/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <numeric>
#include <ostream>
#include <thread>

#include "odeassign/rng.hpp"

namespace odeassign {

namespace {

constexpr const char* kEncW = "obj_encoder.weight";
constexpr const char* kEncB = "obj_encoder.bias";
constexpr const char* kObjHeadW = "obj_head.weight";
constexpr const char* kObjHeadB = "obj_head.bias";
constexpr const char* kEmbed = "label_embed";
constexpr const char* kFcVisW = "pred_preproc.visual.weight";
constexpr const char* kFcVisB = "pred_preproc.visual.bias";
constexpr const char* kFcSemW = "pred_preproc.semantic.weight";
constexpr const char* kFcSemB = "pred_preproc.semantic.bias";
constexpr const char* kGcnnW = "pred_preproc.gcnn.weight";
constexpr const char* kPredHead0W = "pred_head.fc0.weight";
constexpr const char* kPredHead0B = "pred_head.fc0.bias";
constexpr const char* kPredHead1W = "pred_head.fc1.weight";
constexpr const char* kPredHead1B = "pred_head.fc1.bias";

constexpr std::size_t kBoxDim = 4;
constexpr std::size_t kGeomDim = 8;

std::size_t argmax_row(std::span<const double> row) {
  return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) -
                                  row.begin());
}

std::vector<std::size_t> argmax_rows(const Tensor& m) {
  std::vector<std::size_t> out(m.rows());
  const auto v = m.values();
  for (std::size_t r = 0; r < out.size(); ++r) {
    out[r] = argmax_row(v.subspan(r * m.cols(), m.cols()));
  }
  return out;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
      .count();
}

}  // namespace

Preproc parse_preproc(const std::string& name) {
  if (name == "fc") return Preproc::kFc;
  if (name == "gcnn") return Preproc::kGcnn;
  throw PipelineError("unknown pre-processor '" + name + "' (expected fc or gcnn)");
}

std::string to_string(Preproc p) { return p == Preproc::kFc ? "fc" : "gcnn"; }

Setting parse_setting(const std::string& name) {
  if (name == "predcls") return Setting::kPredcls;
  if (name == "sgcls") return Setting::kSgcls;
  throw PipelineError("unknown setting '" + name +
                      "' (expected predcls or sgcls)");
}

std::string to_string(Setting s) {
  return s == Setting::kPredcls ? "predcls" : "sgcls";
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw PipelineError("model config: " + m); };
  if (obj_state == 0 || pair_state == 0 || ode_hidden == 0 || embed_dim == 0 ||
      pred_hidden == 0) {
    fail("all sizes must be > 0");
  }
  if (preproc == Preproc::kFc && pair_state != 2 * preproc_width) {
    fail("fc pre-processor needs pair_state == 2 * preproc_width");
  }
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"obj_state", c.obj_state},     {"pair_state", c.pair_state},
          {"ode_hidden", c.ode_hidden},   {"ode_layers", c.ode_layers},
          {"embed_dim", c.embed_dim},     {"preproc_width", c.preproc_width},
          {"pred_hidden", c.pred_hidden}, {"preproc", to_string(c.preproc)},
          {"use_o_ode", c.use_o_ode},     {"use_p_ode", c.use_p_ode}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.obj_state = j.at("obj_state").get<std::size_t>();
  c.pair_state = j.at("pair_state").get<std::size_t>();
  c.ode_hidden = j.at("ode_hidden").get<std::size_t>();
  c.ode_layers = j.at("ode_layers").get<std::size_t>();
  c.embed_dim = j.at("embed_dim").get<std::size_t>();
  c.preproc_width = j.at("preproc_width").get<std::size_t>();
  c.pred_hidden = j.at("pred_hidden").get<std::size_t>();
  c.preproc = parse_preproc(j.at("preproc").get<std::string>());
  c.use_o_ode = j.at("use_o_ode").get<bool>();
  c.use_p_ode = j.at("use_p_ode").get<bool>();
  c.validate();
  return c;
}

void TrainConfig::validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) {
    throw PipelineError("train config: lr must be finite and >= 0");
  }
  if (batch_size == 0) throw PipelineError("train config: batch_size must be >= 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
    throw PipelineError("train config: adam betas must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw PipelineError("train config: eps must be > 0");
  if (threads == 0) throw PipelineError("train config: threads must be >= 1");
  solver.validate();
}

nlohmann::json to_json(const SolverConfig& c) {
  nlohmann::json j{{"atol", c.atol},
                   {"rtol", c.rtol},
                   {"t_end", c.t_end},
                   {"auto_h_init", c.auto_h_init},
                   {"h_min", c.h_min},
                   {"safety", c.safety},
                   {"max_steps", c.max_steps},
                   {"adaptive", c.adaptive}};
  j["h_init"] = c.h_init ? nlohmann::json(*c.h_init) : nlohmann::json(nullptr);
  j["h_max"] = std::isfinite(c.h_max) ? nlohmann::json(c.h_max)
                                      : nlohmann::json(nullptr);
  return j;
}

SolverConfig solver_config_from_json(const nlohmann::json& j) {
  SolverConfig c;
  c.atol = j.at("atol").get<double>();
  c.rtol = j.at("rtol").get<double>();
  c.t_end = j.at("t_end").get<double>();
  c.auto_h_init = j.at("auto_h_init").get<bool>();
  c.h_min = j.at("h_min").get<double>();
  c.safety = j.at("safety").get<double>();
  c.max_steps = j.at("max_steps").get<std::size_t>();
  c.adaptive = j.at("adaptive").get<bool>();
  if (!j.at("h_init").is_null()) c.h_init = j.at("h_init").get<double>();
  if (!j.at("h_max").is_null()) c.h_max = j.at("h_max").get<double>();
  c.validate();
  return c;
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"lr", c.lr},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"eps", c.eps},
          {"solver", to_json(c.solver)},
          {"grad_path", to_string(c.grad_path)},
          {"seed", c.seed}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.lr = j.at("lr").get<double>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.epochs = j.at("epochs").get<std::size_t>();
  c.beta1 = j.at("beta1").get<double>();
  c.beta2 = j.at("beta2").get<double>();
  c.eps = j.at("eps").get<double>();
  c.solver = solver_config_from_json(j.at("solver"));
  c.grad_path = parse_grad_path(j.at("grad_path").get<std::string>());
  c.seed = j.at("seed").get<std::uint64_t>();
  c.validate();
  return c;
}

SolverConfig pipeline_solver_defaults() {
  SolverConfig c;
  c.auto_h_init = true;
  return c;
}

// ---------------------------------------------------------------------------
// Model

Model::Model(ModelConfig cfg, std::size_t feat_dim, std::size_t n_obj_labels,
             std::size_t n_pred_labels)
    : cfg_(cfg),
      feat_dim_(feat_dim),
      n_obj_(n_obj_labels),
      n_pred_(n_pred_labels),
      o_ode_("o_ode", OdeFuncSpec{cfg.obj_state, cfg.ode_hidden, cfg.ode_layers,
                                  true}),
      p_ode_("p_ode", OdeFuncSpec{cfg.pair_state, cfg.ode_hidden,
                                  cfg.ode_layers, false}) {
  cfg_.validate();
  if (feat_dim == 0 || n_obj_labels < 2 || n_pred_labels < 2) {
    throw PipelineError("model: task dimensions are degenerate");
  }
}

std::size_t Model::obj_input_dim() const noexcept {
  return feat_dim_ + kBoxDim + n_obj_;
}

std::size_t Model::visual_dim() const noexcept {
  return 2 * feat_dim_ + kGeomDim;
}

std::size_t Model::semantic_dim() const noexcept { return 2 * cfg_.embed_dim; }

ParamSet Model::init(std::uint64_t seed) const {
  ParamSet p;
  auto dense = [&](const std::string& w, const std::string& b, std::size_t out,
                   std::size_t in, std::size_t fan_in) {
    Rng rng = Rng::derive(seed, w);
    const double sd = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::vector<double> v(out * in);
    for (auto& x : v) x = sd * rng.normal();
    p.add(w, Tensor::matrix(out, in, std::move(v)));
    if (!b.empty()) p.add(b, Tensor(Shape{out}, 0.0));
  };
  dense(kEncW, kEncB, cfg_.obj_state, obj_input_dim(), obj_input_dim());
  dense(kObjHeadW, kObjHeadB, n_obj_, cfg_.obj_state, cfg_.obj_state);
  {
    Rng rng = Rng::derive(seed, kEmbed);
    std::vector<double> v(n_obj_ * cfg_.embed_dim);
    for (auto& x : v) x = rng.normal();
    p.add(kEmbed, Tensor::matrix(n_obj_, cfg_.embed_dim, std::move(v)));
  }
  if (cfg_.preproc == Preproc::kFc) {
    dense(kFcVisW, kFcVisB, cfg_.preproc_width, visual_dim(), visual_dim());
    dense(kFcSemW, kFcSemB, cfg_.preproc_width, semantic_dim(),
          semantic_dim());
  } else {
    // Stored input-major: the pre-processor computes A·X·W.
    const std::size_t in = visual_dim() + semantic_dim();
    dense(kGcnnW, "", in, cfg_.pair_state, in);
  }
  dense(kPredHead0W, kPredHead0B, cfg_.pred_hidden, cfg_.pair_state,
        cfg_.pair_state);
  dense(kPredHead1W, kPredHead1B, n_pred_, cfg_.pred_hidden, cfg_.pred_hidden);
  if (cfg_.use_o_ode) o_ode_.init_params(p, seed);
  if (cfg_.use_p_ode) p_ode_.init_params(p, seed);
  return p;
}

// ---------------------------------------------------------------------------
// Inputs

Tensor object_inputs(const Model& model, const SyntheticScene& scene) {
  const std::size_t n = scene.n_objects();
  const std::size_t F = model.feat_dim();
  const std::size_t L = model.n_obj_labels();
  if (scene.obj_alpha.size() != n * L) {
    throw ShapeError("scene " + std::to_string(scene.id) +
                     ": unary scores do not match the model's label count");
  }
  const Tensor soft =
      softmax_rows(Tensor::matrix(n, L, scene.obj_alpha));
  const std::size_t d = model.obj_input_dim();
  std::vector<double> v(n * d);
  for (std::size_t u = 0; u < n; ++u) {
    const auto& o = scene.objects[u];
    if (o.feature.size() != F) {
      throw ShapeError("scene " + std::to_string(scene.id) + ": feature of size " +
                       std::to_string(o.feature.size()) + ", model expects " +
                       std::to_string(F));
    }
    double* row = &v[u * d];
    std::copy(o.feature.begin(), o.feature.end(), row);
    std::copy(o.box.begin(), o.box.end(), row + F);
    for (std::size_t l = 0; l < L; ++l) row[F + kBoxDim + l] = soft[u * L + l];
  }
  return Tensor::matrix(n, d, std::move(v));
}

Tensor pair_visual(const Model& model, const SyntheticScene& scene) {
  const std::size_t F = model.feat_dim();
  const std::size_t d = model.visual_dim();
  const std::size_t m = scene.pairs.size();
  std::vector<double> v(m * d);
  for (std::size_t i = 0; i < m; ++i) {
    const auto& s = scene.objects[scene.pairs[i].subj];
    const auto& o = scene.objects[scene.pairs[i].obj];
    double* row = &v[i * d];
    std::copy(s.feature.begin(), s.feature.end(), row);
    std::copy(o.feature.begin(), o.feature.end(), row + F);
    double* g = row + 2 * F;
    g[0] = std::min(s.box[0], o.box[0]);
    g[1] = std::min(s.box[1], o.box[1]);
    g[2] = std::max(s.box[2], o.box[2]);
    g[3] = std::max(s.box[3], o.box[3]);
    g[4] = 0.5 * (o.box[0] + o.box[2] - s.box[0] - s.box[2]);
    g[5] = 0.5 * (o.box[1] + o.box[3] - s.box[1] - s.box[3]);
    auto extent = [](double lo, double hi) { return std::max(hi - lo, 1e-6); };
    g[6] = std::log(extent(o.box[0], o.box[2]) / extent(s.box[0], s.box[2]));
    g[7] = std::log(extent(o.box[1], o.box[3]) / extent(s.box[1], s.box[3]));
  }
  return Tensor::matrix(m, d, std::move(v));
}

Tensor pair_semantic(const ParamSet& params, const SyntheticScene& scene,
                     const std::vector<std::size_t>& labels) {
  if (labels.size() != scene.n_objects()) {
    throw ShapeError("pair_semantic: " + std::to_string(labels.size()) +
                     " labels for " + std::to_string(scene.n_objects()) +
                     " objects");
  }
  std::vector<std::size_t> subj;
  std::vector<std::size_t> obj;
  for (const auto& p : scene.pairs) {
    subj.push_back(labels[p.subj]);
    obj.push_back(labels[p.obj]);
  }
  const Tensor& table = params.at(kEmbed);
  return hconcat({gather_rows(table, subj), gather_rows(table, obj)});
}

Tensor preprocess_fc(const ParamSet& params, const Tensor& visual,
                     const Tensor& semantic) {
  return hconcat({linear(params.at(kFcVisW), params.at(kFcVisB), visual),
                  linear(params.at(kFcSemW), params.at(kFcSemB), semantic)});
}

Tensor gcnn_adjacency(std::size_t n) {
  if (n == 0) throw ShapeError("gcnn_adjacency: needs at least one node");
  if (n == 1) return Tensor::matrix(1, 1, {1.0});
  const double off = 0.2 / static_cast<double>(n - 1);
  std::vector<double> a(n * n, off);
  for (std::size_t i = 0; i < n; ++i) a[i * n + i] = 0.8;
  return Tensor::matrix(n, n, std::move(a));
}

Tensor preprocess_gcnn(const ParamSet& params, const Tensor& pair_vectors) {
  if (pair_vectors.rank() != 2 || pair_vectors.rows() == 0) {
    throw ShapeError("preprocess_gcnn: expects a non-empty matrix of pairs");
  }
  return matmul(gcnn_adjacency(pair_vectors.rows()),
                matmul(pair_vectors, params.at(kGcnnW)));
}

// ---------------------------------------------------------------------------
// Forward

Tensor encode_objects(const Model& model, const ParamSet& params,
                      const SyntheticScene& scene) {
  return linear(params.at(kEncW), params.at(kEncB), object_inputs(model, scene));
}

Tensor object_head(const ParamSet& params, const Tensor& state) {
  return linear(params.at(kObjHeadW), params.at(kObjHeadB), state);
}

Tensor encode_pairs(const Model& model, const ParamSet& params,
                    const SyntheticScene& scene,
                    const std::vector<std::size_t>& labels) {
  const Tensor visual = pair_visual(model, scene);
  const Tensor semantic = pair_semantic(params, scene, labels);
  if (model.config().preproc == Preproc::kFc) {
    return preprocess_fc(params, visual, semantic);
  }
  return preprocess_gcnn(params, hconcat({visual, semantic}));
}

Tensor predicate_head(const ParamSet& params, const Tensor& state) {
  const Tensor h = activation(
      Activation::kRelu,
      linear(params.at(kPredHead0W), params.at(kPredHead0B), state));
  return linear(params.at(kPredHead1W), params.at(kPredHead1B), h);
}

ObjectOutput classify_objects(const Model& model, const ParamSet& params,
                              const SyntheticScene& scene,
                              const ForwardOptions& opt) {
  ObjectOutput out;
  Tensor x = encode_objects(model, params, scene);
  if (model.config().use_o_ode) {
    x = ode_layer(model.o_ode(), params, x, opt.solver, opt.grad_path,
                  &out.stats);
  }
  out.logits = object_head(params, x);
  out.labels = argmax_rows(out.logits);
  return out;
}

PredicateOutput classify_predicates(const Model& model, const ParamSet& params,
                                    const SyntheticScene& scene,
                                    const std::vector<std::size_t>& labels,
                                    const ForwardOptions& opt) {
  PredicateOutput out;
  Tensor x = encode_pairs(model, params, scene, labels);
  if (model.config().use_p_ode) {
    x = ode_layer(model.p_ode(), params, x, opt.solver, opt.grad_path,
                  &out.stats);
  }
  out.logits = predicate_head(params, x);
  return out;
}

std::vector<std::size_t> gt_labels(const SyntheticScene& scene) {
  std::vector<std::size_t> out;
  out.reserve(scene.n_objects());
  for (const auto& o : scene.objects) out.push_back(o.gt_label);
  return out;
}

Tensor scene_loss(const Model& model, const ParamSet& params,
                  const SyntheticScene& scene, const ForwardOptions& opt,
                  std::size_t* nfe) {
  const auto labels = gt_labels(scene);
  const ObjectOutput obj = classify_objects(model, params, scene, opt);
  const PredicateOutput pred =
      classify_predicates(model, params, scene, labels, opt);
  std::vector<std::size_t> preds;
  preds.reserve(scene.pairs.size());
  for (const auto& p : scene.pairs) preds.push_back(p.gt_predicate);
  if (nfe != nullptr) *nfe = obj.stats.nfe + pred.stats.nfe;
  return add(softmax_cross_entropy_rows(obj.logits, labels),
             softmax_cross_entropy_rows(pred.logits, preds));
}

LossGrad scene_loss_grad(const Model& model, const ParamSet& params,
                         const SyntheticScene& scene, const ForwardOptions& opt) {
  Tape tape;
  LossGrad out;
  Tensor loss;
  {
    TapeScope scope(&tape);
    const ParamSet watched = params.watch(tape);
    loss = scene_loss(model, watched, scene, opt, &out.nfe);
  }
  out.loss = loss.item();
  const Gradients g = backward(tape, loss);
  out.grads = params.zeros_like();
  for (const auto& [name, _] : params) out.grads.assign(name, g[name]);
  return out;
}

// ---------------------------------------------------------------------------
// Training

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

void write_log_header(std::ostream& os) {
  os << "epoch,train_loss,val_obj_acc,val_recall50,nfe_mean\n";
}

void write_log_row(std::ostream& os, const EpochLog& r) {
  os << r.epoch << ',' << format_double(r.train_loss) << ','
     << format_double(r.val_obj_acc) << ',' << format_double(r.val_recall50)
     << ',' << format_double(r.nfe_mean) << '\n';
}

TrainState initial_state(const Model& model, const TrainConfig& tc) {
  TrainState s;
  s.params = model.init(tc.seed);
  s.adam.m = s.params.zeros_like();
  s.adam.v = s.params.zeros_like();
  return s;
}

namespace {

void adam_update(const TrainConfig& tc, TrainState& s,
                 const std::vector<double>& grad) {
  ++s.adam.step;
  std::vector<double> p = s.params.flatten();
  std::vector<double> m = s.adam.m.flatten();
  std::vector<double> v = s.adam.v.flatten();
  const double t = static_cast<double>(s.adam.step);
  const double c1 = 1.0 - std::pow(tc.beta1, t);
  const double c2 = 1.0 - std::pow(tc.beta2, t);
  for (std::size_t i = 0; i < p.size(); ++i) {
    m[i] = tc.beta1 * m[i] + (1.0 - tc.beta1) * grad[i];
    v[i] = tc.beta2 * v[i] + (1.0 - tc.beta2) * grad[i] * grad[i];
    const double mh = m[i] / c1;
    const double vh = v[i] / c2;
    p[i] -= tc.lr * mh / (std::sqrt(vh) + tc.eps);
  }
  s.params.unflatten(p);
  s.adam.m.unflatten(m);
  s.adam.v.unflatten(v);
}

std::vector<LossGrad> batch_grads(const Model& model, const ParamSet& params,
                                  const std::vector<const SyntheticScene*>& batch,
                                  const ForwardOptions& opt,
                                  std::size_t threads) {
  std::vector<LossGrad> out(batch.size());
  threads = std::max<std::size_t>(1, std::min(threads, batch.size()));
  if (threads == 1) {
    for (std::size_t i = 0; i < batch.size(); ++i) {
      out[i] = scene_loss_grad(model, params, *batch[i], opt);
    }
    return out;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < batch.size(); i += threads) {
          out[i] = scene_loss_grad(model, params, *batch[i], opt);
        }
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

}  // namespace

void train(const Model& model, const Dataset& data, const TrainConfig& tc,
           TrainState& state,
           const std::function<void(const TrainState&)>& on_epoch) {
  tc.validate();
  if (data.train.empty()) throw PipelineError("train: training split is empty");
  const ForwardOptions opt{tc.solver, tc.grad_path};
  const std::uint64_t shuffle_seed = mix_seed(tc.seed, fnv1a64("shuffle"));
  while (state.epochs_done < tc.epochs) {
    const std::size_t epoch = state.epochs_done + 1;
    std::vector<std::size_t> order(data.train.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng = Rng::derive(shuffle_seed, epoch);
    rng.shuffle(std::span<std::size_t>(order));

    double loss_sum = 0.0;
    double nfe_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += tc.batch_size) {
      const std::size_t end = std::min(order.size(), start + tc.batch_size);
      std::vector<const SyntheticScene*> batch;
      for (std::size_t i = start; i < end; ++i) {
        batch.push_back(&data.train[order[i]]);
      }
      std::vector<LossGrad> grads;
      try {
        grads = batch_grads(model, state.params, batch, opt, tc.threads);
      } catch (const NonFiniteError& e) {
        throw DivergenceError("training diverged in epoch " +
                              std::to_string(epoch) + ": " + e.what());
      }
      std::vector<double> total(state.params.total_size(), 0.0);
      for (const auto& g : grads) {
        if (!std::isfinite(g.loss)) {
          throw DivergenceError("training loss is non-finite in epoch " +
                                std::to_string(epoch));
        }
        loss_sum += g.loss;
        nfe_sum += static_cast<double>(g.nfe);
        const auto flat = g.grads.flatten();
        for (std::size_t i = 0; i < total.size(); ++i) total[i] += flat[i];
      }
      const double inv = 1.0 / static_cast<double>(grads.size());
      for (auto& x : total) x *= inv;
      adam_update(tc, state, total);
    }

    EpochLog row;
    row.epoch = epoch;
    row.train_loss = loss_sum / static_cast<double>(order.size());
    const std::size_t solves =
        (model.config().use_o_ode ? 1 : 0) + (model.config().use_p_ode ? 1 : 0);
    row.nfe_mean = solves == 0 ? 0.0
                               : nfe_sum / static_cast<double>(order.size() *
                                                               solves);
    if (!data.val.empty()) {
      const EvalReport r =
          evaluate(model, state.params, data.val, Setting::kSgcls, tc.solver);
      row.val_obj_acc = r.obj_accuracy;
      row.val_recall50 = r.recall.at(50);
    }
    state.log.push_back(row);
    state.epochs_done = epoch;
    if (on_epoch) on_epoch(state);
  }
}

// ---------------------------------------------------------------------------
// Evaluation

nlohmann::json to_json(const EvalReport& r, bool with_time) {
  nlohmann::ordered_json recall;
  for (const auto& [k, v] : r.recall) recall[std::to_string(k)] = v;
  nlohmann::ordered_json j;
  j["setting"] = to_string(r.setting);
  j["recall"] = recall;
  j["obj_accuracy"] = r.obj_accuracy;
  j["oracle_agreement"] = r.oracle_agreement;
  j["greedy_agreement"] = r.greedy_agreement;
  j["nfe_mean"] = r.nfe_mean;
  if (with_time) j["time_mean"] = r.time_mean;
  j["n_scenes"] = r.n_scenes;
  j["n_objects"] = r.n_objects;
  j["scored_scenes"] = r.scored_scenes;
  return j;
}

SceneRanking rank_relations(const SyntheticScene& scene,
                            const std::vector<std::size_t>& labels,
                            const std::vector<double>& label_conf,
                            const Tensor& pred_probs, std::size_t n_obj_labels) {
  const std::size_t L = n_obj_labels;
  const std::size_t P = pred_probs.cols();
  if (pred_probs.rows() != scene.pairs.size() || P < 2 ||
      labels.size() != scene.n_objects() ||
      label_conf.size() != scene.n_objects()) {
    throw ShapeError("rank_relations: inputs do not match the scene");
  }
  const auto gt = gt_labels(scene);
  SceneRanking out;
  for (std::size_t i = 0; i < scene.pairs.size(); ++i) {
    const auto& p = scene.pairs[i];
    const auto row = pred_probs.values().subspan(i * P, P);
    const std::size_t k = 1 + argmax_row(row.subspan(1));
    const double score = row[k] * label_conf[p.subj] * label_conf[p.obj];
    out.ranked.push_back({i, (labels[p.subj] * L + labels[p.obj]) * P + k, score});
    if (p.gt_predicate != 0) {
      out.truth.push_back({i, (gt[p.subj] * L + gt[p.obj]) * P + p.gt_predicate});
    }
  }
  return out;
}

EvalReport evaluate(const Model& model, const ParamSet& params,
                    const std::vector<SyntheticScene>& scenes, Setting setting,
                    const SolverConfig& solver) {
  if (scenes.empty()) throw PipelineError("evaluate: no scenes");
  solver.validate();
  TapeScope untaped(nullptr);
  const ForwardOptions opt{solver, GradPath::kDiscretize};
  const std::size_t L = model.n_obj_labels();
  const std::array<std::size_t, 3> ks{20, 50, 100};

  EvalReport r;
  r.setting = setting;
  for (std::size_t k : ks) r.recall[k] = 0.0;
  std::size_t correct = 0;
  std::size_t oracle = 0;
  std::size_t greedy = 0;
  double nfe = 0.0;
  std::size_t solves = 0;
  double time = 0.0;

  for (const auto& scene : scenes) {
    const auto start = std::chrono::steady_clock::now();
    const auto gt = gt_labels(scene);
    std::vector<std::size_t> labels = gt;
    std::vector<double> label_conf(scene.n_objects(), 1.0);
    if (setting == Setting::kSgcls) {
      const ObjectOutput obj = classify_objects(model, params, scene, opt);
      labels = obj.labels;
      const Tensor probs = softmax_rows(obj.logits);
      for (std::size_t u = 0; u < labels.size(); ++u) {
        label_conf[u] = probs[u * L + labels[u]];
      }
      if (model.config().use_o_ode) {
        nfe += static_cast<double>(obj.stats.nfe);
        ++solves;
      }
    }
    const PredicateOutput pred =
        classify_predicates(model, params, scene, labels, opt);
    if (model.config().use_p_ode) {
      nfe += static_cast<double>(pred.stats.nfe);
      ++solves;
    }
    const Tensor probs = softmax_rows(pred.logits);

    const SceneRanking rk = rank_relations(scene, labels, label_conf, probs, L);
    const auto& truth = rk.truth;
    const auto& ranked = rk.ranked;
    if (!truth.empty()) {
      ++r.scored_scenes;
      for (std::size_t k : ks) {
        r.recall[k] += ilp::recall_topk(ranked, truth, k).recall;
      }
    }

    const auto g = greedy_labels(scene, L);
    for (std::size_t u = 0; u < labels.size(); ++u) {
      correct += labels[u] == gt[u];
      oracle += labels[u] == scene.oracle_obj[u];
      greedy += g[u] == scene.oracle_obj[u];
    }
    r.n_objects += labels.size();
    time += seconds_since(start);
  }
  r.n_scenes = scenes.size();
  for (auto& [k, v] : r.recall) {
    v = r.scored_scenes == 0 ? 1.0 : v / static_cast<double>(r.scored_scenes);
  }
  const double n_obj = static_cast<double>(r.n_objects);
  r.obj_accuracy = static_cast<double>(correct) / n_obj;
  r.oracle_agreement = static_cast<double>(oracle) / n_obj;
  r.greedy_agreement = static_cast<double>(greedy) / n_obj;
  r.nfe_mean = solves == 0 ? 0.0 : nfe / static_cast<double>(solves);
  r.time_mean = time / static_cast<double>(scenes.size());
  return r;
}

std::vector<double> default_sweep_grid() {
  return {0.05, 0.25, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0};
}

std::vector<SweepRow> sweep_tend(const Model& model, const ParamSet& params,
                                 const std::vector<SyntheticScene>& scenes,
                                 const std::vector<double>& grid,
                                 const SolverConfig& solver) {
  std::vector<SweepRow> rows;
  for (double t : grid) {
    SolverConfig cfg = solver;
    cfg.t_end = t;
    const EvalReport r = evaluate(model, params, scenes, Setting::kSgcls, cfg);
    rows.push_back({t, r.obj_accuracy, r.recall.at(50), r.nfe_mean, r.time_mean});
  }
  return rows;
}

void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows) {
  os << "t_end,obj_acc,recall50,nfe_mean,time_mean\n";
  for (const auto& r : rows) {
    os << format_double(r.t_end) << ',' << format_double(r.obj_acc) << ','
       << format_double(r.recall50) << ',' << format_double(r.nfe_mean) << ','
       << format_double(r.time_mean) << '\n';
  }
}

std::vector<ProbeStep> trajectory_probe(const Model& model,
                                        const ParamSet& params,
                                        const SyntheticScene& scene,
                                        const std::vector<double>& times,
                                        const SolverConfig& solver) {
  if (!std::is_sorted(times.begin(), times.end()) ||
      (!times.empty() && times.front() < 0.0)) {
    throw PipelineError("trajectory_probe: times must be sorted and >= 0");
  }
  TapeScope untaped(nullptr);
  const Tensor x0 = encode_objects(model, params, scene);
  std::vector<Tensor> states;
  if (model.config().use_o_ode) {
    states = integrate_to_times(model.o_ode().bind(params), x0, 0.0, times,
                                solver);
  } else {
    states.assign(times.size(), x0);
  }
  const auto gt = gt_labels(scene);
  std::vector<ProbeStep> out;
  for (std::size_t i = 0; i < times.size(); ++i) {
    ProbeStep step;
    step.t = times[i];
    step.obj_labels = argmax_rows(object_head(params, states[i]));
    Tensor x = encode_pairs(model, params, scene, step.obj_labels);
    if (model.config().use_p_ode && times[i] > 0.0) {
      SolverConfig cfg = solver;
      cfg.t_end = times[i];
      x = integrate(model.p_ode().bind(params), x, 0.0, times[i], cfg).x;
    }
    step.pred_labels = argmax_rows(predicate_head(params, x));
    for (std::size_t u = 0; u < gt.size(); ++u) {
      step.correct_objects += step.obj_labels[u] == gt[u];
    }
    for (std::size_t j = 0; j < scene.pairs.size(); ++j) {
      step.correct_predicates +=
          step.pred_labels[j] == scene.pairs[j].gt_predicate;
    }
    out.push_back(std::move(step));
  }
  return out;
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) {
    throw PipelineError("spearman: needs two equal-length series of >= 2 values");
  }
  auto ranks = [](const std::vector<double>& x) {
    std::vector<std::size_t> idx(x.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t i, std::size_t j) { return x[i] < x[j]; });
    std::vector<double> r(x.size());
    for (std::size_t i = 0; i < idx.size();) {
      std::size_t j = i;
      while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
      const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
      for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  const auto ra = ranks(a);
  const auto rb = ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0.0;
  double saa = 0.0;
  double sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

}  // namespace odeassign

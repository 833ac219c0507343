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

#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "odeassign/pipeline.hpp"
#include "odeassign/rng.hpp"
#include "support.hpp"

using namespace odeassign;
using testing::to_vec;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.obj_state = 8;
  c.pair_state = 8;
  c.preproc_width = 4;
  c.ode_hidden = 8;
  c.embed_dim = 4;
  c.pred_hidden = 8;
  return c;
}

TaskConfig small_task() {
  TaskConfig t;
  t.seed = 11;
  t.max_objects = 5;
  return t;
}

Model make_model(const TaskConfig& t, ModelConfig c = tiny_config()) {
  return Model(c, t.feat_dim, t.n_obj_labels, t.n_pred_labels);
}

ForwardOptions forward_opts() { return {pipeline_solver_defaults()}; }

/// Zeroes every entry of `p` whose name starts with `prefix`.
void zero_prefix(ParamSet& p, const std::string& prefix) {
  for (const auto& name : p.names()) {
    if (name.rfind(prefix, 0) == 0) {
      p.assign(name, Tensor(p.at(name).shape(), 0.0));
    }
  }
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.shape() == b.shape());
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

std::vector<std::size_t> row_argmax(const Tensor& t) {
  std::vector<std::size_t> out;
  const std::size_t c = t.cols();
  for (std::size_t r = 0; r < t.rows(); ++r) {
    const auto row = t.values().subspan(r * c, c);
    out.push_back(static_cast<std::size_t>(
        std::max_element(row.begin(), row.end()) - row.begin()));
  }
  return out;
}

double loss_of(const Model& m, const ParamSet& p, const SyntheticScene& s,
               const ForwardOptions& opt) {
  TapeScope off(nullptr);
  return scene_loss(m, p, s, opt).item();
}

}  // namespace

TEST_CASE("softmax rows of predicate logits sum to one") {
  const TaskConfig t = small_task();
  const Model m = make_model(t);
  const ParamSet p = m.init(3);
  const SyntheticScene s = gen_scene(t, 0);
  const auto obj = classify_objects(m, p, s, forward_opts());
  const auto pred = classify_predicates(m, p, s, obj.labels, forward_opts());
  const Tensor probs = softmax_rows(pred.logits);
  REQUIRE(probs.rows() == s.pairs.size());
  for (std::size_t r = 0; r < probs.rows(); ++r) {
    double sum = 0.0;
    for (std::size_t c = 0; c < probs.cols(); ++c) sum += probs[r * probs.cols() + c];
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("zero object field leaves the encoding unchanged") {
  const TaskConfig t = small_task();
  const Model m = make_model(t);
  ParamSet p = m.init(3);
  zero_prefix(p, "o_ode.");
  const SyntheticScene s = gen_scene(t, 1);
  const auto obj = classify_objects(m, p, s, forward_opts());
  const Tensor expect = object_head(p, encode_objects(m, p, s));
  CHECK(max_abs_diff(obj.logits, expect) == 0.0);
}

TEST_CASE("zero pair field and zero head give uniform predicates") {
  const TaskConfig t = small_task();
  const Model m = make_model(t);
  ParamSet p = m.init(3);
  zero_prefix(p, "p_ode.");
  zero_prefix(p, "pred_head.");
  const SyntheticScene s = gen_scene(t, 2);
  const auto pred = classify_predicates(m, p, s, gt_labels(s), forward_opts());
  const Tensor probs = softmax_rows(pred.logits);
  const double u = 1.0 / static_cast<double>(t.n_pred_labels);
  for (double v : probs.values()) CHECK(v == doctest::Approx(u).epsilon(1e-12));
}

TEST_CASE("two-object scene yields two pair distributions") {
  TaskConfig t = small_task();
  t.min_objects = 2;
  t.max_objects = 2;
  const Model m = make_model(t);
  const ParamSet p = m.init(5);
  const SyntheticScene s = gen_scene(t, 0);
  REQUIRE(s.n_objects() == 2);
  const auto pred = classify_predicates(m, p, s, gt_labels(s), forward_opts());
  CHECK(pred.logits.rows() == 2);
  CHECK(pred.logits.cols() == t.n_pred_labels);
}

TEST_CASE("fc pre-processor") {
  const TaskConfig t = small_task();
  const Model m = make_model(t);
  ParamSet p = m.init(3);
  const SyntheticScene s = gen_scene(t, 3);
  const Tensor vis = pair_visual(m, s);
  const Tensor sem = pair_semantic(p, s, gt_labels(s));
  const std::size_t w = m.config().preproc_width;

  SUBCASE("zero weights give the biases") {
    zero_prefix(p, "pred_preproc.");
    const Tensor out = preprocess_fc(p, vis, sem);
    CHECK(out.cols() == 2 * w);
    for (double v : out.values()) CHECK(v == 0.0);
  }
  SUBCASE("identity weights copy the leading inputs") {
    std::vector<double> eye_v(w * vis.cols(), 0.0);
    std::vector<double> eye_s(w * sem.cols(), 0.0);
    for (std::size_t i = 0; i < w; ++i) {
      eye_v[i * vis.cols() + i] = 1.0;
      eye_s[i * sem.cols() + i] = 1.0;
    }
    p.assign("pred_preproc.visual.weight", Tensor::matrix(w, vis.cols(), eye_v));
    p.assign("pred_preproc.semantic.weight", Tensor::matrix(w, sem.cols(), eye_s));
    zero_prefix(p, "pred_preproc.visual.bias");
    zero_prefix(p, "pred_preproc.semantic.bias");
    const Tensor out = preprocess_fc(p, vis, sem);
    for (std::size_t r = 0; r < out.rows(); ++r) {
      for (std::size_t i = 0; i < w; ++i) {
        CHECK(out[r * 2 * w + i] == vis[r * vis.cols() + i]);
        CHECK(out[r * 2 * w + w + i] == sem[r * sem.cols() + i]);
      }
    }
  }
  SUBCASE("gradient matches central differences") {
    Rng rng(17);
    const Tensor c = testing::random_tensor(rng, {vis.rows(), 2 * w});
    auto loss = [&](const ParamSet& q) {
      TapeScope off(nullptr);
      const Tensor out = preprocess_fc(q, vis, sem);
      double acc = 0.0;
      for (std::size_t i = 0; i < out.size(); ++i) acc += c[i] * out[i];
      return acc;
    };
    const ParamSet sub = p.subset("pred_preproc.");
    Tape tape;
    Tensor out;
    ParamSet watched;
    {
      TapeScope scope(&tape);
      watched = p.watch(tape);
      out = sum(mul(preprocess_fc(watched, vis, sem), c));
    }
    const Gradients g = backward(tape, out);
    std::vector<double> analytic;
    for (const auto& [name, _] : sub) {
      const auto v = to_vec(g[name]);
      analytic.insert(analytic.end(), v.begin(), v.end());
    }
    const auto numeric = testing::central_diff(
        [&](const std::vector<double>& v) {
          ParamSet q = p;
          ParamSet s2 = sub;
          s2.unflatten(v);
          for (const auto& [name, val] : s2) q.assign(name, val);
          return loss(q);
        },
        sub.flatten());
    CHECK(testing::worst_relative(analytic, numeric, 1.0) < 1e-7);
  }
}

TEST_CASE("gcnn adjacency and pre-processor") {
  CHECK(gcnn_adjacency(1)[0] == 1.0);
  for (std::size_t n : {2u, 3u, 7u}) {
    const Tensor a = gcnn_adjacency(n);
    for (std::size_t r = 0; r < n; ++r) {
      double sum = 0.0;
      for (std::size_t c = 0; c < n; ++c) sum += a[r * n + c];
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-14));
      CHECK(a[r * n + r] == 0.8);
    }
  }
  CHECK_THROWS_AS(gcnn_adjacency(0), ShapeError);

  const TaskConfig t = small_task();
  ModelConfig c = tiny_config();
  c.preproc = Preproc::kGcnn;
  const Model m = make_model(t, c);
  const ParamSet p = m.init(3);
  // Identical rows stay identical under row-stochastic mixing.
  const std::size_t in = m.visual_dim() + m.semantic_dim();
  const Tensor same(Shape{4, in}, 0.5);
  const Tensor out = preprocess_gcnn(p, same);
  const Tensor single = preprocess_gcnn(p, Tensor(Shape{1, in}, 0.5));
  for (std::size_t r = 0; r < 4; ++r) {
    for (std::size_t k = 0; k < out.cols(); ++k) {
      CHECK(out[r * out.cols() + k] == doctest::Approx(single[k]).epsilon(1e-12));
    }
  }
  const SyntheticScene s = gen_scene(t, 4);
  const auto pred = classify_predicates(m, p, s, gt_labels(s), forward_opts());
  CHECK(pred.logits.rows() == s.pairs.size());
}

TEST_CASE("model config validation") {
  ModelConfig c = tiny_config();
  c.pair_state = 10;
  CHECK_THROWS_AS(c.validate(), PipelineError);
  c = tiny_config();
  c.obj_state = 0;
  CHECK_THROWS_AS(c.validate(), PipelineError);
  CHECK(model_config_from_json(to_json(tiny_config())).pair_state == 8);
}

TEST_CASE("end-to-end gradients match finite differences") {
  const TaskConfig t = small_task();
  const Model m = make_model(t);
  const ParamSet p = m.init(9);
  const SyntheticScene s = gen_scene(t, 5);
  const auto numeric_for = [&](const ForwardOptions& opt) {
    return testing::central_diff(
        [&](const std::vector<double>& v) {
          ParamSet q = p;
          q.unflatten(v);
          return loss_of(m, q, s, opt);
        },
        p.flatten());
  };

  SUBCASE("discretize-then-optimise on a fixed grid") {
    ForwardOptions opt;
    opt.solver.adaptive = false;
    opt.solver.h_init = 0.1;
    opt.grad_path = GradPath::kDiscretize;
    const auto lg = scene_loss_grad(m, p, s, opt);
    CHECK(lg.loss == doctest::Approx(loss_of(m, p, s, opt)).epsilon(1e-12));
    CHECK(testing::worst_relative(lg.grads.flatten(), numeric_for(opt), 1e-2) <
          1e-6);
  }
  SUBCASE("adjoint at tight tolerance") {
    ForwardOptions opt;
    opt.solver.atol = opt.solver.rtol = 1e-10;
    opt.grad_path = GradPath::kAdjoint;
    const auto lg = scene_loss_grad(m, p, s, opt);
    CHECK(testing::worst_relative(lg.grads.flatten(), numeric_for(opt), 1e-2) <
          1e-5);
  }
}

TEST_CASE("training with lr 0 leaves parameters unchanged") {
  const TaskConfig t = small_task();
  const Dataset d = gen_dataset(t, 8, {1.0, 0.0, 0.0});
  const Model m = make_model(t);
  TrainConfig tc;
  tc.lr = 0.0;
  tc.epochs = 2;
  tc.solver = pipeline_solver_defaults();
  TrainState st = initial_state(m, tc);
  const ParamSet before = st.params;
  train(m, d, tc, st);
  CHECK(st.params.bitwise_equal(before));
  CHECK(st.epochs_done == 2);
  CHECK(st.log.size() == 2);
}

TEST_CASE("a single scene can be overfit") {
  const TaskConfig t = small_task();
  Dataset d = gen_dataset(t, 1, {1.0, 0.0, 0.0});
  const Model m = make_model(t);
  TrainConfig tc;
  tc.lr = 1e-2;
  tc.batch_size = 1;
  tc.epochs = 200;
  tc.solver = pipeline_solver_defaults();
  TrainState st = initial_state(m, tc);
  train(m, d, tc, st);
  const double first = st.log.front().train_loss;
  const double last = loss_of(m, st.params, d.train[0], {tc.solver});
  CHECK(last <= 0.05 * first);
}

TEST_CASE("training is deterministic across runs and thread counts") {
  const TaskConfig t = small_task();
  const Dataset d = gen_dataset(t, 12, {0.5, 0.5, 0.0});
  const Model m = make_model(t);
  TrainConfig tc;
  tc.lr = 1e-2;
  tc.epochs = 2;
  tc.solver = pipeline_solver_defaults();
  auto run = [&](std::size_t threads) {
    TrainConfig c = tc;
    c.threads = threads;
    TrainState st = initial_state(m, c);
    train(m, d, c, st);
    return st;
  };
  const TrainState a = run(1);
  const TrainState b = run(1);
  const TrainState c = run(2);
  CHECK(a.params.bitwise_equal(b.params));
  CHECK(a.params.bitwise_equal(c.params));
  CHECK(a.adam.m.bitwise_equal(c.adam.m));
  CHECK(a.log.back().train_loss == c.log.back().train_loss);

  // Resuming a 1-epoch state for a second epoch equals a straight 2-epoch run.
  TrainConfig one = tc;
  one.epochs = 1;
  TrainState st = initial_state(m, one);
  train(m, d, one, st);
  train(m, d, tc, st);
  CHECK(st.params.bitwise_equal(a.params));
}

TEST_CASE("predcls ignores the object head") {
  const TaskConfig t = small_task();
  const Dataset d = gen_dataset(t, 10, {0.0, 1.0, 0.0});
  const Model m = make_model(t);
  ParamSet p = m.init(3);
  const auto solver = pipeline_solver_defaults();
  const EvalReport a = evaluate(m, p, d.val, Setting::kPredcls, solver);
  Rng rng(4);
  p.assign("obj_head.weight", testing::random_tensor(rng, p.at("obj_head.weight").shape()));
  p.assign("obj_encoder.bias", testing::random_tensor(rng, p.at("obj_encoder.bias").shape()));
  const EvalReport b = evaluate(m, p, d.val, Setting::kPredcls, solver);
  CHECK(a.recall == b.recall);
  CHECK(a.n_scenes == 10);
  CHECK(b.setting == Setting::kPredcls);
}

TEST_CASE("sweep at the training horizon reproduces evaluate") {
  const TaskConfig t = small_task();
  const Dataset d = gen_dataset(t, 10, {0.0, 1.0, 0.0});
  const Model m = make_model(t);
  const ParamSet p = m.init(3);
  const auto solver = pipeline_solver_defaults();
  const EvalReport r = evaluate(m, p, d.val, Setting::kSgcls, solver);
  const auto rows = sweep_tend(m, p, d.val, {solver.t_end}, solver);
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].obj_acc == r.obj_accuracy);
  CHECK(rows[0].recall50 == r.recall.at(50));
  CHECK(rows[0].nfe_mean == r.nfe_mean);
  CHECK(default_sweep_grid().size() == 8);
}

TEST_CASE("trajectory probe endpoints") {
  const TaskConfig t = small_task();
  const Model m = make_model(t);
  const ParamSet p = m.init(3);
  const SyntheticScene s = gen_scene(t, 6);
  const auto solver = pipeline_solver_defaults();

  const auto end = trajectory_probe(m, p, s, {solver.t_end}, solver);
  const auto obj = classify_objects(m, p, s, {solver});
  CHECK(end[0].obj_labels == obj.labels);
  const auto pred = classify_predicates(m, p, s, obj.labels, {solver});
  CHECK(end[0].pred_labels == row_argmax(pred.logits));

  const auto start = trajectory_probe(m, p, s, {0.0}, solver);
  CHECK(start[0].obj_labels == row_argmax(object_head(p, encode_objects(m, p, s))));

  const auto many = trajectory_probe(m, p, s, {0.0, 0.5, 1.0, 1.5}, solver);
  CHECK(many.size() == 4);
  CHECK(many.front().obj_labels == start[0].obj_labels);
  CHECK_THROWS_AS(trajectory_probe(m, p, s, {1.0, 0.5}, solver), PipelineError);
}

TEST_CASE("relation ranking") {
  const TaskConfig t = small_task();
  const std::size_t P = t.n_pred_labels;
  const std::size_t L = t.n_obj_labels;

  SUBCASE("a perfect predictor recalls every relation") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const SyntheticScene s = gen_scene(t, seed);
      std::vector<double> probs(s.pairs.size() * P, 0.0);
      for (std::size_t i = 0; i < s.pairs.size(); ++i) {
        const std::size_t k = s.pairs[i].gt_predicate;
        if (k == 0) {
          probs[i * P] = 0.9;
          probs[i * P + 1] = 0.1;
        } else {
          probs[i * P + k] = 1.0;
        }
      }
      const auto rk = rank_relations(s, gt_labels(s),
                                     std::vector<double>(s.n_objects(), 1.0),
                                     Tensor::matrix(s.pairs.size(), P, probs), L);
      if (rk.truth.empty()) continue;
      CHECK(ilp::recall_topk(rk.ranked, rk.truth, 20).recall == 1.0);
    }
  }

  SUBCASE("random scores match the analytic baseline") {
    TaskConfig big = t;
    big.min_objects = 8;
    big.max_objects = 8;
    const SyntheticScene s = gen_scene(big, 0);
    const std::size_t npairs = s.pairs.size();
    const std::size_t K = 20;
    Rng rng(99);
    const int trials = 4000;
    double hits = 0.0;
    std::size_t n_truth = 0;
    for (int trial = 0; trial < trials; ++trial) {
      std::vector<double> probs(npairs * P);
      for (auto& v : probs) v = rng.uniform();
      const auto rk = rank_relations(s, gt_labels(s),
                                     std::vector<double>(s.n_objects(), 1.0),
                                     Tensor::matrix(npairs, P, probs), L);
      n_truth = rk.truth.size();
      hits += ilp::recall_topk(rk.ranked, rk.truth, K).recall;
    }
    REQUIRE(n_truth > 0);
    const double expect = static_cast<double>(std::min(K, npairs)) /
                          static_cast<double>(npairs) /
                          static_cast<double>(P - 1);
    CHECK(hits / trials == doctest::Approx(expect).epsilon(0.05));
  }

  SUBCASE("shape mismatches are rejected") {
    const SyntheticScene s = gen_scene(t, 0);
    CHECK_THROWS_AS(rank_relations(s, gt_labels(s),
                                   std::vector<double>(s.n_objects(), 1.0),
                                   Tensor::matrix(1, P, std::vector<double>(P, 0.1)), L),
                    ShapeError);
  }
}

TEST_CASE("untrained model recall sits near the random-ranking baseline") {
  const TaskConfig t = small_task();
  const Dataset d = gen_dataset(t, 40, {0.0, 1.0, 0.0});
  const Model m = make_model(t);
  const ParamSet p = m.init(21);
  const auto solver = pipeline_solver_defaults();
  const EvalReport pc = evaluate(m, p, d.val, Setting::kPredcls, solver);
  const EvalReport sg = evaluate(m, p, d.val, Setting::kSgcls, solver);
  for (const auto* r : {&pc, &sg}) {
    CHECK(r->recall.at(20) <= r->recall.at(50));
    CHECK(r->recall.at(50) <= r->recall.at(100));
  }
  // With every pair ranked, a hit needs the one non-background predicate
  // picked per pair to be the right one.
  double baseline = 0.0;
  std::size_t scored = 0;
  for (const auto& s : d.val) {
    const bool any = std::any_of(s.pairs.begin(), s.pairs.end(),
                                 [](const ScenePair& q) { return q.gt_predicate != 0; });
    if (!any) continue;
    const double m_pairs = static_cast<double>(s.pairs.size());
    baseline += std::min(20.0, m_pairs) / m_pairs /
                static_cast<double>(t.n_pred_labels - 1);
    ++scored;
  }
  baseline /= static_cast<double>(scored);
  MESSAGE("predcls R@20 " << pc.recall.at(20) << ", baseline " << baseline);
  CHECK(pc.recall.at(20) == doctest::Approx(baseline).epsilon(0.3));
}

TEST_CASE("spearman") {
  CHECK(spearman({1, 2, 3, 4}, {10, 20, 30, 40}) == doctest::Approx(1.0));
  CHECK(spearman({1, 2, 3, 4}, {4, 3, 2, 1}) == doctest::Approx(-1.0));
  CHECK(spearman({1, 2, 2, 3}, {1, 2, 2, 3}) == doctest::Approx(1.0));
  CHECK(spearman({1, 1, 1}, {1, 2, 3}) == 0.0);
  CHECK_THROWS_AS(spearman({1}, {1}), PipelineError);
}

TEST_CASE("noiseless decoupled scenes are learned almost perfectly") {
  TaskConfig t = small_task();
  t.cluster_spread = 0.0;
  t.context_fraction = 0.0;
  const Dataset d = gen_dataset(t, 60, {0.75, 0.25, 0.0});
  const Model m = make_model(t);
  TrainConfig tc;
  tc.lr = 1e-2;
  tc.epochs = 15;
  tc.solver = pipeline_solver_defaults();
  TrainState st = initial_state(m, tc);
  train(m, d, tc, st);
  const EvalReport r = evaluate(m, st.params, d.val, Setting::kSgcls, tc.solver);
  CHECK(r.obj_accuracy >= 0.99);

  // Background carries about as much predicted mass as its generative rate.
  double bg_mass = 0.0;
  std::size_t gt_bg = 0;
  std::size_t total = 0;
  const std::size_t P = t.n_pred_labels;
  for (const auto& s : d.val) {
    const auto pred = classify_predicates(m, st.params, s, gt_labels(s), {tc.solver});
    const Tensor probs = softmax_rows(pred.logits);
    for (std::size_t i = 0; i < s.pairs.size(); ++i) {
      bg_mass += probs[i * P];
      gt_bg += s.pairs[i].gt_predicate == 0;
    }
    total += s.pairs.size();
  }
  const double mass = bg_mass / static_cast<double>(total);
  const double gt_frac = static_cast<double>(gt_bg) / static_cast<double>(total);
  MESSAGE("background mass " << mass << ", ground truth " << gt_frac);
  CHECK(std::abs(mass - gt_frac) < 0.05);
}

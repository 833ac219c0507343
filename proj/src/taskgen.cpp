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

#include "odeassign/taskgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <thread>

#include "odeassign/rng.hpp"

namespace odeassign {

namespace {

// Smallest noise scale used in the likelihood, so noiseless features stay
// finite.
constexpr double kMinSpread = 1e-6;
constexpr double kPreferredMass = 0.8;
constexpr double kCoreMass = 0.95;
constexpr double kMixLo = 0.5;
constexpr double kMixHi = 0.6;

}  // namespace

void TaskConfig::validate() const {
  auto fail = [](const std::string& m) { throw TaskError("task config: " + m); };
  if (n_obj_labels < 2) fail("n_obj_labels must be >= 2");
  if (n_pred_labels < 2) fail("n_pred_labels must be >= 2 (background + one)");
  if (feat_dim == 0) fail("feat_dim must be > 0");
  if (min_objects < 2 || max_objects < min_objects) {
    fail("objects_per_scene range must satisfy 2 <= min <= max");
  }
  if (!(cluster_spread >= 0.0)) fail("cluster_spread must be >= 0");
  if (!(coupling_strength >= 0.0)) fail("coupling_strength must be >= 0");
  if (!(context_fraction >= 0.0 && context_fraction <= 1.0)) {
    fail("context_fraction must lie in [0, 1]");
  }
  if (!(background_prob > 0.0 && background_prob < 1.0)) {
    fail("background_prob must lie in (0, 1)");
  }
  if (n_topics == 0) fail("n_topics must be > 0");
  if (topic_core == 0 || topic_core >= n_obj_labels) {
    fail("topic_core must lie in [1, n_obj_labels)");
  }
}

nlohmann::json to_json(const TaskConfig& c) {
  return {{"n_obj_labels", c.n_obj_labels},
          {"n_pred_labels", c.n_pred_labels},
          {"feat_dim", c.feat_dim},
          {"min_objects", c.min_objects},
          {"max_objects", c.max_objects},
          {"cluster_spread", c.cluster_spread},
          {"coupling_strength", c.coupling_strength},
          {"context_fraction", c.context_fraction},
          {"background_prob", c.background_prob},
          {"n_topics", c.n_topics},
          {"topic_core", c.topic_core},
          {"obj_weight", c.obj_weight},
          {"pred_weight", c.pred_weight},
          {"allow_empty", c.allow_empty},
          {"seed", c.seed}};
}

TaskConfig task_config_from_json(const nlohmann::json& j) {
  TaskConfig c;
  c.n_obj_labels = j.at("n_obj_labels").get<std::size_t>();
  c.n_pred_labels = j.at("n_pred_labels").get<std::size_t>();
  c.feat_dim = j.at("feat_dim").get<std::size_t>();
  c.min_objects = j.at("min_objects").get<std::size_t>();
  c.max_objects = j.at("max_objects").get<std::size_t>();
  c.cluster_spread = j.at("cluster_spread").get<double>();
  c.coupling_strength = j.at("coupling_strength").get<double>();
  c.context_fraction = j.at("context_fraction").get<double>();
  c.background_prob = j.at("background_prob").get<double>();
  c.n_topics = j.at("n_topics").get<std::size_t>();
  c.topic_core = j.at("topic_core").get<std::size_t>();
  c.obj_weight = j.at("obj_weight").get<double>();
  c.pred_weight = j.at("pred_weight").get<double>();
  c.allow_empty = j.at("allow_empty").get<bool>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.validate();
  return c;
}

double CooccurrencePrior::pred_log_prob(std::size_t subj, std::size_t obj,
                                        std::size_t pred) const {
  const std::size_t real = n_pred_labels - 1;
  const std::size_t k = preferred[subj * n_obj_labels + obj];
  if (real == 1) return 0.0;
  return pred == k ? std::log(kPreferredMass)
                   : std::log((1.0 - kPreferredMass) /
                              static_cast<double>(real - 1));
}

World make_world(const TaskConfig& cfg) {
  cfg.validate();
  World w;
  w.cfg = cfg;
  const std::size_t L = cfg.n_obj_labels;
  Rng rng = Rng::derive(cfg.seed, "world");

  w.prototypes.resize(L * cfg.feat_dim);
  for (auto& v : w.prototypes) v = rng.normal();

  // Cores are consecutive blocks of one permutation, so topics overlap only
  // once the labels run out.
  std::vector<std::size_t> perm(L);
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(std::span<std::size_t>(perm));
  for (std::size_t t = 0; t < cfg.n_topics; ++t) {
    std::vector<std::size_t> labels;
    for (std::size_t i = 0; i < cfg.topic_core; ++i) {
      labels.push_back(perm[(t * cfg.topic_core + i) % L]);
    }
    std::sort(labels.begin(), labels.end());
    std::vector<double> probs(
        L, (1.0 - kCoreMass) / static_cast<double>(L - cfg.topic_core));
    for (std::size_t l : labels) {
      probs[l] = kCoreMass / static_cast<double>(cfg.topic_core);
    }
    w.topic_cores.push_back(std::move(labels));
    w.topic_label_probs.push_back(std::move(probs));
  }

  const double inv_t = 1.0 / static_cast<double>(cfg.n_topics);
  w.label_prior.assign(L, 0.0);
  for (const auto& p : w.topic_label_probs) {
    for (std::size_t l = 0; l < L; ++l) w.label_prior[l] += inv_t * p[l];
  }

  CooccurrencePrior& pr = w.prior;
  pr.n_obj_labels = L;
  pr.n_pred_labels = cfg.n_pred_labels;
  pr.obj_pair_prior.assign(L * L, 0.0);
  for (std::size_t a = 0; a < L; ++a) {
    for (std::size_t b = 0; b < L; ++b) {
      double joint = 0.0;
      for (const auto& p : w.topic_label_probs) joint += inv_t * p[a] * p[b];
      pr.obj_pair_prior[a * L + b] =
          std::log(joint / (w.label_prior[a] * w.label_prior[b]));
    }
  }
  // Exact symmetry regardless of summation order.
  for (std::size_t a = 0; a < L; ++a) {
    for (std::size_t b = a + 1; b < L; ++b) {
      pr.obj_pair_prior[b * L + a] = pr.obj_pair_prior[a * L + b];
    }
  }

  const std::size_t real = cfg.n_pred_labels - 1;
  pr.preferred.resize(L * L);
  for (auto& k : pr.preferred) k = 1 + rng.index(real);
  for (std::size_t s = 0; s < L; ++s) {
    for (std::size_t o = 0; o < L; ++o) {
      for (std::size_t k = 1; k < cfg.n_pred_labels; ++k) {
        pr.pred_context_prior.push_back({s, o, k, pr.pred_log_prob(s, o, k)});
      }
    }
  }
  return w;
}

std::vector<std::pair<std::size_t, std::size_t>> ordered_pairs(std::size_t n) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  out.reserve(n * (n > 0 ? n - 1 : 0));
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t o = 0; o < n; ++o) {
      if (s != o) out.emplace_back(s, o);
    }
  }
  return out;
}

namespace {

std::array<double, 2> center(const std::array<double, 4>& b) {
  return {0.5 * (b[0] + b[2]), 0.5 * (b[1] + b[3])};
}

// Probability that an ordered pair carries a real predicate.
double relation_prob(const TaskConfig& cfg, const SceneObject& s,
                     const SceneObject& o) {
  const auto cs = center(s.box);
  const auto co = center(o.box);
  const double d = std::hypot(cs[0] - co[0], cs[1] - co[1]);
  const double p =
      (1.0 - cfg.background_prob) * 1.42 * (1.0 - d / std::sqrt(2.0));
  return std::clamp(p, 0.01, 0.98);
}

std::vector<double> unary_scores(const World& w, const SceneObject& obj) {
  const std::size_t L = w.cfg.n_obj_labels;
  const std::size_t F = w.cfg.feat_dim;
  const double sigma = std::max(w.cfg.cluster_spread, kMinSpread);
  std::vector<double> alpha(L);
  for (std::size_t l = 0; l < L; ++l) {
    double d2 = 0.0;
    for (std::size_t i = 0; i < F; ++i) {
      const double diff = obj.feature[i] - w.prototypes[l * F + i];
      d2 += diff * diff;
    }
    alpha[l] = std::log(w.label_prior[l]) -
               d2 / (2.0 * sigma * sigma);
  }
  return alpha;
}

std::vector<std::size_t> first_labels(const ilp::Assignment& a) {
  std::vector<std::size_t> out;
  out.reserve(a.chosen.size());
  for (const auto& c : a.chosen) {
    // Unlabelled nodes (allow_empty only) map to SIZE_MAX.
    out.push_back(c.empty() ? static_cast<std::size_t>(-1) : c.front());
  }
  return out;
}

}  // namespace

ilp::AssignmentProblem object_problem(const World& w,
                                      const SyntheticScene& scene) {
  const std::size_t n = scene.n_objects();
  const std::size_t L = w.cfg.n_obj_labels;
  ilp::AssignmentProblem p;
  p.n_nodes = n;
  p.n_labels = L;
  p.alpha = scene.obj_alpha;
  p.w = w.cfg.obj_weight;
  p.per_node_cap = 1;
  p.allow_empty = w.cfg.allow_empty;
  if (w.cfg.coupling_strength > 0.0) {
    for (std::size_t u = 0; u < n; ++u) {
      for (std::size_t v = u + 1; v < n; ++v) {
        for (std::size_t a = 0; a < L; ++a) {
          for (std::size_t b = 0; b < L; ++b) {
            p.beta.push_back(
                {u, v, a, b, w.cfg.coupling_strength * w.prior.pair(a, b)});
          }
        }
      }
    }
  }
  return p;
}

ilp::AssignmentProblem predicate_problem(
    const World& w, const SyntheticScene& scene,
    const std::vector<std::size_t>& labels) {
  const std::size_t P = w.cfg.n_pred_labels;
  ilp::AssignmentProblem p;
  p.n_nodes = scene.pairs.size();
  p.n_labels = P;
  p.w = w.cfg.pred_weight;
  p.per_node_cap = 1;
  p.allow_empty = false;
  p.alpha.reserve(p.n_nodes * P);
  for (const auto& pair : scene.pairs) {
    const double rel =
        relation_prob(w.cfg, scene.objects[pair.subj], scene.objects[pair.obj]);
    p.alpha.push_back(std::log(1.0 - rel));
    for (std::size_t k = 1; k < P; ++k) {
      p.alpha.push_back(std::log(rel) + w.prior.pred_log_prob(
                                            labels[pair.subj],
                                            labels[pair.obj], k));
    }
  }
  return p;
}

std::vector<std::size_t> greedy_labels(const SyntheticScene& scene,
                                       std::size_t n_labels) {
  std::vector<std::size_t> out(scene.n_objects());
  for (std::size_t u = 0; u < out.size(); ++u) {
    const auto row = scene.obj_alpha.begin() +
                     static_cast<std::ptrdiff_t>(u * n_labels);
    out[u] = static_cast<std::size_t>(
        std::max_element(row, row + static_cast<std::ptrdiff_t>(n_labels)) -
        row);
  }
  return out;
}

SyntheticScene gen_scene(const World& w, std::uint64_t scene_seed) {
  const TaskConfig& cfg = w.cfg;
  const std::size_t L = cfg.n_obj_labels;
  const std::size_t F = cfg.feat_dim;
  Rng rng = Rng::derive(mix_seed(cfg.seed, fnv1a64("scene")), scene_seed);

  SyntheticScene s;
  s.id = scene_seed;
  s.topic = rng.index(cfg.n_topics);
  const auto& probs = w.topic_label_probs[s.topic];
  const auto& core = w.topic_cores[s.topic];
  const std::size_t n =
      cfg.min_objects + rng.index(cfg.max_objects - cfg.min_objects + 1);

  std::vector<std::size_t> outside;
  for (std::size_t l = 0; l < L; ++l) {
    if (!std::binary_search(core.begin(), core.end(), l)) outside.push_back(l);
  }

  for (std::size_t u = 0; u < n; ++u) {
    SceneObject obj;
    obj.gt_label = rng.categorical(probs);
    const double* mu = &w.prototypes[obj.gt_label * F];
    obj.feature.assign(mu, mu + F);
    const bool in_core =
        std::binary_search(core.begin(), core.end(), obj.gt_label);
    const bool confused = rng.uniform() < cfg.context_fraction;
    if (confused && in_core) {
      // Pull the feature towards an out-of-topic label.
      const std::size_t c = outside[rng.index(outside.size())];
      const double lambda = rng.uniform(kMixLo, kMixHi);
      const double* mc = &w.prototypes[c * F];
      for (std::size_t i = 0; i < F; ++i) {
        obj.feature[i] = (1.0 - lambda) * mu[i] + lambda * mc[i];
      }
    }
    for (auto& v : obj.feature) v += cfg.cluster_spread * rng.normal();
    const double cx = rng.uniform(0.1, 0.9);
    const double cy = rng.uniform(0.1, 0.9);
    const double bw = rng.uniform(0.1, 0.4);
    const double bh = rng.uniform(0.1, 0.4);
    obj.box = {std::max(0.0, cx - 0.5 * bw), std::max(0.0, cy - 0.5 * bh),
               std::min(1.0, cx + 0.5 * bw), std::min(1.0, cy + 0.5 * bh)};
    s.objects.push_back(std::move(obj));
  }

  for (const auto& [a, b] : ordered_pairs(n)) {
    ScenePair pair{a, b, 0};
    const double rel = relation_prob(cfg, s.objects[a], s.objects[b]);
    if (rng.uniform() < rel) {
      std::vector<double> q(cfg.n_pred_labels, 0.0);
      for (std::size_t k = 1; k < cfg.n_pred_labels; ++k) {
        q[k] = std::exp(w.prior.pred_log_prob(s.objects[a].gt_label,
                                              s.objects[b].gt_label, k));
      }
      pair.gt_predicate = rng.categorical(q);
    }
    s.pairs.push_back(pair);
  }

  s.obj_alpha.reserve(n * L);
  for (const auto& obj : s.objects) {
    const auto a = unary_scores(w, obj);
    s.obj_alpha.insert(s.obj_alpha.end(), a.begin(), a.end());
  }

  const ilp::Assignment obj_opt = ilp::solve_exact(object_problem(w, s));
  s.oracle_obj = first_labels(obj_opt);
  s.oracle_obj_objective = obj_opt.objective;

  std::vector<std::size_t> gt(n);
  for (std::size_t u = 0; u < n; ++u) gt[u] = s.objects[u].gt_label;
  const ilp::Assignment pred_opt =
      ilp::solve_exact(predicate_problem(w, s, gt));
  s.oracle_pred = first_labels(pred_opt);
  s.oracle_pred_objective = pred_opt.objective;
  return s;
}

SyntheticScene gen_scene(const TaskConfig& cfg, std::uint64_t scene_seed) {
  return gen_scene(make_world(cfg), scene_seed);
}

double context_difficulty(const SyntheticScene& scene, std::size_t n_labels) {
  if (scene.n_objects() == 0) return 0.0;
  const auto g = greedy_labels(scene, n_labels);
  std::size_t diff = 0;
  for (std::size_t u = 0; u < g.size(); ++u) diff += g[u] != scene.oracle_obj[u];
  return static_cast<double>(diff) / static_cast<double>(g.size());
}

std::array<std::size_t, 3> split_sizes(std::size_t n,
                                       const std::array<double, 3>& ratios) {
  double total = 0.0;
  std::size_t used = 0;
  for (double r : ratios) {
    if (!(r >= 0.0) || !std::isfinite(r)) {
      throw TaskError("split ratios must be finite and non-negative");
    }
    total += r;
    used += r > 0.0;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw TaskError("split ratios must sum to 1");
  }
  if (n < used) {
    throw TaskError("cannot split " + std::to_string(n) + " scenes into " +
                    std::to_string(used) + " non-empty splits");
  }
  std::array<std::size_t, 3> sizes{};
  std::array<double, 3> rem{};
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    const double exact = ratios[i] * static_cast<double>(n);
    sizes[i] = static_cast<std::size_t>(std::floor(exact));
    rem[i] = exact - static_cast<double>(sizes[i]);
    assigned += sizes[i];
  }
  std::array<std::size_t, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return rem[a] > rem[b]; });
  for (std::size_t i = 0; assigned < n; i = (i + 1) % 3) {
    if (ratios[order[i]] > 0.0) {
      ++sizes[order[i]];
      ++assigned;
    }
  }
  // Every split with a non-zero ratio gets at least one scene, taken from
  // the currently largest split.
  for (std::size_t i = 0; i < 3; ++i) {
    if (ratios[i] > 0.0 && sizes[i] == 0) {
      const auto largest = static_cast<std::size_t>(
          std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
      --sizes[largest];
      ++sizes[i];
    }
  }
  return sizes;
}

Dataset gen_dataset(const TaskConfig& cfg, std::size_t n_scenes,
                    const std::array<double, 3>& ratios, std::size_t threads) {
  if (n_scenes == 0) throw TaskError("n_scenes must be > 0");
  const auto sizes = split_sizes(n_scenes, ratios);
  const World world = make_world(cfg);
  std::vector<SyntheticScene> scenes(n_scenes);
  threads = std::max<std::size_t>(1, std::min(threads, n_scenes));
  if (threads == 1) {
    for (std::size_t i = 0; i < n_scenes; ++i) scenes[i] = gen_scene(world, i);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(threads);
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        try {
          for (std::size_t i = t; i < n_scenes; i += threads) {
            scenes[i] = gen_scene(world, i);
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
  }
  Dataset d;
  d.cfg = cfg;
  auto it = std::make_move_iterator(scenes.begin());
  d.train.assign(it, it + static_cast<std::ptrdiff_t>(sizes[0]));
  it += static_cast<std::ptrdiff_t>(sizes[0]);
  d.val.assign(it, it + static_cast<std::ptrdiff_t>(sizes[1]));
  it += static_cast<std::ptrdiff_t>(sizes[1]);
  d.test.assign(it, it + static_cast<std::ptrdiff_t>(sizes[2]));
  return d;
}

nlohmann::json to_json(const SyntheticScene& s) {
  nlohmann::json objects = nlohmann::json::array();
  for (const auto& o : s.objects) {
    objects.push_back(
        {{"feature", o.feature}, {"box", o.box}, {"gt_label", o.gt_label}});
  }
  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& p : s.pairs) {
    pairs.push_back({p.subj, p.obj, p.gt_predicate});
  }
  return {{"id", s.id},
          {"topic", s.topic},
          {"objects", std::move(objects)},
          {"pairs", std::move(pairs)},
          {"obj_alpha", s.obj_alpha},
          {"oracle_obj", s.oracle_obj},
          {"oracle_obj_objective", s.oracle_obj_objective},
          {"oracle_pred", s.oracle_pred},
          {"oracle_pred_objective", s.oracle_pred_objective}};
}

SyntheticScene scene_from_json(const nlohmann::json& j) {
  SyntheticScene s;
  s.id = j.at("id").get<std::uint64_t>();
  s.topic = j.at("topic").get<std::size_t>();
  for (const auto& o : j.at("objects")) {
    SceneObject obj;
    obj.feature = o.at("feature").get<std::vector<double>>();
    obj.box = o.at("box").get<std::array<double, 4>>();
    obj.gt_label = o.at("gt_label").get<std::size_t>();
    s.objects.push_back(std::move(obj));
  }
  for (const auto& p : j.at("pairs")) {
    s.pairs.push_back({p.at(0).get<std::size_t>(), p.at(1).get<std::size_t>(),
                       p.at(2).get<std::size_t>()});
  }
  s.obj_alpha = j.at("obj_alpha").get<std::vector<double>>();
  s.oracle_obj = j.at("oracle_obj").get<std::vector<std::size_t>>();
  s.oracle_obj_objective = j.at("oracle_obj_objective").get<double>();
  s.oracle_pred = j.at("oracle_pred").get<std::vector<std::size_t>>();
  s.oracle_pred_objective = j.at("oracle_pred_objective").get<double>();
  return s;
}

namespace {

const char* const kSplitNames[3] = {"train", "val", "test"};

const std::vector<SyntheticScene>& split_of(const Dataset& d, int i) {
  return i == 0 ? d.train : (i == 1 ? d.val : d.test);
}

std::vector<SyntheticScene>& split_of(Dataset& d, int i) {
  return i == 0 ? d.train : (i == 1 ? d.val : d.test);
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

}  // namespace

std::string content_hash(const Dataset& data) {
  std::uint64_t h = fnv1a64("");
  for (int i = 0; i < 3; ++i) {
    h = fnv1a64(kSplitNames[i], h);
    for (const auto& s : split_of(data, i)) {
      h = fnv1a64(to_json(s).dump(), h);
      h = fnv1a64("\n", h);
    }
  }
  return hex64(h);
}

void save_dataset(const Dataset& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (int i = 0; i < 3; ++i) {
    std::ofstream os(dir / (std::string(kSplitNames[i]) + ".jsonl"),
                     std::ios::binary);
    if (!os) throw TaskError("cannot write dataset split in " + dir.string());
    for (const auto& s : split_of(data, i)) os << to_json(s).dump() << '\n';
  }
  nlohmann::ordered_json m;
  m["format"] = "odeassign-dataset/1";
  m["generator"] = std::string(Rng::kAlgorithm);
  m["config"] = to_json(data.cfg);
  m["n_scenes"] = data.size();
  m["splits"] = {{"train", data.train.size()},
                 {"val", data.val.size()},
                 {"test", data.test.size()}};
  m["content_hash"] = content_hash(data);
  std::ofstream os(dir / "manifest.json", std::ios::binary);
  if (!os) throw TaskError("cannot write manifest in " + dir.string());
  os << m.dump(2) << '\n';
}

Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream ms(dir / "manifest.json");
  if (!ms) throw TaskError("no manifest.json in " + dir.string());
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(ms);
  } catch (const nlohmann::json::exception& e) {
    throw TaskError(std::string("malformed manifest: ") + e.what());
  }
  Dataset d;
  d.cfg = task_config_from_json(m.at("config"));
  for (int i = 0; i < 3; ++i) {
    std::ifstream is(dir / (std::string(kSplitNames[i]) + ".jsonl"));
    if (!is) throw TaskError("missing split file " + std::string(kSplitNames[i]));
    std::string line;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      try {
        split_of(d, i).push_back(scene_from_json(nlohmann::json::parse(line)));
      } catch (const nlohmann::json::exception& e) {
        throw TaskError(std::string("malformed scene record: ") + e.what());
      }
    }
  }
  const std::string expected = m.at("content_hash").get<std::string>();
  if (content_hash(d) != expected) {
    throw TaskError("dataset content hash mismatch in " + dir.string());
  }
  return d;
}

}  // namespace odeassign

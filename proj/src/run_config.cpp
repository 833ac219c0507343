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

#include "odeassign/run_config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace odeassign {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw ConfigError(key + ": '" + v + "' is not a number");
  }
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw ConfigError(key + ": '" + v + "' is not a non-negative integer");
  }
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": '" + v + "' is not a boolean");
}

std::vector<double> to_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    out.push_back(to_double(key, item));
  }
  return out;
}

std::string list_string(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i > 0) out += ',';
    out += format_double(v[i]);
  }
  return out;
}

std::string bool_string(bool b) { return b ? "true" : "false"; }

struct Field {
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define ODEASSIGN_SIZE(path)                                                  \
  Field {                                                                     \
    [](RunConfig& c, const std::string& k, const std::string& v) {           \
      c.path = static_cast<std::size_t>(to_u64(k, v));                        \
    },                                                                        \
        [](const RunConfig& c) { return std::to_string(c.path); }             \
  }
#define ODEASSIGN_DOUBLE(path)                                                \
  Field {                                                                     \
    [](RunConfig& c, const std::string& k, const std::string& v) {           \
      c.path = to_double(k, v);                                               \
    },                                                                        \
        [](const RunConfig& c) { return format_double(c.path); }              \
  }
#define ODEASSIGN_BOOL(path)                                                  \
  Field {                                                                     \
    [](RunConfig& c, const std::string& k, const std::string& v) {           \
      c.path = to_bool(k, v);                                                 \
    },                                                                        \
        [](const RunConfig& c) { return bool_string(c.path); }                \
  }
#define ODEASSIGN_PATH(path)                                                  \
  Field {                                                                     \
    [](RunConfig& c, const std::string&, const std::string& v) {             \
      c.path = v;                                                             \
    },                                                                        \
        [](const RunConfig& c) { return c.path.generic_string(); }            \
  }

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = {
      {"task.n_obj_labels", ODEASSIGN_SIZE(task.n_obj_labels)},
      {"task.n_pred_labels", ODEASSIGN_SIZE(task.n_pred_labels)},
      {"task.feat_dim", ODEASSIGN_SIZE(task.feat_dim)},
      {"task.min_objects", ODEASSIGN_SIZE(task.min_objects)},
      {"task.max_objects", ODEASSIGN_SIZE(task.max_objects)},
      {"task.cluster_spread", ODEASSIGN_DOUBLE(task.cluster_spread)},
      {"task.coupling_strength", ODEASSIGN_DOUBLE(task.coupling_strength)},
      {"task.context_fraction", ODEASSIGN_DOUBLE(task.context_fraction)},
      {"task.background_prob", ODEASSIGN_DOUBLE(task.background_prob)},
      {"task.n_topics", ODEASSIGN_SIZE(task.n_topics)},
      {"task.topic_core", ODEASSIGN_SIZE(task.topic_core)},
      {"task.obj_weight", ODEASSIGN_DOUBLE(task.obj_weight)},
      {"task.pred_weight", ODEASSIGN_DOUBLE(task.pred_weight)},
      {"task.allow_empty", ODEASSIGN_BOOL(task.allow_empty)},
      {"task.seed",
       {[](RunConfig& c, const std::string& k, const std::string& v) {
          c.task.seed = to_u64(k, v);
        },
        [](const RunConfig& c) { return std::to_string(c.task.seed); }}},
      {"data.n_scenes", ODEASSIGN_SIZE(n_scenes)},
      {"data.split",
       {[](RunConfig& c, const std::string& k, const std::string& v) {
          const auto l = to_list(k, v);
          if (l.size() != 3) {
            throw ConfigError(k + ": expected three comma-separated ratios");
          }
          c.split = {l[0], l[1], l[2]};
        },
        [](const RunConfig& c) {
          return list_string({c.split[0], c.split[1], c.split[2]});
        }}},
      {"model.obj_state", ODEASSIGN_SIZE(model.obj_state)},
      {"model.pair_state", ODEASSIGN_SIZE(model.pair_state)},
      {"model.ode_hidden", ODEASSIGN_SIZE(model.ode_hidden)},
      {"model.ode_layers", ODEASSIGN_SIZE(model.ode_layers)},
      {"model.embed_dim", ODEASSIGN_SIZE(model.embed_dim)},
      {"model.preproc_width", ODEASSIGN_SIZE(model.preproc_width)},
      {"model.pred_hidden", ODEASSIGN_SIZE(model.pred_hidden)},
      {"model.preproc",
       {[](RunConfig& c, const std::string&, const std::string& v) {
          c.model.preproc = parse_preproc(v);
        },
        [](const RunConfig& c) { return to_string(c.model.preproc); }}},
      {"model.use_o_ode", ODEASSIGN_BOOL(model.use_o_ode)},
      {"model.use_p_ode", ODEASSIGN_BOOL(model.use_p_ode)},
      {"train.lr", ODEASSIGN_DOUBLE(train.lr)},
      {"train.batch_size", ODEASSIGN_SIZE(train.batch_size)},
      {"train.epochs", ODEASSIGN_SIZE(train.epochs)},
      {"train.beta1", ODEASSIGN_DOUBLE(train.beta1)},
      {"train.beta2", ODEASSIGN_DOUBLE(train.beta2)},
      {"train.eps", ODEASSIGN_DOUBLE(train.eps)},
      {"train.grad_path",
       {[](RunConfig& c, const std::string&, const std::string& v) {
          c.train.grad_path = parse_grad_path(v);
        },
        [](const RunConfig& c) { return to_string(c.train.grad_path); }}},
      {"train.seed",
       {[](RunConfig& c, const std::string& k, const std::string& v) {
          c.train.seed = to_u64(k, v);
        },
        [](const RunConfig& c) { return std::to_string(c.train.seed); }}},
      {"solver.atol", ODEASSIGN_DOUBLE(train.solver.atol)},
      {"solver.rtol", ODEASSIGN_DOUBLE(train.solver.rtol)},
      {"solver.t_end", ODEASSIGN_DOUBLE(train.solver.t_end)},
      {"solver.h_init",
       {[](RunConfig& c, const std::string& k, const std::string& v) {
          if (v == "auto" || v == "none") {
            c.train.solver.h_init.reset();
          } else {
            c.train.solver.h_init = to_double(k, v);
          }
        },
        [](const RunConfig& c) {
          return c.train.solver.h_init ? format_double(*c.train.solver.h_init)
                                       : std::string("none");
        }}},
      {"solver.auto_h_init", ODEASSIGN_BOOL(train.solver.auto_h_init)},
      {"solver.h_min", ODEASSIGN_DOUBLE(train.solver.h_min)},
      {"solver.h_max", ODEASSIGN_DOUBLE(train.solver.h_max)},
      {"solver.safety", ODEASSIGN_DOUBLE(train.solver.safety)},
      {"solver.max_steps", ODEASSIGN_SIZE(train.solver.max_steps)},
      {"solver.adaptive", ODEASSIGN_BOOL(train.solver.adaptive)},
      {"eval.setting",
       {[](RunConfig& c, const std::string&, const std::string& v) {
          parse_setting(v);
          c.eval_setting = v;
        },
        [](const RunConfig& c) { return c.eval_setting; }}},
      {"eval.split",
       {[](RunConfig& c, const std::string& k, const std::string& v) {
          if (v != "train" && v != "val" && v != "test") {
            throw ConfigError(k + ": expected train, val or test");
          }
          c.eval_split = v;
        },
        [](const RunConfig& c) { return c.eval_split; }}},
      {"sweep.grid",
       {[](RunConfig& c, const std::string& k, const std::string& v) {
          c.sweep_grid = to_list(k, v);
        },
        [](const RunConfig& c) { return list_string(c.sweep_grid); }}},
      {"probe.times",
       {[](RunConfig& c, const std::string& k, const std::string& v) {
          c.probe_times = to_list(k, v);
        },
        [](const RunConfig& c) { return list_string(c.probe_times); }}},
      {"probe.scenes", ODEASSIGN_SIZE(probe_scenes)},
      {"paths.data", ODEASSIGN_PATH(data_dir)},
      {"paths.out", ODEASSIGN_PATH(out_dir)},
      {"paths.model", ODEASSIGN_PATH(model_dir)},
      {"run.threads", ODEASSIGN_SIZE(threads)},
  };
  return table;
}

#undef ODEASSIGN_SIZE
#undef ODEASSIGN_DOUBLE
#undef ODEASSIGN_BOOL
#undef ODEASSIGN_PATH

}  // namespace

RunConfig::RunConfig() { train.solver = pipeline_solver_defaults(); }

void RunConfig::set(const std::string& key, const std::string& value) {
  const auto& f = fields();
  auto it = f.find(key);
  if (it == f.end()) throw ConfigError("unknown config key '" + key + "'");
  try {
    it->second.set(*this, key, trim(value));
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(key + ": " + e.what());
  }
}

std::map<std::string, std::string> RunConfig::resolved() const {
  std::map<std::string, std::string> out;
  for (const auto& [k, f] : fields()) out[k] = f.get(*this);
  return out;
}

std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> out;
  for (const auto& [k, _] : fields()) out.push_back(k);
  return out;
}

void RunConfig::write_resolved(std::ostream& os) const {
  for (const auto& [k, v] : resolved()) os << k << " = " << v << '\n';
}

void RunConfig::save_resolved(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  std::ofstream os(dir / "config.resolved", std::ios::binary);
  if (!os) throw ConfigError("cannot write " + (dir / "config.resolved").string());
  write_resolved(os);
}

void RunConfig::validate() const {
  task.validate();
  model.validate();
  train.validate();
  if (threads == 0) throw ConfigError("run.threads must be >= 1");
}

std::filesystem::path RunConfig::checkpoint_dir() const {
  return model_dir.empty() ? out_dir / "checkpoint" : model_dir;
}

void apply_config_text(RunConfig& rc, std::istream& is,
                       const std::string& origin) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(lineno) +
                        ": expected 'key = value'");
    }
    try {
      rc.set(trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

void apply_config_file(RunConfig& rc, const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config file " + path.string());
  apply_config_text(rc, is, path.string());
}

void apply_override(RunConfig& rc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw ConfigError("override '" + assignment + "' is not key=value");
  }
  rc.set(trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

}  // namespace odeassign

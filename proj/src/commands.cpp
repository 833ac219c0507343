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

#include "odeassign/commands.hpp"

#include <fstream>
#include <iterator>
#include <ostream>
#include <sstream>

namespace odeassign {

namespace fs = std::filesystem;

namespace {

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write " + path.string());
  return os;
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot read " + path.string());
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw Error(path.string() + ": malformed JSON: " + e.what());
  }
}

nlohmann::ordered_json log_to_json(const std::vector<EpochLog>& log) {
  auto arr = nlohmann::ordered_json::array();
  for (const auto& r : log) {
    arr.push_back({r.epoch, r.train_loss, r.val_obj_acc, r.val_recall50,
                   r.nfe_mean});
  }
  return arr;
}

std::vector<EpochLog> log_from_json(const nlohmann::json& j) {
  std::vector<EpochLog> out;
  for (const auto& r : j) {
    out.push_back({r.at(0).get<std::size_t>(), r.at(1).get<double>(),
                   r.at(2).get<double>(), r.at(3).get<double>(),
                   r.at(4).get<double>()});
  }
  return out;
}

Checkpoint checkpoint_from(const RunConfig& rc, const Dataset& data) {
  Checkpoint ck;
  ck.model = rc.model;
  ck.feat_dim = data.cfg.feat_dim;
  ck.n_obj_labels = data.cfg.n_obj_labels;
  ck.n_pred_labels = data.cfg.n_pred_labels;
  ck.train = rc.train;
  ck.train.threads = rc.threads;
  return ck;
}

void write_train_log(const fs::path& path, const std::vector<EpochLog>& log) {
  auto os = open_out(path);
  write_log_header(os);
  for (const auto& r : log) write_log_row(os, r);
}

void check_task_dims(const Checkpoint& ck, const Dataset& data) {
  if (ck.feat_dim != data.cfg.feat_dim ||
      ck.n_obj_labels != data.cfg.n_obj_labels ||
      ck.n_pred_labels != data.cfg.n_pred_labels) {
    throw Error("checkpoint dimensions do not match the dataset");
  }
}

}  // namespace

void save_checkpoint(const fs::path& dir, const Checkpoint& ck) {
  fs::create_directories(dir);
  ck.state.params.save(dir / "params.bin");
  ck.state.adam.m.save(dir / "adam_m.bin");
  ck.state.adam.v.save(dir / "adam_v.bin");
  nlohmann::ordered_json j;
  j["format"] = "odeassign-checkpoint/1";
  j["model"] = to_json(ck.model);
  j["feat_dim"] = ck.feat_dim;
  j["n_obj_labels"] = ck.n_obj_labels;
  j["n_pred_labels"] = ck.n_pred_labels;
  j["train"] = to_json(ck.train);
  j["epochs_done"] = ck.state.epochs_done;
  j["adam_step"] = ck.state.adam.step;
  j["log"] = log_to_json(ck.state.log);
  auto os = open_out(dir / "state.json");
  os << j.dump(2) << '\n';
}

bool has_checkpoint(const fs::path& dir) {
  return fs::exists(dir / "state.json") && fs::exists(dir / "params.bin");
}

Checkpoint load_checkpoint(const fs::path& dir) {
  if (!has_checkpoint(dir)) throw Error("no checkpoint in " + dir.string());
  const auto j = read_json(dir / "state.json");
  Checkpoint ck;
  try {
    ck.model = model_config_from_json(j.at("model"));
    ck.feat_dim = j.at("feat_dim").get<std::size_t>();
    ck.n_obj_labels = j.at("n_obj_labels").get<std::size_t>();
    ck.n_pred_labels = j.at("n_pred_labels").get<std::size_t>();
    ck.train = train_config_from_json(j.at("train"));
    ck.state.epochs_done = j.at("epochs_done").get<std::size_t>();
    ck.state.adam.step = j.at("adam_step").get<std::uint64_t>();
    ck.state.log = log_from_json(j.at("log"));
  } catch (const nlohmann::json::exception& e) {
    throw Error("malformed checkpoint state: " + std::string(e.what()));
  }
  ck.state.params = ParamSet::load(dir / "params.bin");
  ck.state.adam.m = ParamSet::load(dir / "adam_m.bin");
  ck.state.adam.v = ParamSet::load(dir / "adam_v.bin");
  const ParamSet expected = ck.make_model().init(0);
  if (expected.names() != ck.state.params.names()) {
    throw Error("checkpoint parameters do not match its model config");
  }
  return ck;
}

const std::vector<SyntheticScene>& dataset_split(const Dataset& data,
                                                 const std::string& name) {
  if (name == "train") return data.train;
  if (name == "val") return data.val;
  if (name == "test") return data.test;
  throw Error("unknown split '" + name + "'");
}

int cmd_gen(const RunConfig& rc, std::ostream& log) {
  rc.task.validate();
  const Dataset data = gen_dataset(rc.task, rc.n_scenes, rc.split, rc.threads);
  save_dataset(data, rc.data_dir);
  rc.save_resolved(rc.data_dir);
  double difficulty = 0.0;
  for (int i = 0; i < 3; ++i) {
    const auto& split = dataset_split(data, i == 0 ? "train" : i == 1 ? "val" : "test");
    for (const auto& s : split) {
      difficulty += context_difficulty(s, data.cfg.n_obj_labels);
    }
  }
  log << "generated " << data.size() << " scenes (train " << data.train.size()
      << ", val " << data.val.size() << ", test " << data.test.size()
      << ") in " << rc.data_dir.generic_string() << '\n'
      << "content_hash " << content_hash(data) << '\n'
      << "mean context_difficulty "
      << format_double(difficulty / static_cast<double>(data.size())) << '\n';
  return 0;
}

int cmd_train(const RunConfig& rc, bool resume, std::ostream& log) {
  rc.validate();
  const Dataset data = load_dataset(rc.data_dir);
  const fs::path ck_dir = rc.out_dir / "checkpoint";
  Checkpoint ck = checkpoint_from(rc, data);
  const Model model = ck.make_model();
  if (resume && has_checkpoint(ck_dir)) {
    Checkpoint prev = load_checkpoint(ck_dir);
    check_task_dims(prev, data);
    if (to_json(prev.model) != to_json(ck.model)) {
      throw Error("cannot resume: model config differs from the checkpoint");
    }
    TrainConfig a = prev.train;
    TrainConfig b = ck.train;
    a.epochs = b.epochs = 0;
    if (to_json(a) != to_json(b)) {
      throw Error("cannot resume: training config differs from the checkpoint");
    }
    ck.state = std::move(prev.state);
    log << "resuming after epoch " << ck.state.epochs_done << '\n';
  } else {
    ck.state = initial_state(model, ck.train);
  }
  rc.save_resolved(rc.out_dir);
  save_checkpoint(ck_dir, ck);
  write_train_log(rc.out_dir / "train_log.csv", ck.state.log);
  train(model, data, ck.train, ck.state, [&](const TrainState& s) {
    save_checkpoint(ck_dir, ck);
    write_train_log(rc.out_dir / "train_log.csv", s.log);
    const auto& r = s.log.back();
    log << "epoch " << r.epoch << " train_loss " << format_double(r.train_loss)
        << " val_obj_acc " << format_double(r.val_obj_acc) << " val_recall50 "
        << format_double(r.val_recall50) << " nfe_mean "
        << format_double(r.nfe_mean) << '\n'
        << std::flush;
  });
  save_checkpoint(ck_dir, ck);
  write_train_log(rc.out_dir / "train_log.csv", ck.state.log);
  return 0;
}

namespace {

struct Loaded {
  Dataset data;
  Checkpoint ck;
};

Loaded load_for_eval(const RunConfig& rc) {
  Loaded l{load_dataset(rc.data_dir), load_checkpoint(rc.checkpoint_dir())};
  check_task_dims(l.ck, l.data);
  return l;
}

void write_report(const fs::path& dir, const EvalReport& r) {
  const std::string stem = "eval_" + to_string(r.setting);
  {
    auto os = open_out(dir / (stem + ".json"));
    os << to_json(r, false).dump(2) << '\n';
  }
  {
    auto os = open_out(dir / (stem + ".csv"));
    os << "setting,recall20,recall50,recall100,obj_accuracy,oracle_agreement,"
          "greedy_agreement,nfe_mean\n"
       << to_string(r.setting) << ',' << format_double(r.recall.at(20)) << ','
       << format_double(r.recall.at(50)) << ','
       << format_double(r.recall.at(100)) << ','
       << format_double(r.obj_accuracy) << ','
       << format_double(r.oracle_agreement) << ','
       << format_double(r.greedy_agreement) << ','
       << format_double(r.nfe_mean) << '\n';
  }
  {
    auto os = open_out(dir / ("timing_" + to_string(r.setting) + ".json"));
    os << nlohmann::json{{"time_mean", r.time_mean}}.dump() << '\n';
  }
}

}  // namespace

int cmd_eval(const RunConfig& rc, std::ostream& log) {
  rc.validate();
  const Loaded l = load_for_eval(rc);
  const Model model = l.ck.make_model();
  const EvalReport r =
      evaluate(model, l.ck.state.params, dataset_split(l.data, rc.eval_split),
               parse_setting(rc.eval_setting), rc.train.solver);
  rc.save_resolved(rc.out_dir);
  write_report(rc.out_dir, r);
  log << to_json(r).dump() << '\n';
  return 0;
}

int cmd_sweep(const RunConfig& rc, std::ostream& log) {
  rc.validate();
  if (rc.sweep_grid.empty()) throw Error("sweep.grid is empty");
  const Loaded l = load_for_eval(rc);
  const Model model = l.ck.make_model();
  const auto rows =
      sweep_tend(model, l.ck.state.params, dataset_split(l.data, rc.eval_split),
                 rc.sweep_grid, rc.train.solver);
  rc.save_resolved(rc.out_dir);
  {
    auto os = open_out(rc.out_dir / "sweep.csv");
    write_sweep_csv(os, rows);
  }
  auto arr = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    nlohmann::ordered_json row;
    row["t_end"] = r.t_end;
    row["obj_acc"] = r.obj_acc;
    row["recall50"] = r.recall50;
    row["nfe_mean"] = r.nfe_mean;
    row["time_mean"] = r.time_mean;
    arr.push_back(row);
  }
  {
    auto os = open_out(rc.out_dir / "sweep.json");
    os << arr.dump(2) << '\n';
  }
  write_sweep_csv(log, rows);
  return 0;
}

int cmd_probe(const RunConfig& rc, std::ostream& log) {
  rc.validate();
  const Loaded l = load_for_eval(rc);
  const Model model = l.ck.make_model();
  const auto& scenes = dataset_split(l.data, rc.eval_split);
  const std::size_t n = std::min(rc.probe_scenes, scenes.size());
  rc.save_resolved(rc.out_dir);
  auto os = open_out(rc.out_dir / "probe.csv");
  os << "scene,t,correct_objects,n_objects,correct_predicates,n_pairs,"
        "obj_labels\n";
  std::size_t monotone = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto steps = trajectory_probe(model, l.ck.state.params, scenes[i],
                                        rc.probe_times, rc.train.solver);
    bool ok = true;
    for (std::size_t k = 0; k < steps.size(); ++k) {
      const auto& s = steps[k];
      os << scenes[i].id << ',' << format_double(s.t) << ','
         << s.correct_objects << ',' << scenes[i].n_objects() << ','
         << s.correct_predicates << ',' << scenes[i].pairs.size() << ',';
      for (std::size_t u = 0; u < s.obj_labels.size(); ++u) {
        os << (u ? " " : "") << s.obj_labels[u];
      }
      os << '\n';
      if (k > 0 && s.t <= rc.train.solver.t_end &&
          s.correct_objects < steps[k - 1].correct_objects) {
        ok = false;
      }
    }
    monotone += ok;
  }
  log << "probed " << n << " scenes; correct-object counts nondecreasing up to t_end="
      << format_double(rc.train.solver.t_end) << " in " << monotone << '\n';
  return 0;
}

int cmd_ilp(const fs::path& problem, const std::string& solver,
            const fs::path& out_dir, std::ostream& out) {
  const ilp::AssignmentProblem p = ilp::problem_from_json(read_json(problem));
  ilp::Assignment a;
  if (solver == "exact") {
    a = ilp::solve_exact(p);
  } else if (solver == "greedy") {
    a = ilp::solve_greedy(p);
  } else if (solver == "enumerate") {
    a = ilp::solve_enumerate(p);
  } else {
    throw Error("unknown ILP solver '" + solver +
                "' (expected exact, greedy or enumerate)");
  }
  const std::string text = ilp::to_json(a).dump();
  if (!out_dir.empty()) {
    auto os = open_out(out_dir / "assignment.json");
    os << text << '\n';
  }
  out << text << '\n';
  return 0;
}

int cmd_check(const CheckOptions& opt, std::ostream& log) {
  const auto results = run_checks(opt);
  print_checks(log, results);
  for (const auto& r : results) {
    if (!r.passed) return 2;
  }
  return 0;
}

}  // namespace odeassign

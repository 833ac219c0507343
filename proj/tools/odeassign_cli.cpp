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

#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "odeassign/commands.hpp"

namespace {

using odeassign::RunConfig;

struct CommonOptions {
  std::string config;
  std::vector<std::string> overrides;
  std::string out;
  std::string data;
  int threads = 0;
};

void add_common(CLI::App* app, CommonOptions& o) {
  app->add_option("--config", o.config, "key = value config file")
      ->check(CLI::ExistingFile);
  app->add_option("--set", o.overrides, "override one key (key=value)")
      ->allow_extra_args(false);
  app->add_option("--out", o.out, "output directory");
  app->add_option("--data", o.data, "dataset directory");
  app->add_option("--threads", o.threads, "worker threads")
      ->check(CLI::PositiveNumber);
}

RunConfig resolve(const CommonOptions& o) {
  RunConfig rc;
  if (!o.config.empty()) odeassign::apply_config_file(rc, o.config);
  for (const auto& kv : o.overrides) odeassign::apply_override(rc, kv);
  if (!o.out.empty()) rc.set("paths.out", o.out);
  if (!o.data.empty()) rc.set("paths.data", o.data);
  if (o.threads > 0) rc.set("run.threads", std::to_string(o.threads));
  rc.validate();
  return rc;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"odeassign: continuous-time scene-graph label assignment"};
  app.require_subcommand(1);
  app.set_help_flag("--help", "print this help message and exit");

  CommonOptions gen_o, train_o, eval_o, sweep_o, probe_o;
  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  add_common(gen, gen_o);

  auto* train = app.add_subcommand("train", "train a model");
  add_common(train, train_o);
  bool resume = false;
  std::string grad_path;
  train->add_flag("--resume", resume, "continue from the checkpoint in --out");
  train->add_option("--grad-path", grad_path, "discretize or adjoint")
      ->check(CLI::IsMember({"discretize", "adjoint"}));

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(eval, eval_o);
  std::string setting, split;
  eval->add_option("--setting", setting, "predcls or sgcls")
      ->check(CLI::IsMember({"predcls", "sgcls"}));
  eval->add_option("--split", split, "train, val or test")
      ->check(CLI::IsMember({"train", "val", "test"}));

  auto* sweep = app.add_subcommand("sweep", "sweep the integration end time");
  add_common(sweep, sweep_o);
  auto* probe = app.add_subcommand("probe", "read out labels along the trajectory");
  add_common(probe, probe_o);

  auto* ilp = app.add_subcommand("ilp", "solve an assignment problem file");
  std::string problem, ilp_solver = "exact", ilp_out;
  ilp->add_option("--problem", problem, "problem JSON")->required();
  ilp->add_option("--solver", ilp_solver, "exact, greedy or enumerate");
  ilp->add_option("--out", ilp_out, "also write assignment.json here");

  auto* check = app.add_subcommand("check", "run the numerical self-checks");
  double tolerance = 1e-8;
  bool corrupt = false;
  std::uint64_t check_seed = 1;
  check->add_option("--tolerance", tolerance,
                    "solver tolerance of the adjoint agreement check")
      ->check(CLI::PositiveNumber);
  check->add_flag("--corrupt-tableau", corrupt,
                  "perturb one solver coefficient (fault injection)");
  check->add_option("--seed", check_seed, "seed of the randomized checks");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) return odeassign::cmd_gen(resolve(gen_o), std::cout);
    if (*train) {
      if (!grad_path.empty()) train_o.overrides.push_back("train.grad_path=" + grad_path);
      return odeassign::cmd_train(resolve(train_o), resume, std::cout);
    }
    if (*eval) {
      if (!setting.empty()) eval_o.overrides.push_back("eval.setting=" + setting);
      if (!split.empty()) eval_o.overrides.push_back("eval.split=" + split);
      return odeassign::cmd_eval(resolve(eval_o), std::cout);
    }
    if (*sweep) return odeassign::cmd_sweep(resolve(sweep_o), std::cout);
    if (*probe) return odeassign::cmd_probe(resolve(probe_o), std::cout);
    if (*ilp) return odeassign::cmd_ilp(problem, ilp_solver, ilp_out, std::cout);
    if (*check) {
      odeassign::CheckOptions opt;
      opt.adjoint_tol = tolerance;
      opt.seed = check_seed;
      if (corrupt) opt.tableau = odeassign::corrupted_tableau();
      return odeassign::cmd_check(opt, std::cout);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}

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
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "odeassign/tensor.hpp"

namespace odeassign::ilp {

class IlpError : public Error {
 public:
  using Error::Error;
};

class InfeasibleError : public IlpError {
 public:
  using IlpError::IlpError;
};

class SearchCapError : public IlpError {
 public:
  using IlpError::IlpError;
};

inline constexpr std::size_t kUnbounded = std::numeric_limits<std::size_t>::max();

/// Pairwise term: `score` is collected when node_a takes label_a and node_b
/// takes label_b.
struct PairTerm {
  std::size_t node_a = 0;
  std::size_t node_b = 0;
  std::size_t label_a = 0;
  std::size_t label_b = 0;
  double score = 0.0;
};

/// max Σ α[u,l]·x[u,l] + w·Σ β·x·x subject to at most `per_node_cap` labels
/// per node and at most `global_cap` labels overall. Covers both the object
/// problem (cap 1 per node) and the predicate problem (T_v per node, K
/// overall).
struct AssignmentProblem {
  std::size_t n_nodes = 0;
  std::size_t n_labels = 0;
  /// Row-major n_nodes × n_labels.
  std::vector<double> alpha;
  std::vector<PairTerm> beta;
  double w = 1.0;
  std::size_t per_node_cap = 1;
  std::size_t global_cap = kUnbounded;
  bool allow_empty = false;

  double alpha_at(std::size_t node, std::size_t label) const {
    return alpha[node * n_labels + label];
  }
  void validate() const;
};

/// Selected labels per node, each list ascending.
using Choice = std::vector<std::vector<std::size_t>>;

struct Assignment {
  Choice chosen;
  double objective = 0.0;
};

/// Empty string when `chosen` is feasible, else a description of the first
/// violated constraint.
std::string constraint_violation(const AssignmentProblem& problem,
                                 const Choice& chosen);

/// Objective of a feasible choice. Sums α node-major, then the β terms in
/// list order. Throws IlpError on a constraint violation.
double score(const AssignmentProblem& problem, const Choice& chosen);
double score(const AssignmentProblem& problem, const Assignment& assignment);

/// Tie-break order: node-major, each node's sorted label list compared
/// lexicographically (a proper prefix sorts first).
bool lex_less(const Choice& a, const Choice& b);

struct ExactOptions {
  /// Search-tree nodes visited before SearchCapError.
  std::uint64_t node_budget = 100'000'000;
};

/// Globally optimal assignment by depth-first branch and bound; among optimal
/// assignments the lexicographically smallest is returned.
Assignment solve_exact(const AssignmentProblem& problem,
                       const ExactOptions& options = {});

/// Plain enumeration of every feasible assignment. Reference oracle for
/// solve_exact. Throws SearchCapError if the space exceeds `cap`.
Assignment solve_enumerate(const AssignmentProblem& problem,
                           std::uint64_t cap = 100'000'000);

/// Context-free baseline: ignores β. Every node first takes its α argmax
/// (when labels are mandatory), then the remaining positive (node, label)
/// scores are taken best-first while both caps allow. Ties resolve to the
/// lexicographically smallest selection, as in solve_exact.
Assignment solve_greedy(const AssignmentProblem& problem);

struct RankedPrediction {
  std::size_t pair = 0;
  std::size_t label = 0;
  double score = 0.0;
};

struct LabeledPair {
  std::size_t pair = 0;
  std::size_t label = 0;
};

struct RecallResult {
  double recall = 0.0;
  std::size_t hits = 0;
  /// Ground truth was empty; recall is reported as 1.
  bool empty_gt = false;
};

/// Fraction of `gt` found among the K best-scored predictions (ties broken by
/// pair index, then label index).
RecallResult recall_topk(std::span<const RankedPrediction> predicted,
                         std::span<const LabeledPair> gt, std::size_t k);

AssignmentProblem problem_from_json(const nlohmann::json& j);
nlohmann::json to_json(const AssignmentProblem& problem);
nlohmann::json to_json(const Assignment& assignment);
Assignment assignment_from_json(const nlohmann::json& j);

}  // namespace odeassign::ilp

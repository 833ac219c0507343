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

#include "odeassign/ilp.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <tuple>

namespace odeassign::ilp {

void AssignmentProblem::validate() const {
  if (n_labels == 0 && n_nodes > 0) throw IlpError("ilp: n_labels must be > 0");
  if (alpha.size() != n_nodes * n_labels) {
    throw IlpError("ilp: alpha has " + std::to_string(alpha.size()) +
                   " entries, expected " + std::to_string(n_nodes * n_labels));
  }
  for (double a : alpha) {
    if (!std::isfinite(a)) throw IlpError("ilp: non-finite alpha entry");
  }
  if (!std::isfinite(w)) throw IlpError("ilp: non-finite weight w");
  if (per_node_cap < 1) throw IlpError("ilp: per_node_cap must be >= 1");
  for (const auto& b : beta) {
    if (b.node_a >= n_nodes || b.node_b >= n_nodes || b.label_a >= n_labels ||
        b.label_b >= n_labels) {
      throw IlpError("ilp: beta entry references an index out of range");
    }
    if (b.node_a == b.node_b) {
      throw IlpError("ilp: beta entry couples node " +
                     std::to_string(b.node_a) + " with itself");
    }
    if (!std::isfinite(b.score)) throw IlpError("ilp: non-finite beta score");
  }
}

std::string constraint_violation(const AssignmentProblem& p,
                                 const Choice& chosen) {
  if (chosen.size() != p.n_nodes) {
    return "assignment covers " + std::to_string(chosen.size()) +
           " nodes, problem has " + std::to_string(p.n_nodes);
  }
  std::size_t total = 0;
  for (std::size_t u = 0; u < chosen.size(); ++u) {
    const auto& c = chosen[u];
    if (c.size() > p.per_node_cap) {
      return "node " + std::to_string(u) + " has " + std::to_string(c.size()) +
             " labels, cap is " + std::to_string(p.per_node_cap);
    }
    if (c.empty() && !p.allow_empty) {
      return "node " + std::to_string(u) + " has no label";
    }
    for (std::size_t i = 0; i < c.size(); ++i) {
      if (c[i] >= p.n_labels) {
        return "node " + std::to_string(u) + " label out of range";
      }
      if (i > 0 && c[i] <= c[i - 1]) {
        return "node " + std::to_string(u) +
               " labels are not strictly ascending";
      }
    }
    total += c.size();
  }
  if (total > p.global_cap) {
    return "assignment uses " + std::to_string(total) +
           " labels, global cap is " + std::to_string(p.global_cap);
  }
  return {};
}

namespace {

// Canonical objective; no feasibility check.
double objective(const AssignmentProblem& p, const Choice& chosen,
                 std::vector<char>& active) {
  active.assign(p.n_nodes * p.n_labels, 0);
  double s = 0.0;
  for (std::size_t u = 0; u < chosen.size(); ++u) {
    for (std::size_t l : chosen[u]) {
      s += p.alpha_at(u, l);
      active[u * p.n_labels + l] = 1;
    }
  }
  double pair = 0.0;
  for (const auto& b : p.beta) {
    if (active[b.node_a * p.n_labels + b.label_a] &&
        active[b.node_b * p.n_labels + b.label_b]) {
      pair += b.score;
    }
  }
  return s + p.w * pair;
}

// Label subsets of size <= cap in lexicographic order.
std::vector<std::vector<std::size_t>> node_options(const AssignmentProblem& p) {
  std::vector<std::vector<std::size_t>> out;
  std::vector<std::size_t> cur;
  const std::size_t cap = std::min(p.per_node_cap, p.n_labels);
  auto rec = [&](auto&& self, std::size_t start) -> void {
    if (!cur.empty() || p.allow_empty) out.push_back(cur);
    if (cur.size() == cap) return;
    for (std::size_t l = start; l < p.n_labels; ++l) {
      cur.push_back(l);
      self(self, l + 1);
      cur.pop_back();
    }
  };
  rec(rec, 0);
  return out;
}

Assignment finish(const AssignmentProblem& p, Choice chosen) {
  Assignment a;
  a.objective = score(p, chosen);
  a.chosen = std::move(chosen);
  return a;
}

}  // namespace

double score(const AssignmentProblem& p, const Choice& chosen) {
  const std::string why = constraint_violation(p, chosen);
  if (!why.empty()) throw IlpError("ilp: infeasible assignment: " + why);
  std::vector<char> active;
  return objective(p, chosen, active);
}

double score(const AssignmentProblem& p, const Assignment& assignment) {
  return score(p, assignment.chosen);
}

bool lex_less(const Choice& a, const Choice& b) {
  return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
}

Assignment solve_enumerate(const AssignmentProblem& p, std::uint64_t cap) {
  p.validate();
  const auto options = node_options(p);
  if (options.empty()) throw InfeasibleError("ilp: no admissible label set");
  double space = std::pow(static_cast<double>(options.size()),
                          static_cast<double>(p.n_nodes));
  if (space > static_cast<double>(cap)) {
    throw SearchCapError("ilp: enumeration space " + std::to_string(space) +
                         " exceeds cap " + std::to_string(cap));
  }
  std::vector<std::size_t> digit(p.n_nodes, 0);
  Choice chosen(p.n_nodes);
  std::vector<char> active;
  bool have = false;
  double best = 0.0;
  Choice best_choice;
  while (true) {
    std::size_t total = 0;
    for (std::size_t u = 0; u < p.n_nodes; ++u) {
      chosen[u] = options[digit[u]];
      total += chosen[u].size();
    }
    if (total <= p.global_cap) {
      const double s = objective(p, chosen, active);
      if (!have || s > best) {
        have = true;
        best = s;
        best_choice = chosen;
      }
    }
    // Odometer with node 0 most significant keeps lexicographic order.
    std::size_t u = p.n_nodes;
    while (u > 0) {
      --u;
      if (++digit[u] < options.size()) break;
      digit[u] = 0;
      if (u == 0) {
        u = p.n_nodes + 1;
        break;
      }
    }
    if (p.n_nodes == 0 || u == p.n_nodes + 1) break;
  }
  if (!have) throw InfeasibleError("ilp: no feasible assignment");
  return finish(p, std::move(best_choice));
}

namespace {

/// Nonzero α values of a selection, sorted descending. With β ignored the
/// problem is a weighted laminar matroid, and every optimal selection has the
/// same multiset of values; zero-valued labels never change the objective.
using Signature = std::vector<double>;

Signature signature(std::vector<double> values) {
  std::erase(values, 0.0);
  std::sort(values.begin(), values.end(), std::greater<>());
  return values;
}

/// Best β-free completion when nodes before `u` are fixed (`fixed` holds
/// their values, `used` their label count), node `u` holds `prefix` and may
/// still add labels above its last one unless `closed`. nullopt if no
/// feasible completion exists.
std::optional<Signature> best_completion(const AssignmentProblem& p,
                                         const std::vector<double>& fixed,
                                         std::size_t used, std::size_t u,
                                         const std::vector<std::size_t>& prefix,
                                         bool closed) {
  if (!p.allow_empty && closed && prefix.empty()) return std::nullopt;
  std::size_t budget = p.global_cap;
  if (budget != kUnbounded) {
    if (used + prefix.size() > budget) return std::nullopt;
    budget -= used + prefix.size();
  }
  std::vector<double> values = fixed;
  for (std::size_t l : prefix) values.push_back(p.alpha_at(u, l));
  std::vector<double> pool;
  // Adds node v's best use of labels [from, n_labels) with `cap` slots.
  auto open_node = [&](std::size_t v, std::size_t from, std::size_t cap,
                       bool needs_label) {
    std::size_t forced = p.n_labels;
    if (needs_label) {
      if (budget == 0 || from >= p.n_labels) return false;
      if (budget != kUnbounded) --budget;
      forced = from;
      for (std::size_t l = from + 1; l < p.n_labels; ++l) {
        if (p.alpha_at(v, l) > p.alpha_at(v, forced)) forced = l;
      }
      values.push_back(p.alpha_at(v, forced));
      --cap;
    }
    std::vector<double> cands;
    for (std::size_t l = from; l < p.n_labels; ++l) {
      if (l != forced && p.alpha_at(v, l) > 0.0) cands.push_back(p.alpha_at(v, l));
    }
    std::sort(cands.begin(), cands.end(), std::greater<>());
    cands.resize(std::min(cands.size(), cap));
    pool.insert(pool.end(), cands.begin(), cands.end());
    return true;
  };
  if (!closed) {
    const std::size_t from = prefix.empty() ? 0 : prefix.back() + 1;
    if (!open_node(u, from, p.per_node_cap - prefix.size(),
                   !p.allow_empty && prefix.empty())) {
      return std::nullopt;
    }
  }
  for (std::size_t v = u + 1; v < p.n_nodes; ++v) {
    if (!open_node(v, 0, p.per_node_cap, !p.allow_empty)) return std::nullopt;
  }
  std::sort(pool.begin(), pool.end(), std::greater<>());
  pool.resize(std::min(pool.size(), budget));
  values.insert(values.end(), pool.begin(), pool.end());
  return signature(std::move(values));
}

}  // namespace

Assignment solve_greedy(const AssignmentProblem& p) {
  p.validate();
  if (!p.allow_empty && p.n_nodes > p.global_cap) {
    throw InfeasibleError("ilp: every node needs a label but global cap is " +
                          std::to_string(p.global_cap));
  }
  // The β-free optimum is fixed by its value signature; the selection is then
  // built node by node as the lexicographically smallest one reaching it, the
  // same tie rule solve_exact uses.
  const auto target = best_completion(p, {}, 0, 0, {}, false);
  if (!target) throw InfeasibleError("ilp: no feasible assignment");
  Choice chosen(p.n_nodes);
  std::vector<double> fixed;
  std::size_t used = 0;
  for (std::size_t u = 0; u < p.n_nodes; ++u) {
    auto& list = chosen[u];
    while (best_completion(p, fixed, used, u, list, true) != target) {
      const std::size_t from = list.empty() ? 0 : list.back() + 1;
      bool extended = false;
      if (list.size() < p.per_node_cap) {
        for (std::size_t l = from; l < p.n_labels && !extended; ++l) {
          list.push_back(l);
          if (best_completion(p, fixed, used, u, list, false) == target) {
            extended = true;
          } else {
            list.pop_back();
          }
        }
      }
      if (!extended) throw IlpError("ilp: greedy selection lost its optimum");
    }
    for (std::size_t l : list) fixed.push_back(p.alpha_at(u, l));
    used += list.size();
  }
  return finish(p, std::move(chosen));
}

namespace {

class BranchAndBound {
 public:
  BranchAndBound(const AssignmentProblem& p, const ExactOptions& opt)
      : p_(p), opt_(opt), options_(node_options(p)) {
    const std::size_t n = p.n_nodes;
    const std::size_t L = p.n_labels;
    option_alpha_.assign(n, std::vector<double>(options_.size(), 0.0));
    best_rest_.assign(n + 1, 0.0);
    for (std::size_t u = 0; u < n; ++u) {
      double best = -std::numeric_limits<double>::infinity();
      for (std::size_t o = 0; o < options_.size(); ++o) {
        double s = 0.0;
        for (std::size_t l : options_[o]) s += p.alpha_at(u, l);
        option_alpha_[u][o] = s;
        best = std::max(best, s);
      }
      node_best_.push_back(best);
    }
    for (std::size_t u = n; u-- > 0;) {
      best_rest_[u] = best_rest_[u + 1] + node_best_[u];
    }

    // Merge β entries on the same activation condition, oriented so the
    // later node is b.
    std::map<std::tuple<std::size_t, std::size_t, std::size_t, std::size_t>,
             double>
        merged;
    for (const auto& b : p.beta) {
      auto key = b.node_a < b.node_b
                     ? std::make_tuple(b.node_a, b.node_b, b.label_a, b.label_b)
                     : std::make_tuple(b.node_b, b.node_a, b.label_b, b.label_a);
      merged[key] += p.w * b.score;
    }
    by_later_.assign(n, {});
    std::map<std::pair<std::size_t, std::size_t>, std::vector<double>> per_pair;
    for (const auto& [key, v] : merged) {
      const auto [a, b, la, lb] = key;
      by_later_[b].push_back({a, la, lb, v});
      if (v > 0.0) per_pair[{a, b}].push_back(v);
    }
    // Each node pair activates at most cap² of its entries.
    const std::size_t cap = std::min(p.per_node_cap, L);
    pair_bound_rest_.assign(n + 1, 0.0);
    std::vector<double> bound_by_later(n, 0.0);
    for (auto& [nodes, vals] : per_pair) {
      std::sort(vals.begin(), vals.end(), std::greater<>());
      double s = 0.0;
      for (std::size_t i = 0; i < std::min(vals.size(), cap * cap); ++i) {
        s += vals[i];
      }
      bound_by_later[nodes.second] += s;
    }
    for (std::size_t u = n; u-- > 0;) {
      pair_bound_rest_[u] = pair_bound_rest_[u + 1] + bound_by_later[u];
    }
    double mag = 1.0;
    for (double a : p.alpha) mag += std::abs(a);
    for (const auto& [_, v] : merged) mag += std::abs(v);
    slack_ = 1e-9 * mag;
    active_.assign(n * L, 0);
    current_.assign(n, {});
  }

  Assignment run(double incumbent) {
    best_value_ = incumbent;
    descend(0, 0.0, 0);
    if (!have_) throw InfeasibleError("ilp: no feasible assignment");
    return finish(p_, std::move(best_));
  }

 private:
  struct Entry {
    std::size_t other;
    std::size_t label_other;
    std::size_t label_self;
    double value;
  };

  void descend(std::size_t depth, double partial, std::size_t used) {
    if (++visited_ > opt_.node_budget) {
      throw SearchCapError("ilp: branch-and-bound node budget of " +
                           std::to_string(opt_.node_budget) + " exhausted");
    }
    const std::size_t n = p_.n_nodes;
    if (depth == n) {
      const double s = objective(p_, current_, scratch_);
      if (!have_ || s > best_score_) {
        have_ = true;
        best_score_ = s;
        best_ = current_;
      }
      best_value_ = std::max(best_value_, s);
      return;
    }
    const std::size_t remaining_after = n - depth - 1;
    const std::size_t min_after = p_.allow_empty ? 0 : remaining_after;
    const double rest = best_rest_[depth + 1] + pair_bound_rest_[depth + 1];
    const std::size_t L = p_.n_labels;
    for (std::size_t o = 0; o < options_.size(); ++o) {
      const auto& labels = options_[o];
      if (p_.global_cap != kUnbounded &&
          used + labels.size() + min_after > p_.global_cap) {
        continue;
      }
      double gain = option_alpha_[depth][o];
      for (std::size_t l : labels) active_[depth * L + l] = 1;
      for (const auto& e : by_later_[depth]) {
        if (active_[depth * L + e.label_self] &&
            active_[e.other * L + e.label_other]) {
          gain += e.value;
        }
      }
      const double bound = partial + gain + rest;
      // Leaves arrive in tie-break order, so once one is held only a strictly
      // better leaf can replace it.
      if (bound >= best_value_ - slack_ && (!have_ || bound > best_score_)) {
        current_[depth] = labels;
        descend(depth + 1, partial + gain, used + labels.size());
      }
      for (std::size_t l : labels) active_[depth * L + l] = 0;
    }
    current_[depth].clear();
  }

  const AssignmentProblem& p_;
  ExactOptions opt_;
  std::vector<std::vector<std::size_t>> options_;
  std::vector<std::vector<double>> option_alpha_;
  std::vector<double> node_best_;
  std::vector<double> best_rest_;
  std::vector<double> pair_bound_rest_;
  std::vector<std::vector<Entry>> by_later_;
  std::vector<char> active_;
  std::vector<char> scratch_;
  Choice current_;
  Choice best_;
  double best_value_ = 0.0;
  double best_score_ = 0.0;
  double slack_ = 0.0;
  bool have_ = false;
  std::uint64_t visited_ = 0;
};

// Iterated conditional modes from the greedy start; only used to seed the
// pruning threshold.
double local_search_value(const AssignmentProblem& p) {
  Assignment g;
  try {
    g = solve_greedy(p);
  } catch (const InfeasibleError&) {
    return -std::numeric_limits<double>::infinity();
  }
  if (p.per_node_cap != 1 || p.beta.empty()) return g.objective;
  Choice cur = g.chosen;
  std::vector<char> active;
  double cur_val = objective(p, cur, active);
  std::size_t used = 0;
  for (const auto& c : cur) used += c.size();
  for (int sweep = 0; sweep < 20; ++sweep) {
    bool improved = false;
    for (std::size_t u = 0; u < p.n_nodes; ++u) {
      const auto saved = cur[u];
      for (std::size_t l = 0; l < p.n_labels; ++l) {
        if (!saved.empty() && saved[0] == l) continue;
        if (saved.empty() && used + 1 > p.global_cap) continue;
        cur[u] = {l};
        const double v = objective(p, cur, active);
        if (v > cur_val + 1e-12) {
          cur_val = v;
          improved = true;
          if (saved.empty()) ++used;
          break;
        }
        cur[u] = saved;
      }
    }
    if (!improved) break;
  }
  return cur_val;
}

}  // namespace

Assignment solve_exact(const AssignmentProblem& p, const ExactOptions& options) {
  p.validate();
  if (node_options(p).empty()) {
    throw InfeasibleError("ilp: no admissible label set");
  }
  BranchAndBound bnb(p, options);
  return bnb.run(local_search_value(p));
}

RecallResult recall_topk(std::span<const RankedPrediction> predicted,
                         std::span<const LabeledPair> gt, std::size_t k) {
  RecallResult r;
  if (gt.empty()) {
    r.recall = 1.0;
    r.empty_gt = true;
    return r;
  }
  std::vector<RankedPrediction> sorted(predicted.begin(), predicted.end());
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const RankedPrediction& a, const RankedPrediction& b) {
                     if (a.score != b.score) return a.score > b.score;
                     return std::tie(a.pair, a.label) < std::tie(b.pair, b.label);
                   });
  sorted.resize(std::min(k, sorted.size()));
  for (const auto& g : gt) {
    const bool hit =
        std::any_of(sorted.begin(), sorted.end(), [&](const RankedPrediction& s) {
          return s.pair == g.pair && s.label == g.label;
        });
    if (hit) ++r.hits;
  }
  r.recall = static_cast<double>(r.hits) / static_cast<double>(gt.size());
  return r;
}

AssignmentProblem problem_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw IlpError("ilp: problem must be a JSON object");
  AssignmentProblem p;
  try {
    p.n_nodes = j.at("n_nodes").get<std::size_t>();
    p.n_labels = j.at("n_labels").get<std::size_t>();
    p.alpha = j.at("alpha").get<std::vector<double>>();
    if (j.contains("beta")) {
      for (const auto& e : j.at("beta")) {
        if (!e.is_array() || e.size() != 5) {
          throw IlpError("ilp: beta entries are [u, u', l, l', score]");
        }
        p.beta.push_back({e[0].get<std::size_t>(), e[1].get<std::size_t>(),
                          e[2].get<std::size_t>(), e[3].get<std::size_t>(),
                          e[4].get<double>()});
      }
    }
    p.w = j.value("w", 1.0);
    p.per_node_cap = j.value("per_node_cap", std::size_t{1});
    if (j.contains("global_cap") && !j.at("global_cap").is_null()) {
      p.global_cap = j.at("global_cap").get<std::size_t>();
    }
    p.allow_empty = j.value("allow_empty", false);
  } catch (const nlohmann::json::exception& e) {
    throw IlpError(std::string("ilp: malformed problem: ") + e.what());
  }
  p.validate();
  return p;
}

nlohmann::json to_json(const AssignmentProblem& p) {
  nlohmann::json j;
  j["n_nodes"] = p.n_nodes;
  j["n_labels"] = p.n_labels;
  j["alpha"] = p.alpha;
  auto beta = nlohmann::json::array();
  for (const auto& b : p.beta) {
    beta.push_back({b.node_a, b.node_b, b.label_a, b.label_b, b.score});
  }
  j["beta"] = std::move(beta);
  j["w"] = p.w;
  j["per_node_cap"] = p.per_node_cap;
  if (p.global_cap == kUnbounded) {
    j["global_cap"] = nullptr;
  } else {
    j["global_cap"] = p.global_cap;
  }
  j["allow_empty"] = p.allow_empty;
  return j;
}

nlohmann::json to_json(const Assignment& a) {
  return {{"chosen", a.chosen}, {"objective", a.objective}};
}

Assignment assignment_from_json(const nlohmann::json& j) {
  Assignment a;
  a.chosen = j.at("chosen").get<Choice>();
  a.objective = j.at("objective").get<double>();
  return a;
}

}  // namespace odeassign::ilp

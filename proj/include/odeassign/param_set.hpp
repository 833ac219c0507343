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

#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "odeassign/tensor.hpp"

namespace odeassign {

class Rng;

/// Named trainable parameters, iterated in lexicographic name order.
///
/// Entry shapes are fixed at insertion; `assign` only replaces values.
class ParamSet {
 public:
  using Map = std::map<std::string, Tensor>;

  void add(const std::string& name, Tensor value);
  void assign(const std::string& name, Tensor value);
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const { return entries_.contains(name); }
  bool empty() const noexcept { return entries_.empty(); }
  std::size_t count() const noexcept { return entries_.size(); }
  std::size_t total_size() const noexcept;
  std::vector<std::string> names() const;

  Map::const_iterator begin() const { return entries_.begin(); }
  Map::const_iterator end() const { return entries_.end(); }

  /// Concatenated values in name order.
  std::vector<double> flatten() const;
  /// Inverse of `flatten`.
  void unflatten(std::span<const double> flat);

  /// Copy whose entries are leaves of `tape`, named after the entries.
  ParamSet watch(Tape& tape) const;
  /// Copy with every tensor detached from any tape.
  ParamSet detached() const;
  /// Same names and shapes, all zeros.
  ParamSet zeros_like() const;
  /// Entries whose names start with `prefix`.
  ParamSet subset(std::string_view prefix) const;

  /// Element-wise equality of names, shapes and values (bitwise).
  bool bitwise_equal(const ParamSet& other) const;

  /// Binary format: a text header ("odeassign-params 1", entry count, one
  /// "name rank dims... offset" line per entry, "data") followed by the
  /// little-endian float64 payload at the recorded byte offsets.
  void write(std::ostream& os) const;
  static ParamSet read(std::istream& is);
  void save(const std::filesystem::path& path) const;
  static ParamSet load(const std::filesystem::path& path);

 private:
  Map entries_;
};

}  // namespace odeassign

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

#include "odeassign/param_set.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace odeassign {

namespace {

constexpr std::string_view kMagic = "odeassign-params 1";

std::uint64_t to_little_endian(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    std::uint64_t r = 0;
    for (int i = 0; i < 8; ++i) r = (r << 8) | ((v >> (8 * i)) & 0xff);
    return r;
  }
  return v;
}

}  // namespace

void ParamSet::add(const std::string& name, Tensor value) {
  if (name.empty() || name.find_first_of(" \t\n") != std::string::npos) {
    throw Error("ParamSet: invalid parameter name '" + name + "'");
  }
  auto [it, inserted] = entries_.emplace(name, std::move(value));
  if (!inserted) throw Error("ParamSet: duplicate parameter '" + name + "'");
}

void ParamSet::assign(const std::string& name, Tensor value) {
  auto it = entries_.find(name);
  if (it == entries_.end()) {
    throw Error("ParamSet: unknown parameter '" + name + "'");
  }
  if (it->second.shape() != value.shape()) {
    throw ShapeError("ParamSet: '" + name + "' has shape " +
                     shape_string(it->second.shape()) + ", got " +
                     shape_string(value.shape()));
  }
  it->second = std::move(value);
}

const Tensor& ParamSet::at(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) {
    throw Error("ParamSet: unknown parameter '" + name + "'");
  }
  return it->second;
}

std::size_t ParamSet::total_size() const noexcept {
  std::size_t n = 0;
  for (const auto& [_, t] : entries_) n += t.size();
  return n;
}

std::vector<std::string> ParamSet::names() const {
  std::vector<std::string> out;
  for (const auto& [name, _] : entries_) out.push_back(name);
  return out;
}

std::vector<double> ParamSet::flatten() const {
  std::vector<double> flat;
  flat.reserve(total_size());
  for (const auto& [_, t] : entries_) {
    flat.insert(flat.end(), t.values().begin(), t.values().end());
  }
  return flat;
}

void ParamSet::unflatten(std::span<const double> flat) {
  if (flat.size() != total_size()) {
    throw ShapeError("ParamSet::unflatten: expected " +
                     std::to_string(total_size()) + " values, got " +
                     std::to_string(flat.size()));
  }
  std::size_t offset = 0;
  for (auto& [_, t] : entries_) {
    std::vector<double> v(flat.begin() + static_cast<std::ptrdiff_t>(offset),
                          flat.begin() +
                              static_cast<std::ptrdiff_t>(offset + t.size()));
    offset += t.size();
    t = Tensor(t.shape(), std::move(v));
  }
}

ParamSet ParamSet::watch(Tape& tape) const {
  ParamSet out;
  for (const auto& [name, t] : entries_) {
    out.entries_.emplace(name, tape.watch(t, name));
  }
  return out;
}

ParamSet ParamSet::detached() const {
  ParamSet out;
  for (const auto& [name, t] : entries_) out.entries_.emplace(name, t.detached());
  return out;
}

ParamSet ParamSet::zeros_like() const {
  ParamSet out;
  for (const auto& [name, t] : entries_) {
    out.entries_.emplace(name, Tensor(t.shape(), 0.0));
  }
  return out;
}

ParamSet ParamSet::subset(std::string_view prefix) const {
  ParamSet out;
  for (const auto& [name, t] : entries_) {
    if (name.starts_with(prefix)) out.entries_.emplace(name, t);
  }
  return out;
}

bool ParamSet::bitwise_equal(const ParamSet& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  auto a = entries_.begin();
  auto b = other.entries_.begin();
  for (; a != entries_.end(); ++a, ++b) {
    if (a->first != b->first || a->second.shape() != b->second.shape()) {
      return false;
    }
    if (std::memcmp(a->second.values().data(), b->second.values().data(),
                    a->second.size() * sizeof(double)) != 0) {
      return false;
    }
  }
  return true;
}

void ParamSet::write(std::ostream& os) const {
  os << kMagic << '\n' << entries_.size() << '\n';
  std::size_t offset = 0;
  for (const auto& [name, t] : entries_) {
    os << name << ' ' << t.rank();
    for (auto d : t.shape()) os << ' ' << d;
    os << ' ' << offset << '\n';
    offset += t.size() * sizeof(double);
  }
  os << "data\n";
  for (const auto& [_, t] : entries_) {
    for (double v : t.values()) {
      const std::uint64_t bits = to_little_endian(std::bit_cast<std::uint64_t>(v));
      os.write(reinterpret_cast<const char*>(&bits), sizeof(bits));
    }
  }
  if (!os) throw Error("ParamSet: write failed");
}

ParamSet ParamSet::read(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != kMagic) {
    throw Error("ParamSet: bad header (expected '" + std::string(kMagic) + "')");
  }
  std::size_t count = 0;
  if (!std::getline(is, line)) throw Error("ParamSet: missing entry count");
  count = std::stoul(line);
  struct Entry {
    std::string name;
    Shape shape;
    std::size_t offset;
  };
  std::vector<Entry> header;
  for (std::size_t i = 0; i < count; ++i) {
    if (!std::getline(is, line)) throw Error("ParamSet: truncated header");
    std::istringstream ls(line);
    Entry e;
    std::size_t rank = 0;
    ls >> e.name >> rank;
    e.shape.resize(rank);
    for (auto& d : e.shape) ls >> d;
    ls >> e.offset;
    if (!ls) throw Error("ParamSet: malformed header line '" + line + "'");
    header.push_back(std::move(e));
  }
  if (!std::getline(is, line) || line != "data") {
    throw Error("ParamSet: missing data marker");
  }
  std::string payload((std::istreambuf_iterator<char>(is)),
                      std::istreambuf_iterator<char>());
  ParamSet out;
  for (const auto& e : header) {
    std::size_t n = 1;
    for (auto d : e.shape) n *= d;
    if (e.offset + n * sizeof(double) > payload.size()) {
      throw Error("ParamSet: payload too short for '" + e.name + "'");
    }
    std::vector<double> v(n);
    for (std::size_t k = 0; k < n; ++k) {
      std::uint64_t bits = 0;
      std::memcpy(&bits, payload.data() + e.offset + k * sizeof(double),
                  sizeof(bits));
      v[k] = std::bit_cast<double>(to_little_endian(bits));
    }
    out.add(e.name, Tensor(e.shape, std::move(v)));
  }
  return out;
}

void ParamSet::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("ParamSet: cannot open " + path.string());
  write(os);
}

ParamSet ParamSet::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("ParamSet: cannot open " + path.string());
  return read(is);
}

}  // namespace odeassign

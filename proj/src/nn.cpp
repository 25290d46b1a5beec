// SPDX-License-Identifier: Apache-2.0
#include "dsagl/nn.hpp"

#include <cmath>

#include "dsagl/error.hpp"

namespace dsagl::nn {

Tensor uniform_fan_in(Shape shape, std::size_t fan_in, Rng& rng) {
  if (fan_in == 0) throw ShapeError("uniform_fan_in: fan_in must be positive");
  const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(-bound, bound);
  return t;
}

Var ParamStore::add(const std::string& name, Tensor value) {
  if (find(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  Var v = parameter(std::move(value));
  entries_.emplace_back(name, v);
  return v;
}

Var ParamStore::weight(const std::string& name, Shape shape, std::size_t fan_in, Rng& rng) {
  return add(name, uniform_fan_in(std::move(shape), fan_in, rng));
}

Var ParamStore::zeros(const std::string& name, Shape shape) {
  return add(name, Tensor(std::move(shape), 0.0));
}

std::size_t ParamStore::numel() const {
  std::size_t n = 0;
  for (const auto& [name, v] : entries_) n += v.value().size();
  return n;
}

const Var* ParamStore::find(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.first == name) return &e.second;
  return nullptr;
}

std::vector<Var> ParamStore::group(const std::string& prefix) const {
  std::vector<Var> out;
  for (const auto& [name, v] : entries_)
    if (name.compare(0, prefix.size(), prefix) == 0) out.push_back(v);
  return out;
}

std::vector<Var> ParamStore::all() const {
  std::vector<Var> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.second);
  return out;
}

}  // namespace dsagl::nn

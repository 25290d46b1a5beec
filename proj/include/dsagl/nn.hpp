// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "dsagl/autograd.hpp"
#include "dsagl/rng.hpp"

namespace dsagl::nn {

/// Ordered, named collection of trainable leaves. Registration order is the
/// canonical order for checkpoints and optimizer state.
class ParamStore {
 public:
  using Entry = std::pair<std::string, Var>;

  /// Weights uniform in +-sqrt(1/fan_in).
  Var weight(const std::string& name, Shape shape, std::size_t fan_in, Rng& rng);
  Var zeros(const std::string& name, Shape shape);
  Var add(const std::string& name, Tensor value);

  const std::vector<Entry>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }
  /// Total number of scalar parameters.
  std::size_t numel() const;

  const Var* find(const std::string& name) const;
  /// Entries whose names start with `prefix`.
  std::vector<Var> group(const std::string& prefix) const;
  std::vector<Var> all() const;

 private:
  std::vector<Entry> entries_;
};

Tensor uniform_fan_in(Shape shape, std::size_t fan_in, Rng& rng);

}  // namespace dsagl::nn

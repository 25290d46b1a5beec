// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>

#include "dsagl/rng.hpp"
#include "dsagl/tensor.hpp"

namespace testing {

inline dsagl::Tensor random_tensor(dsagl::Shape shape, dsagl::Rng& rng, double lo = -1.0, double hi = 1.0) {
  dsagl::Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

inline bool bit_equal(const dsagl::Tensor& a, const dsagl::Tensor& b) { return a == b; }

}  // namespace testing

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dsagl/data.hpp"
#include "dsagl/dualstream.hpp"

namespace dsagl {

struct BagAttention {
  std::uint64_t bag_id = 0;
  std::vector<double> weights;  // teacher attention, sums to 1
};

BagAttention bag_attention(const DsaglModel& model, const Bag& bag);

/// "bag_id,instance_index,a_value" header, one row per instance.
std::string attention_to_text(std::span<const BagAttention> rows);

/// Plain PGM (P2) on a ceil(sqrt(N))-wide grid, row-major in instance order.
/// Cells hold round(255 * a / max a); cells past N are 0.
std::string attention_heatmap_pgm(const BagAttention& att);

/// Writes attention.txt and bag_<id>.pgm per requested bag into dir.
/// Unknown ids throw DataError before anything is written.
std::vector<std::string> export_attention(const DsaglModel& model, const BagDataset& ds,
                                          std::span<const std::uint64_t> bag_ids, const std::string& dir);

}  // namespace dsagl

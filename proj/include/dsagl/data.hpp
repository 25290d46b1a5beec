// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "dsagl/tensor.hpp"

namespace dsagl {

struct Bag {
  std::uint64_t bag_id = 0;
  Tensor instances;                          // [N,C,H,W]
  int label = 0;                             // max of instance_labels
  std::vector<std::uint8_t> instance_labels;  // hidden, evaluation only

  std::size_t size() const noexcept { return instance_labels.size(); }
};

struct BagDataset {
  std::vector<Bag> bags;
  double positive_ratio = 0.0;
  std::uint64_t seed = 0;

  std::size_t instance_count() const;
  /// Non-empty, consistent shapes, y = max z for every bag.
  void validate() const;
  /// Index of the bag with this id; throws DataError when absent.
  std::size_t index_of(std::uint64_t bag_id) const;
};

struct SyntheticConfig {
  std::size_t num_bags = 200;
  std::size_t bag_size = 20;
  double positive_ratio = 0.2;
  std::size_t negative_class_count = 4;
  std::size_t patch_side = 12;
  std::size_t channels = 1;
  double noise_sigma = 0.3;
  std::size_t blob_radius = 3;
  double blob_amplitude = 1.5;
  // Each positive draws its amplitude from blob_amplitude * [1 - spread, 1].
  double amplitude_spread = 0.0;
  std::uint64_t seed = 7;

  void validate() const;
  /// Positive instances in each positive bag: max(1, round(r * bag_size)).
  std::size_t positives_per_bag() const;
};

/// Bags with even ids are positive. Each bag draws from its own stream
/// seeded by (seed, bag_id).
BagDataset gen_synthetic_bags(const SyntheticConfig& cfg);

// DSGL format: "DSGL", u8 version, u64 bag count, f64 ratio, u64 seed, then
// per bag u64 id, u64 N, u8 label, N label bytes and one tensor dump.
inline constexpr std::uint8_t kDatasetVersion = 1;

void write_dataset(std::ostream& out, const BagDataset& ds);
BagDataset read_dataset(std::istream& in);
void save_dataset(const BagDataset& ds, const std::string& path);
BagDataset load_dataset(const std::string& path);

/// Counts and realised positive ratio, one "key: value" per line.
std::string dataset_summary(const BagDataset& ds);

}  // namespace dsagl

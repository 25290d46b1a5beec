// SPDX-License-Identifier: Apache-2.0
#include "dsagl/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

#include "dsagl/error.hpp"
#include "dsagl/rng.hpp"

namespace dsagl {

std::size_t BagDataset::instance_count() const {
  std::size_t n = 0;
  for (const auto& b : bags) n += b.size();
  return n;
}

void BagDataset::validate() const {
  if (bags.empty()) throw DataError("dataset has no bags");
  const Shape& ref = bags.front().instances.shape();
  for (const auto& b : bags) {
    const std::string id = "bag " + std::to_string(b.bag_id);
    if (b.size() == 0) throw DataError(id + " is empty");
    const Shape& s = b.instances.shape();
    if (s.size() != 4 || s[0] != b.size())
      throw DataError(id + ": instance tensor " + shape_str(s) + " does not match " + std::to_string(b.size()) +
                      " instance labels");
    if (s[1] != ref[1] || s[2] != ref[2] || s[3] != ref[3])
      throw DataError(id + ": instance shape " + shape_str(s) + " differs from " + shape_str(ref));
    int y = 0;
    for (auto z : b.instance_labels) {
      if (z > 1) throw DataError(id + ": instance label must be 0 or 1");
      y = std::max<int>(y, z);
    }
    if (b.label != y) throw DataError(id + ": bag label " + std::to_string(b.label) + " != max instance label");
  }
}

std::size_t BagDataset::index_of(std::uint64_t bag_id) const {
  for (std::size_t i = 0; i < bags.size(); ++i)
    if (bags[i].bag_id == bag_id) return i;
  throw DataError("unknown bag id " + std::to_string(bag_id));
}

void SyntheticConfig::validate() const {
  if (num_bags == 0 || num_bags % 2 != 0) throw ConfigError("num_bags must be even and positive");
  if (bag_size == 0) throw ConfigError("bag_size must be >= 1");
  if (!(positive_ratio > 0.0 && positive_ratio <= 1.0)) throw ConfigError("positive_ratio must be in (0,1]");
  if (negative_class_count == 0) throw ConfigError("negative_class_count must be >= 1");
  if (patch_side < 2 * blob_radius + 1) throw ConfigError("patch_side must fit the blob");
  if (channels == 0) throw ConfigError("channels must be >= 1");
  if (!(noise_sigma >= 0.0)) throw ConfigError("noise_sigma must be >= 0");
  if (!(amplitude_spread >= 0.0 && amplitude_spread <= 1.0)) throw ConfigError("amplitude_spread must be in [0,1]");
}

std::size_t SyntheticConfig::positives_per_bag() const {
  const auto k = static_cast<std::size_t>(std::llround(positive_ratio * static_cast<double>(bag_size)));
  return std::clamp<std::size_t>(k, 1, bag_size);
}

namespace {

// Oriented grating of family k plus white noise; optionally a bright disc.
void draw_patch(double* out, const SyntheticConfig& cfg, std::size_t family, bool positive, Rng& rng) {
  const std::size_t S = cfg.patch_side;
  const double angle = std::numbers::pi * static_cast<double>(family) / static_cast<double>(cfg.negative_class_count);
  const double freq = 2.0 * std::numbers::pi / (3.0 + static_cast<double>(family % 3));
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double ca = std::cos(angle), sa = std::sin(angle);
  double cy = 0.0, cx = 0.0, amp = cfg.blob_amplitude;
  if (positive) {
    const double r = static_cast<double>(cfg.blob_radius);
    cy = rng.uniform(r, static_cast<double>(S) - 1.0 - r);
    cx = rng.uniform(r, static_cast<double>(S) - 1.0 - r);
    if (cfg.amplitude_spread > 0.0) amp *= 1.0 - cfg.amplitude_spread * rng.uniform(0.0, 1.0);
  }
  for (std::size_t c = 0; c < cfg.channels; ++c)
    for (std::size_t y = 0; y < S; ++y)
      for (std::size_t x = 0; x < S; ++x) {
        double v = 0.5 * std::sin(freq * (ca * x + sa * y) + phase) + cfg.noise_sigma * rng.normal();
        if (positive) {
          const double dy = y - cy, dx = x - cx;
          const double r = static_cast<double>(cfg.blob_radius);
          if (dy * dy + dx * dx <= r * r) v += amp;
        }
        out[(c * S + y) * S + x] = v;
      }
}

}  // namespace

BagDataset gen_synthetic_bags(const SyntheticConfig& cfg) {
  cfg.validate();
  BagDataset ds;
  ds.positive_ratio = cfg.positive_ratio;
  ds.seed = cfg.seed;
  const std::size_t S = cfg.patch_side, N = cfg.bag_size, per = cfg.channels * S * S;
  const std::size_t k = cfg.positives_per_bag();
  for (std::uint64_t id = 0; id < cfg.num_bags; ++id) {
    Rng rng(mix_seed(cfg.seed, id));
    Bag bag;
    bag.bag_id = id;
    bag.label = id % 2 == 0 ? 1 : 0;
    bag.instance_labels.assign(N, 0);
    if (bag.label) {
      std::vector<std::size_t> pos(N);
      for (std::size_t j = 0; j < N; ++j) pos[j] = j;
      rng.shuffle(pos);
      for (std::size_t j = 0; j < k; ++j) bag.instance_labels[pos[j]] = 1;
    }
    bag.instances = Tensor({N, cfg.channels, S, S});
    for (std::size_t j = 0; j < N; ++j) {
      const std::size_t family = rng.below(cfg.negative_class_count);
      draw_patch(bag.instances.ptr() + j * per, cfg, family, bag.instance_labels[j] != 0, rng);
    }
    ds.bags.push_back(std::move(bag));
  }
  return ds;
}

void write_dataset(std::ostream& out, const BagDataset& ds) {
  out.write("DSGL", 4);
  io::write_u8(out, kDatasetVersion);
  io::write_u64(out, ds.bags.size());
  io::write_f64(out, ds.positive_ratio);
  io::write_u64(out, ds.seed);
  for (const auto& b : ds.bags) {
    io::write_u64(out, b.bag_id);
    io::write_u64(out, b.size());
    io::write_u8(out, static_cast<std::uint8_t>(b.label));
    out.write(reinterpret_cast<const char*>(b.instance_labels.data()), static_cast<std::streamsize>(b.size()));
    write_tensor(out, b.instances);
  }
  if (!out) throw DataError("failed writing dataset");
}

BagDataset read_dataset(std::istream& in) {
  std::uint64_t off = 0;
  char magic[4];
  io::read_bytes(in, magic, 4, off);
  if (std::memcmp(magic, "DSGL", 4) != 0) throw FormatError("bad magic, expected DSGL", 0);
  const std::uint64_t vpos = off;
  const auto version = io::read_u8(in, off);
  if (version != kDatasetVersion)
    throw FormatError("unsupported dataset version " + std::to_string(version), vpos);
  const std::uint64_t cpos = off;
  const std::uint64_t count = io::read_u64(in, off);
  if (count == 0) throw FormatError("dataset has no bags", cpos);
  BagDataset ds;
  ds.positive_ratio = io::read_f64(in, off);
  ds.seed = io::read_u64(in, off);
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint64_t start = off;
    Bag b;
    b.bag_id = io::read_u64(in, off);
    const std::uint64_t npos = off;
    const std::uint64_t n = io::read_u64(in, off);
    if (n == 0) throw FormatError("bag " + std::to_string(b.bag_id) + " is empty", npos);
    if (n > (1ull << 32)) throw FormatError("bag " + std::to_string(b.bag_id) + " has implausible size", npos);
    const std::uint64_t ypos = off;
    const auto y = io::read_u8(in, off);
    if (y > 1) throw FormatError("bag label must be 0 or 1", ypos);
    b.label = y;
    const std::uint64_t lpos = off;
    b.instance_labels.resize(n);
    io::read_bytes(in, reinterpret_cast<char*>(b.instance_labels.data()), n, off);
    std::uint8_t zmax = 0;
    for (auto z : b.instance_labels) {
      if (z > 1) throw FormatError("instance label must be 0 or 1", lpos);
      zmax = std::max(zmax, z);
    }
    if (zmax != y) throw FormatError("bag label disagrees with instance labels", ypos);
    const std::uint64_t tpos = off;
    b.instances = read_tensor(in, off);
    if (b.instances.rank() != 4 || b.instances.dim(0) != n)
      throw FormatError("bag instance tensor " + shape_str(b.instances.shape()) + " does not hold " +
                        std::to_string(n) + " instances",
                        tpos);
    if (!ds.bags.empty()) {
      const Shape& r = ds.bags.front().instances.shape();
      const Shape& s = b.instances.shape();
      if (r[1] != s[1] || r[2] != s[2] || r[3] != s[3])
        throw FormatError("bag instance shape " + shape_str(s) + " differs from " + shape_str(r), start);
    }
    ds.bags.push_back(std::move(b));
  }
  return ds;
}

void save_dataset(const BagDataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  write_dataset(out, ds);
}

BagDataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open dataset '" + path + "'");
  return read_dataset(in);
}

std::string dataset_summary(const BagDataset& ds) {
  std::size_t pos_bags = 0, pos_inst = 0, inst_in_pos = 0;
  for (const auto& b : ds.bags) {
    if (!b.label) continue;
    ++pos_bags;
    inst_in_pos += b.size();
    for (auto z : b.instance_labels) pos_inst += z;
  }
  std::ostringstream o;
  o.precision(6);
  o << "bags: " << ds.bags.size() << "\n"
    << "positive_bags: " << pos_bags << "\n"
    << "negative_bags: " << ds.bags.size() - pos_bags << "\n"
    << "instances: " << ds.instance_count() << "\n"
    << "positive_instances: " << pos_inst << "\n"
    << "requested_ratio: " << ds.positive_ratio << "\n"
    << "realized_ratio: " << (inst_in_pos ? static_cast<double>(pos_inst) / inst_in_pos : 0.0) << "\n"
    << "seed: " << ds.seed << "\n";
  return o.str();
}

}  // namespace dsagl

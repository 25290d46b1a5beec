// SPDX-License-Identifier: Apache-2.0
#include "dsagl/export.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "dsagl/error.hpp"
#include "dsagl/metrics.hpp"

namespace dsagl {

BagAttention bag_attention(const DsaglModel& model, const Bag& bag) {
  Graph g(false);
  auto t = model.teacher_forward(g, constant(encode_bag(model, bag)));
  const auto& w = t.weights.value().data();
  return {bag.bag_id, std::vector<double>(w.begin(), w.end())};
}

std::string attention_to_text(std::span<const BagAttention> rows) {
  std::string out = "bag_id,instance_index,a_value\n";
  char buf[96];
  for (const auto& r : rows)
    for (std::size_t j = 0; j < r.weights.size(); ++j) {
      std::snprintf(buf, sizeof buf, "%llu,%zu,%.17g\n", static_cast<unsigned long long>(r.bag_id), j,
                    r.weights[j]);
      out += buf;
    }
  return out;
}

std::string attention_heatmap_pgm(const BagAttention& att) {
  const std::size_t n = att.weights.size();
  if (n == 0) throw ShapeError("attention heatmap: empty bag");
  const auto cols = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(n))));
  const std::size_t rows = (n + cols - 1) / cols;
  const double top = *std::max_element(att.weights.begin(), att.weights.end());
  std::string out = "P2\n# bag " + std::to_string(att.bag_id) + "\n";
  out += std::to_string(cols) + " " + std::to_string(rows) + "\n255\n";
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const std::size_t j = r * cols + c;
      long v = 0;
      if (j < n && top > 0.0) v = std::lround(255.0 * att.weights[j] / top);
      if (c) out += ' ';
      out += std::to_string(v);
    }
    out += '\n';
  }
  return out;
}

std::vector<std::string> export_attention(const DsaglModel& model, const BagDataset& ds,
                                          std::span<const std::uint64_t> bag_ids, const std::string& dir) {
  if (bag_ids.empty()) throw ShapeError("export_attention: no bag ids requested");
  std::vector<std::size_t> idx;
  for (auto id : bag_ids) idx.push_back(ds.index_of(id));
  std::vector<BagAttention> rows;
  for (auto i : idx) rows.push_back(bag_attention(model, ds.bags[i]));

  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::vector<std::string> written;
  auto put = [&](const fs::path& p, const std::string& text) {
    std::ofstream f(p, std::ios::trunc);
    if (!(f << text)) throw DataError("cannot write '" + p.string() + "'");
    written.push_back(p.string());
  };
  put(fs::path(dir) / "attention.txt", attention_to_text(rows));
  for (const auto& r : rows) put(fs::path(dir) / ("bag_" + std::to_string(r.bag_id) + ".pgm"), attention_heatmap_pgm(r));
  return written;
}

}  // namespace dsagl

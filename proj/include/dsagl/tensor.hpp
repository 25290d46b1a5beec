// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace dsagl {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major array of doubles with an explicit shape record.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double v) { return Tensor({1}, {v}); }
  static Tensor from(std::initializer_list<double> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  double* ptr() noexcept { return data_.data(); }
  const double* ptr() const noexcept { return data_.data(); }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  /// The single value of a one-element tensor.
  double item() const;

  /// Same values, new shape. Element counts must agree.
  Tensor reshaped(Shape shape) const;

  bool all_finite() const noexcept;
  void fill(double v) noexcept;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
};

double max_abs_diff(const Tensor& a, const Tensor& b);

// Dump format: u64 rank, u64 extents, then f64 values, all little-endian.
void write_tensor(std::ostream& out, const Tensor& t);

/// Reads one dump. `offset` tracks the stream position for diagnostics and
/// is advanced past the record.
Tensor read_tensor(std::istream& in, std::uint64_t& offset);

namespace io {

void write_u8(std::ostream& out, std::uint8_t v);
void write_u32(std::ostream& out, std::uint32_t v);
void write_u64(std::ostream& out, std::uint64_t v);
void write_f64(std::ostream& out, double v);

std::uint8_t read_u8(std::istream& in, std::uint64_t& offset);
std::uint32_t read_u32(std::istream& in, std::uint64_t& offset);
std::uint64_t read_u64(std::istream& in, std::uint64_t& offset);
double read_f64(std::istream& in, std::uint64_t& offset);
void read_bytes(std::istream& in, char* dst, std::size_t n, std::uint64_t& offset);

}  // namespace io

}  // namespace dsagl

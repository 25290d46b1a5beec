// SPDX-License-Identifier: Apache-2.0
#include "dsagl/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>

#include "dsagl/error.hpp"

namespace dsagl {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

static void check_extents(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor shape must have rank >= 1");
  for (std::size_t i = 0; i < shape.size(); ++i)
    if (shape[i] == 0)
      throw ShapeError("tensor extent " + std::to_string(i) + " is zero in " + shape_str(shape));
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  check_extents(shape_);
  data_.assign(shape_numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  check_extents(shape_);
  if (data_.size() != shape_numel(shape_))
    throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                     " does not match shape " + shape_str(shape_));
}

Tensor Tensor::from(std::initializer_list<double> values) {
  return Tensor({values.size()}, std::vector<double>(values));
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size())
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape_));
  return shape_[axis];
}

double Tensor::item() const {
  if (data_.size() != 1)
    throw ShapeError("item() on tensor of shape " + shape_str(shape_));
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != data_.size())
    throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void Tensor::fill(double v) noexcept { std::fill(data_.begin(), data_.end(), v); }

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError("max_abs_diff shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

namespace io {

template <typename T>
static void put(std::ostream& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.write(buf, sizeof(T));
}

template <typename T>
static T get(std::istream& in, std::uint64_t& offset) {
  char buf[sizeof(T)];
  read_bytes(in, buf, sizeof(T), offset);
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

void write_u8(std::ostream& out, std::uint8_t v) { put(out, v); }
void write_u32(std::ostream& out, std::uint32_t v) { put(out, v); }
void write_u64(std::ostream& out, std::uint64_t v) { put(out, v); }
void write_f64(std::ostream& out, double v) { put(out, v); }

void read_bytes(std::istream& in, char* dst, std::size_t n, std::uint64_t& offset) {
  in.read(dst, static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n)
    throw FormatError("truncated input: wanted " + std::to_string(n) + " bytes", offset);
  offset += n;
}

std::uint8_t read_u8(std::istream& in, std::uint64_t& offset) { return get<std::uint8_t>(in, offset); }
std::uint32_t read_u32(std::istream& in, std::uint64_t& offset) { return get<std::uint32_t>(in, offset); }
std::uint64_t read_u64(std::istream& in, std::uint64_t& offset) { return get<std::uint64_t>(in, offset); }
double read_f64(std::istream& in, std::uint64_t& offset) { return get<double>(in, offset); }

}  // namespace io

void write_tensor(std::ostream& out, const Tensor& t) {
  io::write_u64(out, t.rank());
  for (auto e : t.shape()) io::write_u64(out, e);
  out.write(reinterpret_cast<const char*>(t.ptr()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
}

Tensor read_tensor(std::istream& in, std::uint64_t& offset) {
  const std::uint64_t start = offset;
  const auto rank = io::read_u64(in, offset);
  if (rank == 0 || rank > 8) throw FormatError("bad tensor rank " + std::to_string(rank), start);
  Shape shape(rank);
  std::uint64_t numel = 1;
  for (auto& e : shape) {
    const auto at = offset;
    e = io::read_u64(in, offset);
    if (e == 0 || e > (1ull << 32)) throw FormatError("bad tensor extent " + std::to_string(e), at);
    numel *= e;
    if (numel > (1ull << 34)) throw FormatError("tensor too large", at);
  }
  std::vector<double> values(numel);
  io::read_bytes(in, reinterpret_cast<char*>(values.data()), numel * sizeof(double), offset);
  return Tensor(std::move(shape), std::move(values));
}

}  // namespace dsagl

#pragma once

#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "wrpn/util.hpp"

namespace wrpn {

using Shape = std::vector<std::int64_t>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << 'x';
    os << s[i];
  }
  os << ']';
  return os.str();
}

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto e : s) n *= e;
  return n;
}

// Dense row-major tensor of binary64 values, rank 1..4.
//
// Feature maps are laid out N x C x H x W and convolution filters
// Cout x Cin x Kh x Kw. All values carry full binary64 semantics; reduced
// precision in this codebase is about the *set of representable values*
// (quantization levels), never about the arithmetic carrier.
class Tensor {
public:
  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    validate_shape();
    data_.assign(static_cast<std::size_t>(shape_numel(shape_)), 0.0);
  }

  Tensor(Shape shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape();
    if (static_cast<std::int64_t>(data_.size()) != shape_numel(shape_))
      throw shape_error("tensor data length " + std::to_string(data_.size()) +
                        " does not match shape " + shape_str(shape_));
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor full(Shape shape, double value) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
  }

  const Shape& shape() const { return shape_; }
  std::size_t order() const { return shape_.size(); }
  std::int64_t extent(std::size_t axis) const { return shape_.at(axis); }
  std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  // Rank-specific indexed access. Bounds are the caller's responsibility on
  // the hot paths; shapes are checked once at op entry.
  double& at2(std::int64_t i, std::int64_t j) {
    return data_[static_cast<std::size_t>(i * shape_[1] + j)];
  }
  double at2(std::int64_t i, std::int64_t j) const {
    return data_[static_cast<std::size_t>(i * shape_[1] + j)];
  }
  double& at4(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) {
    return data_[static_cast<std::size_t>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
  }
  double at4(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
    return data_[static_cast<std::size_t>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

private:
  void validate_shape() const {
    if (shape_.empty() || shape_.size() > 4)
      throw shape_error("tensor order must be 1..4, got " + shape_str(shape_));
    for (auto e : shape_)
      if (e < 1) throw shape_error("tensor extents must be >= 1, got " + shape_str(shape_));
  }

  Shape shape_;
  std::vector<double> data_;
};

// A gradient has the same structure as the tensor it differentiates; shape
// agreement is asserted at every op boundary.
using Gradient = Tensor;

// Same data, different shape; element count must match.
inline Tensor reshaped(const Tensor& t, Shape new_shape) {
  if (shape_numel(new_shape) != t.numel())
    throw shape_error("reshape from " + shape_str(t.shape()) + " to " +
                      shape_str(new_shape) + " changes the element count");
  return Tensor(std::move(new_shape), t.values());
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (!a.same_shape(b))
    throw shape_error(std::string(what) + ": shape mismatch " + shape_str(a.shape()) +
                      " vs " + shape_str(b.shape()));
}

}  // namespace wrpn

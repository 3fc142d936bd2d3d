#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "slimnet/errors.hpp"

namespace slimnet {

inline std::string shape_string(const std::vector<std::size_t>& shape) {
  if (shape.empty()) return "[]";
  std::string s;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += 'x';
    s += std::to_string(shape[i]);
  }
  return s;
}

// Dense row-major tensor of doubles. Shapes are vectors of positive extents;
// data length always equals the product of extents.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape)
      : shape_(std::move(shape)), data_(checked_size(shape_), 0.0) {}

  Tensor(std::vector<std::size_t> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (checked_size(shape_) != data_.size()) {
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_string(shape_));
    }
  }

  static Tensor vector(std::vector<double> v) {
    std::size_t n = v.size();
    return Tensor({n}, std::move(v));
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v) {
    return Tensor({rows, cols}, std::move(v));
  }

  static Tensor full(std::vector<std::size_t> shape, double value) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
  }

  const std::vector<std::size_t>& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::vector<double>& values() noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // Multi-index access; bounds-checked, intended for tests and small paths.
  double& at(std::initializer_list<std::size_t> idx) { return data_[flat_index(idx)]; }
  double at(std::initializer_list<std::size_t> idx) const {
    return data_[const_cast<Tensor*>(this)->flat_index(idx)];
  }

  bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  Tensor& operator+=(const Tensor& other) {
    require_same_shape(other, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
  }

  Tensor& operator-=(const Tensor& other) {
    require_same_shape(other, "-=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
    return *this;
  }

  Tensor& scale(double c) {
    for (double& v : data_) v *= c;
    return *this;
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  static std::size_t checked_size(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t e : shape) {
      if (e == 0) throw DimensionError("tensor extent must be positive in shape " + shape_string(shape));
      n *= e;
    }
    return shape.empty() ? 0 : n;
  }

  std::size_t flat_index(std::initializer_list<std::size_t> idx) {
    if (idx.size() != shape_.size()) {
      throw DimensionError("index rank " + std::to_string(idx.size()) + " vs tensor rank " +
                           std::to_string(shape_.size()));
    }
    std::size_t flat = 0;
    std::size_t axis = 0;
    for (std::size_t i : idx) {
      if (i >= shape_[axis]) {
        throw DimensionError("index " + std::to_string(i) + " out of range for axis " +
                             std::to_string(axis) + " of " + shape_string(shape_));
      }
      flat = flat * shape_[axis] + i;
      ++axis;
    }
    return flat;
  }

  void require_same_shape(const Tensor& other, const char* op) const {
    if (shape_ != other.shape_) {
      throw DimensionError(std::string(op) + ": shape " + shape_string(shape_) + " vs " +
                           shape_string(other.shape_));
    }
  }

  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

// C = A B for rank-2 tensors, (m x k)(k x n) -> (m x n).
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw DimensionError("matmul requires rank-2 operands, got " + shape_string(a.shape()) +
                         " and " + shape_string(b.shape()));
  }
  const std::size_t m = a.extent(0), k = a.extent(1), k2 = b.extent(0), n = b.extent(1);
  if (k != k2) {
    throw DimensionError("matmul inner extents differ: " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
  Tensor c({m, n});
  const double* pa = a.data();
  const double* pb = b.data();
  double* pc = c.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t t = 0; t < k; ++t) {
      const double av = pa[i * k + t];
      if (av == 0.0) continue;
      const double* brow = pb + t * n;
      double* crow = pc + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

// Scales slice i along axis 0 of x by s[i]. s must be rank 1 with
// s.size() == x.extent(0).
inline Tensor channel_scale(const Tensor& x, const Tensor& s) {
  if (s.rank() != 1) {
    throw DimensionError("channel_scale: scale must be rank 1, got " + shape_string(s.shape()));
  }
  if (x.rank() == 0 || x.extent(0) != s.size()) {
    throw DimensionError("channel_scale: axis-0 extent of " + shape_string(x.shape()) +
                         " vs scale length " + std::to_string(s.size()));
  }
  Tensor out = x;
  const std::size_t channels = x.extent(0);
  const std::size_t block = x.size() / channels;
  double* p = out.data();
  for (std::size_t c = 0; c < channels; ++c) {
    const double sv = s[c];
    for (std::size_t j = 0; j < block; ++j) p[c * block + j] *= sv;
  }
  return out;
}

// Sum of |t_i|^p over all entries; p must be positive.
inline double norm_p(const Tensor& t, double p) {
  if (!(p > 0.0)) throw ArgumentError("norm_p: p must be positive, got " + std::to_string(p));
  double acc = 0.0;
  if (p == 1.0) {
    for (std::size_t i = 0; i < t.size(); ++i) acc += std::abs(t[i]);
  } else if (p == 2.0) {
    for (std::size_t i = 0; i < t.size(); ++i) acc += t[i] * t[i];
  } else {
    for (std::size_t i = 0; i < t.size(); ++i) acc += std::pow(std::abs(t[i]), p);
  }
  return acc;
}

// Removes the listed indices along one axis, preserving the order of the
// survivors. Indices must be sorted, unique, in range, and leave at least one
// surviving slice.
inline Tensor remove_along_axis(const Tensor& t, std::size_t axis,
                                const std::vector<std::size_t>& indices) {
  if (axis >= t.rank()) {
    throw DimensionError("remove_along_axis: axis " + std::to_string(axis) + " vs rank " +
                         std::to_string(t.rank()));
  }
  const std::size_t n = t.extent(axis);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= n) {
      throw ArgumentError("remove_along_axis: index " + std::to_string(indices[i]) +
                          " out of range for extent " + std::to_string(n));
    }
    if (i > 0 && indices[i] <= indices[i - 1]) {
      throw ArgumentError("remove_along_axis: indices must be sorted and unique");
    }
  }
  if (indices.size() >= n) {
    throw ArgumentError("remove_along_axis: cannot remove all " + std::to_string(n) + " slices");
  }
  if (indices.empty()) return t;

  std::vector<std::size_t> new_shape = t.shape();
  new_shape[axis] = n - indices.size();

  std::size_t outer = 1, inner = 1;
  for (std::size_t a = 0; a < axis; ++a) outer *= t.extent(a);
  for (std::size_t a = axis + 1; a < t.rank(); ++a) inner *= t.extent(a);

  std::vector<bool> removed(n, false);
  for (std::size_t i : indices) removed[i] = true;

  Tensor out(new_shape);
  const double* src = t.data();
  double* dst = out.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t a = 0; a < n; ++a) {
      if (removed[a]) continue;
      const double* s = src + (o * n + a) * inner;
      std::copy(s, s + inner, dst);
      dst += inner;
    }
  }
  return out;
}

// Deterministic counter-based generator with splittable streams.
//
// Committed algorithm (stable across platforms and releases; golden tests
// pin the outputs):
//   state <- seed; each draw: state += 0x9E3779B97F4A7C15, output fin(state)
//   where fin is the 64-bit finalizer
//     z ^= z>>30; z *= 0xBF58476D1CE4E5B9;
//     z ^= z>>27; z *= 0x94D049BB133111EB; z ^= z>>31.
//   split(k) derives an independent child from the CONSTRUCTION seed only
//   (draw history does not matter): child seed = fin(seed + (k+1)*gamma).
//   uniform() = (next_u64() >> 11) * 2^-53, in [0, 1).
//   normal() uses the Box-Muller transform on uniform pairs (u1 clamped away
//   from zero), returning the cosine branch first and caching the sine.
//   next_below(n) = next_u64() % n; the modulo bias is negligible for the
//   small n used here and keeps the stream consumption fixed at one draw.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed) : root_(seed), state_(seed) {}

  std::uint64_t next_u64() noexcept {
    state_ += kGamma;
    return finalize(state_);
  }

  SeededRng split(std::uint64_t k) const noexcept {
    return SeededRng(finalize(root_ + (k + 1) * kGamma));
  }

  double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  double log_uniform(double lo, double hi) {
    if (!(lo > 0.0) || !(hi > lo)) {
      throw ArgumentError("log_uniform requires 0 < lo < hi");
    }
    return std::exp(uniform(std::log(lo), std::log(hi)));
  }

  double normal() noexcept {
    if (cached_) {
      cached_ = false;
      return cache_;
    }
    double u1 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    cache_ = r * std::sin(theta);
    cached_ = true;
    return r * std::cos(theta);
  }

  std::uint64_t next_below(std::uint64_t n) {
    if (n == 0) throw ArgumentError("next_below: n must be positive");
    return next_u64() % n;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) noexcept {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[next_u64() % i]);
    }
  }

 private:
  static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;

  static std::uint64_t finalize(std::uint64_t z) noexcept {
    z ^= z >> 30;
    z *= 0xBF58476D1CE4E5B9ULL;
    z ^= z >> 27;
    z *= 0x94D049BB133111EBULL;
    z ^= z >> 31;
    return z;
  }

  std::uint64_t root_;
  std::uint64_t state_;
  double cache_ = 0.0;
  bool cached_ = false;
};

}  // namespace slimnet

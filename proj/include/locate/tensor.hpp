#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <random>
#include <vector>

#include "locate/common.hpp"

namespace locate {

// Dense row-major double tensor, rank 1..4. Small and boring on purpose:
// every hot loop in the library indexes raw data with precomputed strides.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape) : shape_(std::move(shape)) {
    std::size_t n = 1;
    for (std::size_t d : shape_) n *= d;
    data_.assign(n, 0.0);
    compute_strides();
  }

  Tensor(std::initializer_list<std::size_t> shape)
      : Tensor(std::vector<std::size_t>(shape)) {}

  static Tensor full(std::vector<std::size_t> shape, double v) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), v);
    return t;
  }

  static Tensor randn(std::vector<std::size_t> shape, std::mt19937_64& rng,
                      double stddev = 1.0) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> dist(0.0, stddev);
    for (double& v : t.data_) v = dist(rng);
    return t;
  }

  std::size_t rank() const { return shape_.size(); }
  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t dim(std::size_t i) const { return shape_[i]; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& operator()(std::size_t i) { return data_[i]; }
  double operator()(std::size_t i) const { return data_[i]; }
  double& operator()(std::size_t i, std::size_t j) { return data_[i * stride_[0] + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * stride_[0] + j]; }
  double& operator()(std::size_t i, std::size_t j, std::size_t k) {
    return data_[i * stride_[0] + j * stride_[1] + k];
  }
  double operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[i * stride_[0] + j * stride_[1] + k];
  }
  double& operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t l) {
    return data_[i * stride_[0] + j * stride_[1] + k * stride_[2] + l];
  }
  double operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
    return data_[i * stride_[0] + j * stride_[1] + k * stride_[2] + l];
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  double sum() const { return std::accumulate(data_.begin(), data_.end(), 0.0); }

  double min() const { return *std::min_element(data_.begin(), data_.end()); }
  double max() const { return *std::max_element(data_.begin(), data_.end()); }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  void compute_strides() {
    // row-major; stride of the last axis is 1 and the accessors rely on that
    stride_.assign(shape_.size(), 1);
    for (std::size_t i = shape_.size(); i-- > 1;)
      stride_[i - 1] = stride_[i] * shape_[i];
  }

  std::vector<std::size_t> shape_;
  std::vector<std::size_t> stride_;
  std::vector<double> data_;
};

// Boolean 2-D mask with explicit dims; kept separate from Tensor so set
// arithmetic (PartIoU) stays integer-exact.
struct Mask2D {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> v;

  Mask2D() = default;
  Mask2D(std::size_t r, std::size_t c) : rows(r), cols(c), v(r * c, 0) {}

  std::uint8_t& at(std::size_t r, std::size_t c) { return v[r * cols + c]; }
  std::uint8_t at(std::size_t r, std::size_t c) const { return v[r * cols + c]; }

  std::size_t count() const {
    std::size_t n = 0;
    for (auto b : v) n += (b != 0);
    return n;
  }

  friend bool operator==(const Mask2D& a, const Mask2D& b) {
    return a.rows == b.rows && a.cols == b.cols && a.v == b.v;
  }
};

// Binarize by strict mean threshold: cell true iff value > mean(values).
// Scaling the input by a positive constant leaves the result unchanged.
inline Mask2D mean_threshold(const Tensor& map2d) {
  require(map2d.rank() == 2, "mean_threshold expects a rank-2 map");
  const std::size_t h = map2d.dim(0), w = map2d.dim(1);
  const double mean = map2d.sum() / static_cast<double>(h * w);
  Mask2D m(h, w);
  for (std::size_t i = 0; i < h * w; ++i) m.v[i] = (map2d[i] > mean) ? 1 : 0;
  return m;
}

}  // namespace locate

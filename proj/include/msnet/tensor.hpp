#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "msnet/common.hpp"

namespace msnet {

/// Dense row-major tensor. Rank is dynamic; networks use [N,C,H,W].
template <typename S>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape, S fill_value = S(0))
      : shape_(std::move(shape)), data_(checked_size(shape_), fill_value) {}

  static Tensor from(std::vector<int> shape, std::vector<S> data) {
    Tensor t;
    t.shape_ = std::move(shape);
    require(checked_size(t.shape_) == static_cast<std::int64_t>(data.size()), Errc::shape_mismatch,
            "tensor data does not match shape");
    t.data_ = std::move(data);
    return t;
  }

  int rank() const { return static_cast<int>(shape_.size()); }
  const std::vector<int>& shape() const { return shape_; }
  int shape(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  S* data() { return data_.data(); }
  const S* data() const { return data_.data(); }

  S& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  const S& operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  // Rank-4 [N,C,H,W] accessors.
  S& at(int n, int c, int h, int w) { return data_[static_cast<std::size_t>(offset4(n, c, h, w))]; }
  const S& at(int n, int c, int h, int w) const {
    return data_[static_cast<std::size_t>(offset4(n, c, h, w))];
  }

  std::int64_t offset4(int n, int c, int h, int w) const {
    return ((static_cast<std::int64_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w;
  }

  void fill(S v) { std::fill(data_.begin(), data_.end(), v); }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (const S& v : data_)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  template <typename T>
  Tensor<T> cast() const {
    Tensor<T> out(shape_);
    for (std::int64_t i = 0; i < size(); ++i) out[i] = static_cast<T>(data_[static_cast<std::size_t>(i)]);
    return out;
  }

 private:
  static std::int64_t checked_size(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int d : shape) {
      require(d >= 0, Errc::shape_mismatch, "negative dimension");
      n *= d;
    }
    return n;
  }

  std::vector<int> shape_;
  std::vector<S> data_;
};

template <typename S>
std::string shape_string(const Tensor<S>& t) {
  std::string s = "[";
  for (int i = 0; i < t.rank(); ++i) {
    if (i) s += ",";
    s += std::to_string(t.shape(i));
  }
  return s + "]";
}

}  // namespace msnet

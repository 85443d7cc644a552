// Copyright 2026 The dpcrn Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "dpcrn/common.hpp"

namespace dpcrn {

enum class Axis : std::uint8_t { kTime, kFreq, kChannel, kGeneric };

inline const char* axis_name(Axis a) {
  switch (a) {
    case Axis::kTime: return "t";
    case Axis::kFreq: return "f";
    case Axis::kChannel: return "c";
    case Axis::kGeneric: return "_";
  }
  return "?";
}

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

// Dense row-major array. Feature maps are [time, freq, channel].
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0))
      : shape_(std::move(shape)),
        axes_(shape_.size(), Axis::kGeneric),
        data_(shape_size(shape_), fill) {}

  Tensor(Shape shape, std::vector<T> data)
      : shape_(std::move(shape)),
        axes_(shape_.size(), Axis::kGeneric),
        data_(std::move(data)) {
    check(data_.size() == shape_size(shape_),
          "tensor data does not match shape " + shape_str(shape_));
  }

  // Time x frequency x channel feature map.
  static Tensor tfc(std::size_t t, std::size_t f, std::size_t c,
                    T fill = T(0)) {
    Tensor out({t, f, c}, fill);
    out.axes_ = {Axis::kTime, Axis::kFreq, Axis::kChannel};
    return out;
  }

  const Shape& shape() const { return shape_; }
  const std::vector<Axis>& axes() const { return axes_; }
  void set_axes(std::vector<Axis> axes) {
    check(axes.size() == shape_.size(), "axis label count mismatch");
    axes_ = std::move(axes);
  }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> flat() { return data_; }
  std::span<const T> flat() const { return data_; }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& operator()(std::size_t i, std::size_t j) {
    return data_[i * shape_[1] + j];
  }
  const T& operator()(std::size_t i, std::size_t j) const {
    return data_[i * shape_[1] + j];
  }
  T& operator()(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  const T& operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  T& operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t l) {
    return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }
  const T& operator()(std::size_t i, std::size_t j, std::size_t k,
                      std::size_t l) const {
    return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }

  // Pointer to the start of row `i` along axis 0.
  T* row(std::size_t i) { return data_.data() + i * (size() / shape_[0]); }
  const T* row(std::size_t i) const {
    return data_.data() + i * (size() / shape_[0]);
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    out.set_axes(axes_);
    std::transform(data_.begin(), data_.end(), out.data(),
                   [](T v) { return static_cast<U>(v); });
    return out;
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(),
                       [](T v) { return std::isfinite(v); });
  }

  Tensor& operator+=(const Tensor& o) {
    check(o.shape_ == shape_, "tensor add shape mismatch " +
                                  shape_str(shape_) + " vs " +
                                  shape_str(o.shape_));
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<Axis> axes_;
  std::vector<T> data_;
};

// In debug builds every layer output is checked for NaN/Inf.
template <typename T>
inline void debug_check_finite([[maybe_unused]] const Tensor<T>& t,
                               [[maybe_unused]] const char* where) {
#ifndef NDEBUG
  if (!t.all_finite())
    fail(ErrorKind::kDivergence, std::string("non-finite output in ") + where);
#endif
}

}  // namespace dpcrn

#pragma once

#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "ganglionet/error.hpp"

namespace ganglionet {

using Shape = std::vector<std::size_t>;

inline std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

/// Dense row-major array. Four-dimensional tensors use NHWC order
/// (batch, height, width, channels); convolution kernels use (Kh, Kw, Cin, Cout).
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;

  explicit BasicTensor(Shape shape, T fill = T{0}) : shape_(std::move(shape)) {
    check_extents();
    data_.assign(element_count(shape_), fill);
  }

  BasicTensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_extents();
    require(element_count(shape_) == data_.size(), ErrorCode::ShapeMismatch,
            "tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                shape_string(shape_));
  }

  static BasicTensor zeros_like(const BasicTensor& other) { return BasicTensor(other.shape_); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  T* raw() noexcept { return data_.data(); }
  const T* raw() const noexcept { return data_.data(); }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  // NHWC accessors; valid for rank-4 tensors only.
  std::size_t batch() const { return shape_.at(0); }
  std::size_t height() const { return shape_.at(1); }
  std::size_t width() const { return shape_.at(2); }
  std::size_t channels() const { return shape_.at(3); }

  std::size_t offset(std::size_t b, std::size_t y, std::size_t x, std::size_t c) const noexcept {
    return ((b * shape_[1] + y) * shape_[2] + x) * shape_[3] + c;
  }
  T& at(std::size_t b, std::size_t y, std::size_t x, std::size_t c) noexcept { return data_[offset(b, y, x, c)]; }
  const T& at(std::size_t b, std::size_t y, std::size_t x, std::size_t c) const noexcept {
    return data_[offset(b, y, x, c)];
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  BasicTensor& operator+=(const BasicTensor& other) {
    require(shape_ == other.shape_, ErrorCode::ShapeMismatch,
            "cannot add " + shape_string(other.shape_) + " to " + shape_string(shape_));
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
  }

  friend bool operator==(const BasicTensor&, const BasicTensor&) = default;

  template <typename U>
  BasicTensor<U> cast() const {
    return BasicTensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  /// Rank-4 slice of `count` samples starting at batch index `first`.
  BasicTensor slice_batch(std::size_t first, std::size_t count) const {
    require(rank() == 4 && first + count <= batch() && count > 0, ErrorCode::InvalidArgument,
            "batch slice out of range for " + shape_string(shape_));
    const std::size_t per = size() / batch();
    Shape s = shape_;
    s[0] = count;
    return BasicTensor(s, std::vector<T>(data_.begin() + first * per, data_.begin() + (first + count) * per));
  }

 private:
  void check_extents() const {
    for (auto e : shape_)
      require(e >= 1, ErrorCode::ShapeMismatch, "tensor extents must be >= 1, got " + shape_string(shape_));
  }

  Shape shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;

inline void require_rank4(const Shape& s, const char* what) {
  require(s.size() == 4, ErrorCode::ShapeMismatch,
          std::string(what) + " must be rank 4 (NHWC), got " + shape_string(s));
}

}  // namespace ganglionet

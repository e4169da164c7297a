#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace mhmr::nn {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape) noexcept;
std::string to_string(const Shape& shape);

// Dense row-major array of doubles.
class Array {
 public:
  Array() = default;
  explicit Array(Shape shape, double fill = 0.0);
  Array(Shape shape, std::vector<double> data);

  static Array scalar(double value) { return Array({1}, {value}); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  const std::vector<double>& vector() const noexcept { return data_; }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }
  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * shape_[1] + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * shape_[1] + c]; }

  /// The single value of a one-element array.
  double item() const;
  Array reshaped(Shape shape) const;
  void fill(double value);

  bool operator==(const Array& other) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

}  // namespace mhmr::nn

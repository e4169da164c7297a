#include "mhmr/nn/array.hpp"

#include <algorithm>
#include <functional>
#include <numeric>

#include "mhmr/errors.hpp"

namespace mhmr::nn {

std::size_t numel(const Shape& shape) noexcept {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Array::Array(Shape shape, double fill) : shape_(std::move(shape)), data_(numel(shape_), fill) {}

Array::Array(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != numel(shape_))
    throw ShapeError("array: data length " + std::to_string(data_.size()) + " does not match shape " +
                     to_string(shape_));
}

double Array::item() const {
  if (data_.size() != 1) throw ShapeError("array: item() on shape " + to_string(shape_));
  return data_[0];
}

Array Array::reshaped(Shape shape) const {
  if (numel(shape) != data_.size())
    throw ShapeError("array: cannot reshape " + to_string(shape_) + " to " + to_string(shape));
  Array out;
  out.shape_ = std::move(shape);
  out.data_ = data_;
  return out;
}

void Array::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

}  // namespace mhmr::nn

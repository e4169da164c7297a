#pragma once

#include <initializer_list>
#include <span>
#include <vector>

#include "mhmr/nn/graph.hpp"

// Differentiable primitives. Binary elementwise ops accept either equal
// shapes or a right operand whose shape is a suffix of the left operand's
// (repeated over the leading axes); nothing else broadcasts.
namespace mhmr::nn {

Tensor matmul(Tensor a, Tensor b, bool transpose_a = false, bool transpose_b = false);

Tensor add(Tensor a, Tensor b);
Tensor sub(Tensor a, Tensor b);
Tensor mul(Tensor a, Tensor b);
Tensor scale(Tensor a, double factor);
Tensor add_scalar(Tensor a, double offset);

Tensor exp(Tensor a);
Tensor log(Tensor a);
Tensor tanh(Tensor a);
Tensor sigmoid(Tensor a);
Tensor relu(Tensor a);
Tensor gelu(Tensor a);
Tensor abs(Tensor a);
Tensor square(Tensor a);
/// Values clipped to [lo, hi]; zero gradient where clipped.
Tensor clamp(Tensor a, double lo, double hi);

Tensor softmax(Tensor a, std::size_t axis);
inline Tensor softmax(Tensor a) { return softmax(a, a.shape().size() - 1); }

/// Normalizes over the last axis, then applies gamma/beta (shape = last dim).
Tensor layer_norm(Tensor x, Tensor gamma, Tensor beta, double eps = 1e-5);
Tensor layer_norm(Tensor x, double eps = 1e-5);

Tensor concat(std::span<const Tensor> parts, std::size_t axis);
inline Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis) {
  return concat(std::span<const Tensor>(parts.begin(), parts.size()), axis);
}
Tensor slice(Tensor a, std::size_t axis, std::size_t begin, std::size_t end);
Tensor reshape(Tensor a, Shape shape);
/// 2D transpose.
Tensor transpose(Tensor a);
/// Rows of a 2D tensor, in the given order (repeats allowed).
Tensor gather_rows(Tensor a, std::span<const std::size_t> rows);

Tensor sum(Tensor a);
Tensor mean(Tensor a);
/// Sum over one axis; the axis is removed.
Tensor sum_axis(Tensor a, std::size_t axis);

}  // namespace mhmr::nn

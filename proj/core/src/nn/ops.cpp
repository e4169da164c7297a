#include "mhmr/nn/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>

#include "mhmr/errors.hpp"

namespace mhmr::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<RowMat>;
using MapC = Eigen::Map<const RowMat>;

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + to_string(a) + " and " + to_string(b));
}

// Right operand repeats every `inner` elements of the left one.
std::size_t broadcast_inner(const char* op, const Shape& a, const Shape& b) {
  if (a == b) return numel(a);
  if (b.size() < a.size() && std::equal(b.begin(), b.end(), a.end() - static_cast<std::ptrdiff_t>(b.size())))
    return numel(b);
  shape_error(op, a, b);
}

template <class F, class DF>
Tensor unary(Tensor a, const char* op, F f, DF df) {
  const Array& x = a.value();
  Array y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  const NodeId ia = a.id();
  return a.graph().record(std::move(y), {a}, op, [ia, df](Graph& g, NodeId self) {
    Array* ga = g.grad_sink(ia);
    if (!ga) return;
    const Array& x = g.value(ia);
    const Array& y = g.value(self);
    const Array& gy = g.grad(self);
    for (std::size_t i = 0; i < x.size(); ++i) (*ga)[i] += gy[i] * df(x[i], y[i]);
  });
}

// `piece(x)` picks the linear piece, `eval(k, x)` and `slope(k)` evaluate it.
template <class Piece, class Eval, class Slope>
Tensor piecewise(Tensor a, const char* op, Piece piece, Eval eval, Slope slope) {
  const Array& x = a.value();
  std::vector<signed char> pieces(x.size());
  BranchTape* tape = a.graph().branch_tape();
  if (tape && tape->replay) {
    if (tape->cursor + x.size() > tape->pieces.size()) throw std::logic_error(std::string(op) + ": branch tape exhausted");
    std::copy_n(tape->pieces.begin() + static_cast<std::ptrdiff_t>(tape->cursor), x.size(), pieces.begin());
    tape->cursor += x.size();
  } else {
    for (std::size_t i = 0; i < x.size(); ++i) pieces[i] = piece(x[i]);
    if (tape) tape->pieces.insert(tape->pieces.end(), pieces.begin(), pieces.end());
  }
  Array y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = eval(pieces[i], x[i]);
  const NodeId ia = a.id();
  return a.graph().record(std::move(y), {a}, op, [ia, slope, pieces = std::move(pieces)](Graph& g, NodeId self) {
    Array* ga = g.grad_sink(ia);
    if (!ga) return;
    const Array& gy = g.grad(self);
    for (std::size_t i = 0; i < gy.size(); ++i) (*ga)[i] += gy[i] * slope(pieces[i]);
  });
}

struct AxisSplit {
  std::size_t outer, len, inner;
};

AxisSplit split_axis(const Shape& s, std::size_t axis) {
  AxisSplit r{1, s.at(axis), 1};
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

}  // namespace

Tensor matmul(Tensor a, Tensor b, bool ta, bool tb) {
  const Array& av = a.value();
  const Array& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2) shape_error("matmul", av.shape(), bv.shape());
  const std::size_t m = ta ? av.dim(1) : av.dim(0);
  const std::size_t k = ta ? av.dim(0) : av.dim(1);
  const std::size_t kb = tb ? bv.dim(1) : bv.dim(0);
  const std::size_t n = tb ? bv.dim(0) : bv.dim(1);
  if (k != kb) shape_error("matmul", av.shape(), bv.shape());

  Array out({m, n});
  MapC A(av.data(), av.dim(0), av.dim(1));
  MapC B(bv.data(), bv.dim(0), bv.dim(1));
  MapR C(out.data(), m, n);
  if (!ta && !tb) C.noalias() = A * B;
  else if (ta && !tb) C.noalias() = A.transpose() * B;
  else if (!ta && tb) C.noalias() = A * B.transpose();
  else C.noalias() = A.transpose() * B.transpose();

  const NodeId ia = a.id(), ib = b.id();
  return a.graph().record(std::move(out), {a, b}, "matmul", [ia, ib, ta, tb](Graph& g, NodeId self) {
    const Array& av = g.value(ia);
    const Array& bv = g.value(ib);
    const Array& gy = g.grad(self);
    MapC A(av.data(), av.dim(0), av.dim(1));
    MapC B(bv.data(), bv.dim(0), bv.dim(1));
    MapC G(gy.data(), gy.dim(0), gy.dim(1));
    if (Array* ga = g.grad_sink(ia)) {
      MapR GA(ga->data(), av.dim(0), av.dim(1));
      if (!ta && !tb) GA.noalias() += G * B.transpose();
      else if (!ta && tb) GA.noalias() += G * B;
      else if (ta && !tb) GA.noalias() += B * G.transpose();
      else GA.noalias() += B.transpose() * G.transpose();
    }
    if (Array* gb = g.grad_sink(ib)) {
      MapR GB(gb->data(), bv.dim(0), bv.dim(1));
      if (!ta && !tb) GB.noalias() += A.transpose() * G;
      else if (ta && !tb) GB.noalias() += A * G;
      else if (!ta && tb) GB.noalias() += G.transpose() * A;
      else GB.noalias() += G.transpose() * A.transpose();
    }
  });
}

Tensor add(Tensor a, Tensor b) {
  const Array& av = a.value();
  const Array& bv = b.value();
  const std::size_t inner = broadcast_inner("add", av.shape(), bv.shape());
  Array out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i % inner];
  const NodeId ia = a.id(), ib = b.id();
  return a.graph().record(std::move(out), {a, b}, "add", [ia, ib, inner](Graph& g, NodeId self) {
    const Array& gy = g.grad(self);
    if (Array* ga = g.grad_sink(ia))
      for (std::size_t i = 0; i < gy.size(); ++i) (*ga)[i] += gy[i];
    if (Array* gb = g.grad_sink(ib))
      for (std::size_t i = 0; i < gy.size(); ++i) (*gb)[i % inner] += gy[i];
  });
}

Tensor sub(Tensor a, Tensor b) {
  const Array& av = a.value();
  const Array& bv = b.value();
  const std::size_t inner = broadcast_inner("sub", av.shape(), bv.shape());
  Array out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i % inner];
  const NodeId ia = a.id(), ib = b.id();
  return a.graph().record(std::move(out), {a, b}, "sub", [ia, ib, inner](Graph& g, NodeId self) {
    const Array& gy = g.grad(self);
    if (Array* ga = g.grad_sink(ia))
      for (std::size_t i = 0; i < gy.size(); ++i) (*ga)[i] += gy[i];
    if (Array* gb = g.grad_sink(ib))
      for (std::size_t i = 0; i < gy.size(); ++i) (*gb)[i % inner] -= gy[i];
  });
}

Tensor mul(Tensor a, Tensor b) {
  const Array& av = a.value();
  const Array& bv = b.value();
  const std::size_t inner = broadcast_inner("mul", av.shape(), bv.shape());
  Array out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i % inner];
  const NodeId ia = a.id(), ib = b.id();
  return a.graph().record(std::move(out), {a, b}, "mul", [ia, ib, inner](Graph& g, NodeId self) {
    const Array& gy = g.grad(self);
    const Array& av = g.value(ia);
    const Array& bv = g.value(ib);
    if (Array* ga = g.grad_sink(ia))
      for (std::size_t i = 0; i < gy.size(); ++i) (*ga)[i] += gy[i] * bv[i % inner];
    if (Array* gb = g.grad_sink(ib))
      for (std::size_t i = 0; i < gy.size(); ++i) (*gb)[i % inner] += gy[i] * av[i];
  });
}

Tensor scale(Tensor a, double factor) {
  return unary(a, "scale", [factor](double x) { return factor * x; },
               [factor](double, double) { return factor; });
}

Tensor add_scalar(Tensor a, double offset) {
  return unary(a, "add_scalar", [offset](double x) { return x + offset; }, [](double, double) { return 1.0; });
}

Tensor exp(Tensor a) {
  return unary(a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(Tensor a) {
  return unary(a, "log", [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor tanh(Tensor a) {
  return unary(a, "tanh", [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(Tensor a) {
  return unary(
      a, "sigmoid",
      [](double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(Tensor a) {
  return piecewise(
      a, "relu", [](double x) -> signed char { return x > 0 ? 1 : 0; },
      [](signed char k, double x) { return k ? x : 0.0; }, [](signed char k) { return k ? 1.0 : 0.0; });
}

Tensor gelu(Tensor a) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  constexpr double inv_sqrt_2pi = 0.39894228040143267794;
  return unary(
      a, "gelu", [](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); },
      [](double x, double) { return 0.5 * (1.0 + std::erf(x * inv_sqrt2)) + x * inv_sqrt_2pi * std::exp(-0.5 * x * x); });
}

Tensor abs(Tensor a) {
  return piecewise(
      a, "abs", [](double x) -> signed char { return x > 0 ? 1 : (x < 0 ? -1 : 0); },
      [](signed char k, double x) { return k * x; }, [](signed char k) { return double(k); });
}

Tensor square(Tensor a) {
  return unary(a, "square", [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor clamp(Tensor a, double lo, double hi) {
  return piecewise(
      a, "clamp", [lo, hi](double x) -> signed char { return x < lo ? -1 : (x > hi ? 1 : 0); },
      [lo, hi](signed char k, double x) { return k < 0 ? lo : (k > 0 ? hi : x); },
      [](signed char k) { return k == 0 ? 1.0 : 0.0; });
}

Tensor softmax(Tensor a, std::size_t axis) {
  const Array& x = a.value();
  if (axis >= x.rank()) throw ShapeError("softmax: axis out of range for shape " + to_string(x.shape()));
  const AxisSplit s = split_axis(x.shape(), axis);
  Array y(x.shape());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.len * s.inner + in;
      double mx = x[base];
      for (std::size_t k = 1; k < s.len; ++k) mx = std::max(mx, x[base + k * s.inner]);
      double total = 0;
      for (std::size_t k = 0; k < s.len; ++k) {
        const double e = std::exp(x[base + k * s.inner] - mx);
        y[base + k * s.inner] = e;
        total += e;
      }
      for (std::size_t k = 0; k < s.len; ++k) y[base + k * s.inner] /= total;
    }
  }
  const NodeId ia = a.id();
  return a.graph().record(std::move(y), {a}, "softmax", [ia, s](Graph& g, NodeId self) {
    Array* ga = g.grad_sink(ia);
    if (!ga) return;
    const Array& y = g.value(self);
    const Array& gy = g.grad(self);
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.len * s.inner + in;
        double dot = 0;
        for (std::size_t k = 0; k < s.len; ++k) dot += gy[base + k * s.inner] * y[base + k * s.inner];
        for (std::size_t k = 0; k < s.len; ++k) {
          const std::size_t idx = base + k * s.inner;
          (*ga)[idx] += y[idx] * (gy[idx] - dot);
        }
      }
    }
  });
}

namespace {

Tensor layer_norm_impl(Tensor x, const Tensor* gamma, const Tensor* beta, double eps) {
  const Array& xv = x.value();
  if (xv.rank() == 0) throw ShapeError("layer_norm: scalar input");
  const std::size_t n = xv.shape().back();
  const std::size_t rows = xv.size() / n;
  if (gamma && (gamma->size() != n || beta->size() != n))
    throw ShapeError("layer_norm: affine parameters " + to_string(gamma->shape()) + " do not match input " +
                     to_string(xv.shape()));
  Array y(xv.shape());
  std::vector<double> inv_std(rows);
  Array xhat(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.data() + r * n;
    double mu = 0;
    for (std::size_t k = 0; k < n; ++k) mu += xr[k];
    mu /= static_cast<double>(n);
    double var = 0;
    for (std::size_t k = 0; k < n; ++k) var += (xr[k] - mu) * (xr[k] - mu);
    var /= static_cast<double>(n);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t k = 0; k < n; ++k) {
      const double h = (xr[k] - mu) * inv_std[r];
      xhat[r * n + k] = h;
      y[r * n + k] = gamma ? h * gamma->value()[k] + beta->value()[k] : h;
    }
  }
  Graph& graph = x.graph();
  const NodeId ix = x.id();
  const std::int64_t ig = gamma ? static_cast<std::int64_t>(gamma->id()) : -1;
  const std::int64_t ib = beta ? static_cast<std::int64_t>(beta->id()) : -1;
  auto backward = [ix, ig, ib, n, rows, inv_std = std::move(inv_std), xhat = std::move(xhat)](Graph& g, NodeId self) {
    const Array& gy = g.grad(self);
    const Array* gam = ig >= 0 ? &g.value(static_cast<NodeId>(ig)) : nullptr;
    if (ig >= 0) {
      if (Array* gg = g.grad_sink(static_cast<NodeId>(ig)))
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t k = 0; k < n; ++k) (*gg)[k] += gy[r * n + k] * xhat[r * n + k];
      if (Array* gb = g.grad_sink(static_cast<NodeId>(ib)))
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t k = 0; k < n; ++k) (*gb)[k] += gy[r * n + k];
    }
    Array* gx = g.grad_sink(ix);
    if (!gx) return;
    std::vector<double> gh(n);
    for (std::size_t r = 0; r < rows; ++r) {
      double mean_gh = 0, mean_ghx = 0;
      for (std::size_t k = 0; k < n; ++k) {
        gh[k] = gy[r * n + k] * (gam ? (*gam)[k] : 1.0);
        mean_gh += gh[k];
        mean_ghx += gh[k] * xhat[r * n + k];
      }
      mean_gh /= static_cast<double>(n);
      mean_ghx /= static_cast<double>(n);
      for (std::size_t k = 0; k < n; ++k)
        (*gx)[r * n + k] += inv_std[r] * (gh[k] - mean_gh - xhat[r * n + k] * mean_ghx);
    }
  };
  if (gamma) return graph.record(std::move(y), {x, *gamma, *beta}, "layer_norm", std::move(backward));
  return graph.record(std::move(y), {x}, "layer_norm", std::move(backward));
}

}  // namespace

Tensor layer_norm(Tensor x, Tensor gamma, Tensor beta, double eps) { return layer_norm_impl(x, &gamma, &beta, eps); }

Tensor layer_norm(Tensor x, double eps) { return layer_norm_impl(x, nullptr, nullptr, eps); }

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Shape out_shape = parts[0].shape();
  if (axis >= out_shape.size()) throw ShapeError("concat: axis out of range for " + to_string(out_shape));
  std::size_t total = 0;
  std::vector<std::size_t> lens;
  for (const Tensor& t : parts) {
    const Shape& s = t.shape();
    if (s.size() != out_shape.size()) shape_error("concat", out_shape, s);
    for (std::size_t d = 0; d < s.size(); ++d)
      if (d != axis && s[d] != out_shape[d]) shape_error("concat", out_shape, s);
    lens.push_back(s[axis]);
    total += s[axis];
  }
  out_shape[axis] = total;
  const AxisSplit os = split_axis(out_shape, axis);
  Array out(out_shape);
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const Array& v = parts[p].value();
    const std::size_t chunk = lens[p] * os.inner;
    for (std::size_t o = 0; o < os.outer; ++o)
      std::copy_n(v.data() + o * chunk, chunk, out.data() + o * total * os.inner + offset * os.inner);
    offset += lens[p];
  }
  std::vector<NodeId> ids;
  for (const Tensor& t : parts) ids.push_back(t.id());
  return parts[0].graph().record(std::move(out), parts, "concat", [ids, lens, os, total](Graph& g, NodeId self) {
    const Array& gy = g.grad(self);
    std::size_t offset = 0;
    for (std::size_t p = 0; p < ids.size(); ++p) {
      const std::size_t chunk = lens[p] * os.inner;
      if (Array* gp = g.grad_sink(ids[p])) {
        for (std::size_t o = 0; o < os.outer; ++o) {
          const double* src = gy.data() + o * total * os.inner + offset * os.inner;
          double* dst = gp->data() + o * chunk;
          for (std::size_t k = 0; k < chunk; ++k) dst[k] += src[k];
        }
      }
      offset += lens[p];
    }
  });
}

Tensor slice(Tensor a, std::size_t axis, std::size_t begin, std::size_t end) {
  const Array& x = a.value();
  if (axis >= x.rank() || begin > end || end > x.dim(axis))
    throw ShapeError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) + ") on axis " +
                     std::to_string(axis) + " invalid for shape " + to_string(x.shape()));
  const AxisSplit s = split_axis(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape[axis] = end - begin;
  Array out(out_shape);
  const std::size_t chunk = (end - begin) * s.inner;
  for (std::size_t o = 0; o < s.outer; ++o)
    std::copy_n(x.data() + o * s.len * s.inner + begin * s.inner, chunk, out.data() + o * chunk);
  const NodeId ia = a.id();
  return a.graph().record(std::move(out), {a}, "slice", [ia, s, begin, chunk](Graph& g, NodeId self) {
    Array* ga = g.grad_sink(ia);
    if (!ga) return;
    const Array& gy = g.grad(self);
    for (std::size_t o = 0; o < s.outer; ++o) {
      double* dst = ga->data() + o * s.len * s.inner + begin * s.inner;
      const double* src = gy.data() + o * chunk;
      for (std::size_t k = 0; k < chunk; ++k) dst[k] += src[k];
    }
  });
}

Tensor reshape(Tensor a, Shape shape) {
  Array out = a.value().reshaped(std::move(shape));
  const NodeId ia = a.id();
  return a.graph().record(std::move(out), {a}, "reshape", [ia](Graph& g, NodeId self) {
    Array* ga = g.grad_sink(ia);
    if (!ga) return;
    const Array& gy = g.grad(self);
    for (std::size_t i = 0; i < gy.size(); ++i) (*ga)[i] += gy[i];
  });
}

Tensor transpose(Tensor a) {
  const Array& x = a.value();
  if (x.rank() != 2) throw ShapeError("transpose: expected 2D, got " + to_string(x.shape()));
  const std::size_t r = x.dim(0), c = x.dim(1);
  Array out({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x[i * c + j];
  const NodeId ia = a.id();
  return a.graph().record(std::move(out), {a}, "transpose", [ia, r, c](Graph& g, NodeId self) {
    Array* ga = g.grad_sink(ia);
    if (!ga) return;
    const Array& gy = g.grad(self);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) (*ga)[i * c + j] += gy[j * r + i];
  });
}

Tensor gather_rows(Tensor a, std::span<const std::size_t> rows) {
  const Array& x = a.value();
  if (x.rank() != 2) throw ShapeError("gather_rows: expected 2D, got " + to_string(x.shape()));
  const std::size_t c = x.dim(1);
  for (std::size_t r : rows)
    if (r >= x.dim(0))
      throw ShapeError("gather_rows: row " + std::to_string(r) + " out of range for " + to_string(x.shape()));
  Array out({rows.size(), c});
  for (std::size_t i = 0; i < rows.size(); ++i) std::copy_n(x.data() + rows[i] * c, c, out.data() + i * c);
  const NodeId ia = a.id();
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return a.graph().record(std::move(out), {a}, "gather_rows", [ia, c, idx = std::move(idx)](Graph& g, NodeId self) {
    Array* ga = g.grad_sink(ia);
    if (!ga) return;
    const Array& gy = g.grad(self);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t k = 0; k < c; ++k) (*ga)[idx[i] * c + k] += gy[i * c + k];
  });
}

Tensor sum(Tensor a) {
  double total = 0;
  for (double v : a.value().values()) total += v;
  const NodeId ia = a.id();
  return a.graph().record(Array::scalar(total), {a}, "sum", [ia](Graph& g, NodeId self) {
    Array* ga = g.grad_sink(ia);
    if (!ga) return;
    const double gy = g.grad(self)[0];
    for (double& v : ga->values()) v += gy;
  });
}

Tensor mean(Tensor a) {
  const std::size_t n = a.size();
  if (n == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Tensor sum_axis(Tensor a, std::size_t axis) {
  const Array& x = a.value();
  if (axis >= x.rank()) throw ShapeError("sum_axis: axis out of range for " + to_string(x.shape()));
  const AxisSplit s = split_axis(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  if (out_shape.empty()) out_shape = {1};
  Array out(out_shape);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t k = 0; k < s.len; ++k)
      for (std::size_t in = 0; in < s.inner; ++in) out[o * s.inner + in] += x[(o * s.len + k) * s.inner + in];
  const NodeId ia = a.id();
  return a.graph().record(std::move(out), {a}, "sum_axis", [ia, s](Graph& g, NodeId self) {
    Array* ga = g.grad_sink(ia);
    if (!ga) return;
    const Array& gy = g.grad(self);
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t k = 0; k < s.len; ++k)
        for (std::size_t in = 0; in < s.inner; ++in) (*ga)[(o * s.len + k) * s.inner + in] += gy[o * s.inner + in];
  });
}

}  // namespace mhmr::nn

#pragma once

#include <random>
#include <string>

#include "mhmr/nn/graph.hpp"
#include "mhmr/nn/ops.hpp"

namespace mhmr::nn {

using Rng = std::mt19937_64;

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero bias.
struct Linear {
  ParamId weight = 0;  // in x out
  ParamId bias = 0;    // out
  std::size_t in = 0, out = 0;

  static Linear create(ParamStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng);
  Tensor operator()(Graph& g, Tensor x) const;
};

struct LayerNorm {
  ParamId gamma = 0, beta = 0;

  static LayerNorm create(ParamStore& store, const std::string& name, std::size_t width);
  Tensor operator()(Graph& g, Tensor x) const;
};

// Two-layer GELU perceptron.
struct Mlp {
  Linear fc1, fc2;

  static Mlp create(ParamStore& store, const std::string& name, std::size_t in, std::size_t hidden, std::size_t out,
                    Rng& rng);
  Tensor operator()(Graph& g, Tensor x) const;
};

/// Scaled dot-product attention with `heads` heads over already-projected
/// queries (N x Dq), keys (M x Dq) and values (M x Dv); heads are
/// concatenated, giving N x Dv.
Tensor attention(Tensor queries, Tensor keys, Tensor values, std::size_t heads);

// Multi-head attention with input and output projections. Queries have
// `query_dim` features, the context `context_dim`; the output has query_dim.
struct MultiHeadAttention {
  Linear q, k, v, o;
  std::size_t heads = 1;

  static MultiHeadAttention create(ParamStore& store, const std::string& name, std::size_t query_dim,
                                   std::size_t context_dim, std::size_t heads, Rng& rng);
  Tensor operator()(Graph& g, Tensor queries, Tensor context) const;
};

Array normal_array(Shape shape, double stddev, Rng& rng);
Array uniform_array(Shape shape, double bound, Rng& rng);

}  // namespace mhmr::nn

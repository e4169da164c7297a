#include "mhmr/nn/layers.hpp"

#include <cmath>
#include <vector>

#include "mhmr/errors.hpp"

namespace mhmr::nn {

Array normal_array(Shape shape, double stddev, Rng& rng) {
  Array a(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& x : a.values()) x = dist(rng);
  return a;
}

Array uniform_array(Shape shape, double bound, Rng& rng) {
  Array a(std::move(shape));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& x : a.values()) x = dist(rng);
  return a;
}

Linear Linear::create(ParamStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
  Linear l;
  l.in = in;
  l.out = out;
  l.weight = store.add(name + ".weight", uniform_array({in, out}, 1.0 / std::sqrt(static_cast<double>(in)), rng));
  l.bias = store.add(name + ".bias", Array({out}));
  return l;
}

Tensor Linear::operator()(Graph& g, Tensor x) const {
  return add(matmul(x, g.param(weight)), g.param(bias));
}

LayerNorm LayerNorm::create(ParamStore& store, const std::string& name, std::size_t width) {
  LayerNorm ln;
  ln.gamma = store.add(name + ".gamma", Array({width}, 1.0));
  ln.beta = store.add(name + ".beta", Array({width}));
  return ln;
}

Tensor LayerNorm::operator()(Graph& g, Tensor x) const { return layer_norm(x, g.param(gamma), g.param(beta)); }

Mlp Mlp::create(ParamStore& store, const std::string& name, std::size_t in, std::size_t hidden, std::size_t out,
                Rng& rng) {
  return {Linear::create(store, name + ".fc1", in, hidden, rng), Linear::create(store, name + ".fc2", hidden, out, rng)};
}

Tensor Mlp::operator()(Graph& g, Tensor x) const { return fc2(g, gelu(fc1(g, x))); }

Tensor attention(Tensor queries, Tensor keys, Tensor values, std::size_t heads) {
  const Shape& qs = queries.shape();
  const Shape& ks = keys.shape();
  const Shape& vs = values.shape();
  if (qs.size() != 2 || ks.size() != 2 || vs.size() != 2 || qs[1] != ks[1] || ks[0] != vs[0])
    throw ShapeError("attention: queries " + to_string(qs) + ", keys " + to_string(ks) + ", values " + to_string(vs));
  if (heads == 0 || qs[1] % heads != 0 || vs[1] % heads != 0)
    throw std::invalid_argument("attention: feature widths " + std::to_string(qs[1]) + "/" + std::to_string(vs[1]) +
                                " not divisible by " + std::to_string(heads) + " heads");
  if (qs[0] == 0) return queries.graph().constant(Array({0, vs[1]}));
  const std::size_t dq = qs[1] / heads, dv = vs[1] / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dq));
  std::vector<Tensor> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    Tensor qh = heads == 1 ? queries : slice(queries, 1, h * dq, (h + 1) * dq);
    Tensor kh = heads == 1 ? keys : slice(keys, 1, h * dq, (h + 1) * dq);
    Tensor vh = heads == 1 ? values : slice(values, 1, h * dv, (h + 1) * dv);
    Tensor weights = softmax(scale(matmul(qh, kh, false, true), inv_sqrt));
    outs.push_back(matmul(weights, vh));
  }
  return heads == 1 ? outs[0] : concat(outs, 1);
}

MultiHeadAttention MultiHeadAttention::create(ParamStore& store, const std::string& name, std::size_t query_dim,
                                              std::size_t context_dim, std::size_t heads, Rng& rng) {
  if (heads == 0 || query_dim % heads != 0)
    throw std::invalid_argument("attention " + name + ": width " + std::to_string(query_dim) +
                                " not divisible by " + std::to_string(heads) + " heads");
  MultiHeadAttention a;
  a.heads = heads;
  a.q = Linear::create(store, name + ".q", query_dim, query_dim, rng);
  a.k = Linear::create(store, name + ".k", context_dim, query_dim, rng);
  a.v = Linear::create(store, name + ".v", context_dim, query_dim, rng);
  a.o = Linear::create(store, name + ".o", query_dim, query_dim, rng);
  return a;
}

Tensor MultiHeadAttention::operator()(Graph& g, Tensor queries, Tensor context) const {
  if (queries.dim(0) == 0) return g.constant(Array({0, o.out}));
  return o(g, attention(q(g, queries), k(g, context), v(g, context), heads));
}

}  // namespace mhmr::nn

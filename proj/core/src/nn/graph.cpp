#include "mhmr/nn/graph.hpp"

#include <stdexcept>

#include "mhmr/errors.hpp"

namespace mhmr::nn {

Graph::Graph(const ParamStore* store, bool grad_enabled) : store_(store), grad_enabled_(grad_enabled) {
  nodes_.reserve(256);
}

const ParamStore& Graph::store() const {
  if (!store_) throw std::logic_error("graph: no parameter store attached");
  return *store_;
}

Tensor Graph::push(Node node) {
  nodes_.push_back(std::move(node));
  return Tensor(this, static_cast<NodeId>(nodes_.size() - 1));
}

Tensor Graph::constant(Array value) {
  Node n;
  n.value = std::move(value);
  n.op = "constant";
  return push(std::move(n));
}

Tensor Graph::constant_ref(const Array& value) {
  Node n;
  n.external = &value;
  n.op = "constant";
  return push(std::move(n));
}

Tensor Graph::variable(Array value) {
  Node n;
  n.value = std::move(value);
  n.op = "variable";
  n.requires_grad = grad_enabled_;
  return push(std::move(n));
}

Tensor Graph::param(ParamId id) {
  if (auto it = param_leaves_.find(id); it != param_leaves_.end()) return Tensor(this, it->second);
  Node n;
  n.external = &store().value(id);
  n.op = "param";
  n.param = static_cast<std::int64_t>(id);
  n.requires_grad = grad_enabled_;
  Tensor t = push(std::move(n));
  param_leaves_.emplace(id, t.id());
  return t;
}

Tensor Graph::record(Array value, std::span<const Tensor> inputs, const char* op, Backward backward) {
  Node n;
  n.value = std::move(value);
  n.op = op;
  if (grad_enabled_) {
    for (const Tensor& in : inputs) {
      if (&in.graph() != this) throw std::logic_error(std::string("graph: ") + op + " mixes tensors of different graphs");
      if (nodes_[in.id()].requires_grad) n.requires_grad = true;
    }
  }
  if (n.requires_grad) n.backward = std::move(backward);
  return push(std::move(n));
}

const Array& Graph::value(NodeId id) const {
  const Node& n = nodes_.at(id);
  return n.external ? *n.external : n.value;
}

Array* Graph::grad_sink(NodeId id) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return nullptr;
  if (n.grad.empty()) n.grad = Array(value(id).shape());
  return &n.grad;
}

void Graph::backward(Tensor loss) {
  if (&loss.graph() != this) throw std::logic_error("graph: backward on a foreign tensor");
  if (!grad_enabled_) throw std::logic_error("graph: backward on a graph built without gradients");
  if (backward_done_) throw std::logic_error("graph: backward may only run once");
  if (loss.size() != 1) throw ShapeError("backward: loss must be scalar, got shape " + to_string(loss.shape()));
  backward_done_ = true;
  Node& root = nodes_[loss.id()];
  if (!root.requires_grad) return;
  root.grad = Array(root.value.shape(), 1.0);
  for (std::int64_t i = loss.id(); i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.backward && !n.grad.empty()) n.backward(*this, static_cast<NodeId>(i));
  }
}

const Array* Graph::grad_of(Tensor t) const {
  const Node& n = nodes_.at(t.id());
  return n.grad.empty() ? nullptr : &n.grad;
}

void Graph::accumulate_parameter_grads(Gradients& grads) const {
  for (const auto& [pid, nid] : param_leaves_) {
    const Node& n = nodes_[nid];
    if (n.grad.empty()) continue;
    Array& dst = grads[pid];
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += n.grad[k];
  }
}

Gradients Graph::parameter_gradients() const {
  Gradients g = store().zero_gradients();
  accumulate_parameter_grads(g);
  return g;
}

}  // namespace mhmr::nn

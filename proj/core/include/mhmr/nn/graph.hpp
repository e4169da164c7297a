#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mhmr/nn/array.hpp"
#include "mhmr/nn/param_store.hpp"

namespace mhmr::nn {

class Graph;
using NodeId = std::uint32_t;

// Lightweight handle to a node of a Graph.
class Tensor {
 public:
  Tensor() = default;

  Graph& graph() const { return *graph_; }
  NodeId id() const noexcept { return id_; }
  bool valid() const noexcept { return graph_ != nullptr; }

  const Array& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t dim(std::size_t axis) const { return shape().at(axis); }
  std::size_t size() const { return value().size(); }

 private:
  friend class Graph;
  Tensor(Graph* graph, NodeId id) : graph_(graph), id_(id) {}

  Graph* graph_ = nullptr;
  NodeId id_ = 0;
};

// Reverse-mode tape. Nodes are appended in creation order, so walking the
// tape backwards is a valid reverse topological order. A graph is used by a
// single thread; the parameter store it reads from must not change while the
// graph is alive.
// Pieces taken by piecewise-linear ops (abs, relu, clamp), in creation
// order. Recorded on one graph and replayed on another, the replaying graph
// evaluates the same smooth piece even where an input crossed a kink.
struct BranchTape {
  std::vector<signed char> pieces;
  bool replay = false;
  std::size_t cursor = 0;
};

class Graph {
 public:
  using Backward = std::function<void(Graph&, NodeId self)>;

  explicit Graph(const ParamStore* store = nullptr, bool grad_enabled = true);

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool grad_enabled() const noexcept { return grad_enabled_; }
  const ParamStore& store() const;

  Tensor constant(Array value);
  /// Constant that refers to `value` without copying; it must outlive the graph.
  Tensor constant_ref(const Array& value);
  /// Leaf that receives a gradient (independent of any store).
  Tensor variable(Array value);
  /// Leaf bound to a store parameter; one leaf per parameter per graph.
  Tensor param(ParamId id);
  Tensor param(std::string_view name) { return param(store().id(name)); }

  /// Appends an op result. `backward` is dropped when no input needs a
  /// gradient.
  Tensor record(Array value, std::span<const Tensor> inputs, const char* op, Backward backward);
  Tensor record(Array value, std::initializer_list<Tensor> inputs, const char* op, Backward backward) {
    return record(std::move(value), std::span<const Tensor>(inputs.begin(), inputs.size()), op, std::move(backward));
  }

  const Array& value(NodeId id) const;
  const char* op(NodeId id) const { return nodes_.at(id).op; }
  bool requires_grad(NodeId id) const { return nodes_[id].requires_grad; }

  /// Gradient flowing into `id` during backward (its own output gradient).
  const Array& grad(NodeId id) const { return nodes_[id].grad; }
  /// Accumulation target for an input's gradient, or nullptr when the input
  /// does not need one. Allocated as zeros on first use.
  Array* grad_sink(NodeId id);

  /// Reverse accumulation from a scalar loss.
  void backward(Tensor loss);

  /// Gradient of a node after backward(); nullptr when none reached it.
  const Array* grad_of(Tensor t) const;

  /// Adds the gradients of every parameter leaf into `grads`.
  void accumulate_parameter_grads(Gradients& grads) const;
  Gradients parameter_gradients() const;

  std::size_t node_count() const noexcept { return nodes_.size(); }

  void set_branch_tape(BranchTape* tape) noexcept { branches_ = tape; }
  BranchTape* branch_tape() const noexcept { return branches_; }

 private:
  struct Node {
    Array value;
    const Array* external = nullptr;
    Array grad;
    Backward backward;
    const char* op = "";
    std::int64_t param = -1;
    bool requires_grad = false;
  };

  Tensor push(Node node);

  const ParamStore* store_;
  bool grad_enabled_;
  bool backward_done_ = false;
  std::vector<Node> nodes_;
  std::unordered_map<ParamId, NodeId> param_leaves_;
  BranchTape* branches_ = nullptr;
};

inline const Array& Tensor::value() const { return graph_->value(id_); }

}  // namespace mhmr::nn

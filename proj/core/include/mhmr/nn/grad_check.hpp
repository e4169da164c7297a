#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "mhmr/nn/graph.hpp"

namespace mhmr::nn {

struct GradCheckOptions {
  double step = 1e-5;
  // Coordinates checked per parameter tensor; smaller tensors are checked fully.
  std::size_t samples_per_param = 4;
  std::uint64_t seed = 0;
  // Denominator floor relative to max(1, |loss|), so coordinates whose true
  // gradient is below finite-difference round-off are compared absolutely.
  double floor_scale = 1e-5;
  // Finite differences replay the abs/relu/clamp pieces of the unperturbed
  // loss, so a coordinate whose step crosses a kink still compares slopes.
  bool pin_branches = true;
  // Applied to the analytic gradients before comparison (fault injection).
  std::function<void(Gradients&)> corrupt;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coordinates = 0;
  double loss = 0.0;
};

/// Builds a scalar loss over store parameters. Must be deterministic.
using LossBuilder = std::function<Tensor(Graph&)>;

/// Compares backward() against central differences on sampled coordinates
/// of every parameter tensor. The store is restored before returning.
GradCheckResult grad_check(ParamStore& store, const LossBuilder& build, const GradCheckOptions& options = {});

}  // namespace mhmr::nn

#include "mhmr/nn/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <numeric>
#include <random>

namespace mhmr::nn {

namespace {

double eval_loss(const ParamStore& store, const LossBuilder& build, BranchTape* tape) {
  Graph g(&store, false);
  if (tape) {
    tape->cursor = 0;
    g.set_branch_tape(tape);
  }
  const double v = build(g).value().item();
  if (tape && tape->cursor != tape->pieces.size()) throw std::logic_error("grad check: loss graph changed between evaluations");
  return v;
}

}  // namespace

GradCheckResult grad_check(ParamStore& store, const LossBuilder& build, const GradCheckOptions& options) {
  GradCheckResult result;
  Gradients analytic;
  BranchTape tape;
  BranchTape* pinned = options.pin_branches ? &tape : nullptr;
  {
    Graph g(&store);
    g.set_branch_tape(pinned);
    Tensor loss = build(g);
    result.loss = loss.value().item();
    g.backward(loss);
    analytic = g.parameter_gradients();
  }
  tape.replay = true;
  if (options.corrupt) options.corrupt(analytic);

  const double floor = options.floor_scale * std::max(1.0, std::abs(result.loss));
  std::mt19937_64 rng(options.seed);
  for (ParamId p = 0; p < store.size(); ++p) {
    Array& value = store.mutable_value(p);
    std::vector<std::size_t> coords(value.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (coords.size() > options.samples_per_param) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.samples_per_param);
    }
    for (std::size_t idx : coords) {
      const double saved = value[idx];
      value[idx] = saved + options.step;
      const double up = eval_loss(store, build, pinned);
      value[idx] = saved - options.step;
      const double down = eval_loss(store, build, pinned);
      value[idx] = saved;
      const double numeric = (up - down) / (2.0 * options.step);
      const double a = analytic[p][idx];
      const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      ++result.coordinates;
      if (err > result.max_rel_error || !std::isfinite(err)) {
        result.max_rel_error = std::isfinite(err) ? err : std::numeric_limits<double>::infinity();
        result.worst_param = store.name(p);
        result.worst_index = idx;
        result.worst_analytic = a;
        result.worst_numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace mhmr::nn

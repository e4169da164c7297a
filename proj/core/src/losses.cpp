#include "mhmr/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "mhmr/errors.hpp"
#include "mhmr/nn/geometric_ops.hpp"
#include "mhmr/nn/ops.hpp"

namespace mhmr {

using nn::Array;
using nn::Graph;
using nn::Tensor;

namespace {

Array row_array(const double* data, std::size_t n, nn::Shape shape) {
  return Array(std::move(shape), std::vector<double>(data, data + n));
}

Tensor l1(Tensor a, Tensor b) { return nn::sum(nn::abs(nn::sub(a, b))); }

}  // namespace

void LossWeights::validate() const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw std::invalid_argument("loss weights: lambda must be >= 0");
}

LossParts LossTensors::parts() const {
  return {det.value().item(), params.value().item(), mesh.value().item(), reproj.value().item()};
}

double bce(double score, double target) {
  const double s = std::clamp(score, kBceEps, 1.0 - kBceEps);
  return -(target * std::log(s) + (1.0 - target) * std::log(1.0 - s));
}

double total_loss(const LossParts& p, double lambda) { return p.det + p.params + lambda * (p.mesh + p.reproj); }

Tensor detection_loss(Tensor scores, const std::vector<double>& targets) {
  if (scores.size() != targets.size())
    throw ShapeError("detection loss: " + std::to_string(scores.size()) + " scores for " +
                     std::to_string(targets.size()) + " targets");
  Graph& g = scores.graph();
  const Tensor s = nn::clamp(nn::reshape(scores, {scores.size()}), kBceEps, 1.0 - kBceEps);
  Array y({targets.size()}, targets), not_y({targets.size()});
  for (std::size_t i = 0; i < targets.size(); ++i) not_y[i] = 1.0 - targets[i];
  const Tensor pos = nn::mul(nn::log(s), g.constant(std::move(y)));
  const Tensor neg = nn::mul(nn::log(nn::add_scalar(nn::scale(s, -1.0), 1.0)), g.constant(std::move(not_y)));
  return nn::scale(nn::sum(nn::add(pos, neg)), -1.0);
}

Tensor params_loss(const PersonTensors& pred, const PersonTarget& target) {
  Graph& g = pred.coords.graph();
  const BodyParams& x = target.params;
  const std::size_t J = static_cast<std::size_t>(x.pose.rows());
  if (pred.axis_angle.shape() != nn::Shape{J, 3} || pred.shape.size() != std::size_t(x.shape.size()) ||
      pred.expression.size() != std::size_t(x.expression.size()))
    throw ShapeError("params loss: prediction and target parameter sizes differ");
  Tensor loss = l1(pred.coords, g.constant(row_array(target.coords.data(), 2, {1, 2})));
  loss = nn::add(loss, l1(pred.axis_angle, g.constant(row_array(x.pose.data(), 3 * J, {J, 3}))));
  loss = nn::add(loss, l1(nn::reshape(pred.shape, {pred.shape.size()}),
                          g.constant(row_array(x.shape.data(), x.shape.size(), {std::size_t(x.shape.size())}))));
  loss = nn::add(loss, l1(nn::reshape(pred.expression, {pred.expression.size()}),
                          g.constant(row_array(x.expression.data(), x.expression.size(),
                                               {std::size_t(x.expression.size())}))));
  return nn::add(loss, l1(pred.depth, g.constant(Array({1, 1}, target.depth))));
}

Tensor mesh_loss(Tensor vertices, const Points3& target) {
  const std::size_t V = static_cast<std::size_t>(target.rows());
  if (vertices.shape() != nn::Shape{V, 3}) throw ShapeError("mesh loss: vertex counts differ");
  return l1(vertices, vertices.graph().constant(row_array(target.data(), 3 * V, {V, 3})));
}

void project_target(const PersonTarget& target, const Camera& camera, Points3& pixels, std::vector<bool>& valid) {
  const Eigen::Index V = target.vertices.rows();
  pixels = Points3::Zero(V, 3);
  valid.assign(static_cast<std::size_t>(V), false);
  for (Eigen::Index i = 0; i < V; ++i) {
    const Vec3 p = target.vertices.row(i).transpose() + target.location;
    if (p.z() <= 1e-6) continue;
    const Vec2 uv = project(camera, p);
    pixels(i, 0) = uv.x();
    pixels(i, 1) = uv.y();
    valid[static_cast<std::size_t>(i)] = true;
  }
}

Tensor reproj_loss(Tensor vertices, Tensor location, const Camera& decode_camera, const Points3& target_pixels,
                   const std::vector<bool>& target_valid, std::size_t* excluded) {
  Graph& g = vertices.graph();
  const std::size_t V = vertices.dim(0);
  if (static_cast<std::size_t>(target_pixels.rows()) != V || target_valid.size() != V)
    throw ShapeError("reprojection loss: vertex counts differ");
  std::vector<bool> valid;
  const Tensor placed = nn::add(vertices, nn::reshape(location, {3}));
  const Tensor pixels = nn::project_points(placed, decode_camera, 1e-6, &valid);
  Array target({V, 2}), mask({V, 2});
  std::size_t skipped = 0;
  for (std::size_t i = 0; i < V; ++i) {
    if (!valid[i] || !target_valid[i]) {
      ++skipped;
      continue;
    }
    target(i, 0) = target_pixels(static_cast<Eigen::Index>(i), 0);
    target(i, 1) = target_pixels(static_cast<Eigen::Index>(i), 1);
    mask(i, 0) = mask(i, 1) = 1.0;
  }
  if (excluded) *excluded += skipped;
  return nn::sum(nn::mul(nn::abs(nn::sub(pixels, g.constant(std::move(target)))), g.constant(std::move(mask))));
}

LossTensors compute_losses(Graph& g, const ForwardResult& result, const TrainTargets& targets,
                           const Camera& scene_camera, const Camera& decode_camera, const LossWeights& weights) {
  weights.validate();
  if (result.people.size() != targets.people.size())
    throw std::invalid_argument("losses: " + std::to_string(result.people.size()) + " predictions for " +
                                std::to_string(targets.people.size()) + " targets");
  LossTensors out;
  out.det = detection_loss(result.scores, targets.score_map);
  out.params = g.constant(Array::scalar(0.0));
  out.mesh = g.constant(Array::scalar(0.0));
  out.reproj = g.constant(Array::scalar(0.0));
  Points3 pixels;
  std::vector<bool> valid;
  for (std::size_t n = 0; n < targets.people.size(); ++n) {
    const PersonTensors& p = result.people[n];
    const PersonTarget& t = targets.people[n];
    if (p.token != t.token) throw std::invalid_argument("losses: prediction and target tokens are not aligned");
    if (weights.params) out.params = nn::add(out.params, params_loss(p, t));
    if (weights.mesh) out.mesh = nn::add(out.mesh, mesh_loss(p.vertices, t.vertices));
    if (weights.reproj) {
      project_target(t, scene_camera, pixels, valid);
      out.reproj = nn::add(out.reproj, reproj_loss(p.vertices, p.location, decode_camera, pixels, valid,
                                                   &out.excluded_vertices));
    }
  }
  Tensor total = weights.detection ? out.det : g.constant(Array::scalar(0.0));
  total = nn::add(total, out.params);
  out.total = nn::add(total, nn::scale(nn::add(out.mesh, out.reproj), weights.lambda));
  return out;
}

}  // namespace mhmr

#pragma once

#include <cstddef>
#include <vector>

#include "mhmr/body_model.hpp"
#include "mhmr/geometry.hpp"
#include "mhmr/net.hpp"
#include "mhmr/nn/graph.hpp"

namespace mhmr {

constexpr double kBceEps = 1e-7;

// lambda scales the mesh and reprojection terms; the flags switch terms off
// for ablations.
struct LossWeights {
  double lambda = 0.5;
  bool detection = true;
  bool params = true;
  bool mesh = true;
  bool reproj = true;

  void validate() const;
  bool operator==(const LossWeights&) const = default;
};

struct PersonTarget {
  int token = 0;
  Vec2 coords = Vec2::Zero();
  BodyParams params;
  double depth = 0.0;
  Points3 vertices;  // head-centered
  Vec3 location = Vec3::Zero();
};

struct TrainTargets {
  int grid = 0;
  std::vector<double> score_map;  // grid * grid, token order
  std::vector<PersonTarget> people;
};

struct LossParts {
  double det = 0.0;
  double params = 0.0;
  double mesh = 0.0;
  double reproj = 0.0;
};

struct LossTensors {
  nn::Tensor det, params, mesh, reproj, total;
  std::size_t excluded_vertices = 0;

  LossParts parts() const;
};

/// Binary cross-entropy of one score, clamped to [eps, 1 - eps].
double bce(double score, double target);
double total_loss(const LossParts& parts, double lambda);

/// Summed BCE over all tokens.
nn::Tensor detection_loss(nn::Tensor scores, const std::vector<double>& targets);
/// L1 over coords, axis-angle pose, shape, expression and depth.
nn::Tensor params_loss(const PersonTensors& pred, const PersonTarget& target);
/// L1 over head-centered vertices.
nn::Tensor mesh_loss(nn::Tensor vertices, const Points3& target);
/// L1 between projections of the placed prediction (with `decode_camera`)
/// and the given target pixels (V x 2). Vertices behind either camera are
/// skipped and counted in `excluded`.
nn::Tensor reproj_loss(nn::Tensor vertices, nn::Tensor location, const Camera& decode_camera,
                       const Points3& target_pixels, const std::vector<bool>& target_valid,
                       std::size_t* excluded = nullptr);

/// Pixels of the placed target mesh under the scene camera (V x 2 in the
/// first two columns) plus validity.
void project_target(const PersonTarget& target, const Camera& camera, Points3& pixels, std::vector<bool>& valid);

/// Every term for one teacher-forced sample; people are aligned with targets.
LossTensors compute_losses(nn::Graph& g, const ForwardResult& result, const TrainTargets& targets,
                           const Camera& scene_camera, const Camera& decode_camera, const LossWeights& weights);

}  // namespace mhmr

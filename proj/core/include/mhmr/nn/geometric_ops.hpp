#pragma once

#include <array>
#include <span>
#include <vector>

#include "mhmr/geometry.hpp"
#include "mhmr/nn/graph.hpp"

// Fused rotation, kinematics and camera ops with analytic gradients. Rotation
// matrices are stored row-major, one joint per row (K x 9).
namespace mhmr::nn {

/// K x 6 (two stacked columns) -> K x 9 via Gram-Schmidt.
Tensor sixd_to_rotmat(Tensor sixd);

/// K x 3 axis-angle -> K x 9 (Rodrigues).
Tensor axis_angle_to_rotmat(Tensor axis_angle);

/// K x 9 -> K x 3 axis-angle with angle = atan2(|skew|/2, (tr - 1)/2).
Tensor rotmat_to_axis_angle(Tensor rotmats);

/// Composes local rotations (J x 9) along `parents` (parents[j] < j, root
/// first) starting from rest joints (J x 3). Returns J x 12 rows of
/// [world rotation (9) | world joint position (3)].
Tensor forward_kinematics(Tensor rotmats, Tensor rest_joints, std::span<const int> parents);

/// From forward_kinematics output and rest joints, the per-joint skinning
/// transforms [R | t - R j_rest] (J x 12).
Tensor skinning_transforms(Tensor world, Tensor rest_joints);

// Up to four (joint, weight) pairs per vertex; unused slots have weight 0.
struct SparseSkinning {
  std::vector<std::array<int, 4>> joints;
  std::vector<std::array<double, 4>> weights;
};

/// out_v = sum_k w_vk (R_k p_v + t_k) with transforms J x 12 and points V x 3.
Tensor linear_blend_skinning(Tensor transforms, Tensor points, const SparseSkinning& skinning);

/// Pixel projection of N x 3 points. Points with z <= min_depth map to
/// (0, 0) with zero gradient; `valid` (if given) records which were kept.
Tensor project_points(Tensor points, const Camera& camera, double min_depth = 1e-6,
                      std::vector<bool>* valid = nullptr);

/// N x 2 pixels and N x 1 depths -> N x 3 camera-space points.
Tensor backproject_points(Tensor pixels, Tensor depths, const Camera& camera);

}  // namespace mhmr::nn

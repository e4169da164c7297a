#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mhmr/geometry.hpp"
#include "mhmr/nn/array.hpp"
#include "mhmr/nn/geometric_ops.hpp"
#include "mhmr/nn/graph.hpp"

namespace mhmr {

enum class BodyPart : std::uint8_t { Body = 0, LeftHand = 1, RightHand = 2, Face = 3 };

struct BodyModelConfig {
  std::uint64_t seed = 0;
  int vertices = 1024;
  int joints = 53;
  int shape_dims = 10;
  int expression_dims = 10;

  static BodyModelConfig tiny() { return {0, 200, 12, 10, 10}; }
  bool operator==(const BodyModelConfig&) const = default;
};

struct BodyParams {
  Points3 pose;                // J x 3 axis-angle, root first
  Eigen::VectorXd shape;       // B
  Eigen::VectorXd expression;  // Be

  static BodyParams zeros(int joints, int shape_dims, int expression_dims);
  /// [pose row-major, shape, expression].
  std::vector<double> flatten() const;
  bool operator==(const BodyParams& other) const;
};

// Simplified whole-body parametric model. Coordinates: x towards the
// person's left, y down, the person faces -z.
class BodyModel {
 public:
  struct Output {
    Points3 vertices;
    Points3 joints;
  };
  struct TensorOutput {
    nn::Tensor vertices;  // V x 3
    nn::Tensor joints;    // J x 3
  };

  /// Procedural humanoid. Throws std::invalid_argument when V < 100, J < 4,
  /// J > 53 or V too small to give every joint its ring of vertices.
  static BodyModel make_toy(const BodyModelConfig& config);

  const BodyModelConfig& config() const noexcept { return config_; }
  int num_vertices() const noexcept { return config_.vertices; }
  int num_joints() const noexcept { return config_.joints; }
  int shape_dims() const noexcept { return config_.shape_dims; }
  int expression_dims() const noexcept { return config_.expression_dims; }

  const Points3& template_vertices() const noexcept { return template_; }
  const std::vector<int>& parents() const noexcept { return parents_; }
  const Points3& rest_joints() const noexcept { return rest_joints_; }
  const nn::Array& skin_weights() const noexcept { return skin_weights_; }  // V x J
  const nn::Array& shape_dirs() const noexcept { return shape_dirs_; }      // 3V x B
  const nn::Array& expr_dirs() const noexcept { return expr_dirs_; }        // 3V x Be
  const nn::Array& joint_regressor() const noexcept { return regressor_; }  // J x V
  int primary_joint() const noexcept { return primary_; }
  int root_joint() const noexcept { return root_; }
  const std::vector<BodyPart>& part_labels() const noexcept { return parts_; }
  const std::vector<std::string>& joint_names() const noexcept { return names_; }
  const std::vector<std::array<int, 3>>& faces() const noexcept { return faces_; }
  /// Joint index by name, or -1.
  int joint_index(const std::string& name) const;
  /// Head, neck, shoulders, elbows, wrists, hips, knees, ankles (those present).
  std::vector<int> lsp_joints() const;

  /// Left/right counterparts; empty when the model is not mirror-symmetric.
  const std::vector<int>& mirror_joints() const noexcept { return mirror_joints_; }
  const std::vector<int>& mirror_vertices() const noexcept { return mirror_vertices_; }
  bool symmetric() const noexcept { return !mirror_joints_.empty(); }

  Output forward(const BodyParams& params) const;
  /// Differentiable forward from per-joint rotation matrices (J x 9), shape
  /// (B values) and expression (Be values). Outputs are head-centered.
  TensorOutput forward(nn::Graph& g, nn::Tensor rotmats, nn::Tensor shape, nn::Tensor expression) const;

  BodyParams mean_params() const;
  /// Parameters of the mirror image (x -> -x) of the person.
  BodyParams mirror(const BodyParams& params) const;
  void check(const BodyParams& params) const;

  /// Header (V, J, B, Be) as uint32 followed by float32 arrays.
  void save_blob(const std::filesystem::path& path) const;
  static BodyModel load_blob(const std::filesystem::path& path);

 private:
  void finalize();

  BodyModelConfig config_;
  Points3 template_;
  std::vector<int> parents_;
  Points3 rest_joints_;
  nn::Array skin_weights_;
  nn::Array shape_dirs_;
  nn::Array expr_dirs_;
  nn::Array regressor_;
  int primary_ = 0;
  int root_ = 0;
  std::vector<BodyPart> parts_;
  std::vector<std::string> names_;
  std::vector<std::array<int, 3>> faces_;
  std::vector<int> mirror_joints_;
  std::vector<int> mirror_vertices_;

  // Derived, for the graph forward.
  nn::Array template_flat_;  // 3V x 1
  nn::Array rest_joints_arr_;
  nn::SparseSkinning sparse_;
};

/// Adds t to every vertex.
Points3 place(const Points3& vertices, const Vec3& t);

void write_obj(const std::filesystem::path& path, const Points3& vertices, const std::vector<std::array<int, 3>>& faces);

}  // namespace mhmr

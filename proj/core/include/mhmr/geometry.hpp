#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <string>
#include <vector>

namespace mhmr {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat3 = Eigen::Matrix3d;
using Points3 = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

// Pinhole camera with square pixels and no distortion. The camera sits at the
// origin looking down +z; image u grows with x and v grows with y.
struct Camera {
  double focal = 1.0;
  Vec2 principal = Vec2::Zero();
  int width = 1;
  int height = 1;

  // Horizontal field of view in degrees, principal point at the image center.
  static Camera from_fov(int width, int height, double fov_deg);

  Mat3 intrinsics() const;
  void validate() const;
  bool operator==(const Camera& other) const = default;
};

/// Pixel coordinates of a camera-space point. Throws if the point is not in
/// front of the camera.
Vec2 project(const Camera& camera, const Vec3& point);

/// Camera-space point on the ray through `pixel` at the given depth.
Vec3 backproject(const Camera& camera, const Vec2& pixel, double depth);

// Patch (i, j) covers pixels [iP, (i+1)P) x [jP, (j+1)P); i indexes columns.
Vec2 patch_center(int i, int j, int patch_size);

/// First two components of K^-1 [u, v, 1] for every patch center, ordered
/// row-major (token index j * grid_w + i).
std::vector<Vec2> ray_grid(const Camera& camera, int grid_w, int grid_h, int patch_size);

/// Identity followed by `bands` sine octaves for each coordinate:
/// [x, sin(pi x), sin(2 pi x), ..., sin(2^(F-1) pi x), y, ...]. Length 2(F+1).
std::vector<double> fourier_encode(const Vec2& coords, int bands);

class Rotation {
 public:
  Rotation() = default;

  static Rotation identity() { return Rotation(); }
  /// Validates orthonormality and det = +1 within `tol`.
  static Rotation from_matrix(const Mat3& m, double tol = 1e-6);

  const Mat3& matrix() const noexcept { return m_; }
  Vec3 operator*(const Vec3& v) const { return m_ * v; }
  Rotation operator*(const Rotation& other) const { return Rotation(m_ * other.m_); }
  Rotation inverse() const { return Rotation(m_.transpose()); }

  bool is_valid(double tol = 1e-6) const;

 private:
  explicit Rotation(const Mat3& m) : m_(m) {}
  friend Rotation rotation_unchecked(const Mat3& m);

  Mat3 m_ = Mat3::Identity();
};

// For kernels that construct orthonormal matrices by formula.
Rotation rotation_unchecked(const Mat3& m);

/// Rodrigues' formula; the zero vector maps to the identity.
Rotation axis_angle_to_matrix(const Vec3& axis_angle);

/// Inverse of axis_angle_to_matrix with angle in [0, pi].
Vec3 matrix_to_axis_angle(const Mat3& m);

/// Gram-Schmidt on the two stacked columns (a1, a2); third column a1 x a2.
/// Throws std::invalid_argument on zero or parallel inputs.
Rotation sixd_to_matrix(const Vec6& v);

/// First two columns of the matrix, the inverse of sixd_to_matrix.
Vec6 matrix_to_sixd(const Mat3& m);

struct SimilarityTransform {
  double scale = 1.0;
  Rotation rotation;
  Vec3 translation = Vec3::Zero();

  Vec3 apply(const Vec3& p) const { return scale * (rotation * p) + translation; }
  Points3 apply(const Points3& points) const;
};

/// Least-squares similarity transform mapping `source` onto `target`
/// (closed-form SVD solution, reflections excluded).
SimilarityTransform procrustes_align(const Points3& source, const Points3& target);

std::string camera_to_json(const Camera& camera);
Camera camera_from_json(const std::string& text);
Camera load_camera(const std::filesystem::path& path);
void save_camera(const Camera& camera, const std::filesystem::path& path);

}  // namespace mhmr

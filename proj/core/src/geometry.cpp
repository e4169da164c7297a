#include "mhmr/geometry.hpp"

#include <Eigen/SVD>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "mhmr/errors.hpp"

namespace mhmr {

using nlohmann::json;

Camera Camera::from_fov(int width, int height, double fov_deg) {
  if (width <= 0 || height <= 0) throw std::invalid_argument("camera: image size must be positive");
  if (!(fov_deg > 0.0 && fov_deg < 180.0)) throw std::invalid_argument("camera: fov must be in (0, 180)");
  Camera c;
  c.width = width;
  c.height = height;
  c.focal = (0.5 * width) / std::tan(0.5 * fov_deg * std::numbers::pi / 180.0);
  c.principal = Vec2(0.5 * width, 0.5 * height);
  return c;
}

Mat3 Camera::intrinsics() const {
  Mat3 k;
  k << focal, 0, principal.x(), 0, focal, principal.y(), 0, 0, 1;
  return k;
}

void Camera::validate() const {
  if (!(focal > 0.0) || !std::isfinite(focal)) throw std::invalid_argument("camera: focal must be > 0");
  if (width <= 0 || height <= 0) throw std::invalid_argument("camera: image size must be positive");
  if (principal.x() < 0 || principal.x() > width || principal.y() < 0 || principal.y() > height)
    throw std::invalid_argument("camera: principal point outside the image");
}

Vec2 project(const Camera& camera, const Vec3& point) {
  if (!(point.z() > 0.0)) throw std::invalid_argument("project: point is behind the camera (z <= 0)");
  return {camera.focal * point.x() / point.z() + camera.principal.x(),
          camera.focal * point.y() / point.z() + camera.principal.y()};
}

Vec3 backproject(const Camera& camera, const Vec2& pixel, double depth) {
  if (!(depth > 0.0)) throw std::invalid_argument("backproject: depth must be > 0");
  return {(pixel.x() - camera.principal.x()) * depth / camera.focal,
          (pixel.y() - camera.principal.y()) * depth / camera.focal, depth};
}

Vec2 patch_center(int i, int j, int patch_size) {
  return {(i + 0.5) * patch_size, (j + 0.5) * patch_size};
}

std::vector<Vec2> ray_grid(const Camera& camera, int grid_w, int grid_h, int patch_size) {
  if (grid_w * patch_size != camera.width || grid_h * patch_size != camera.height)
    throw std::invalid_argument("ray_grid: grid does not tile the camera image");
  std::vector<Vec2> rays;
  rays.reserve(static_cast<std::size_t>(grid_w) * grid_h);
  for (int j = 0; j < grid_h; ++j) {
    for (int i = 0; i < grid_w; ++i) {
      const Vec2 c = patch_center(i, j, patch_size);
      rays.emplace_back((c.x() - camera.principal.x()) / camera.focal,
                        (c.y() - camera.principal.y()) / camera.focal);
    }
  }
  return rays;
}

std::vector<double> fourier_encode(const Vec2& coords, int bands) {
  if (bands < 1) throw std::invalid_argument("fourier_encode: band count must be >= 1");
  std::vector<double> out;
  out.reserve(2 * (bands + 1));
  for (int axis = 0; axis < 2; ++axis) {
    const double x = coords[axis];
    out.push_back(x);
    double freq = std::numbers::pi;
    for (int b = 0; b < bands; ++b, freq *= 2.0) out.push_back(std::sin(freq * x));
  }
  return out;
}

Rotation Rotation::from_matrix(const Mat3& m, double tol) {
  Rotation r(m);
  if (!r.is_valid(tol)) throw std::invalid_argument("rotation: matrix is not a proper rotation");
  return r;
}

bool Rotation::is_valid(double tol) const {
  if (!m_.allFinite()) return false;
  const double ortho = (m_.transpose() * m_ - Mat3::Identity()).cwiseAbs().maxCoeff();
  return ortho <= tol && std::abs(m_.determinant() - 1.0) <= tol;
}

Rotation rotation_unchecked(const Mat3& m) { return Rotation(m); }

Rotation axis_angle_to_matrix(const Vec3& aa) {
  const double theta2 = aa.squaredNorm();
  const double theta = std::sqrt(theta2);
  double a, b;
  if (theta < 0.05) {
    const double t4 = theta2 * theta2;
    a = 1.0 - theta2 / 6.0 + t4 / 120.0;
    b = 0.5 - theta2 / 24.0 + t4 / 720.0;
  } else {
    a = std::sin(theta) / theta;
    b = (1.0 - std::cos(theta)) / theta2;
  }
  Mat3 k;
  k << 0, -aa.z(), aa.y(), aa.z(), 0, -aa.x(), -aa.y(), aa.x(), 0;
  return rotation_unchecked(Mat3::Identity() + a * k + b * k * k);
}

Vec3 matrix_to_axis_angle(const Mat3& m) {
  const Vec3 v(m(2, 1) - m(1, 2), m(0, 2) - m(2, 0), m(1, 0) - m(0, 1));
  const double s = 0.5 * v.norm();
  const double c = 0.5 * (m.trace() - 1.0);
  const double theta = std::atan2(s, c);
  if (s > 1e-6) return (theta / (2.0 * s)) * v;
  if (c > 0) return v / (2.0 * c);
  // Angle close to pi: axis from the symmetric part.
  const Mat3 sym = 0.5 * (m + m.transpose()) - c * Mat3::Identity();
  Eigen::Index col = 0;
  sym.diagonal().maxCoeff(&col);
  Vec3 axis = sym.col(col);
  axis.normalize();
  if (axis.dot(v) < 0) axis = -axis;
  return theta * axis;
}

Rotation sixd_to_matrix(const Vec6& v) {
  const Vec3 a1 = v.head<3>();
  const Vec3 a2 = v.tail<3>();
  const double n1 = a1.norm();
  if (!(n1 > 1e-12)) throw std::invalid_argument("sixd_to_matrix: first column is zero");
  const Vec3 b1 = a1 / n1;
  const Vec3 u = a2 - b1.dot(a2) * b1;
  const double n2 = u.norm();
  if (!(n2 > 1e-12 * std::max(1.0, a2.norm())))
    throw std::invalid_argument("sixd_to_matrix: columns are parallel or second column is zero");
  const Vec3 b2 = u / n2;
  Mat3 r;
  r.col(0) = b1;
  r.col(1) = b2;
  r.col(2) = b1.cross(b2);
  return rotation_unchecked(r);
}

Vec6 matrix_to_sixd(const Mat3& m) {
  Vec6 v;
  v << m.col(0), m.col(1);
  return v;
}

Points3 SimilarityTransform::apply(const Points3& points) const {
  Points3 out = (scale * (points * rotation.matrix().transpose())).eval();
  out.rowwise() += translation.transpose();
  return out;
}

SimilarityTransform procrustes_align(const Points3& source, const Points3& target) {
  if (source.rows() != target.rows())
    throw ShapeError("procrustes_align: source and target point counts differ");
  if (source.rows() < 3) throw std::invalid_argument("procrustes_align: need at least 3 points");
  const double n = static_cast<double>(source.rows());
  const Vec3 mu_s = source.colwise().mean().transpose();
  const Vec3 mu_t = target.colwise().mean().transpose();
  const Points3 xs = source.rowwise() - mu_s.transpose();
  const Points3 xt = target.rowwise() - mu_t.transpose();
  const double var_s = xs.squaredNorm() / n;

  const Mat3 cov = (xt.transpose() * xs) / n;
  Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 sv = svd.singularValues();
  if (!(var_s > 1e-18) || !(sv(1) > 1e-12 * std::max(sv(0), 1e-300)))
    throw std::invalid_argument("procrustes_align: rank-deficient point configuration");

  Vec3 signs(1, 1, 1);
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0) signs(2) = -1;
  const Mat3 r = svd.matrixU() * signs.asDiagonal() * svd.matrixV().transpose();

  SimilarityTransform out;
  out.scale = sv.dot(signs) / var_s;
  out.rotation = rotation_unchecked(r);
  out.translation = mu_t - out.scale * (r * mu_s);
  return out;
}

std::string camera_to_json(const Camera& camera) {
  json j = {{"focal", camera.focal},
            {"principal", {camera.principal.x(), camera.principal.y()}},
            {"size", {camera.width, camera.height}}};
  return j.dump();
}

Camera camera_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    Camera c;
    c.focal = j.at("focal").get<double>();
    c.principal = Vec2(j.at("principal").at(0).get<double>(), j.at("principal").at(1).get<double>());
    c.width = j.at("size").at(0).get<int>();
    c.height = j.at("size").at(1).get<int>();
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw FormatError(std::string("camera JSON: ") + e.what());
  }
}

Camera load_camera(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open camera file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return camera_from_json(ss.str());
}

void save_camera(const Camera& camera, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write camera file " + path.string());
  out << camera_to_json(camera) << "\n";
}

}  // namespace mhmr

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "mhmr/geometry.hpp"

using namespace mhmr;

namespace {

Camera cam(double f, double cx, double cy, int w = 448, int h = 448) {
  Camera c;
  c.focal = f;
  c.principal = Vec2(cx, cy);
  c.width = w;
  c.height = h;
  return c;
}

Mat3 random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0, 1);
  Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
  q.normalize();
  return q.toRotationMatrix();
}

}  // namespace

TEST(Project, OpticalAxisHitsPrincipalPoint) {
  const Vec2 p = project(cam(448, 224, 224), Vec3(0, 0, 2));
  EXPECT_DOUBLE_EQ(p.x(), 224);
  EXPECT_DOUBLE_EQ(p.y(), 224);
}

TEST(Project, HandEvaluatedPoints) {
  // u = f x / z + cx
  Vec2 p = project(cam(448, 224, 224), Vec3(1, 0, 2));
  EXPECT_DOUBLE_EQ(p.x(), 448.0 * 1.0 / 2.0 + 224.0);
  EXPECT_DOUBLE_EQ(p.y(), 224);
  p = project(cam(224, 112, 112, 224, 224), Vec3(-1, 1, 4));
  EXPECT_DOUBLE_EQ(p.x(), 224.0 * -1.0 / 4.0 + 112.0);
  EXPECT_DOUBLE_EQ(p.y(), 224.0 * 1.0 / 4.0 + 112.0);
  EXPECT_DOUBLE_EQ(p.x(), 56);
  EXPECT_DOUBLE_EQ(p.y(), 168);
}

TEST(Project, BehindCameraThrows) {
  EXPECT_THROW(project(cam(448, 224, 224), Vec3(0, 0, -1)), std::invalid_argument);
  EXPECT_THROW(project(cam(448, 224, 224), Vec3(0, 0, 0)), std::invalid_argument);
}

TEST(Backproject, Examples) {
  Vec3 p = backproject(cam(448, 224, 224), Vec2(224, 224), 3);
  EXPECT_DOUBLE_EQ(p.x(), 0);
  EXPECT_DOUBLE_EQ(p.y(), 0);
  EXPECT_DOUBLE_EQ(p.z(), 3);
  p = backproject(cam(448, 224, 224), Vec2(448, 224), 2);
  EXPECT_DOUBLE_EQ(p.x(), 1);
  EXPECT_DOUBLE_EQ(p.y(), 0);
  EXPECT_DOUBLE_EQ(p.z(), 2);
}

TEST(Backproject, RoundTrip) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> xy(-3, 3), z(0.2, 20), f(50, 2000), c(0, 500);
  double worst = 0;
  for (int i = 0; i < 100; ++i) {
    const Camera k = cam(f(rng), c(rng), c(rng));
    const Vec3 t(xy(rng), xy(rng), z(rng));
    worst = std::max(worst, (backproject(k, project(k, t), t.z()) - t).norm());
  }
  EXPECT_LT(worst, 1e-9);
}

TEST(Camera, FromFov) {
  const Camera c = Camera::from_fov(224, 224, 60);
  EXPECT_NEAR(c.focal, 112.0 / std::tan(std::numbers::pi / 6), 1e-12);
  EXPECT_DOUBLE_EQ(c.principal.x(), 112);
  EXPECT_DOUBLE_EQ(c.principal.y(), 112);
}

TEST(Camera, InvalidRejected) {
  EXPECT_THROW(cam(0, 1, 1).validate(), std::invalid_argument);
  EXPECT_THROW(cam(-5, 1, 1).validate(), std::invalid_argument);
  EXPECT_THROW(cam(5, 1, 1, 0, 4).validate(), std::invalid_argument);
}

TEST(Camera, JsonRoundTrip) {
  const Camera c = cam(321.5, 100.25, 90.5, 200, 180);
  EXPECT_EQ(camera_from_json(camera_to_json(c)), c);
}

TEST(RayGrid, AxisPatchAndScaling) {
  // 448 px, P = 14: the center of patch (15, 15) is (217, 217).
  Camera c = cam(448, 217, 217);
  auto rays = ray_grid(c, 32, 32, 14);
  ASSERT_EQ(rays.size(), 1024u);
  EXPECT_DOUBLE_EQ(rays[15 * 32 + 15].x(), 0);
  EXPECT_DOUBLE_EQ(rays[15 * 32 + 15].y(), 0);

  // Patch (31, 15) has center x = 441; with cx = 217: (441 - 217) / 448 = 0.5.
  rays = ray_grid(cam(448, 217, 217), 32, 32, 14);
  EXPECT_DOUBLE_EQ(rays[15 * 32 + 31].x(), (441.0 - 217.0) / 448.0);
  EXPECT_DOUBLE_EQ(rays[15 * 32 + 31].x(), 0.5);

  const auto doubled = ray_grid(cam(896, 217, 217), 32, 32, 14);
  for (std::size_t k = 0; k < rays.size(); ++k) {
    EXPECT_NEAR(doubled[k].x(), 0.5 * rays[k].x(), 1e-15);
    EXPECT_NEAR(doubled[k].y(), 0.5 * rays[k].y(), 1e-15);
  }
}

TEST(PatchCenter, Convention) {
  EXPECT_EQ(patch_center(0, 0, 14), Vec2(7, 7));
  EXPECT_EQ(patch_center(3, 5, 14), Vec2(49, 77));
}

TEST(Fourier, Examples) {
  const auto z = fourier_encode(Vec2(0, 0), 8);
  ASSERT_EQ(z.size(), 18u);
  for (double v : z) EXPECT_EQ(v, 0.0);
  const auto e = fourier_encode(Vec2(0.5, 0), 2);
  ASSERT_EQ(e.size(), 6u);
  EXPECT_DOUBLE_EQ(e[0], 0.5);
  EXPECT_NEAR(e[1], 1.0, 1e-15);
  EXPECT_NEAR(e[2], 0.0, 1e-15);
  EXPECT_EQ(e[3], 0.0);
  EXPECT_EQ(e[4], 0.0);
  EXPECT_EQ(e[5], 0.0);
}

TEST(AxisAngle, Examples) {
  EXPECT_TRUE(axis_angle_to_matrix(Vec3::Zero()).matrix().isApprox(Mat3::Identity(), 0));
  const Vec3 v = axis_angle_to_matrix(Vec3(0, 0, std::numbers::pi / 2)) * Vec3(1, 0, 0);
  EXPECT_NEAR(v.x(), 0, 1e-15);
  EXPECT_NEAR(v.y(), 1, 1e-15);
  EXPECT_NEAR(v.z(), 0, 1e-15);
  const Vec3 axis = Vec3(1, -2, 0.5).normalized();
  const Mat3 full = axis_angle_to_matrix(2 * std::numbers::pi * axis).matrix();
  EXPECT_LT((full - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(AxisAngle, InverseRoundTrip) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int i = 0; i < 200; ++i) {
    Vec3 aa(u(rng), u(rng), u(rng));
    aa *= 3.0 / std::max(1.0, aa.norm());
    const Vec3 back = matrix_to_axis_angle(axis_angle_to_matrix(aa).matrix());
    EXPECT_LT((back - aa).norm(), 1e-8) << aa.transpose();
  }
}

TEST(SixD, Examples) {
  Vec6 v;
  v << 1, 0, 0, 0, 1, 0;
  EXPECT_TRUE(sixd_to_matrix(v).matrix().isApprox(Mat3::Identity(), 0));
  v << 2, 0, 0, 0, 3, 0;
  EXPECT_LT((sixd_to_matrix(v).matrix() - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(SixD, RandomIsRotation) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n(0, 1);
  for (int i = 0; i < 200; ++i) {
    Vec6 v;
    for (int k = 0; k < 6; ++k) v[k] = n(rng);
    const Mat3 r = sixd_to_matrix(v).matrix();
    EXPECT_LT((r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_NEAR(r.determinant(), 1.0, 1e-6);
  }
}

TEST(SixD, MatrixRoundTrip) {
  std::mt19937_64 rng(2);
  const Mat3 r = random_rotation(rng);
  EXPECT_LT((sixd_to_matrix(matrix_to_sixd(r)).matrix() - r).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(SixD, DegenerateThrows) {
  Vec6 v = Vec6::Zero();
  EXPECT_THROW(sixd_to_matrix(v), std::invalid_argument);
  v << 1, 0, 0, 2, 0, 0;
  EXPECT_THROW(sixd_to_matrix(v), std::invalid_argument);
}

TEST(Rotation, FromMatrixValidates) {
  Mat3 m = Mat3::Identity();
  m(0, 0) = -1;
  EXPECT_THROW(Rotation::from_matrix(m), std::invalid_argument);
  EXPECT_NO_THROW(Rotation::from_matrix(Mat3::Identity()));
}

TEST(Procrustes, Identity) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0, 1);
  Points3 p(20, 3);
  for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = n(rng);
  const SimilarityTransform s = procrustes_align(p, p);
  EXPECT_NEAR(s.scale, 1, 1e-12);
  EXPECT_LT((s.rotation.matrix() - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT(s.translation.norm(), 1e-12);
  EXPECT_LT((s.apply(p) - p).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Procrustes, RecoversConstructedTransform) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n(0, 1);
  for (int trial = 0; trial < 100; ++trial) {
    Points3 src(30, 3);
    for (Eigen::Index i = 0; i < src.size(); ++i) src.data()[i] = n(rng);
    const Mat3 r0 = random_rotation(rng);
    const Vec3 t0(n(rng), n(rng), n(rng));
    Points3 dst(30, 3);
    for (Eigen::Index i = 0; i < 30; ++i) dst.row(i) = (2.0 * r0 * src.row(i).transpose() + t0).transpose();
    const SimilarityTransform s = procrustes_align(src, dst);
    EXPECT_NEAR(s.scale, 2.0, 1e-6);
    EXPECT_LT((s.rotation.matrix() - r0).cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_LT((s.translation - t0).norm(), 1e-6);
  }
}

TEST(Procrustes, MirrorGivesProperRotation) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0, 1);
  Points3 src(25, 3);
  for (Eigen::Index i = 0; i < src.size(); ++i) src.data()[i] = n(rng);
  Points3 dst = src;
  dst.col(0) *= -1.0;
  const SimilarityTransform s = procrustes_align(src, dst);
  EXPECT_NEAR(s.rotation.matrix().determinant(), 1.0, 1e-9);
}

TEST(Procrustes, SizeMismatchThrows) {
  EXPECT_THROW(procrustes_align(Points3::Zero(4, 3), Points3::Zero(5, 3)), std::invalid_argument);
}

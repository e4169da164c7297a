#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <optional>
#include <random>

#include "mhmr/body_model.hpp"
#include "mhmr/errors.hpp"

using namespace mhmr;

namespace {

const BodyModel& default_model() {
  static const BodyModel m = BodyModel::make_toy(BodyModelConfig{});
  return m;
}

const BodyModel& tiny_model() {
  static const BodyModel m = BodyModel::make_toy(BodyModelConfig::tiny());
  return m;
}

BodyParams random_params(const BodyModel& m, std::uint64_t seed, double amp = 0.4) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-amp, amp);
  BodyParams p = m.mean_params();
  for (Eigen::Index i = 0; i < p.pose.size(); ++i) p.pose.data()[i] = u(rng);
  for (Eigen::Index i = 0; i < p.shape.size(); ++i) p.shape[i] = 2 * u(rng);
  for (Eigen::Index i = 0; i < p.expression.size(); ++i) p.expression[i] = 2 * u(rng);
  return p;
}

// Dense textbook linear blend skinning, written independently of the graph ops.
BodyModel::Output reference_forward(const BodyModel& m, const BodyParams& p) {
  const int V = m.num_vertices(), J = m.num_joints();
  Points3 shaped = m.template_vertices();
  for (int v = 0; v < V; ++v)
    for (int c = 0; c < 3; ++c) {
      double d = 0;
      for (int b = 0; b < m.shape_dims(); ++b) d += m.shape_dirs()(3 * v + c, b) * p.shape[b];
      for (int b = 0; b < m.expression_dims(); ++b) d += m.expr_dirs()(3 * v + c, b) * p.expression[b];
      shaped(v, c) += d;
    }
  Points3 rest = Points3::Zero(J, 3);
  for (int j = 0; j < J; ++j)
    for (int v = 0; v < V; ++v) rest.row(j) += m.joint_regressor()(j, v) * shaped.row(v);
  std::vector<Mat3> R(J);
  std::vector<Vec3> T(J);
  for (int j = 0; j < J; ++j) {
    const Mat3 local = axis_angle_to_matrix(p.pose.row(j).transpose()).matrix();
    const int parent = m.parents()[j];
    if (parent < 0) {
      R[j] = local;
      T[j] = rest.row(j).transpose();
    } else {
      R[j] = R[parent] * local;
      T[j] = R[parent] * (rest.row(j) - rest.row(parent)).transpose() + T[parent];
    }
  }
  BodyModel::Output out;
  out.vertices = Points3::Zero(V, 3);
  for (int v = 0; v < V; ++v)
    for (int j = 0; j < J; ++j) {
      const double w = m.skin_weights()(v, j);
      if (w == 0) continue;
      out.vertices.row(v) += w * (R[j] * (shaped.row(v) - rest.row(j)).transpose() + T[j]).transpose();
    }
  out.joints = Points3(J, 3);
  for (int j = 0; j < J; ++j) out.joints.row(j) = T[j].transpose();
  const Vec3 head = T[m.primary_joint()];
  for (int v = 0; v < V; ++v) out.vertices.row(v) -= head.transpose();
  for (int j = 0; j < J; ++j) out.joints.row(j) -= head.transpose();
  return out;
}

double max_diff(const Points3& a, const Points3& b) { return (a - b).cwiseAbs().maxCoeff(); }

}  // namespace

TEST(BodyModel, SameSeedIsBitIdentical) {
  const BodyModel a = BodyModel::make_toy(BodyModelConfig{});
  const BodyModel& b = default_model();
  EXPECT_EQ(a.template_vertices(), b.template_vertices());
  EXPECT_EQ(a.skin_weights(), b.skin_weights());
  EXPECT_EQ(a.shape_dirs(), b.shape_dirs());
  EXPECT_EQ(a.expr_dirs(), b.expr_dirs());
  EXPECT_EQ(a.joint_regressor(), b.joint_regressor());
  EXPECT_EQ(a.parents(), b.parents());
}

TEST(BodyModel, DifferentSeedChangesBlendshapes) {
  BodyModelConfig c;
  c.seed = 7;
  EXPECT_NE(BodyModel::make_toy(c).shape_dirs(), default_model().shape_dirs());
}

TEST(BodyModel, DefaultHas53Joints) {
  const BodyModel& m = default_model();
  EXPECT_EQ(m.num_joints(), 53);
  EXPECT_EQ(m.mean_params().pose.rows(), 53);
  EXPECT_EQ(m.mean_params().pose.cols(), 3);
  EXPECT_EQ(m.joint_names().size(), 53u);
}

TEST(BodyModel, SkinWeightRowsSumToOne) {
  for (const BodyModel* m : {&default_model(), &tiny_model()}) {
    const auto& w = m->skin_weights();
    for (std::size_t v = 0; v < w.dim(0); ++v) {
      double s = 0;
      for (std::size_t j = 0; j < w.dim(1); ++j) {
        EXPECT_GE(w(v, j), 0.0);
        s += w(v, j);
      }
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
  }
}

TEST(BodyModel, KinematicTreeIsTopological) {
  const auto& parents = default_model().parents();
  EXPECT_EQ(parents[0], -1);
  for (std::size_t j = 1; j < parents.size(); ++j) {
    EXPECT_GE(parents[j], 0);
    EXPECT_LT(parents[j], static_cast<int>(j));
  }
}

TEST(BodyModel, HasWholeBodyParts) {
  const BodyModel& m = default_model();
  int hands = 0, face = 0;
  for (BodyPart p : m.part_labels()) {
    hands += p == BodyPart::LeftHand || p == BodyPart::RightHand;
    face += p == BodyPart::Face;
  }
  EXPECT_GT(hands, 0);
  EXPECT_GT(face, 0);
  EXPECT_GE(m.joint_index("L_index1"), 0);
  EXPECT_GE(m.joint_index("jaw"), 0);
  EXPECT_EQ(m.joint_index("tail"), -1);
}

TEST(BodyModel, InvalidConfigsRejected) {
  BodyModelConfig c;
  c.vertices = 50;
  EXPECT_THROW(BodyModel::make_toy(c), std::invalid_argument);
  c = BodyModelConfig{};
  c.joints = 60;
  EXPECT_THROW(BodyModel::make_toy(c), std::invalid_argument);
  c = BodyModelConfig{};
  c.joints = 3;
  EXPECT_THROW(BodyModel::make_toy(c), std::invalid_argument);
}

TEST(Forward, IdentityPoseIsTemplateCenteredAtHead) {
  const BodyModel& m = default_model();
  const auto out = m.forward(m.mean_params());
  const int V = m.num_vertices();
  Vec3 head = Vec3::Zero();
  for (int v = 0; v < V; ++v) head += m.joint_regressor()(m.primary_joint(), v) * m.template_vertices().row(v).transpose();
  for (int v = 0; v < V; ++v)
    EXPECT_LT((out.vertices.row(v).transpose() - (m.template_vertices().row(v).transpose() - head)).norm(), 1e-12);
  for (int j = 0; j < m.num_joints(); ++j)
    EXPECT_LT((out.joints.row(j).transpose() - (m.rest_joints().row(j).transpose() - head)).norm(), 1e-12);
  EXPECT_LT(out.joints.row(m.primary_joint()).norm(), 1e-15);
}

TEST(Forward, FirstShapeBlendshape) {
  const BodyModel& m = default_model();
  BodyParams p = m.mean_params();
  p.shape[0] = 1.0;
  const auto out = m.forward(p);
  const int V = m.num_vertices();
  Points3 shaped = m.template_vertices();
  for (int v = 0; v < V; ++v)
    for (int c = 0; c < 3; ++c) shaped(v, c) += m.shape_dirs()(3 * v + c, 0);
  Vec3 head = Vec3::Zero();
  for (int v = 0; v < V; ++v) head += m.joint_regressor()(m.primary_joint(), v) * shaped.row(v).transpose();
  for (int v = 0; v < V; ++v)
    EXPECT_LT((out.vertices.row(v).transpose() - (shaped.row(v).transpose() - head)).norm(), 1e-12);
}

TEST(Forward, RootRotationRotatesCenteredOutput) {
  const BodyModel& m = default_model();
  const auto rest = m.forward(m.mean_params());
  BodyParams p = m.mean_params();
  const Vec3 aa(0.3, -0.7, 0.2);
  p.pose.row(m.root_joint()) = aa.transpose();
  const auto out = m.forward(p);
  const Mat3 R = axis_angle_to_matrix(aa).matrix();
  // Rotating about the root and re-centering at the head leaves R applied to
  // the head-centered rest output.
  Points3 expected = rest.vertices;
  for (Eigen::Index v = 0; v < expected.rows(); ++v) expected.row(v) = (R * rest.vertices.row(v).transpose()).transpose();
  EXPECT_LT(max_diff(out.vertices, expected), 1e-12);
}

TEST(Forward, MatchesDenseReferenceSkinning) {
  for (const BodyModel* m : {&default_model(), &tiny_model()}) {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
      const BodyParams p = random_params(*m, seed);
      const auto out = m->forward(p);
      const auto ref = reference_forward(*m, p);
      EXPECT_LT(max_diff(out.vertices, ref.vertices), 1e-12);
      EXPECT_LT(max_diff(out.joints, ref.joints), 1e-12);
    }
  }
}

TEST(Forward, ExpressionOnlyMovesFace) {
  const BodyModel& m = default_model();
  BodyParams p = m.mean_params();
  p.expression[0] = 1.5;
  const auto a = m.forward(m.mean_params());
  const auto b = m.forward(p);
  // Outputs are head-centered and the head joint follows the face, so the
  // rest of the body may only translate rigidly.
  int face = 0;
  std::optional<Eigen::RowVector3d> shift;
  for (int v = 0; v < m.num_vertices(); ++v) {
    const Eigen::RowVector3d d = b.vertices.row(v) - a.vertices.row(v);
    if (m.part_labels()[v] == BodyPart::Face) {
      face += d.norm() > 1e-9;
      continue;
    }
    if (!shift) shift = d;
    EXPECT_LT((d - *shift).norm(), 1e-12) << v;
  }
  EXPECT_GT(face, 0);
}

TEST(Forward, BadShapesRejected) {
  const BodyModel& m = default_model();
  BodyParams p = m.mean_params();
  p.shape.resize(3);
  EXPECT_THROW(m.forward(p), ShapeError);
  p = m.mean_params();
  p.pose(0, 0) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(m.forward(p), std::invalid_argument);
}

TEST(MeanParams, Properties) {
  const BodyModel& m = default_model();
  EXPECT_EQ(m.mean_params().flatten().size(), 53u * 3 + 10 + 10);
  EXPECT_EQ(m.mean_params().flatten().size(), 179u);
  EXPECT_TRUE(m.mean_params() == m.mean_params());
}

TEST(Place, Examples) {
  const auto verts = default_model().forward(default_model().mean_params()).vertices;
  EXPECT_EQ(place(verts, Vec3::Zero()), verts);
  const Points3 shifted = place(verts, Vec3(0, 0, 2.5));
  for (Eigen::Index v = 0; v < verts.rows(); ++v) {
    EXPECT_EQ(shifted(v, 0), verts(v, 0));
    EXPECT_EQ(shifted(v, 1), verts(v, 1));
    EXPECT_DOUBLE_EQ(shifted(v, 2), verts(v, 2) + 2.5);
  }
  const Vec3 a(0.25, -1.5, 3.0);
  EXPECT_LT(max_diff(place(place(verts, a), -a), verts), 1e-15);
}

TEST(Mirror, MatchesReflectedMesh) {
  for (const BodyModel* m : {&default_model(), &tiny_model()}) {
    ASSERT_TRUE(m->symmetric());
    const BodyParams p = random_params(*m, 4);
    const auto a = m->forward(p);
    const auto b = m->forward(m->mirror(p));
    for (int v = 0; v < m->num_vertices(); ++v) {
      const int w = m->mirror_vertices()[v];
      EXPECT_NEAR(b.vertices(w, 0), -a.vertices(v, 0), 1e-9);
      EXPECT_NEAR(b.vertices(w, 1), a.vertices(v, 1), 1e-9);
      EXPECT_NEAR(b.vertices(w, 2), a.vertices(v, 2), 1e-9);
    }
    EXPECT_TRUE(m->mirror(m->mirror(p)) == p);
  }
}

TEST(Blob, RoundTripPreservesForward) {
  const BodyModel& m = tiny_model();
  const auto path = std::filesystem::temp_directory_path() / "mhmr_body_blob.bin";
  m.save_blob(path);
  const BodyModel l = BodyModel::load_blob(path);
  const BodyParams p = random_params(m, 9);
  // Float storage: agreement to single precision.
  EXPECT_LT(max_diff(l.forward(p).vertices, m.forward(p).vertices), 1e-5);
  std::filesystem::resize_file(path, 10);
  EXPECT_THROW(BodyModel::load_blob(path), FormatError);
  std::filesystem::remove(path);
}

TEST(Obj, WritesVerticesAndFaces) {
  const BodyModel& m = tiny_model();
  const auto path = std::filesystem::temp_directory_path() / "mhmr_body.obj";
  write_obj(path, m.forward(m.mean_params()).vertices, m.faces());
  std::ifstream in(path);
  std::string line;
  int v = 0, f = 0;
  while (std::getline(in, line)) {
    v += line.rfind("v ", 0) == 0;
    f += line.rfind("f ", 0) == 0;
  }
  EXPECT_EQ(v, m.num_vertices());
  EXPECT_EQ(f, static_cast<int>(m.faces().size()));
  EXPECT_GT(f, 0);
  std::filesystem::remove(path);
}

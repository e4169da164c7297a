#include "mhmr/nn/geometric_ops.hpp"

#include <cmath>
#include <limits>

#include "mhmr/errors.hpp"

namespace mhmr::nn {

namespace {

using RowMat3 = Eigen::Matrix<double, 3, 3, Eigen::RowMajor>;
using MapMat3 = Eigen::Map<RowMat3>;
using MapCMat3 = Eigen::Map<const RowMat3>;

void expect_cols(const char* op, const Array& a, std::size_t cols) {
  if (a.rank() != 2 || a.dim(1) != cols)
    throw ShapeError(std::string(op) + ": expected K x " + std::to_string(cols) + ", got " + to_string(a.shape()));
}

Mat3 skew(const Vec3& w) {
  Mat3 k;
  k << 0, -w.z(), w.y(), w.z(), 0, -w.x(), -w.y(), w.x(), 0;
  return k;
}

}  // namespace

Tensor sixd_to_rotmat(Tensor sixd) {
  const Array& x = sixd.value();
  expect_cols("sixd_to_rotmat", x, 6);
  const std::size_t k = x.dim(0);
  Array out({k, 9});
  for (std::size_t r = 0; r < k; ++r) {
    const Vec6 v = Eigen::Map<const Vec6>(x.data() + 6 * r);
    // Non-finite input propagates so the loss check can catch it.
    const Mat3 m = v.allFinite() ? sixd_to_matrix(v).matrix() : Mat3::Constant(std::numeric_limits<double>::quiet_NaN());
    MapMat3(out.data() + 9 * r) = m;
  }
  const NodeId ia = sixd.id();
  return sixd.graph().record(std::move(out), {sixd}, "sixd_to_rotmat", [ia, k](Graph& g, NodeId self) {
    Array* ga = g.grad_sink(ia);
    if (!ga) return;
    const Array& x = g.value(ia);
    const Array& gy = g.grad(self);
    for (std::size_t r = 0; r < k; ++r) {
      const Vec3 a1 = Eigen::Map<const Vec3>(x.data() + 6 * r);
      const Vec3 a2 = Eigen::Map<const Vec3>(x.data() + 6 * r + 3);
      const double n1 = a1.norm();
      const Vec3 b1 = a1 / n1;
      const double s = b1.dot(a2);
      const Vec3 u = a2 - s * b1;
      const double n2 = u.norm();
      const Vec3 b2 = u / n2;
      const RowMat3 G = MapCMat3(gy.data() + 9 * r);
      Vec3 gb1 = G.col(0), gb2 = G.col(1);
      const Vec3 gb3 = G.col(2);
      // b3 = b1 x b2
      gb1 += b2.cross(gb3);
      gb2 += gb3.cross(b1);
      // b2 = u / |u|
      const Vec3 gu = (gb2 - b2 * b2.dot(gb2)) / n2;
      // u = a2 - (b1 . a2) b1
      Vec3 ga2 = gu;
      const double gs = -b1.dot(gu);
      gb1 += -s * gu + gs * a2;
      ga2 += gs * b1;
      // b1 = a1 / |a1|
      const Vec3 ga1 = (gb1 - b1 * b1.dot(gb1)) / n1;
      for (int c = 0; c < 3; ++c) {
        (*ga)[6 * r + c] += ga1[c];
        (*ga)[6 * r + 3 + c] += ga2[c];
      }
    }
  });
}

Tensor axis_angle_to_rotmat(Tensor axis_angle) {
  const Array& x = axis_angle.value();
  expect_cols("axis_angle_to_rotmat", x, 3);
  const std::size_t k = x.dim(0);
  Array out({k, 9});
  for (std::size_t r = 0; r < k; ++r) {
    const Vec3 w = Eigen::Map<const Vec3>(x.data() + 3 * r);
    MapMat3(out.data() + 9 * r) = axis_angle_to_matrix(w).matrix();
  }
  const NodeId ia = axis_angle.id();
  return axis_angle.graph().record(std::move(out), {axis_angle}, "axis_angle_to_rotmat", [ia, k](Graph& g, NodeId self) {
    Array* ga = g.grad_sink(ia);
    if (!ga) return;
    const Array& x = g.value(ia);
    const Array& gy = g.grad(self);
    for (std::size_t r = 0; r < k; ++r) {
      const Vec3 w = Eigen::Map<const Vec3>(x.data() + 3 * r);
      const double t2 = w.squaredNorm();
      const double t = std::sqrt(t2);
      // R = I + a K + b K^2; da = ca * w, db = cb * w.
      double a, b, ca, cb;
      if (t < 0.05) {
        const double t4 = t2 * t2;
        a = 1.0 - t2 / 6.0 + t4 / 120.0;
        b = 0.5 - t2 / 24.0 + t4 / 720.0;
        ca = -1.0 / 3.0 + t2 / 30.0 - t4 / 840.0;
        cb = -1.0 / 12.0 + t2 / 180.0 - t4 / 6720.0;
      } else {
        const double s = std::sin(t), c = std::cos(t);
        a = s / t;
        b = (1.0 - c) / t2;
        ca = (t * c - s) / (t2 * t);
        cb = (t * s - 2.0 * (1.0 - c)) / (t2 * t2);
      }
      const Mat3 K = skew(w);
      const Mat3 K2 = K * K;
      const Mat3 G = MapCMat3(gy.data() + 9 * r);
      const double gK = (G.cwiseProduct(K)).sum();
      const double gK2 = (G.cwiseProduct(K2)).sum();
      for (int i = 0; i < 3; ++i) {
        const Mat3 E = skew(Vec3::Unit(i));
        const Mat3 dR = a * E + b * (E * K + K * E);
        (*ga)[3 * r + i] += G.cwiseProduct(dR).sum() + (ca * gK + cb * gK2) * w[i];
      }
    }
  });
}

Tensor rotmat_to_axis_angle(Tensor rotmats) {
  const Array& x = rotmats.value();
  expect_cols("rotmat_to_axis_angle", x, 9);
  const std::size_t k = x.dim(0);
  Array out({k, 3});
  for (std::size_t r = 0; r < k; ++r) {
    const Mat3 m = MapCMat3(x.data() + 9 * r);
    Eigen::Map<Vec3>(out.data() + 3 * r) = matrix_to_axis_angle(m);
  }
  const NodeId ia = rotmats.id();
  return rotmats.graph().record(std::move(out), {rotmats}, "rotmat_to_axis_angle", [ia, k](Graph& g, NodeId self) {
    Array* ga = g.grad_sink(ia);
    if (!ga) return;
    const Array& x = g.value(ia);
    const Array& gy = g.grad(self);
    for (std::size_t r = 0; r < k; ++r) {
      const RowMat3 m = MapCMat3(x.data() + 9 * r);
      const Vec3 v(m(2, 1) - m(1, 2), m(0, 2) - m(2, 0), m(1, 0) - m(0, 1));
      const double s = 0.5 * v.norm();
      const double c = 0.5 * (m.trace() - 1.0);
      const Vec3 go = Eigen::Map<const Vec3>(gy.data() + 3 * r);
      Vec3 gv;
      double gc;
      if (s > 1e-6) {
        // out = theta * v / |v|, theta = atan2(s, c)
        const double theta = std::atan2(s, c);
        const double nv = 2.0 * s;
        const Vec3 uhat = v / nv;
        const double gtheta = go.dot(uhat);
        const double denom = s * s + c * c;
        gv = theta * (go - uhat * uhat.dot(go)) / nv + gtheta * (c / denom) * 0.5 * uhat;
        gc = gtheta * (-s / denom);
      } else if (c > 0) {
        // out = v / (2c)
        gv = go / (2.0 * c);
        gc = -go.dot(v) / (2.0 * c * c);
      } else {
        continue;  // rotation by ~pi: no stable gradient
      }
      double* gm = ga->data() + 9 * r;
      gm[7] += gv[0];  // (2,1)
      gm[5] -= gv[0];  // (1,2)
      gm[2] += gv[1];  // (0,2)
      gm[6] -= gv[1];  // (2,0)
      gm[3] += gv[2];  // (1,0)
      gm[1] -= gv[2];  // (0,1)
      gm[0] += 0.5 * gc;
      gm[4] += 0.5 * gc;
      gm[8] += 0.5 * gc;
    }
  });
}

Tensor forward_kinematics(Tensor rotmats, Tensor rest_joints, std::span<const int> parents) {
  const Array& rv = rotmats.value();
  const Array& jv = rest_joints.value();
  expect_cols("forward_kinematics", rv, 9);
  expect_cols("forward_kinematics", jv, 3);
  const std::size_t nj = rv.dim(0);
  if (jv.dim(0) != nj || parents.size() != nj)
    throw ShapeError("forward_kinematics: rotations " + to_string(rv.shape()) + ", joints " + to_string(jv.shape()) +
                     " and " + std::to_string(parents.size()) + " parents disagree");
  for (std::size_t j = 0; j < nj; ++j)
    if ((j == 0 && parents[0] != -1) || (j > 0 && (parents[j] < 0 || parents[j] >= static_cast<int>(j))))
      throw std::invalid_argument("forward_kinematics: parents must be topologically ordered with the root first");

  Array out({nj, 12});
  for (std::size_t j = 0; j < nj; ++j) {
    const Mat3 r = MapCMat3(rv.data() + 9 * j);
    const Vec3 rest = Eigen::Map<const Vec3>(jv.data() + 3 * j);
    double* o = out.data() + 12 * j;
    if (j == 0) {
      MapMat3{o} = r;
      Eigen::Map<Vec3>(o + 9) = rest;
      continue;
    }
    const std::size_t p = static_cast<std::size_t>(parents[j]);
    const Mat3 rp = MapCMat3(out.data() + 12 * p);
    const Vec3 tp = Eigen::Map<const Vec3>(out.data() + 12 * p + 9);
    const Vec3 restp = Eigen::Map<const Vec3>(jv.data() + 3 * p);
    MapMat3{o} = rp * r;
    Eigen::Map<Vec3>(o + 9) = rp * (rest - restp) + tp;
  }

  const NodeId ir = rotmats.id(), ij = rest_joints.id();
  std::vector<int> par(parents.begin(), parents.end());
  return rotmats.graph().record(
      std::move(out), {rotmats, rest_joints}, "forward_kinematics", [ir, ij, nj, par = std::move(par)](Graph& g, NodeId self) {
        const Array& rv = g.value(ir);
        const Array& jv = g.value(ij);
        const Array& world = g.value(self);
        const Array& gy = g.grad(self);
        Array* gr = g.grad_sink(ir);
        Array* gj = g.grad_sink(ij);
        std::vector<Mat3> g_rot(nj);
        std::vector<Vec3> g_t(nj);
        for (std::size_t j = 0; j < nj; ++j) {
          g_rot[j] = MapCMat3(gy.data() + 12 * j);
          g_t[j] = Eigen::Map<const Vec3>(gy.data() + 12 * j + 9);
        }
        for (std::size_t j = nj; j-- > 1;) {
          const std::size_t p = static_cast<std::size_t>(par[j]);
          const Mat3 rp = MapCMat3(world.data() + 12 * p);
          const Mat3 r = MapCMat3(rv.data() + 9 * j);
          const Vec3 bone = Eigen::Map<const Vec3>(jv.data() + 3 * j) - Eigen::Map<const Vec3>(jv.data() + 3 * p);
          if (gr) MapMat3(gr->data() + 9 * j) += rp.transpose() * g_rot[j];
          g_rot[p] += g_rot[j] * r.transpose() + g_t[j] * bone.transpose();
          g_t[p] += g_t[j];
          if (gj) {
            const Vec3 d = rp.transpose() * g_t[j];
            Eigen::Map<Vec3>(gj->data() + 3 * j) += d;
            Eigen::Map<Vec3>(gj->data() + 3 * p) -= d;
          }
        }
        if (gr) MapMat3(gr->data()) += g_rot[0];
        if (gj) Eigen::Map<Vec3>(gj->data()) += g_t[0];
      });
}

Tensor skinning_transforms(Tensor world, Tensor rest_joints) {
  const Array& wv = world.value();
  const Array& jv = rest_joints.value();
  expect_cols("skinning_transforms", wv, 12);
  expect_cols("skinning_transforms", jv, 3);
  const std::size_t nj = wv.dim(0);
  if (jv.dim(0) != nj) throw ShapeError("skinning_transforms: " + to_string(wv.shape()) + " vs " + to_string(jv.shape()));
  Array out = wv;
  for (std::size_t j = 0; j < nj; ++j) {
    const Mat3 r = MapCMat3(wv.data() + 12 * j);
    const Vec3 rest = Eigen::Map<const Vec3>(jv.data() + 3 * j);
    Eigen::Map<Vec3>(out.data() + 12 * j + 9) -= r * rest;
  }
  const NodeId iw = world.id(), ij = rest_joints.id();
  return world.graph().record(std::move(out), {world, rest_joints}, "skinning_transforms", [iw, ij, nj](Graph& g, NodeId self) {
    const Array& wv = g.value(iw);
    const Array& jv = g.value(ij);
    const Array& gy = g.grad(self);
    Array* gw = g.grad_sink(iw);
    Array* gj = g.grad_sink(ij);
    for (std::size_t j = 0; j < nj; ++j) {
      const Vec3 gt = Eigen::Map<const Vec3>(gy.data() + 12 * j + 9);
      const Vec3 rest = Eigen::Map<const Vec3>(jv.data() + 3 * j);
      if (gw) {
        for (int k = 0; k < 12; ++k) (*gw)[12 * j + k] += gy[12 * j + k];
        MapMat3(gw->data() + 12 * j) -= gt * rest.transpose();
      }
      if (gj) {
        const Mat3 r = MapCMat3(wv.data() + 12 * j);
        Eigen::Map<Vec3>(gj->data() + 3 * j) -= r.transpose() * gt;
      }
    }
  });
}

Tensor linear_blend_skinning(Tensor transforms, Tensor points, const SparseSkinning& skinning) {
  const Array& tv = transforms.value();
  const Array& pv = points.value();
  expect_cols("linear_blend_skinning", tv, 12);
  expect_cols("linear_blend_skinning", pv, 3);
  const std::size_t n = pv.dim(0);
  if (skinning.joints.size() != n || skinning.weights.size() != n)
    throw ShapeError("linear_blend_skinning: " + std::to_string(skinning.joints.size()) + " weight rows for " +
                     to_string(pv.shape()) + " points");
  Array out({n, 3});
  for (std::size_t i = 0; i < n; ++i) {
    const double* p = pv.data() + 3 * i;
    double* o = out.data() + 3 * i;
    for (int s = 0; s < 4; ++s) {
      const double w = skinning.weights[i][s];
      if (w == 0.0) continue;
      const double* a = tv.data() + 12 * static_cast<std::size_t>(skinning.joints[i][s]);
      for (int r = 0; r < 3; ++r) o[r] += w * (a[3 * r] * p[0] + a[3 * r + 1] * p[1] + a[3 * r + 2] * p[2] + a[9 + r]);
    }
  }
  const NodeId it = transforms.id(), ip = points.id();
  return transforms.graph().record(
      std::move(out), {transforms, points}, "linear_blend_skinning", [it, ip, n, &skinning](Graph& g, NodeId self) {
        const Array& tv = g.value(it);
        const Array& pv = g.value(ip);
        const Array& gy = g.grad(self);
        Array* gt = g.grad_sink(it);
        Array* gp = g.grad_sink(ip);
        for (std::size_t i = 0; i < n; ++i) {
          const double* p = pv.data() + 3 * i;
          const double* go = gy.data() + 3 * i;
          for (int s = 0; s < 4; ++s) {
            const double w = skinning.weights[i][s];
            if (w == 0.0) continue;
            const std::size_t j = static_cast<std::size_t>(skinning.joints[i][s]);
            if (gt) {
              double* d = gt->data() + 12 * j;
              for (int r = 0; r < 3; ++r) {
                for (int c = 0; c < 3; ++c) d[3 * r + c] += w * go[r] * p[c];
                d[9 + r] += w * go[r];
              }
            }
            if (gp) {
              const double* a = tv.data() + 12 * j;
              double* d = gp->data() + 3 * i;
              for (int c = 0; c < 3; ++c) d[c] += w * (a[c] * go[0] + a[3 + c] * go[1] + a[6 + c] * go[2]);
            }
          }
        }
      });
}

Tensor project_points(Tensor points, const Camera& camera, double min_depth, std::vector<bool>* valid) {
  const Array& pv = points.value();
  expect_cols("project_points", pv, 3);
  const std::size_t n = pv.dim(0);
  Array out({n, 2});
  std::vector<bool> keep(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* p = pv.data() + 3 * i;
    keep[i] = p[2] > min_depth;
    if (!keep[i]) continue;
    out[2 * i] = camera.focal * p[0] / p[2] + camera.principal.x();
    out[2 * i + 1] = camera.focal * p[1] / p[2] + camera.principal.y();
  }
  if (valid) *valid = keep;
  const NodeId ip = points.id();
  const double f = camera.focal;
  return points.graph().record(std::move(out), {points}, "project_points", [ip, n, f, keep](Graph& g, NodeId self) {
    Array* gp = g.grad_sink(ip);
    if (!gp) return;
    const Array& pv = g.value(ip);
    const Array& gy = g.grad(self);
    for (std::size_t i = 0; i < n; ++i) {
      if (!keep[i]) continue;
      const double* p = pv.data() + 3 * i;
      const double inv_z = 1.0 / p[2];
      const double gu = gy[2 * i], gv = gy[2 * i + 1];
      (*gp)[3 * i] += gu * f * inv_z;
      (*gp)[3 * i + 1] += gv * f * inv_z;
      (*gp)[3 * i + 2] -= (gu * p[0] + gv * p[1]) * f * inv_z * inv_z;
    }
  });
}

Tensor backproject_points(Tensor pixels, Tensor depths, const Camera& camera) {
  const Array& cv = pixels.value();
  const Array& dv = depths.value();
  expect_cols("backproject_points", cv, 2);
  expect_cols("backproject_points", dv, 1);
  const std::size_t n = cv.dim(0);
  if (dv.dim(0) != n) throw ShapeError("backproject_points: " + to_string(cv.shape()) + " vs " + to_string(dv.shape()));
  Array out({n, 3});
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 t = backproject(camera, Vec2(cv[2 * i], cv[2 * i + 1]), dv[i]);
    for (int k = 0; k < 3; ++k) out[3 * i + k] = t[k];
  }
  const NodeId ic = pixels.id(), id = depths.id();
  const double f = camera.focal, pu = camera.principal.x(), pv = camera.principal.y();
  return pixels.graph().record(std::move(out), {pixels, depths}, "backproject_points", [ic, id, n, f, pu, pv](Graph& g, NodeId self) {
    const Array& cv = g.value(ic);
    const Array& dv = g.value(id);
    const Array& gy = g.grad(self);
    Array* gc = g.grad_sink(ic);
    Array* gd = g.grad_sink(id);
    for (std::size_t i = 0; i < n; ++i) {
      const double gx = gy[3 * i], gyy = gy[3 * i + 1], gz = gy[3 * i + 2];
      if (gc) {
        (*gc)[2 * i] += gx * dv[i] / f;
        (*gc)[2 * i + 1] += gyy * dv[i] / f;
      }
      if (gd) (*gd)[i] += gx * (cv[2 * i] - pu) / f + gyy * (cv[2 * i + 1] - pv) / f + gz;
    }
  });
}

}  // namespace mhmr::nn

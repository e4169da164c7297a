#include "mhmr/body_model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <stdexcept>

#include "mhmr/errors.hpp"
#include "mhmr/io.hpp"
#include "mhmr/nn/ops.hpp"

namespace mhmr {

namespace {

constexpr int kRing = 8;
constexpr int kFullJoints = 53;

enum class Side { Center, Left, Right };

struct JointSpec {
  std::string name;
  int parent;  // canonical index
  Vec3 pos;    // rest position, pelvis at the origin
  double radius;
};

Side side_of(const std::string& name) {
  if (name.rfind("L_", 0) == 0) return Side::Left;
  if (name.rfind("R_", 0) == 0) return Side::Right;
  return Side::Center;
}

std::string counterpart(const std::string& name) {
  switch (side_of(name)) {
    case Side::Left: return "R_" + name.substr(2);
    case Side::Right: return "L_" + name.substr(2);
    case Side::Center: return name;
  }
  return name;
}

Vec3 mirrored(const Vec3& p) { return {-p.x(), p.y(), p.z()}; }

// Canonical whole-body skeleton: pelvis, 21 body joints, jaw, 15 joints per hand.
std::vector<JointSpec> canonical_skeleton() {
  std::vector<JointSpec> s;
  auto add = [&](std::string name, int parent, Vec3 pos, double radius) {
    s.push_back({std::move(name), parent, pos, radius});
  };
  auto pair = [&](const std::string& base, int lparent, int rparent, Vec3 pos, double radius) {
    add("L_" + base, lparent, pos, radius);
    add("R_" + base, rparent, mirrored(pos), radius);
  };
  add("pelvis", -1, {0, 0, 0}, 0.13);
  pair("hip", 0, 0, {0.09, 0.07, 0.0}, 0.08);
  add("spine1", 0, {0, -0.12, 0.01}, 0.12);
  pair("knee", 1, 2, {0.10, 0.47, 0.01}, 0.05);
  add("spine2", 3, {0, -0.25, 0.01}, 0.12);
  pair("ankle", 4, 5, {0.10, 0.87, 0.03}, 0.04);
  add("spine3", 6, {0, -0.37, 0.0}, 0.12);
  pair("foot", 7, 8, {0.11, 0.93, -0.09}, 0.03);
  add("neck", 9, {0, -0.52, 0.01}, 0.05);
  pair("collar", 9, 9, {0.07, -0.46, 0.0}, 0.05);
  add("head", 12, {0, -0.64, -0.01}, 0.09);
  pair("shoulder", 13, 14, {0.17, -0.47, 0.0}, 0.05);
  pair("elbow", 16, 17, {0.36, -0.30, 0.0}, 0.04);
  pair("wrist", 18, 19, {0.53, -0.13, 0.0}, 0.03);
  add("jaw", 15, {0, -0.60, -0.06}, 0.04);

  const Vec3 wrist(0.53, -0.13, 0.0);
  const Vec3 u = (wrist - Vec3(0.36, -0.30, 0.0)).normalized();
  const Vec3 front(0, 0, -1);
  const char* fingers[5] = {"index", "middle", "pinky", "ring", "thumb"};
  const double spread[5] = {0.03, 0.01, -0.03, -0.01, 0.0};
  const double lengths[3] = {0.032, 0.024, 0.02};
  for (int hand = 0; hand < 2; ++hand) {
    const bool left = hand == 0;
    const int wrist_idx = left ? 20 : 21;
    for (int f = 0; f < 5; ++f) {
      Vec3 base, dir;
      if (f == 4) {
        base = wrist + 0.03 * u + 0.04 * front;
        dir = (u + 0.7 * front).normalized();
      } else {
        base = wrist + 0.085 * u + spread[f] * front;
        dir = u;
      }
      Vec3 p = base;
      for (int k = 0; k < 3; ++k) {
        const std::string name = std::string(left ? "L_" : "R_") + fingers[f] + std::to_string(k + 1);
        const int parent = k == 0 ? wrist_idx : static_cast<int>(s.size()) - 1;
        add(name, parent, left ? p : mirrored(p), 0.009);
        p += lengths[k] * dir;
      }
    }
  }
  return s;
}

// Joints kept for a reduced skeleton, most important first; left/right
// pairs stay adjacent.
std::vector<int> joint_priority() {
  std::vector<int> order = {0, 15, 1, 2, 16, 17, 4, 5, 18, 19, 20, 21, 22, 6, 7, 8, 12, 3, 9, 13, 14, 10, 11};
  for (int level = 0; level < 3; ++level)
    for (int f = 0; f < 5; ++f)
      for (int hand = 0; hand < 2; ++hand) order.push_back(23 + 15 * hand + 3 * f + level);
  return order;
}

struct Selection {
  std::vector<int> canonical;  // local -> canonical
  std::vector<int> parents;    // local
  std::vector<std::string> names;
};

Selection select_joints(int count) {
  const auto skel = canonical_skeleton();
  auto order = joint_priority();
  order.resize(static_cast<std::size_t>(count));
  std::sort(order.begin(), order.end());
  Selection sel;
  sel.canonical = order;
  std::map<int, int> local;
  for (std::size_t i = 0; i < order.size(); ++i) local[order[i]] = static_cast<int>(i);
  for (int c : order) {
    int p = skel[c].parent;
    while (p >= 0 && !local.contains(p)) p = skel[p].parent;
    sel.parents.push_back(p < 0 ? -1 : local[p]);
    sel.names.push_back(skel[c].name);
  }
  return sel;
}

// Orthonormal pair spanning the plane normal to `dir`. Midline directions use
// the x axis so that the ring is its own mirror image.
std::pair<Vec3, Vec3> ring_basis(const Vec3& dir, bool midline) {
  const Vec3 d = dir.normalized();
  Vec3 e1;
  if (midline) {
    e1 = Vec3::UnitX();
  } else {
    const Vec3 ref = std::abs(d.z()) < 0.9 ? Vec3::UnitZ() : Vec3::UnitX();
    e1 = d.cross(ref).normalized();
  }
  return {e1, d.cross(e1)};
}

enum class Region { Body, Hand, Head };

struct Ring {
  Vec3 center;
  Vec3 dir;
  double radius;
  int a, b;  // skinning joints (local)
  double alpha;
  Region region;
  Side side;
  int first = -1;  // first vertex index
};

struct Builder {
  std::vector<Vec3> points;
  std::vector<Vec3> centers;
  std::vector<int> mirror;
  std::vector<std::array<int, 2>> skin_joints;
  std::vector<double> skin_alpha;
  std::vector<Region> region;
  std::vector<Side> side;

  void emit(Ring& r, const Ring* mirror_of = nullptr) {
    r.first = static_cast<int>(points.size());
    const bool midline = r.side == Side::Center;
    const auto [e1, e2] = ring_basis(r.dir, midline);
    for (int k = 0; k < kRing; ++k) {
      Vec3 p;
      int m;
      if (mirror_of) {
        p = mirrored(points[static_cast<std::size_t>(mirror_of->first + k)]);
        m = mirror_of->first + k;
        mirror[static_cast<std::size_t>(m)] = r.first + k;
      } else {
        const double phi = 2.0 * std::numbers::pi * k / kRing;
        p = r.center + r.radius * (std::cos(phi) * e1 + std::sin(phi) * e2);
        m = midline ? r.first + (kRing / 2 - k + kRing) % kRing : -1;
      }
      points.push_back(p);
      centers.push_back(r.center);
      mirror.push_back(m);
      skin_joints.push_back({r.a, r.b});
      skin_alpha.push_back(r.alpha);
      region.push_back(r.region);
      side.push_back(r.side);
    }
  }

  void emit_point(const Vec3& p, int joint) {
    points.push_back(p);
    centers.push_back(p);
    mirror.push_back(static_cast<int>(points.size()) - 1);
    skin_joints.push_back({joint, joint});
    skin_alpha.push_back(0.0);
    region.push_back(Region::Body);
    side.push_back(Side::Center);
  }
};

Vec3 smooth_field(const Vec3& p, const std::array<double, 7>& c) {
  const double sx = std::sin(c[0] * p.x()), cx = std::cos(c[0] * p.x());
  return {sx * std::cos(c[1] * p.y() + c[3]) * std::cos(c[2] * p.z() + c[6]),
          cx * std::sin(c[1] * p.y() + c[4]) * std::cos(c[2] * p.z() + c[6]),
          cx * std::cos(c[1] * p.y() + c[5]) * std::sin(c[2] * p.z() + c[6])};
}

void strip(std::vector<std::array<int, 3>>& faces, int a, int b) {
  for (int k = 0; k < kRing; ++k) {
    const int k1 = (k + 1) % kRing;
    faces.push_back({a + k, b + k, b + k1});
    faces.push_back({a + k, b + k1, a + k1});
  }
}

}  // namespace

BodyParams BodyParams::zeros(int joints, int shape_dims, int expression_dims) {
  return {Points3::Zero(joints, 3), Eigen::VectorXd::Zero(shape_dims), Eigen::VectorXd::Zero(expression_dims)};
}

std::vector<double> BodyParams::flatten() const {
  std::vector<double> out(pose.data(), pose.data() + pose.size());
  out.insert(out.end(), shape.data(), shape.data() + shape.size());
  out.insert(out.end(), expression.data(), expression.data() + expression.size());
  return out;
}

bool BodyParams::operator==(const BodyParams& o) const {
  return pose.rows() == o.pose.rows() && shape.size() == o.shape.size() && expression.size() == o.expression.size() &&
         pose == o.pose && shape == o.shape && expression == o.expression;
}

BodyModel BodyModel::make_toy(const BodyModelConfig& config) {
  const int V = config.vertices, J = config.joints;
  if (V < 100) throw std::invalid_argument("body model: need at least 100 vertices, got " + std::to_string(V));
  if (J < 4 || J > kFullJoints)
    throw std::invalid_argument("body model: joint count must be in [4, 53], got " + std::to_string(J));
  if (V < kRing * J)
    throw std::invalid_argument("body model: " + std::to_string(V) + " vertices cannot cover " + std::to_string(J) +
                                " joints (need " + std::to_string(kRing * J) + ")");
  if (config.shape_dims < 0 || config.expression_dims < 0)
    throw std::invalid_argument("body model: negative blendshape count");

  const auto skel = canonical_skeleton();
  const Selection sel = select_joints(J);

  BodyModel m;
  m.config_ = config;
  m.parents_ = sel.parents;
  m.names_ = sel.names;
  m.rest_joints_.resize(J, 3);
  std::vector<double> radius(J);
  std::vector<Side> jside(J);
  for (int j = 0; j < J; ++j) {
    m.rest_joints_.row(j) = skel[sel.canonical[j]].pos.transpose();
    radius[j] = skel[sel.canonical[j]].radius;
    jside[j] = side_of(sel.names[j]);
  }
  auto local = [&](const std::string& name) { return m.joint_index(name); };
  m.root_ = 0;
  m.primary_ = local("head");

  bool symmetric = true;
  for (int j = 0; j < J; ++j)
    if (local(counterpart(sel.names[j])) < 0) symmetric = false;

  auto pos = [&](int j) -> Vec3 { return m.rest_joints_.row(j).transpose(); };
  auto is_hand_joint = [&](int j) {
    const std::string& n = sel.names[j];
    return jside[j] != Side::Center && n.find("wrist") == std::string::npos && n.back() >= '1' && n.back() <= '3';
  };
  auto region_of = [&](int j) {
    if (is_hand_joint(j)) return Region::Hand;
    if (sel.names[j] == "head" || sel.names[j] == "jaw") return Region::Head;
    return Region::Body;
  };
  auto bone_dir = [&](int j) -> Vec3 {
    const int p = m.parents_[j];
    return p < 0 ? Vec3(0, -1, 0) : Vec3(pos(j) - pos(p));
  };

  Builder b;
  // Rings are emitted left first; a right ring whose left twin exists is its mirror.
  std::vector<Ring> joint_rings(J);
  auto joint_ring = [&](int j) {
    const int p = m.parents_[j];
    return Ring{pos(j), bone_dir(j), radius[j], p < 0 ? j : p, j, p < 0 ? 0.0 : 0.5, region_of(j), jside[j]};
  };
  for (int j = 0; j < J; ++j) {
    if (jside[j] == Side::Right && symmetric) continue;
    joint_rings[j] = joint_ring(j);
    b.emit(joint_rings[j]);
    if (jside[j] == Side::Left && symmetric) {
      const int r = local(counterpart(sel.names[j]));
      joint_rings[r] = joint_ring(r);
      b.emit(joint_rings[r], &joint_rings[j]);
    }
  }

  // Optional rings in order of importance; each group is all or nothing.
  struct Candidate {
    std::vector<Ring> rings;  // [left, right] pairs or single rings
    bool paired;
    int chain_joint;  // ring chain this group extends (segment child or extension owner)
    double order;     // position along the chain
  };
  std::vector<Candidate> candidates;
  const int head = m.primary_;
  candidates.push_back({{Ring{pos(head) + Vec3(0, -0.07, 0), Vec3(0, -1, 0), 0.085, head, head, 0, Region::Head, Side::Center}},
                        false, -(head + 1), 1});
  candidates.push_back({{Ring{pos(head) + Vec3(0, -0.13, 0), Vec3(0, -1, 0), 0.05, head, head, 0, Region::Head, Side::Center}},
                        false, -(head + 1), 2});
  auto lateral = [&](const std::string& base, auto make, int chain_order) {
    const int l = local("L_" + base), r = local("R_" + base);
    for (int step = 0; step < 2; ++step) {
      std::vector<Ring> rings;
      int owner = -1;
      if (symmetric) {
        if (l < 0) return;
        rings = {make(l, step), make(r, step)};
        owner = l;
      } else {
        for (int j : {l, r})
          if (j >= 0) {
            candidates.push_back({{make(j, step)}, false, -(j + 1), double(chain_order + step)});
          }
        continue;
      }
      candidates.push_back({rings, true, -(owner + 1), double(chain_order + step)});
    }
  };
  auto has_fingers = [&](int wrist) {
    for (int j = 0; j < J; ++j)
      if (m.parents_[j] == wrist && is_hand_joint(j)) return true;
    return false;
  };
  {
    const int lw = local("L_wrist");
    if (lw >= 0 && !has_fingers(lw)) {
      lateral("wrist", [&](int w, int step) {
        const Vec3 u = bone_dir(w).normalized();
        const Side s = jside[w];
        return Ring{pos(w) + (step == 0 ? 0.06 : 0.11) * u, u, step == 0 ? 0.035 : 0.025, w, w, 0.0, Region::Hand, s};
      }, 1);
    }
    const int la = local("L_ankle");
    if (la >= 0 && local("L_foot") < 0) {
      lateral("ankle", [&](int a, int step) {
        const double sx = jside[a] == Side::Right ? -1.0 : 1.0;
        const Vec3 off = step == 0 ? Vec3(0.005 * sx, 0.05, -0.08) : Vec3(0.01 * sx, 0.055, -0.14);
        return Ring{pos(a) + off, Vec3(0, 0, -1), step == 0 ? 0.035 : 0.025, a, a, 0.0, Region::Body, jside[a]};
      }, 1);
    }
  }
  // Bone interior rings by refinement level, longest bones first.
  std::vector<int> bones;
  for (int j = 0; j < J; ++j)
    if (m.parents_[j] >= 0 && !(symmetric && jside[j] == Side::Right)) bones.push_back(j);
  std::stable_sort(bones.begin(), bones.end(), [&](int x, int y) { return bone_dir(x).norm() > bone_dir(y).norm(); });
  auto bone_ring = [&](int j, double s) {
    const int p = m.parents_[j];
    return Ring{pos(p) + s * bone_dir(j), bone_dir(j), radius[p] + s * (radius[j] - radius[p]), p, j, 0.5 * s * s,
                region_of(j), jside[j]};
  };
  for (int level = 1; level <= 5; ++level) {
    const int denom = 1 << level;
    for (int j : bones) {
      for (int k = 1; k < denom; k += 2) {
        const double s = double(k) / denom;
        if (symmetric && jside[j] == Side::Left) {
          const int r = local(counterpart(sel.names[j]));
          candidates.push_back({{bone_ring(j, s), bone_ring(r, s)}, true, j, s});
        } else {
          candidates.push_back({{bone_ring(j, s)}, false, j, s});
        }
      }
    }
  }

  int remaining = V - kRing * J;
  std::map<int, std::vector<std::pair<double, int>>> chains;  // chain key -> (order, ring first vertex)
  std::map<int, std::vector<std::pair<double, int>>> chains_right;
  for (auto& c : candidates) {
    const int cost = kRing * static_cast<int>(c.rings.size());
    if (cost > remaining) continue;
    remaining -= cost;
    b.emit(c.rings[0]);
    chains[c.chain_joint].push_back({c.order, c.rings[0].first});
    if (c.paired) {
      b.emit(c.rings[1], &c.rings[0]);
      chains_right[c.chain_joint].push_back({c.order, c.rings[1].first});
    }
  }

  // Midline filler on the torso surface.
  {
    std::vector<int> central;
    for (int j = 0; j < J; ++j)
      if (jside[j] == Side::Center) central.push_back(j);
    const double y0 = 0.0, y1 = pos(head).y() + 0.14;
    for (int i = 0; remaining > 0; ++i, --remaining) {
      const double frac = std::fmod(0.5 + i * 0.6180339887498949, 1.0);
      const Vec3 p(0.0, y0 + frac * (y1 - y0), (i % 2 == 0 ? -1.0 : 1.0) * 0.12);
      int best = central.front();
      for (int j : central)
        if ((pos(j) - p).norm() < (pos(best) - p).norm()) best = j;
      b.emit_point(p, best);
    }
  }

  // Faces: strips along each chain of rings.
  for (int pass = 0; pass < 2; ++pass) {
    auto& table = pass == 0 ? chains : chains_right;
    for (int j = 0; j < J; ++j) {
      if (pass == 1 && !(symmetric && jside[j] == Side::Left)) continue;
      if (pass == 0 && symmetric && jside[j] == Side::Right) continue;
      const int target = pass == 0 ? j : local(counterpart(sel.names[j]));
      // Bone chain into joint j.
      if (m.parents_[target] >= 0) {
        std::vector<std::pair<double, int>> seq = {{0.0, joint_rings[m.parents_[target]].first}};
        if (auto it = table.find(j); it != table.end()) seq.insert(seq.end(), it->second.begin(), it->second.end());
        seq.push_back({1.0, joint_rings[target].first});
        std::sort(seq.begin(), seq.end());
        for (std::size_t k = 0; k + 1 < seq.size(); ++k) strip(m.faces_, seq[k].second, seq[k + 1].second);
      }
      // Extension chain beyond joint j.
      if (auto it = table.find(-(j + 1)); it != table.end()) {
        auto seq = it->second;
        seq.push_back({0.0, joint_rings[target].first});
        std::sort(seq.begin(), seq.end());
        for (std::size_t k = 0; k + 1 < seq.size(); ++k) strip(m.faces_, seq[k].second, seq[k + 1].second);
      }
    }
  }

  if (static_cast<int>(b.points.size()) != V) throw std::logic_error("body model: vertex budget mismatch");

  // Exact mirror symmetry of the template.
  auto symmetrize = [&](std::vector<Vec3>& field) {
    for (int i = 0; i < V; ++i) {
      const int k = b.mirror[i];
      if (k == i) field[i].x() = 0.0;
      else if (k > i) field[k] = mirrored(field[i]);
    }
  };
  if (symmetric) symmetrize(b.points);

  m.template_.resize(V, 3);
  for (int i = 0; i < V; ++i) m.template_.row(i) = b.points[i].transpose();

  // Skin weights.
  m.skin_weights_ = nn::Array({std::size_t(V), std::size_t(J)});
  for (int i = 0; i < V; ++i) {
    const auto [ja, jb] = b.skin_joints[i];
    const double al = b.skin_alpha[i];
    m.skin_weights_(i, ja) += 1.0 - al;
    m.skin_weights_(i, jb) += al;
  }

  // Regressor: mean of each joint's ring.
  m.regressor_ = nn::Array({std::size_t(J), std::size_t(V)});
  for (int j = 0; j < J; ++j)
    for (int k = 0; k < kRing; ++k) m.regressor_(j, joint_rings[j].first + k) = 1.0 / kRing;

  // Parts.
  const double face_z = pos(head).z() - 0.01;
  m.parts_.resize(V);
  for (int i = 0; i < V; ++i) {
    BodyPart part = BodyPart::Body;
    if (b.region[i] == Region::Hand) part = b.points[i].x() > 0 ? BodyPart::LeftHand : BodyPart::RightHand;
    else if (b.region[i] == Region::Head && b.points[i].z() < face_z) part = BodyPart::Face;
    m.parts_[i] = part;
  }

  // Blendshapes.
  std::mt19937_64 rng(config.seed);
  std::uniform_real_distribution<double> freq(2.0, 8.0), phase(0.0, 2.0 * std::numbers::pi);
  auto random_coeffs = [&] {
    std::array<double, 7> c{};
    for (int k = 0; k < 3; ++k) c[k] = freq(rng);
    for (int k = 3; k < 7; ++k) c[k] = phase(rng);
    return c;
  };
  const int B = config.shape_dims, Be = config.expression_dims;
  m.shape_dirs_ = nn::Array({std::size_t(3 * V), std::size_t(B)});
  for (int k = 0; k < B; ++k) {
    std::vector<Vec3> d(V);
    const auto c = random_coeffs();
    for (int i = 0; i < V; ++i) {
      const Vec3& p = b.points[i];
      switch (k) {
        case 0: d[i] = {0, 0.1 * p.y(), 0}; break;
        case 1: d[i] = {0.15 * p.x(), 0, 0}; break;
        case 2: d[i] = 0.3 * (p - b.centers[i]); break;
        default: d[i] = 0.03 * smooth_field(p, c); break;
      }
    }
    if (symmetric) symmetrize(d);
    for (int i = 0; i < V; ++i)
      for (int a = 0; a < 3; ++a) m.shape_dirs_(3 * i + a, k) = d[i][a];
  }
  m.expr_dirs_ = nn::Array({std::size_t(3 * V), std::size_t(Be)});
  for (int k = 0; k < Be; ++k) {
    std::vector<Vec3> d(V, Vec3::Zero());
    const auto c = random_coeffs();
    for (int i = 0; i < V; ++i)
      if (m.parts_[i] == BodyPart::Face) d[i] = 0.01 * smooth_field(b.points[i] * 4.0, c);
    if (symmetric) symmetrize(d);
    for (int i = 0; i < V; ++i)
      for (int a = 0; a < 3; ++a) m.expr_dirs_(3 * i + a, k) = d[i][a];
  }

  if (symmetric) {
    m.mirror_vertices_ = b.mirror;
    m.mirror_joints_.resize(J);
    for (int j = 0; j < J; ++j) m.mirror_joints_[j] = local(counterpart(sel.names[j]));
  }
  m.finalize();
  return m;
}

void BodyModel::finalize() {
  const int V = config_.vertices, J = config_.joints;
  template_flat_ = nn::Array({std::size_t(3 * V), 1}, std::vector<double>(template_.data(), template_.data() + 3 * V));
  rest_joints_arr_ = nn::Array({std::size_t(J), 3}, std::vector<double>(rest_joints_.data(), rest_joints_.data() + 3 * J));
  sparse_.joints.assign(V, {0, 0, 0, 0});
  sparse_.weights.assign(V, {0, 0, 0, 0});
  for (int i = 0; i < V; ++i) {
    int n = 0;
    double total = 0;
    for (int j = 0; j < J; ++j) {
      const double w = skin_weights_(i, j);
      if (w < 0) throw std::invalid_argument("body model: negative skin weight");
      if (w == 0) continue;
      if (n == 4) throw std::invalid_argument("body model: more than four skin weights on a vertex");
      sparse_.joints[i][n] = j;
      sparse_.weights[i][n] = w;
      total += w;
      ++n;
    }
    if (std::abs(total - 1.0) > 1e-6) throw std::invalid_argument("body model: skin weights do not sum to 1");
  }
  for (int j = 0; j < J; ++j) {
    if (j == 0 ? parents_[j] != -1 : (parents_[j] < 0 || parents_[j] >= j))
      throw std::invalid_argument("body model: parents must form a tree rooted at joint 0");
    double total = 0;
    for (int i = 0; i < V; ++i) total += regressor_(j, i);
    if (std::abs(total - 1.0) > 1e-6) throw std::invalid_argument("body model: regressor rows must sum to 1");
  }
}

int BodyModel::joint_index(const std::string& name) const {
  auto it = std::find(names_.begin(), names_.end(), name);
  return it == names_.end() ? -1 : static_cast<int>(it - names_.begin());
}

std::vector<int> BodyModel::lsp_joints() const {
  std::vector<int> out;
  for (const char* n : {"head", "neck", "L_shoulder", "R_shoulder", "L_elbow", "R_elbow", "L_wrist", "R_wrist", "L_hip",
                        "R_hip", "L_knee", "R_knee", "L_ankle", "R_ankle"})
    if (int j = joint_index(n); j >= 0) out.push_back(j);
  return out;
}

void BodyModel::check(const BodyParams& p) const {
  if (p.pose.rows() != config_.joints || p.shape.size() != config_.shape_dims ||
      p.expression.size() != config_.expression_dims)
    throw ShapeError("body params: expected pose " + std::to_string(config_.joints) + "x3, shape " +
                     std::to_string(config_.shape_dims) + ", expression " + std::to_string(config_.expression_dims) +
                     "; got " + std::to_string(p.pose.rows()) + "x3, " + std::to_string(p.shape.size()) + ", " +
                     std::to_string(p.expression.size()));
  if (!p.pose.allFinite() || !p.shape.allFinite() || !p.expression.allFinite())
    throw std::invalid_argument("body params: non-finite value");
}

BodyModel::TensorOutput BodyModel::forward(nn::Graph& g, nn::Tensor rotmats, nn::Tensor shape,
                                           nn::Tensor expression) const {
  const std::size_t V = config_.vertices, J = config_.joints, B = config_.shape_dims, Be = config_.expression_dims;
  if (rotmats.shape() != nn::Shape{J, 9})
    throw ShapeError("body forward: rotations must be " + std::to_string(J) + " x 9, got " + nn::to_string(rotmats.shape()));
  if (shape.size() != B || expression.size() != Be) throw ShapeError("body forward: blendshape coefficient count");
  nn::Tensor shaped = g.constant_ref(template_flat_);
  if (B > 0) shaped = nn::add(shaped, nn::matmul(g.constant_ref(shape_dirs_), nn::reshape(shape, {B, 1})));
  if (Be > 0) shaped = nn::add(shaped, nn::matmul(g.constant_ref(expr_dirs_), nn::reshape(expression, {Be, 1})));
  shaped = nn::reshape(shaped, {V, 3});
  const nn::Tensor joints_rest = nn::matmul(g.constant_ref(regressor_), shaped);
  const nn::Tensor world = nn::forward_kinematics(rotmats, joints_rest, parents_);
  const nn::Tensor transforms = nn::skinning_transforms(world, joints_rest);
  const nn::Tensor verts = nn::linear_blend_skinning(transforms, shaped, sparse_);
  const nn::Tensor joints = nn::slice(world, 1, 9, 12);
  const std::size_t h = static_cast<std::size_t>(primary_);
  const nn::Tensor anchor = nn::reshape(nn::slice(joints, 0, h, h + 1), {3});
  return {nn::sub(verts, anchor), nn::sub(joints, anchor)};
}

namespace {

Points3 to_points(const nn::Array& a) {
  Points3 p(static_cast<Eigen::Index>(a.dim(0)), 3);
  std::copy(a.data(), a.data() + a.size(), p.data());
  return p;
}

}  // namespace

BodyModel::Output BodyModel::forward(const BodyParams& params) const {
  check(params);
  const std::size_t J = config_.joints;
  nn::Graph g(nullptr, false);
  const nn::Tensor aa =
      g.constant(nn::Array({J, 3}, std::vector<double>(params.pose.data(), params.pose.data() + params.pose.size())));
  const nn::Tensor beta = g.constant(nn::Array({std::size_t(params.shape.size())},
                                               std::vector<double>(params.shape.data(), params.shape.data() + params.shape.size())));
  const nn::Tensor alpha = g.constant(nn::Array(
      {std::size_t(params.expression.size())},
      std::vector<double>(params.expression.data(), params.expression.data() + params.expression.size())));
  const TensorOutput out = forward(g, nn::axis_angle_to_rotmat(aa), beta, alpha);
  return {to_points(out.vertices.value()), to_points(out.joints.value())};
}

BodyParams BodyModel::mean_params() const {
  return BodyParams::zeros(config_.joints, config_.shape_dims, config_.expression_dims);
}

BodyParams BodyModel::mirror(const BodyParams& params) const {
  check(params);
  if (!symmetric()) throw std::logic_error("body model: mirroring needs a left/right symmetric skeleton");
  BodyParams out = params;
  for (int j = 0; j < config_.joints; ++j) {
    const auto src = params.pose.row(mirror_joints_[j]);
    out.pose.row(j) << src(0), -src(1), -src(2);
  }
  return out;
}

void BodyModel::save_blob(const std::filesystem::path& path) const {
  io::BinaryWriter w(path);
  for (int v : {config_.vertices, config_.joints, config_.shape_dims, config_.expression_dims})
    w.u32(static_cast<std::uint32_t>(v));
  auto put = [&](const double* d, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) w.f32(static_cast<float>(d[i]));
  };
  const std::size_t V = config_.vertices, J = config_.joints;
  put(template_.data(), 3 * V);
  for (int p : parents_) w.f32(static_cast<float>(p));
  put(rest_joints_.data(), 3 * J);
  put(skin_weights_.data(), skin_weights_.size());
  put(shape_dirs_.data(), shape_dirs_.size());
  put(expr_dirs_.data(), expr_dirs_.size());
  put(regressor_.data(), regressor_.size());
  w.f32(static_cast<float>(primary_));
  w.f32(static_cast<float>(root_));
  for (BodyPart p : parts_) w.f32(static_cast<float>(p));
  w.close();
}

BodyModel BodyModel::load_blob(const std::filesystem::path& path) {
  io::BinaryReader r(path);
  BodyModel m;
  m.config_.vertices = static_cast<int>(r.u32());
  m.config_.joints = static_cast<int>(r.u32());
  m.config_.shape_dims = static_cast<int>(r.u32());
  m.config_.expression_dims = static_cast<int>(r.u32());
  const std::size_t V = m.config_.vertices, J = m.config_.joints, B = m.config_.shape_dims,
                    Be = m.config_.expression_dims;
  if (V > (1u << 24) || J < 1 || J > kFullJoints || B > 4096 || Be > 4096)
    throw FormatError(path.string() + ": implausible body model header");
  auto get = [&](double* d, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) d[i] = r.f32();
  };
  m.template_.resize(static_cast<Eigen::Index>(V), 3);
  get(m.template_.data(), 3 * V);
  m.parents_.resize(J);
  for (auto& p : m.parents_) p = static_cast<int>(r.f32());
  m.rest_joints_.resize(static_cast<Eigen::Index>(J), 3);
  get(m.rest_joints_.data(), 3 * J);
  m.skin_weights_ = nn::Array({V, J});
  get(m.skin_weights_.data(), V * J);
  m.shape_dirs_ = nn::Array({3 * V, B});
  get(m.shape_dirs_.data(), 3 * V * B);
  m.expr_dirs_ = nn::Array({3 * V, Be});
  get(m.expr_dirs_.data(), 3 * V * Be);
  m.regressor_ = nn::Array({J, V});
  get(m.regressor_.data(), J * V);
  m.primary_ = static_cast<int>(r.f32());
  m.root_ = static_cast<int>(r.f32());
  m.parts_.resize(V);
  for (auto& p : m.parts_) p = static_cast<BodyPart>(static_cast<int>(r.f32()));
  // Float rounding can leave rows a few ulps off; renormalize.
  for (std::size_t i = 0; i < V; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < J; ++j) s += m.skin_weights_(i, j);
    if (s > 0)
      for (std::size_t j = 0; j < J; ++j) m.skin_weights_(i, j) /= s;
  }
  for (std::size_t j = 0; j < J; ++j) {
    double s = 0;
    for (std::size_t i = 0; i < V; ++i) s += m.regressor_(j, i);
    if (s > 0)
      for (std::size_t i = 0; i < V; ++i) m.regressor_(j, i) /= s;
  }
  m.names_ = select_joints(static_cast<int>(J)).names;
  m.finalize();
  return m;
}

Points3 place(const Points3& vertices, const Vec3& t) {
  Points3 out = vertices;
  out.rowwise() += t.transpose();
  return out;
}

void write_obj(const std::filesystem::path& path, const Points3& vertices, const std::vector<std::array<int, 3>>& faces) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.precision(9);
  for (Eigen::Index i = 0; i < vertices.rows(); ++i)
    out << "v " << vertices(i, 0) << ' ' << vertices(i, 1) << ' ' << vertices(i, 2) << '\n';
  for (const auto& f : faces) out << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace mhmr

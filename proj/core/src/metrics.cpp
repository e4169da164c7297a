#include "mhmr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "json.hpp"

namespace mhmr {

namespace {

// Rows are assigned to distinct columns; rows <= columns.
std::vector<int> hungarian(const std::vector<std::vector<double>>& cost) {
  const std::size_t n = cost.size(), m = n ? cost[0].size() : 0;
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<bool> used(m + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> assignment(n, -1);
  for (std::size_t j = 1; j <= m; ++j)
    if (p[j] != 0) assignment[p[j] - 1] = static_cast<int>(j - 1);
  return assignment;
}

double sorted_mean(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  double s = 0.0;
  for (double v : values) s += v;
  return s / static_cast<double>(values.size());
}

std::optional<double> mean_or_none(const std::vector<double>& values) {
  if (values.empty()) return std::nullopt;
  return sorted_mean(values);
}

Points3 centered(const Points3& points, const Vec3& root) {
  Points3 out = points;
  out.rowwise() -= root.transpose();
  return out;
}

Points3 rows_of(const Points3& points, const std::vector<int>& subset) {
  Points3 out(static_cast<Eigen::Index>(subset.size()), 3);
  for (std::size_t k = 0; k < subset.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = points.row(subset[k]);
  return out;
}

int sign_with_tie(double d) {
  if (std::abs(d) < kDepthTie) return 0;
  return d > 0 ? 1 : -1;
}

}  // namespace

Matching match_people(const std::vector<Vec2>& preds, const std::vector<Vec2>& gts, double threshold) {
  if (!(threshold > 0.0)) throw std::invalid_argument("matching threshold must be positive");
  Matching out;
  const std::size_t np = preds.size(), ng = gts.size();
  if (np > 0 && ng > 0) {
    const bool transpose = np > ng;
    const std::size_t rows = transpose ? ng : np, cols = transpose ? np : ng;
    // Any over-threshold pair costs more than every valid pair together, so
    // the optimum first maximizes the number of valid pairs.
    const double big = threshold * static_cast<double>(rows + 1) + 1.0;
    std::vector<std::vector<double>> cost(rows, std::vector<double>(cols));
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) {
        const std::size_t pi = transpose ? c : r, gi = transpose ? r : c;
        const double d = (preds[pi] - gts[gi]).norm();
        cost[r][c] = d <= threshold ? d : big;
      }
    const auto assign = hungarian(cost);
    for (std::size_t r = 0; r < rows; ++r) {
      const int c = assign[r];
      if (c < 0 || cost[r][static_cast<std::size_t>(c)] >= big) continue;
      const int pi = transpose ? c : static_cast<int>(r), gi = transpose ? static_cast<int>(r) : c;
      out.pairs.emplace_back(pi, gi);
    }
    std::sort(out.pairs.begin(), out.pairs.end());
  }
  std::vector<bool> pm(np, false), gm(ng, false);
  for (auto [p, g] : out.pairs) pm[p] = gm[g] = true;
  for (std::size_t i = 0; i < np; ++i)
    if (!pm[i]) out.unmatched_preds.push_back(static_cast<int>(i));
  for (std::size_t i = 0; i < ng; ++i)
    if (!gm[i]) out.unmatched_gts.push_back(static_cast<int>(i));
  return out;
}

std::optional<double> pve(const Points3& pred_vertices, const Points3& pred_joints, const Points3& gt_vertices,
                          const Points3& gt_joints, const BodyModel& model, Align align, Part part) {
  if (pred_vertices.rows() != gt_vertices.rows() || pred_vertices.rows() != model.num_vertices())
    throw std::invalid_argument("pve: vertex counts differ");
  const int root = model.root_joint();
  Points3 pred = centered(pred_vertices, pred_joints.row(root).transpose());
  const Points3 gt = centered(gt_vertices, gt_joints.row(root).transpose());
  if (align == Align::Procrustes) pred = procrustes_align(pred, gt).apply(pred);
  std::vector<double> errors;
  const auto& labels = model.part_labels();
  for (Eigen::Index i = 0; i < pred.rows(); ++i) {
    const BodyPart l = labels[static_cast<std::size_t>(i)];
    const bool keep = part == Part::All || (part == Part::Face && l == BodyPart::Face) ||
                      (part == Part::Hands && (l == BodyPart::LeftHand || l == BodyPart::RightHand));
    if (keep) errors.push_back((pred.row(i) - gt.row(i)).norm());
  }
  if (errors.empty()) return std::nullopt;
  return 1000.0 * sorted_mean(errors);
}

double mpjpe(const Points3& pred_joints, const Points3& gt_joints, const std::vector<int>& subset, int root,
             Align align) {
  if (subset.empty()) throw std::invalid_argument("mpjpe: empty joint subset");
  Points3 pred = rows_of(centered(pred_joints, pred_joints.row(root).transpose()), subset);
  const Points3 gt = rows_of(centered(gt_joints, gt_joints.row(root).transpose()), subset);
  if (align == Align::Procrustes) pred = procrustes_align(pred, gt).apply(pred);
  std::vector<double> errors;
  for (Eigen::Index i = 0; i < pred.rows(); ++i) errors.push_back((pred.row(i) - gt.row(i)).norm());
  return 1000.0 * sorted_mean(errors);
}

double pck3d(const Points3& pred_joints, const Points3& gt_joints, const std::vector<int>& subset, int root,
             double threshold) {
  if (subset.empty()) throw std::invalid_argument("pck3d: empty joint subset");
  const Points3 pred = rows_of(centered(pred_joints, pred_joints.row(root).transpose()), subset);
  const Points3 gt = rows_of(centered(gt_joints, gt_joints.row(root).transpose()), subset);
  std::size_t hits = 0;
  for (Eigen::Index i = 0; i < pred.rows(); ++i)
    if ((pred.row(i) - gt.row(i)).norm() < threshold) ++hits;
  return static_cast<double>(hits) / static_cast<double>(subset.size());
}

double mrpe(const Vec3& pred_root, const Vec3& gt_root) { return 1000.0 * (pred_root - gt_root).norm(); }

PcodCount pcod_count(const std::vector<double>& pred, const std::vector<double>& gt) {
  if (pred.size() != gt.size()) throw std::invalid_argument("pcod: depth lists differ in length");
  PcodCount c;
  for (std::size_t a = 0; a < pred.size(); ++a)
    for (std::size_t b = a + 1; b < pred.size(); ++b) {
      ++c.pairs;
      if (sign_with_tie(pred[a] - pred[b]) == sign_with_tie(gt[a] - gt[b])) ++c.correct;
    }
  return c;
}

std::optional<double> pcod(const std::vector<double>& pred, const std::vector<double>& gt) {
  const PcodCount c = pcod_count(pred, gt);
  if (c.pairs == 0) return std::nullopt;
  return static_cast<double>(c.correct) / static_cast<double>(c.pairs);
}

MetricAccumulator::MetricAccumulator(const BodyModel& model, double match_threshold)
    : model_(&model), threshold_(match_threshold) {
  if (!(match_threshold > 0.0)) throw std::invalid_argument("matching threshold must be positive");
}

void MetricAccumulator::add(const std::vector<PersonPrediction>& preds, const std::vector<ScenePerson>& gts,
                            const Camera& camera) {
  std::vector<Vec2> pp, gp;
  for (const auto& p : preds) pp.push_back(p.coords);
  for (const auto& g : gts) gp.push_back(project(camera, g.location));
  const Matching m = match_people(pp, gp, threshold_);
  preds_ += preds.size();
  gts_ += gts.size();
  matched_ += m.pairs.size();
  const BodyModel& model = *model_;
  const int root = model.root_joint();
  const auto lsp = model.lsp_joints();
  std::vector<double> pd, gd;
  for (auto [pi, gi] : m.pairs) {
    const auto& p = preds[static_cast<std::size_t>(pi)];
    const auto& g = gts[static_cast<std::size_t>(gi)];
    pve_.push_back(*pve(p.vertices, p.joints, g.vertices, g.joints, model));
    pa_pve_.push_back(*pve(p.vertices, p.joints, g.vertices, g.joints, model, Align::Procrustes));
    if (auto h = pve(p.vertices, p.joints, g.vertices, g.joints, model, Align::None, Part::Hands)) pve_hands_.push_back(*h);
    if (auto f = pve(p.vertices, p.joints, g.vertices, g.joints, model, Align::None, Part::Face)) pve_face_.push_back(*f);
    mpjpe_.push_back(mpjpe(p.joints, g.joints, lsp, root));
    if (lsp.size() >= 3) pa_mpjpe_.push_back(mpjpe(p.joints, g.joints, lsp, root, Align::Procrustes));
    const Points3 pc = centered(p.joints, p.joints.row(root).transpose());
    const Points3 gc = centered(g.joints, g.joints.row(root).transpose());
    for (int j : lsp) {
      ++pck_total_;
      if ((pc.row(j) - gc.row(j)).norm() < kPckThreshold) ++pck_hits_;
    }
    mrpe_.push_back(mrpe(p.joints.row(root).transpose(), g.joints.row(root).transpose()));
    pd.push_back(p.location.z());
    gd.push_back(g.location.z());
  }
  const PcodCount c = pcod_count(pd, gd);
  pcod_correct_ += c.correct;
  pcod_pairs_ += c.pairs;
}

MetricReport MetricAccumulator::report() const {
  MetricReport r;
  r.predictions = preds_;
  r.ground_truth = gts_;
  r.matched = matched_;
  r.precision = preds_ ? static_cast<double>(matched_) / static_cast<double>(preds_) : 0.0;
  r.recall = gts_ ? static_cast<double>(matched_) / static_cast<double>(gts_) : 0.0;
  r.f1 = r.precision + r.recall > 0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
  r.pve = mean_or_none(pve_);
  r.pa_pve = mean_or_none(pa_pve_);
  r.pve_hands = mean_or_none(pve_hands_);
  r.pve_face = mean_or_none(pve_face_);
  r.mpjpe = mean_or_none(mpjpe_);
  r.pa_mpjpe = mean_or_none(pa_mpjpe_);
  if (pck_total_) r.pck3d = static_cast<double>(pck_hits_) / static_cast<double>(pck_total_);
  r.mrpe = mean_or_none(mrpe_);
  if (pcod_pairs_) r.pcod = static_cast<double>(pcod_correct_) / static_cast<double>(pcod_pairs_);
  if (r.f1 > 0 && r.pve) r.nmve = *r.pve / r.f1;
  if (r.f1 > 0 && r.mpjpe) r.nmje = *r.mpjpe / r.f1;
  return r;
}

MetricReport report(const std::vector<PersonPrediction>& preds, const std::vector<ScenePerson>& gts,
                    const Camera& camera, const BodyModel& model, double match_threshold) {
  MetricAccumulator acc(model, match_threshold);
  acc.add(preds, gts, camera);
  return acc.report();
}

namespace {

const std::vector<std::pair<const char*, std::optional<double> MetricReport::*>>& optional_fields() {
  static const std::vector<std::pair<const char*, std::optional<double> MetricReport::*>> fields = {
      {"pve", &MetricReport::pve},         {"pa_pve", &MetricReport::pa_pve},   {"pve_hands", &MetricReport::pve_hands},
      {"pve_face", &MetricReport::pve_face}, {"mpjpe", &MetricReport::mpjpe}, {"pa_mpjpe", &MetricReport::pa_mpjpe},
      {"pck3d", &MetricReport::pck3d},     {"mrpe", &MetricReport::mrpe},       {"pcod", &MetricReport::pcod},
      {"nmve", &MetricReport::nmve},       {"nmje", &MetricReport::nmje}};
  return fields;
}

}  // namespace

std::string MetricReport::to_json() const {
  nlohmann::ordered_json j = {{"predictions", predictions}, {"ground_truth", ground_truth}, {"matched", matched},
                              {"precision", precision},     {"recall", recall},             {"f1", f1}};
  for (const auto& [name, field] : optional_fields()) {
    const auto& v = this->*field;
    j[name] = v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
  }
  return j.dump(2);
}

std::string MetricReport::table() const {
  std::string out;
  char line[96];
  auto row = [&](const char* name, const std::optional<double>& v, const char* unit) {
    if (v) std::snprintf(line, sizeof line, "%-10s %12.4f %s\n", name, *v, unit);
    else std::snprintf(line, sizeof line, "%-10s %12s\n", name, "-");
    out += line;
  };
  std::snprintf(line, sizeof line, "%-10s %12zu\n%-10s %12zu\n%-10s %12zu\n", "preds", predictions, "gts",
                ground_truth, "matched", matched);
  out += line;
  row("precision", precision, "");
  row("recall", recall, "");
  row("f1", f1, "");
  row("pve", pve, "mm");
  row("pa_pve", pa_pve, "mm");
  row("pve_hands", pve_hands, "mm");
  row("pve_face", pve_face, "mm");
  row("mpjpe", mpjpe, "mm");
  row("pa_mpjpe", pa_mpjpe, "mm");
  row("pck3d", pck3d, "");
  row("mrpe", mrpe, "mm");
  row("pcod", pcod, "");
  row("nmve", nmve, "mm");
  row("nmje", nmje, "mm");
  return out;
}

}  // namespace mhmr

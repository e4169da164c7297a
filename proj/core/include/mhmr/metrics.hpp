#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mhmr/body_model.hpp"
#include "mhmr/geometry.hpp"
#include "mhmr/net.hpp"
#include "mhmr/scenegen.hpp"

namespace mhmr {

constexpr double kPckThreshold = 0.15;  // meters
constexpr double kDepthTie = 1e-6;      // meters

struct Matching {
  std::vector<std::pair<int, int>> pairs;  // (prediction, ground truth)
  std::vector<int> unmatched_preds;
  std::vector<int> unmatched_gts;
};

/// Maximum number of pairs within `threshold` pixels, and among those the
/// smallest total distance (Hungarian algorithm).
Matching match_people(const std::vector<Vec2>& preds, const std::vector<Vec2>& gts, double threshold);

enum class Align { None, Procrustes };
enum class Part { All, Hands, Face };

/// Mean vertex distance in millimeters after centering both meshes on their
/// root joints. Part selection uses the model's labels; nullopt when the part
/// has no vertices.
std::optional<double> pve(const Points3& pred_vertices, const Points3& pred_joints, const Points3& gt_vertices,
                          const Points3& gt_joints, const BodyModel& model, Align align = Align::None,
                          Part part = Part::All);
/// Mean distance (mm) over the given joints after root centering.
double mpjpe(const Points3& pred_joints, const Points3& gt_joints, const std::vector<int>& subset, int root,
             Align align = Align::None);
/// Fraction of root-centered joints closer than `threshold` meters.
double pck3d(const Points3& pred_joints, const Points3& gt_joints, const std::vector<int>& subset, int root,
             double threshold = kPckThreshold);
/// Root position error in millimeters.
double mrpe(const Vec3& pred_root, const Vec3& gt_root);

struct PcodCount {
  std::size_t correct = 0;
  std::size_t pairs = 0;
};
/// Pairwise depth-order agreement; differences under kDepthTie count as ties.
PcodCount pcod_count(const std::vector<double>& pred_depths, const std::vector<double>& gt_depths);
/// nullopt with fewer than two people.
std::optional<double> pcod(const std::vector<double>& pred_depths, const std::vector<double>& gt_depths);

struct MetricReport {
  std::size_t predictions = 0;
  std::size_t ground_truth = 0;
  std::size_t matched = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::optional<double> pve, pa_pve, pve_hands, pve_face, mpjpe, pa_mpjpe, pck3d, mrpe, pcod, nmve, nmje;

  std::string to_json() const;
  /// Fixed-order, human-readable table.
  std::string table() const;
};

// Accumulates matched-pair errors over many images. Sums are taken over
// sorted values so the result does not depend on the order of additions.
class MetricAccumulator {
 public:
  MetricAccumulator(const BodyModel& model, double match_threshold);

  /// One image: predictions against scene people seen through `camera`.
  void add(const std::vector<PersonPrediction>& preds, const std::vector<ScenePerson>& gts, const Camera& camera);
  MetricReport report() const;

 private:
  const BodyModel* model_;
  double threshold_;
  std::size_t preds_ = 0, gts_ = 0, matched_ = 0;
  std::size_t pcod_correct_ = 0, pcod_pairs_ = 0;
  std::vector<double> pve_, pa_pve_, pve_hands_, pve_face_, mpjpe_, pa_mpjpe_, mrpe_;
  std::size_t pck_hits_ = 0, pck_total_ = 0;
};

/// Single-image report.
MetricReport report(const std::vector<PersonPrediction>& preds, const std::vector<ScenePerson>& gts,
                    const Camera& camera, const BodyModel& model, double match_threshold);

}  // namespace mhmr

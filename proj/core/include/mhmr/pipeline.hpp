#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mhmr/body_model.hpp"
#include "mhmr/losses.hpp"
#include "mhmr/metrics.hpp"
#include "mhmr/net.hpp"
#include "mhmr/nn/grad_check.hpp"
#include "mhmr/nn/param_store.hpp"
#include "mhmr/scenegen.hpp"

namespace mhmr {

struct TrainConfig {
  LossWeights loss;
  nn::AdamConfig adam;
  int batch_size = 8;
  std::int64_t max_steps = 20000;
  std::int64_t eval_interval = 0;  // 0 disables periodic evaluation
  std::int64_t checkpoint_interval = 1000;
  std::uint64_t seed = 0;
  bool flip = true;

  void validate() const;
  std::string to_json() const;
  static TrainConfig from_json(const std::string& text);
  bool operator==(const TrainConfig&) const = default;
};

// Everything a run needs: one JSON file with optional "net", "body", "gen"
// and "train" sections.
struct RunConfig {
  NetConfig net;
  BodyModelConfig body;
  GenConfig gen;
  TrainConfig train;

  /// Tiny desk-scale setup: image 32, P 4, D 16, J 12, V 200, lambda 0.02.
  static RunConfig tiny();
  std::string to_json() const;
  static RunConfig from_json(const std::string& text);
  static RunConfig load(const std::filesystem::path& path);
};

struct Checkpoint {
  NetConfig net;
  BodyModelConfig body;
  TrainConfig train;
  nn::ParamStore store;

  std::int64_t step() const { return store.step(); }
};

void save_checkpoint(const std::filesystem::path& path, const Net& net, const TrainConfig& train);
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct StepLoss {
  std::int64_t step = 0;
  LossParts parts;
  double total = 0.0;

  std::string to_json() const;
};

class NonFiniteLoss : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Teacher-forced trainer. Batches and flips are a pure function of
// (seed, step), so a resumed run continues the same trajectory.
class Trainer {
 public:
  Trainer(const TrainConfig& config, Net& net, const Dataset& data);

  /// Sample indices and flip flags of a step.
  std::vector<std::pair<std::size_t, bool>> batch(std::int64_t step) const;
  /// Loss and gradient averaged over the batch, without updating.
  StepLoss compute(std::int64_t step, nn::Gradients* grads) const;
  /// One Adam update; throws NonFiniteLoss without touching the parameters.
  StepLoss step();

  std::int64_t current_step() const { return net_->store().step(); }

 private:
  TrainConfig config_;
  Net* net_;
  const Dataset* data_;
  std::vector<TrainTargets> targets_;
  std::vector<TrainTargets> flipped_targets_;
  std::vector<SceneSample> flipped_scenes_;
  std::vector<io::Image> flipped_images_;
};

struct TrainOptions {
  std::filesystem::path checkpoint;  // written every checkpoint_interval and at the end
  std::filesystem::path log;         // JSON lines, appended
  std::function<void(const StepLoss&)> on_step;
};

struct EvalOptions {
  std::optional<double> tau;
  double match_threshold = 0.0;  // 0: two patches
  bool forced_detections = false;
};

/// Runs inference on every sample (not teacher forced) and aggregates.
MetricReport evaluate(const Net& net, const Dataset& data, const EvalOptions& options = {});

/// Trains until config.max_steps. Returns the per-step losses of this call.
std::vector<StepLoss> train(const TrainConfig& config, Net& net, const Dataset& data, const TrainOptions& options = {});

struct BenchResult {
  int people = 0;
  double median_ms = 0, p10_ms = 0, p90_ms = 0, min_ms = 0, max_ms = 0;
};

struct BenchReport {
  std::size_t parameter_count = 0;
  int repetitions = 0;
  int warmup = 0;
  std::vector<BenchResult> results;

  std::string to_json() const;
};

/// Wall time of infer on scenes with exactly N people, for each N. People
/// are decoded at their ground-truth patches so the cost of N queries is
/// measured even for an untrained network.
BenchReport bench(const Net& net, const std::vector<int>& person_counts, int repetitions = 30, int warmup = 3,
                  std::uint64_t seed = 0);

/// Finite-difference check of the total loss on one generated scene with
/// `people` people (teacher forced, every loss term on).
nn::GradCheckResult check_network_gradients(const RunConfig& config, std::uint64_t seed, int people = 2,
                                            const nn::GradCheckOptions& options = {});

struct Letterbox {
  io::Image image;
  double scale = 1.0;  // output pixels per input pixel
};

/// Resizes the longest side to `size` (bilinear) and zero-pads the bottom or
/// right to a square.
Letterbox letterbox(const io::Image& image, int size);

}  // namespace mhmr

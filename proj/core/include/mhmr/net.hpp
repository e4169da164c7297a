#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mhmr/body_model.hpp"
#include "mhmr/geometry.hpp"
#include "mhmr/io.hpp"
#include "mhmr/nn/graph.hpp"
#include "mhmr/nn/layers.hpp"
#include "mhmr/nn/param_store.hpp"

namespace mhmr {

struct NetConfig {
  int image_size = 224;
  int patch_size = 14;
  int channels = 3;
  int feature_width = 128;
  int encoder_layers = 4;
  int encoder_heads = 4;
  int hph_layers = 2;
  int hph_heads = 2;
  int mlp_ratio = 4;
  int fourier_bands = 8;
  double detection_threshold = 0.5;
  double standard_fov_deg = 60.0;
  bool camera_aware = false;

  /// Image 32, P 4, D 16, two encoder layers.
  static NetConfig tiny();

  int grid() const { return image_size / patch_size; }
  int tokens() const { return grid() * grid(); }
  int camera_width() const { return camera_aware ? 2 * (fourier_bands + 1) : 0; }
  int token_width() const { return feature_width + camera_width(); }
  double standard_focal() const;
  Camera standard_camera() const;
  void validate() const;

  std::string to_json() const;
  static NetConfig from_json(const std::string& text);
  bool operator==(const NetConfig&) const = default;
};

struct Detection {
  int token = 0;  // j * grid + i
  double score = 0.0;
};

struct PersonPrediction {
  int patch_i = 0;  // column
  int patch_j = 0;  // row
  double score = 0.0;
  Vec2 coords = Vec2::Zero();
  BodyParams params;
  double depth = 0.0;
  Vec3 location = Vec3::Zero();
  Points3 vertices;  // camera space
  Points3 joints;    // camera space
};

// Differentiable per-person outputs.
struct PersonTensors {
  int token = 0;
  nn::Tensor coords;      // 1 x 2 pixels
  nn::Tensor rotmats;     // J x 9
  nn::Tensor axis_angle;  // J x 3
  nn::Tensor shape;       // B
  nn::Tensor expression;  // Be
  nn::Tensor nearness;    // 1 x 1, normalized
  nn::Tensor depth;       // 1 x 1 meters
  nn::Tensor location;    // 1 x 3
  nn::Tensor vertices;    // V x 3, head-centered
  nn::Tensor joints;      // J x 3, head-centered
};

struct ForwardResult {
  nn::Tensor tokens;  // T x D_eff
  nn::Tensor scores;  // T
  std::vector<PersonTensors> people;
};

class Net {
 public:
  /// Fresh parameters drawn from `seed`.
  Net(const NetConfig& config, const BodyModel& body, std::uint64_t seed);
  /// Adopts trained parameters; names and shapes must match the config.
  Net(const NetConfig& config, const BodyModel& body, nn::ParamStore store);

  const NetConfig& config() const noexcept { return config_; }
  const BodyModel& body() const noexcept { return *body_; }
  const nn::ParamStore& store() const noexcept { return store_; }
  nn::ParamStore& store() noexcept { return store_; }

  /// Flattened mean parameters with 6D rotations (width D').
  const std::vector<double>& mean_params_6d() const noexcept { return mean6d_; }
  int param_width() const noexcept { return static_cast<int>(mean6d_.size()); }
  int query_width() const { return config_.token_width() + param_width(); }

  /// Camera used to turn network outputs into metric space: the given one,
  /// or the standard camera when none is given.
  Camera decode_camera(const std::optional<Camera>& camera) const;

  // Pieces of the forward pass.
  /// T x (P*P*C) patch matrix, token order j * grid + i.
  nn::Array patchify(const io::Image& image) const;
  /// `camera` is required iff the model is camera-aware.
  nn::Tensor encode(nn::Graph& g, const io::Image& image, const Camera* camera) const;
  nn::Tensor detection_scores(nn::Graph& g, nn::Tensor tokens) const;
  /// Pixel coordinates (N x 2) for the given tokens.
  nn::Tensor refine_coords(nn::Graph& g, nn::Tensor tokens, const std::vector<int>& token_ids) const;
  /// N x (D_eff + D') query features.
  nn::Tensor hph(nn::Graph& g, nn::Tensor tokens, const std::vector<int>& token_ids) const;
  /// Regressor output (N x (D' + 1)): 6D pose, shape, expression, nearness.
  nn::Tensor regress(nn::Graph& g, nn::Tensor queries) const;

  /// Full differentiable decode for the given tokens.
  std::vector<PersonTensors> decode(nn::Graph& g, nn::Tensor tokens, const std::vector<int>& token_ids,
                                    const Camera& decode_camera) const;

  /// Scores for all tokens and people at the given (ground-truth) tokens.
  ForwardResult teacher_forced(nn::Graph& g, const io::Image& image, const std::vector<int>& token_ids,
                               const std::optional<Camera>& camera) const;

  /// Thresholded detections (score >= tau), in token order.
  std::vector<Detection> detect(const std::vector<double>& scores, double tau) const;

  /// Detect, decode and place everyone. `forced_tokens` bypasses thresholding.
  std::vector<PersonPrediction> infer(const io::Image& image, const std::optional<Camera>& camera,
                                      std::optional<double> tau = std::nullopt,
                                      const std::optional<std::vector<int>>& forced_tokens = std::nullopt) const;

 private:
  struct EncoderBlock {
    nn::LayerNorm ln1, ln2;
    nn::MultiHeadAttention attn;
    nn::Mlp mlp;
  };
  struct HphBlock {
    nn::LayerNorm ln_cross, ln_self, ln_mlp;
    nn::MultiHeadAttention cross, self;
    nn::Mlp mlp;
  };

  void build(nn::Rng& rng);

  NetConfig config_;
  const BodyModel* body_;
  nn::ParamStore store_;
  std::vector<double> mean6d_;
  nn::Array mean6d_row_;  // D'

  nn::Linear embed_;
  nn::ParamId pos_ = 0;
  std::vector<EncoderBlock> encoder_;
  nn::LayerNorm encoder_ln_;
  nn::Mlp det_head_, offset_head_;
  nn::ParamId query_table_ = 0;
  std::vector<HphBlock> hph_;
  nn::LayerNorm hph_ln_;
  nn::Mlp regressor_;
};

/// Depth from normalized nearness: d = exp(-(f_std / f) * eta_hat).
double decode_depth(double nearness, double focal, double standard_focal);

}  // namespace mhmr

#include "mhmr/net.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "json.hpp"
#include "mhmr/errors.hpp"
#include "mhmr/nn/geometric_ops.hpp"
#include "mhmr/nn/ops.hpp"

namespace mhmr {

using nn::Array;
using nn::Graph;
using nn::Tensor;

NetConfig NetConfig::tiny() {
  NetConfig c;
  c.image_size = 32;
  c.patch_size = 4;
  c.feature_width = 16;
  c.encoder_layers = 2;
  c.encoder_heads = 2;
  c.hph_heads = 2;
  return c;
}

double NetConfig::standard_focal() const {
  return 0.5 * image_size / std::tan(0.5 * standard_fov_deg * std::numbers::pi / 180.0);
}

Camera NetConfig::standard_camera() const { return Camera::from_fov(image_size, image_size, standard_fov_deg); }

void NetConfig::validate() const {
  auto positive = [](int v, const char* what) {
    if (v <= 0) throw std::invalid_argument(std::string("net config: ") + what + " must be positive");
  };
  positive(image_size, "image_size");
  positive(patch_size, "patch_size");
  positive(channels, "channels");
  positive(feature_width, "feature_width");
  positive(encoder_heads, "encoder_heads");
  positive(hph_heads, "hph_heads");
  positive(mlp_ratio, "mlp_ratio");
  if (encoder_layers < 0 || hph_layers < 0 || fourier_bands < 0)
    throw std::invalid_argument("net config: layer and band counts must be nonnegative");
  if (image_size % patch_size != 0)
    throw std::invalid_argument("net config: image_size " + std::to_string(image_size) + " is not divisible by patch_size " +
                                std::to_string(patch_size));
  if (feature_width % encoder_heads != 0)
    throw std::invalid_argument("net config: feature_width not divisible by encoder_heads");
  if (!(detection_threshold > 0.0 && detection_threshold < 1.0))
    throw std::invalid_argument("net config: detection_threshold must be in (0, 1)");
  if (!(standard_fov_deg > 0.0 && standard_fov_deg < 180.0))
    throw std::invalid_argument("net config: standard_fov_deg must be in (0, 180)");
}

std::string NetConfig::to_json() const {
  nlohmann::ordered_json j = {{"image_size", image_size},
                              {"patch_size", patch_size},
                              {"channels", channels},
                              {"feature_width", feature_width},
                              {"encoder_layers", encoder_layers},
                              {"encoder_heads", encoder_heads},
                              {"hph_layers", hph_layers},
                              {"hph_heads", hph_heads},
                              {"mlp_ratio", mlp_ratio},
                              {"fourier_bands", fourier_bands},
                              {"detection_threshold", detection_threshold},
                              {"standard_fov_deg", standard_fov_deg},
                              {"camera_aware", camera_aware}};
  return j.dump();
}

NetConfig NetConfig::from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  NetConfig c;
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  for (auto it = j.begin(); it != j.end(); ++it) {
    static const char* known[] = {"image_size",     "patch_size",    "channels",     "feature_width",
                                  "encoder_layers", "encoder_heads", "hph_layers",   "hph_heads",
                                  "mlp_ratio",      "fourier_bands", "detection_threshold",
                                  "standard_fov_deg", "camera_aware"};
    if (std::find(std::begin(known), std::end(known), it.key()) == std::end(known))
      throw std::invalid_argument("net config: unknown field '" + it.key() + "'");
  }
  get("image_size", c.image_size);
  get("patch_size", c.patch_size);
  get("channels", c.channels);
  get("feature_width", c.feature_width);
  get("encoder_layers", c.encoder_layers);
  get("encoder_heads", c.encoder_heads);
  get("hph_layers", c.hph_layers);
  get("hph_heads", c.hph_heads);
  get("mlp_ratio", c.mlp_ratio);
  get("fourier_bands", c.fourier_bands);
  get("detection_threshold", c.detection_threshold);
  get("standard_fov_deg", c.standard_fov_deg);
  get("camera_aware", c.camera_aware);
  c.validate();
  return c;
}

double decode_depth(double nearness, double focal, double standard_focal) {
  if (!(focal > 0.0)) throw std::invalid_argument("decode_depth: focal must be positive");
  return std::exp(-(standard_focal / focal) * nearness);
}

Net::Net(const NetConfig& config, const BodyModel& body, std::uint64_t seed) : config_(config), body_(&body) {
  config_.validate();
  nn::Rng rng(seed);
  build(rng);
}

Net::Net(const NetConfig& config, const BodyModel& body, nn::ParamStore store) : config_(config), body_(&body) {
  config_.validate();
  nn::Rng rng(0);
  build(rng);
  if (store.size() != store_.size())
    throw FormatError("checkpoint has " + std::to_string(store.size()) + " tensors, the network needs " +
                      std::to_string(store_.size()));
  for (nn::ParamId id = 0; id < store_.size(); ++id) {
    if (store.name(id) != store_.name(id) || store.value(id).shape() != store_.value(id).shape())
      throw FormatError("checkpoint tensor '" + store.name(id) + "' " + nn::to_string(store.value(id).shape()) +
                        " does not match '" + store_.name(id) + "' " + nn::to_string(store_.value(id).shape()));
  }
  store_ = std::move(store);
}

void Net::build(nn::Rng& rng) {
  const BodyModel& b = *body_;
  const std::size_t J = b.num_joints();
  mean6d_.clear();
  const BodyParams mean = b.mean_params();
  for (std::size_t j = 0; j < J; ++j) {
    const Vec6 s = matrix_to_sixd(axis_angle_to_matrix(mean.pose.row(static_cast<Eigen::Index>(j)).transpose()).matrix());
    mean6d_.insert(mean6d_.end(), s.data(), s.data() + 6);
  }
  mean6d_.insert(mean6d_.end(), mean.shape.data(), mean.shape.data() + mean.shape.size());
  mean6d_.insert(mean6d_.end(), mean.expression.data(), mean.expression.data() + mean.expression.size());
  mean6d_row_ = Array({mean6d_.size()}, mean6d_);

  const std::size_t P = config_.patch_size, C = config_.channels, D = config_.feature_width;
  const std::size_t T = config_.tokens(), De = config_.token_width(), Q = query_width();
  const std::size_t hidden = config_.mlp_ratio * D;
  if (Q % config_.hph_heads != 0)
    throw std::invalid_argument("net config: query width " + std::to_string(Q) + " not divisible by hph_heads " +
                                std::to_string(config_.hph_heads));

  store_ = nn::ParamStore();
  embed_ = nn::Linear::create(store_, "embed", P * P * C, D, rng);
  pos_ = store_.add("pos", nn::normal_array({T, D}, 0.02, rng));
  encoder_.clear();
  for (int l = 0; l < config_.encoder_layers; ++l) {
    const std::string n = "enc" + std::to_string(l);
    EncoderBlock blk;
    blk.ln1 = nn::LayerNorm::create(store_, n + ".ln1", D);
    blk.attn = nn::MultiHeadAttention::create(store_, n + ".attn", D, D, config_.encoder_heads, rng);
    blk.ln2 = nn::LayerNorm::create(store_, n + ".ln2", D);
    blk.mlp = nn::Mlp::create(store_, n + ".mlp", D, hidden, D, rng);
    encoder_.push_back(blk);
  }
  encoder_ln_ = nn::LayerNorm::create(store_, "enc.ln", D);

  det_head_ = nn::Mlp::create(store_, "det", De, D, 1, rng);
  // Prior probability 0.01 for a person at any patch.
  store_.mutable_value(det_head_.fc2.bias)[0] = -std::log(99.0);
  offset_head_ = nn::Mlp::create(store_, "offset", De, D, 2, rng);

  query_table_ = store_.add("hph.query", nn::normal_array({T, Q}, 0.02, rng));
  hph_.clear();
  for (int l = 0; l < config_.hph_layers; ++l) {
    const std::string n = "hph" + std::to_string(l);
    HphBlock blk;
    blk.ln_cross = nn::LayerNorm::create(store_, n + ".ln_cross", Q);
    blk.cross = nn::MultiHeadAttention::create(store_, n + ".cross", Q, De, config_.hph_heads, rng);
    blk.ln_self = nn::LayerNorm::create(store_, n + ".ln_self", Q);
    blk.self = nn::MultiHeadAttention::create(store_, n + ".self", Q, Q, config_.hph_heads, rng);
    blk.ln_mlp = nn::LayerNorm::create(store_, n + ".ln_mlp", Q);
    blk.mlp = nn::Mlp::create(store_, n + ".mlp", Q, hidden, Q, rng);
    hph_.push_back(blk);
  }
  hph_ln_ = nn::LayerNorm::create(store_, "hph.ln", Q);

  const std::size_t out = mean6d_.size() + 1;
  regressor_ = nn::Mlp::create(store_, "reg", Q, hidden, out, rng);
  // Start close to the mean body at a mid-range depth.
  for (double& w : store_.mutable_value(regressor_.fc2.weight).values()) w *= 0.1;
  store_.mutable_value(regressor_.fc2.bias)[out - 1] = -std::log(3.75);
}

Camera Net::decode_camera(const std::optional<Camera>& camera) const {
  if (!camera) return config_.standard_camera();
  camera->validate();
  if (camera->width != config_.image_size || camera->height != config_.image_size)
    throw std::invalid_argument("camera size " + std::to_string(camera->width) + "x" + std::to_string(camera->height) +
                                " does not match the network input " + std::to_string(config_.image_size));
  return *camera;
}

Array Net::patchify(const io::Image& image) const {
  const int S = config_.image_size, P = config_.patch_size, C = config_.channels, G = config_.grid();
  if (image.width != S || image.height != S || image.channels != C)
    throw ShapeError("image is " + std::to_string(image.width) + "x" + std::to_string(image.height) + "x" +
                     std::to_string(image.channels) + ", the network expects " + std::to_string(S) + "x" +
                     std::to_string(S) + "x" + std::to_string(C));
  Array out({std::size_t(G * G), std::size_t(P * P * C)});
  double* o = out.data();
  for (int j = 0; j < G; ++j)
    for (int i = 0; i < G; ++i)
      for (int dy = 0; dy < P; ++dy)
        for (int dx = 0; dx < P; ++dx)
          for (int c = 0; c < C; ++c) *o++ = image.at(i * P + dx, j * P + dy, c);
  return out;
}

Tensor Net::encode(Graph& g, const io::Image& image, const Camera* camera) const {
  if (config_.camera_aware != (camera != nullptr))
    throw std::invalid_argument(config_.camera_aware ? "camera-aware network needs a camera"
                                                     : "camera-blind network does not take a camera");
  Tensor x = nn::add(embed_(g, g.constant(patchify(image))), g.param(pos_));
  for (const auto& blk : encoder_) {
    const Tensor h = blk.ln1(g, x);
    x = nn::add(x, blk.attn(g, h, h));
    x = nn::add(x, blk.mlp(g, blk.ln2(g, x)));
  }
  x = encoder_ln_(g, x);
  if (!camera) return x;
  if (camera->width != config_.image_size || camera->height != config_.image_size)
    throw std::invalid_argument("camera size does not match the network input");
  const int G = config_.grid();
  const auto rays = ray_grid(*camera, G, G, config_.patch_size);
  const std::size_t w = config_.camera_width();
  Array emb({rays.size(), w});
  for (std::size_t t = 0; t < rays.size(); ++t) {
    const auto f = fourier_encode(rays[t], config_.fourier_bands);
    std::copy(f.begin(), f.end(), emb.data() + t * w);
  }
  return nn::concat({x, g.constant(std::move(emb))}, 1);
}

Tensor Net::detection_scores(Graph& g, Tensor tokens) const {
  return nn::reshape(nn::sigmoid(det_head_(g, tokens)), {tokens.dim(0)});
}

namespace {

std::vector<std::size_t> as_rows(const std::vector<int>& ids, int limit) {
  std::vector<std::size_t> rows;
  rows.reserve(ids.size());
  for (int t : ids) {
    if (t < 0 || t >= limit) throw std::out_of_range("token index " + std::to_string(t) + " outside the grid");
    rows.push_back(static_cast<std::size_t>(t));
  }
  return rows;
}

}  // namespace

Tensor Net::refine_coords(Graph& g, Tensor tokens, const std::vector<int>& token_ids) const {
  const auto rows = as_rows(token_ids, config_.tokens());
  const int G = config_.grid(), P = config_.patch_size;
  Array centers({rows.size(), 2});
  for (std::size_t n = 0; n < rows.size(); ++n) {
    const Vec2 c = patch_center(static_cast<int>(rows[n]) % G, static_cast<int>(rows[n]) / G, P);
    centers(n, 0) = c.x();
    centers(n, 1) = c.y();
  }
  if (rows.empty()) return g.constant(std::move(centers));
  const Tensor offsets = nn::scale(nn::tanh(offset_head_(g, nn::gather_rows(tokens, rows))), P);
  return nn::add(g.constant(std::move(centers)), offsets);
}

Tensor Net::hph(Graph& g, Tensor tokens, const std::vector<int>& token_ids) const {
  const auto rows = as_rows(token_ids, config_.tokens());
  const std::size_t N = rows.size(), Q = query_width();
  if (N == 0) return g.constant(Array({0, Q}));
  Array means({N, mean6d_.size()});
  for (std::size_t n = 0; n < N; ++n) std::copy(mean6d_.begin(), mean6d_.end(), means.data() + n * mean6d_.size());
  Tensor q = nn::concat({nn::gather_rows(tokens, rows), g.constant(std::move(means))}, 1);
  q = nn::add(q, nn::gather_rows(g.param(query_table_), rows));
  for (const auto& blk : hph_) {
    q = nn::add(q, blk.cross(g, blk.ln_cross(g, q), tokens));
    const Tensor h = blk.ln_self(g, q);
    q = nn::add(q, blk.self(g, h, h));
    q = nn::add(q, blk.mlp(g, blk.ln_mlp(g, q)));
  }
  return hph_ln_(g, q);
}

Tensor Net::regress(Graph& g, Tensor queries) const {
  const std::size_t N = queries.dim(0), W = mean6d_.size();
  if (N == 0) return g.constant(Array({0, W + 1}));
  const Tensor raw = regressor_(g, queries);
  Array base({W + 1});
  std::copy(mean6d_.begin(), mean6d_.end(), base.data());
  return nn::add(raw, g.constant(std::move(base)));
}

std::vector<PersonTensors> Net::decode(Graph& g, Tensor tokens, const std::vector<int>& token_ids,
                                       const Camera& camera) const {
  std::vector<PersonTensors> people;
  if (token_ids.empty()) return people;
  const std::size_t J = body_->num_joints(), B = body_->shape_dims(), Be = body_->expression_dims();
  const Tensor coords = refine_coords(g, tokens, token_ids);
  const Tensor out = regress(g, hph(g, tokens, token_ids));
  const double ratio = config_.standard_focal() / camera.focal;
  for (std::size_t n = 0; n < token_ids.size(); ++n) {
    PersonTensors p;
    p.token = token_ids[n];
    const Tensor row = nn::slice(out, 0, n, n + 1);
    p.coords = nn::slice(coords, 0, n, n + 1);
    p.rotmats = nn::sixd_to_rotmat(nn::reshape(nn::slice(row, 1, 0, 6 * J), {J, 6}));
    p.axis_angle = nn::rotmat_to_axis_angle(p.rotmats);
    p.shape = nn::reshape(nn::slice(row, 1, 6 * J, 6 * J + B), {B});
    p.expression = nn::reshape(nn::slice(row, 1, 6 * J + B, 6 * J + B + Be), {Be});
    p.nearness = nn::slice(row, 1, 6 * J + B + Be, 6 * J + B + Be + 1);
    p.depth = nn::exp(nn::scale(p.nearness, -ratio));
    p.location = nn::backproject_points(p.coords, p.depth, camera);
    const auto mesh = body_->forward(g, p.rotmats, p.shape, p.expression);
    p.vertices = mesh.vertices;
    p.joints = mesh.joints;
    people.push_back(std::move(p));
  }
  return people;
}

ForwardResult Net::teacher_forced(Graph& g, const io::Image& image, const std::vector<int>& token_ids,
                                  const std::optional<Camera>& camera) const {
  const Camera cam = decode_camera(camera);
  ForwardResult r;
  r.tokens = encode(g, image, config_.camera_aware ? &cam : nullptr);
  r.scores = detection_scores(g, r.tokens);
  r.people = decode(g, r.tokens, token_ids, cam);
  return r;
}

std::vector<Detection> Net::detect(const std::vector<double>& scores, double tau) const {
  if (!(tau > 0.0 && tau < 1.0)) throw std::invalid_argument("detection threshold must be in (0, 1)");
  std::vector<Detection> out;
  for (std::size_t t = 0; t < scores.size(); ++t)
    if (scores[t] >= tau) out.push_back({static_cast<int>(t), scores[t]});
  return out;
}

namespace {

Points3 points_of(const Array& a) {
  Points3 p(static_cast<Eigen::Index>(a.dim(0)), 3);
  std::copy(a.data(), a.data() + a.size(), p.data());
  return p;
}

}  // namespace

std::vector<PersonPrediction> Net::infer(const io::Image& image, const std::optional<Camera>& camera,
                                         std::optional<double> tau,
                                         const std::optional<std::vector<int>>& forced_tokens) const {
  const Camera cam = decode_camera(camera);
  Graph g(&store_, false);
  const Tensor tokens = encode(g, image, config_.camera_aware ? &cam : nullptr);
  const Array& score_values = detection_scores(g, tokens).value();
  const std::vector<double> scores(score_values.data(), score_values.data() + score_values.size());
  std::vector<int> ids;
  if (forced_tokens) {
    ids = *forced_tokens;
  } else {
    for (const auto& d : detect(scores, tau.value_or(config_.detection_threshold))) ids.push_back(d.token);
  }
  const auto people = decode(g, tokens, ids, cam);
  const int G = config_.grid();
  std::vector<PersonPrediction> out;
  out.reserve(people.size());
  for (const auto& p : people) {
    PersonPrediction pred;
    pred.patch_i = p.token % G;
    pred.patch_j = p.token / G;
    pred.score = scores.at(static_cast<std::size_t>(p.token));
    pred.coords = Vec2(p.coords.value()[0], p.coords.value()[1]);
    pred.params.pose = points_of(p.axis_angle.value());
    pred.params.shape = Eigen::Map<const Eigen::VectorXd>(p.shape.value().data(), body_->shape_dims());
    pred.params.expression = Eigen::Map<const Eigen::VectorXd>(p.expression.value().data(), body_->expression_dims());
    pred.depth = p.depth.value()[0];
    pred.location = backproject(cam, pred.coords, pred.depth);
    pred.vertices = place(points_of(p.vertices.value()), pred.location);
    pred.joints = place(points_of(p.joints.value()), pred.location);
    out.push_back(std::move(pred));
  }
  return out;
}

}  // namespace mhmr

#include "mhmr/scenegen.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <set>
#include <stdexcept>

#include "json.hpp"
#include "mhmr/errors.hpp"
#include "mhmr/parallel.hpp"

namespace mhmr {

using json = nlohmann::ordered_json;

namespace {

constexpr double kSplatGain = 2.0;
constexpr double kDepthMargin = 0.15;  // meters behind the nearest surface still drawn
constexpr int kDatasetVersion = 1;

bool is_finger(const std::string& name) {
  for (const char* f : {"index", "middle", "pinky", "ring", "thumb"})
    if (name.find(f) != std::string::npos) return true;
  return false;
}

json body_json(const BodyModelConfig& b) {
  return {{"seed", b.seed},
          {"vertices", b.vertices},
          {"joints", b.joints},
          {"shape_dims", b.shape_dims},
          {"expression_dims", b.expression_dims}};
}

BodyModelConfig body_from_json(const json& j) {
  BodyModelConfig b;
  b.seed = j.at("seed").get<std::uint64_t>();
  b.vertices = j.at("vertices").get<int>();
  b.joints = j.at("joints").get<int>();
  b.shape_dims = j.at("shape_dims").get<int>();
  b.expression_dims = j.at("expression_dims").get<int>();
  return b;
}

int token_of(const Vec2& c, int patch_size, int grid) {
  const int i = static_cast<int>(std::floor(c.x() / patch_size));
  const int j = static_cast<int>(std::floor(c.y() / patch_size));
  if (i < 0 || j < 0 || i >= grid || j >= grid) return -1;
  return j * grid + i;
}

}  // namespace

GenConfig GenConfig::close_up() {
  GenConfig c;
  c.min_people = 1;
  c.max_people = 1;
  c.depth_min = 2.3;
  c.depth_max = 2.7;
  c.head_u_min = 0.4;
  c.head_u_max = 0.6;
  c.head_v_min = 0.2;
  c.head_v_max = 0.3;
  return c;
}

void GenConfig::validate() const {
  if (image_size <= 0 || patch_size <= 0 || image_size % patch_size != 0)
    throw std::invalid_argument("gen config: image_size must be a positive multiple of patch_size");
  if (min_people < 0 || max_people < min_people)
    throw std::invalid_argument("gen config: need 0 <= min_people <= max_people");
  if (body_amplitude < 0 || hand_amplitude < 0 || jaw_amplitude < 0 || shape_range < 0 || expression_range < 0)
    throw std::invalid_argument("gen config: amplitudes and ranges must be nonnegative");
  if (std::sqrt(3.0) * std::max({body_amplitude, hand_amplitude, jaw_amplitude}) >= std::numbers::pi)
    throw std::invalid_argument("gen config: pose amplitude allows rotations of pi or more");
  if (!(depth_min > 0) || depth_max < depth_min) throw std::invalid_argument("gen config: need 0 < depth_min <= depth_max");
  if (!(fov_deg > 0 && fov_deg < 180)) throw std::invalid_argument("gen config: fov_deg must be in (0, 180)");
  if (focal_multipliers.empty()) throw std::invalid_argument("gen config: focal_multipliers is empty");
  for (double m : focal_multipliers)
    if (!(m > 0)) throw std::invalid_argument("gen config: focal multipliers must be positive");
  auto range = [](double lo, double hi, const char* what) {
    if (!(lo > 0 && lo <= hi && hi < 1)) throw std::invalid_argument(std::string("gen config: bad ") + what + " range");
  };
  range(head_u_min, head_u_max, "head_u");
  range(head_v_min, head_v_max, "head_v");
  if (max_attempts <= 0) throw std::invalid_argument("gen config: max_attempts must be positive");
}

std::string GenConfig::to_json() const {
  json j = {{"image_size", image_size},
            {"patch_size", patch_size},
            {"min_people", min_people},
            {"max_people", max_people},
            {"body_amplitude", body_amplitude},
            {"hand_amplitude", hand_amplitude},
            {"jaw_amplitude", jaw_amplitude},
            {"shape_range", shape_range},
            {"expression_range", expression_range},
            {"depth_min", depth_min},
            {"depth_max", depth_max},
            {"fov_deg", fov_deg},
            {"focal_multipliers", focal_multipliers},
            {"head_u_min", head_u_min},
            {"head_u_max", head_u_max},
            {"head_v_min", head_v_min},
            {"head_v_max", head_v_max},
            {"max_attempts", max_attempts}};
  return j.dump();
}

GenConfig GenConfig::from_json(const std::string& text) {
  const json j = json::parse(text);
  GenConfig c;
  const json defaults = json::parse(c.to_json());
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!defaults.contains(it.key())) throw std::invalid_argument("gen config: unknown field '" + it.key() + "'");
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("image_size", c.image_size);
  get("patch_size", c.patch_size);
  get("min_people", c.min_people);
  get("max_people", c.max_people);
  get("body_amplitude", c.body_amplitude);
  get("hand_amplitude", c.hand_amplitude);
  get("jaw_amplitude", c.jaw_amplitude);
  get("shape_range", c.shape_range);
  get("expression_range", c.expression_range);
  get("depth_min", c.depth_min);
  get("depth_max", c.depth_max);
  get("fov_deg", c.fov_deg);
  get("focal_multipliers", c.focal_multipliers);
  get("head_u_min", c.head_u_min);
  get("head_u_max", c.head_u_max);
  get("head_v_min", c.head_v_min);
  get("head_v_max", c.head_v_max);
  get("max_attempts", c.max_attempts);
  c.validate();
  return c;
}

std::uint64_t child_seed(std::uint64_t seed, std::uint64_t index) {
  // splitmix64 of the pair
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

ScenePerson make_person(const BodyModel& model, const BodyParams& params, const Vec3& location) {
  const auto out = model.forward(params);
  return {params, location, place(out.vertices, location), place(out.joints, location)};
}

SceneSample sample_scene(std::uint64_t seed, const GenConfig& config, const BodyModel& model) {
  config.validate();
  std::mt19937_64 rng(seed);
  auto uniform = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  SceneSample scene;
  scene.seed = seed;
  const int S = config.image_size, P = config.patch_size, G = S / P;
  scene.camera = Camera::from_fov(S, S, config.fov_deg);
  const auto pick = std::uniform_int_distribution<std::size_t>(0, config.focal_multipliers.size() - 1)(rng);
  scene.camera.focal *= config.focal_multipliers[pick];
  const int count = std::uniform_int_distribution<int>(config.min_people, config.max_people)(rng);

  const int J = model.num_joints();
  std::vector<double> amplitude(J, config.body_amplitude);
  for (int j = 0; j < J; ++j) {
    const std::string& name = model.joint_names()[j];
    if (is_finger(name)) amplitude[j] = config.hand_amplitude;
    else if (name == "jaw") amplitude[j] = config.jaw_amplitude;
  }

  std::set<int> taken;
  for (int n = 0; n < count; ++n) {
    BodyParams params = model.mean_params();
    for (int j = 0; j < J; ++j)
      for (int a = 0; a < 3; ++a) params.pose(j, a) = uniform(-amplitude[j], amplitude[j]);
    for (auto& b : params.shape) b = uniform(-config.shape_range, config.shape_range);
    for (auto& e : params.expression) e = uniform(-config.expression_range, config.expression_range);

    bool placed = false;
    for (int attempt = 0; attempt < config.max_attempts && !placed; ++attempt) {
      const Vec2 pixel(uniform(config.head_u_min, config.head_u_max) * S, uniform(config.head_v_min, config.head_v_max) * S);
      const double depth = uniform(config.depth_min, config.depth_max);
      const Vec3 t = backproject(scene.camera, pixel, depth);
      const int token = token_of(project(scene.camera, t), P, G);
      if (token < 0 || taken.contains(token)) continue;
      taken.insert(token);
      scene.people.push_back(make_person(model, params, t));
      placed = true;
    }
    if (!placed)
      throw std::runtime_error("scene generation: no free patch for person " + std::to_string(n + 1) + " of " +
                               std::to_string(count) + " after " + std::to_string(config.max_attempts) +
                               " attempts (too many people for the grid?)");
  }
  return scene;
}

io::Image render(const SceneSample& scene, const BodyModel& model) {
  const Camera& cam = scene.camera;
  const int W = cam.width, H = cam.height;
  io::Image img{W, H, kRenderChannels, std::vector<float>(static_cast<std::size_t>(W) * H * kRenderChannels, 0.0f)};
  if (scene.people.empty()) return img;

  struct Splat {
    int pixel;
    int channel;
    double weight;
    double z;
  };
  std::vector<Splat> splats;
  const auto& parts = model.part_labels();
  for (const auto& person : scene.people) {
    for (Eigen::Index v = 0; v < person.vertices.rows(); ++v) {
      const Vec3 p = person.vertices.row(v).transpose();
      if (p.z() <= 0.05) continue;
      const Vec2 uv = project(cam, p);
      const double x = uv.x() - 0.5, y = uv.y() - 0.5;
      if (!(x > -1.0 && y > -1.0 && x < W && y < H)) continue;
      const double x0 = std::floor(x), y0 = std::floor(y);
      const double fx = x - x0, fy = y - y0;
      int channel = 0;
      switch (parts[static_cast<std::size_t>(v)]) {
        case BodyPart::Body: channel = 0; break;
        case BodyPart::LeftHand:
        case BodyPart::RightHand: channel = 1; break;
        case BodyPart::Face: channel = 2; break;
      }
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx) {
          const int px = static_cast<int>(x0) + dx, py = static_cast<int>(y0) + dy;
          const double w = (dx ? fx : 1.0 - fx) * (dy ? fy : 1.0 - fy);
          if (px < 0 || py < 0 || px >= W || py >= H || w <= 0.0) continue;
          splats.push_back({py * W + px, channel, w, p.z()});
        }
    }
  }
  std::vector<double> zbuf(static_cast<std::size_t>(W) * H, std::numeric_limits<double>::infinity());
  for (const auto& s : splats) zbuf[s.pixel] = std::min(zbuf[s.pixel], s.z);
  std::vector<double> acc(img.data.size(), 0.0);
  for (const auto& s : splats)
    if (s.z <= zbuf[s.pixel] + kDepthMargin) acc[static_cast<std::size_t>(s.pixel) * kRenderChannels + s.channel] += s.weight / s.z;
  for (std::size_t i = 0; i < acc.size(); ++i) img.data[i] = static_cast<float>(1.0 - std::exp(-kSplatGain * acc[i]));
  return img;
}

TrainTargets build_targets(const SceneSample& scene, const BodyModel& model, int patch_size) {
  const Camera& cam = scene.camera;
  if (cam.width != cam.height || cam.width % patch_size != 0)
    throw std::invalid_argument("targets: image must be square and divisible into patches");
  const int G = cam.width / patch_size;
  TrainTargets t;
  t.grid = G;
  t.score_map.assign(static_cast<std::size_t>(G) * G, 0.0);
  for (const auto& person : scene.people) {
    PersonTarget pt;
    pt.coords = project(cam, person.location);
    pt.token = token_of(pt.coords, patch_size, G);
    if (pt.token < 0) throw std::invalid_argument("targets: a primary keypoint projects outside the image");
    if (t.score_map[pt.token] != 0.0) throw std::invalid_argument("targets: two people share a patch");
    t.score_map[pt.token] = 1.0;
    pt.params = person.params;
    pt.depth = person.location.z();
    pt.location = person.location;
    pt.vertices = model.forward(person.params).vertices;
    t.people.push_back(std::move(pt));
  }
  std::sort(t.people.begin(), t.people.end(), [](const auto& a, const auto& b) { return a.token < b.token; });
  return t;
}

SceneSample flip_scene(const SceneSample& scene, const BodyModel& model) {
  SceneSample out;
  out.seed = scene.seed;
  out.camera = scene.camera;
  out.camera.principal.x() = scene.camera.width - scene.camera.principal.x();
  for (const auto& p : scene.people) {
    const Vec3 t(-p.location.x(), p.location.y(), p.location.z());
    out.people.push_back(make_person(model, model.mirror(p.params), t));
  }
  return out;
}

io::Image flip_image(const io::Image& image) {
  io::Image out = image;
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x)
      for (int c = 0; c < image.channels; ++c) out.at(image.width - 1 - x, y, c) = image.at(x, y, c);
  return out;
}

Dataset generate_dataset(const GenConfig& config, const BodyModel& model, std::uint64_t seed, std::size_t count) {
  config.validate();
  Dataset d;
  d.header.count = count;
  d.header.image_size = config.image_size;
  d.header.patch_size = config.patch_size;
  d.header.body = model.config();
  d.header.gen = config;
  d.header.seed = seed;
  d.samples.resize(count);
  parallel_for(count, [&](std::size_t i) {
    d.samples[i].scene = sample_scene(child_seed(seed, i), config, model);
    d.samples[i].image = render(d.samples[i].scene, model);
  });
  return d;
}

void write_dataset(const std::filesystem::path& path, const Dataset& dataset) {
  const DatasetHeader& h = dataset.header;
  if (h.count != dataset.samples.size()) throw std::invalid_argument("dataset: header count does not match samples");
  const json header = {{"format", "mhmr-dataset"},
                       {"version", kDatasetVersion},
                       {"count", h.count},
                       {"image_size", h.image_size},
                       {"patch_size", h.patch_size},
                       {"channels", h.channels},
                       {"seed", h.seed},
                       {"body", body_json(h.body)},
                       {"gen", json::parse(h.gen.to_json())}};
  io::BinaryWriter w(path);
  w.string(header.dump());
  const int G = h.image_size / h.patch_size;
  for (const auto& s : dataset.samples) {
    const Camera& c = s.scene.camera;
    if (s.image.width != h.image_size || s.image.height != h.image_size || s.image.channels != h.channels)
      throw std::invalid_argument("dataset: image size does not match the header");
    w.u32(static_cast<std::uint32_t>(s.scene.people.size()));
    w.f64(c.focal);
    w.f64(c.principal.x());
    w.f64(c.principal.y());
    w.u32(static_cast<std::uint32_t>(c.width));
    w.u32(static_cast<std::uint32_t>(c.height));
    w.u64(s.scene.seed);
    w.bytes(s.image.data.data(), s.image.data.size() * sizeof(float));
    for (const auto& p : s.scene.people) {
      const Vec2 uv = project(c, p.location);
      const int token = token_of(uv, h.patch_size, G);
      w.i32(token % G);
      w.i32(token / G);
      w.f64(uv.x());
      w.f64(uv.y());
      w.f64(p.location.z());
      for (int a = 0; a < 3; ++a) w.f64(p.location[a]);
      for (Eigen::Index i = 0; i < p.params.pose.size(); ++i) w.f64(p.params.pose.data()[i]);
      for (double v : p.params.shape) w.f64(v);
      for (double v : p.params.expression) w.f64(v);
    }
  }
  w.close();
}

namespace {

DatasetHeader parse_header(io::BinaryReader& r, const std::filesystem::path& path) {
  DatasetHeader h;
  try {
    const json j = json::parse(r.string(1u << 24));
    if (j.at("format") != "mhmr-dataset") throw FormatError(path.string() + ": not a dataset file");
    if (j.at("version") != kDatasetVersion)
      throw FormatError(path.string() + ": unsupported dataset version " + j.at("version").dump());
    h.count = j.at("count").get<std::uint64_t>();
    h.image_size = j.at("image_size").get<int>();
    h.patch_size = j.at("patch_size").get<int>();
    h.channels = j.at("channels").get<int>();
    h.seed = j.at("seed").get<std::uint64_t>();
    h.body = body_from_json(j.at("body"));
    h.gen = GenConfig::from_json(j.at("gen").dump());
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": bad dataset header: " + e.what());
  }
  if (h.image_size <= 0 || h.patch_size <= 0 || h.image_size % h.patch_size != 0 || h.channels <= 0)
    throw FormatError(path.string() + ": inconsistent image geometry in header");
  return h;
}

}  // namespace

DatasetHeader read_dataset_header(const std::filesystem::path& path) {
  io::BinaryReader r(path);
  return parse_header(r, path);
}

Dataset read_dataset(const std::filesystem::path& path, const BodyModel& model) {
  io::BinaryReader r(path);
  Dataset d;
  d.header = parse_header(r, path);
  const DatasetHeader& h = d.header;
  if (!(h.body == model.config()))
    throw FormatError(path.string() + ": generated with body model (seed " + std::to_string(h.body.seed) + ", V " +
                      std::to_string(h.body.vertices) + ", J " + std::to_string(h.body.joints) +
                      ") but the current model is (seed " + std::to_string(model.config().seed) + ", V " +
                      std::to_string(model.num_vertices()) + ", J " + std::to_string(model.num_joints()) + ")");
  const int G = h.image_size / h.patch_size;
  const int J = model.num_joints(), B = model.shape_dims(), Be = model.expression_dims();
  d.samples.resize(h.count);
  for (auto& s : d.samples) {
    const std::uint32_t n = r.u32();
    if (n > static_cast<std::uint32_t>(G * G)) throw FormatError(path.string() + ": implausible person count");
    Camera& c = s.scene.camera;
    c.focal = r.f64();
    c.principal.x() = r.f64();
    c.principal.y() = r.f64();
    c.width = static_cast<int>(r.u32());
    c.height = static_cast<int>(r.u32());
    if (c.width != h.image_size || c.height != h.image_size) throw FormatError(path.string() + ": camera size mismatch");
    s.scene.seed = r.u64();
    s.image = io::Image{h.image_size, h.image_size, h.channels,
                        std::vector<float>(static_cast<std::size_t>(h.image_size) * h.image_size * h.channels)};
    r.bytes(s.image.data.data(), s.image.data.size() * sizeof(float));
    for (std::uint32_t k = 0; k < n; ++k) {
      const int pi = r.i32(), pj = r.i32();
      Vec2 uv;
      uv.x() = r.f64();
      uv.y() = r.f64();
      r.f64();  // depth, equal to t_z
      Vec3 t;
      for (int a = 0; a < 3; ++a) t[a] = r.f64();
      BodyParams params = BodyParams::zeros(J, B, Be);
      for (Eigen::Index i = 0; i < params.pose.size(); ++i) params.pose.data()[i] = r.f64();
      for (auto& v : params.shape) v = r.f64();
      for (auto& v : params.expression) v = r.f64();
      if (token_of(uv, h.patch_size, G) != pj * G + pi) throw FormatError(path.string() + ": patch index disagrees");
      s.scene.people.push_back(make_person(model, params, t));
    }
  }
  if (!r.at_end()) throw FormatError(path.string() + ": trailing bytes after the last sample");
  return d;
}

}  // namespace mhmr

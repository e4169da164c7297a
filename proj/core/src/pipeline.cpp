#include "mhmr/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <random>

#include "json.hpp"
#include "mhmr/errors.hpp"
#include "mhmr/io.hpp"
#include "mhmr/parallel.hpp"

namespace mhmr {

using json = nlohmann::ordered_json;

namespace {

json body_json(const BodyModelConfig& b) {
  return {{"seed", b.seed},
          {"vertices", b.vertices},
          {"joints", b.joints},
          {"shape_dims", b.shape_dims},
          {"expression_dims", b.expression_dims}};
}

BodyModelConfig body_from_json(const json& j) {
  BodyModelConfig b;
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!json::parse(body_json(b).dump()).contains(it.key()))
      throw std::invalid_argument("body config: unknown field '" + it.key() + "'");
  if (j.contains("seed")) b.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("vertices")) b.vertices = j.at("vertices").get<int>();
  if (j.contains("joints")) b.joints = j.at("joints").get<int>();
  if (j.contains("shape_dims")) b.shape_dims = j.at("shape_dims").get<int>();
  if (j.contains("expression_dims")) b.expression_dims = j.at("expression_dims").get<int>();
  return b;
}

template <class F>
auto with_json_errors(const std::string& what, F&& f) {
  try {
    return f();
  } catch (const json::exception& e) {
    throw std::invalid_argument(what + ": " + e.what());
  }
}

double percentile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

void TrainConfig::validate() const {
  loss.validate();
  if (batch_size <= 0) throw std::invalid_argument("train config: batch_size must be positive");
  if (max_steps < 0) throw std::invalid_argument("train config: max_steps must be nonnegative");
  if (eval_interval < 0 || checkpoint_interval < 0) throw std::invalid_argument("train config: negative interval");
  if (!(adam.lr > 0) || !(adam.beta1 >= 0 && adam.beta1 < 1) || !(adam.beta2 >= 0 && adam.beta2 < 1) || !(adam.eps > 0))
    throw std::invalid_argument("train config: invalid Adam settings");
}

std::string TrainConfig::to_json() const {
  json j = {{"loss",
             {{"lambda", loss.lambda},
              {"detection", loss.detection},
              {"params", loss.params},
              {"mesh", loss.mesh},
              {"reproj", loss.reproj}}},
            {"adam", {{"lr", adam.lr}, {"beta1", adam.beta1}, {"beta2", adam.beta2}, {"eps", adam.eps}}},
            {"batch_size", batch_size},
            {"max_steps", max_steps},
            {"eval_interval", eval_interval},
            {"checkpoint_interval", checkpoint_interval},
            {"seed", seed},
            {"flip", flip}};
  return j.dump();
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  return with_json_errors("train config", [&] {
    const json j = json::parse(text);
    TrainConfig c;
    const json defaults = json::parse(c.to_json());
    for (auto it = j.begin(); it != j.end(); ++it)
      if (!defaults.contains(it.key())) throw std::invalid_argument("train config: unknown field '" + it.key() + "'");
    if (j.contains("loss")) {
      const json& l = j.at("loss");
      for (auto it = l.begin(); it != l.end(); ++it)
        if (!defaults.at("loss").contains(it.key()))
          throw std::invalid_argument("train config: unknown loss field '" + it.key() + "'");
      if (l.contains("lambda")) c.loss.lambda = l.at("lambda").get<double>();
      if (l.contains("detection")) c.loss.detection = l.at("detection").get<bool>();
      if (l.contains("params")) c.loss.params = l.at("params").get<bool>();
      if (l.contains("mesh")) c.loss.mesh = l.at("mesh").get<bool>();
      if (l.contains("reproj")) c.loss.reproj = l.at("reproj").get<bool>();
    }
    if (j.contains("adam")) {
      const json& a = j.at("adam");
      for (auto it = a.begin(); it != a.end(); ++it)
        if (!defaults.at("adam").contains(it.key()))
          throw std::invalid_argument("train config: unknown adam field '" + it.key() + "'");
      if (a.contains("lr")) c.adam.lr = a.at("lr").get<double>();
      if (a.contains("beta1")) c.adam.beta1 = a.at("beta1").get<double>();
      if (a.contains("beta2")) c.adam.beta2 = a.at("beta2").get<double>();
      if (a.contains("eps")) c.adam.eps = a.at("eps").get<double>();
    }
    if (j.contains("batch_size")) c.batch_size = j.at("batch_size").get<int>();
    if (j.contains("max_steps")) c.max_steps = j.at("max_steps").get<std::int64_t>();
    if (j.contains("eval_interval")) c.eval_interval = j.at("eval_interval").get<std::int64_t>();
    if (j.contains("checkpoint_interval")) c.checkpoint_interval = j.at("checkpoint_interval").get<std::int64_t>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("flip")) c.flip = j.at("flip").get<bool>();
    c.validate();
    return c;
  });
}

RunConfig RunConfig::tiny() {
  RunConfig r;
  r.net = NetConfig::tiny();
  r.body = BodyModelConfig::tiny();
  r.gen.image_size = r.net.image_size;
  r.gen.patch_size = r.net.patch_size;
  // At V = 200 and 32 px the pixel reprojection term swamps detection with
  // the default weight.
  r.train.loss.lambda = 0.02;
  return r;
}

std::string RunConfig::to_json() const {
  const json j = {{"net", json::parse(net.to_json())},
                  {"body", body_json(body)},
                  {"gen", json::parse(gen.to_json())},
                  {"train", json::parse(train.to_json())}};
  return j.dump(2);
}

RunConfig RunConfig::from_json(const std::string& text) {
  return with_json_errors("config", [&] {
    const json j = json::parse(text);
    RunConfig r;
    for (auto it = j.begin(); it != j.end(); ++it)
      if (it.key() != "net" && it.key() != "body" && it.key() != "gen" && it.key() != "train")
        throw std::invalid_argument("config: unknown section '" + it.key() + "'");
    if (j.contains("net")) r.net = NetConfig::from_json(j.at("net").dump());
    if (j.contains("body")) r.body = body_from_json(j.at("body"));
    if (j.contains("gen")) {
      r.gen = GenConfig::from_json(j.at("gen").dump());
    } else {
      r.gen.image_size = r.net.image_size;
      r.gen.patch_size = r.net.patch_size;
    }
    if (j.contains("train")) r.train = TrainConfig::from_json(j.at("train").dump());
    return r;
  });
}

RunConfig RunConfig::load(const std::filesystem::path& path) { return from_json(io::read_text(path)); }

void save_checkpoint(const std::filesystem::path& path, const Net& net, const TrainConfig& train) {
  const json meta = {{"net", json::parse(net.config().to_json())},
                     {"body", body_json(net.body().config())},
                     {"train", json::parse(train.to_json())},
                     {"rng", {{"seed", train.seed}, {"step", net.store().step()}}}};
  // Write then rename so an interrupted save never clobbers the last good file.
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  net.store().save(tmp, meta.dump());
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  auto loaded = nn::ParamStore::load(path);
  return with_json_errors("checkpoint " + path.string(), [&] {
    const json meta = json::parse(loaded.meta_json);
    Checkpoint c{NetConfig::from_json(meta.at("net").dump()), body_from_json(meta.at("body")),
                 TrainConfig::from_json(meta.at("train").dump()), std::move(loaded.store)};
    return c;
  });
}

std::string StepLoss::to_json() const {
  const json j = {{"step", step},     {"det", parts.det},       {"params", parts.params},
                  {"mesh", parts.mesh}, {"reproj", parts.reproj}, {"total", total}};
  return j.dump();
}

Trainer::Trainer(const TrainConfig& config, Net& net, const Dataset& data) : config_(config), net_(&net), data_(&data) {
  config_.validate();
  const NetConfig& nc = net.config();
  const DatasetHeader& h = data.header;
  if (h.image_size != nc.image_size || h.patch_size != nc.patch_size || h.channels != nc.channels)
    throw std::invalid_argument("dataset images (" + std::to_string(h.image_size) + " px, patch " +
                                std::to_string(h.patch_size) + ", " + std::to_string(h.channels) +
                                " channels) do not match the network");
  if (!(h.body == net.body().config())) throw std::invalid_argument("dataset was generated with a different body model");
  if (data.samples.empty()) throw std::invalid_argument("dataset is empty");
  if (config_.flip && !net.body().symmetric())
    throw std::invalid_argument("flip augmentation needs a left/right symmetric body model");
  const BodyModel& model = net.body();
  for (const auto& s : data.samples) {
    targets_.push_back(build_targets(s.scene, model, nc.patch_size));
    if (config_.flip) {
      flipped_scenes_.push_back(flip_scene(s.scene, model));
      flipped_targets_.push_back(build_targets(flipped_scenes_.back(), model, nc.patch_size));
      flipped_images_.push_back(flip_image(s.image));
    }
  }
}

std::vector<std::pair<std::size_t, bool>> Trainer::batch(std::int64_t step) const {
  std::mt19937_64 rng(child_seed(config_.seed, static_cast<std::uint64_t>(step)));
  std::uniform_int_distribution<std::size_t> pick(0, data_->samples.size() - 1);
  std::bernoulli_distribution coin(0.5);
  std::vector<std::pair<std::size_t, bool>> out;
  for (int b = 0; b < config_.batch_size; ++b) {
    const std::size_t idx = pick(rng);
    const bool flip = coin(rng);
    out.emplace_back(idx, config_.flip && flip);
  }
  return out;
}

StepLoss Trainer::compute(std::int64_t step, nn::Gradients* grads) const {
  const auto items = batch(step);
  const Net& net = *net_;
  struct Slot {
    LossParts parts;
    double total = 0.0;
    nn::Gradients grads;
  };
  std::vector<Slot> slots(items.size());
  parallel_for(items.size(), [&](std::size_t b) {
    const auto [idx, flip] = items[b];
    const SceneSample& scene = flip ? flipped_scenes_[idx] : data_->samples[idx].scene;
    const io::Image& image = flip ? flipped_images_[idx] : data_->samples[idx].image;
    const TrainTargets& targets = flip ? flipped_targets_[idx] : targets_[idx];
    const std::optional<Camera> camera =
        net.config().camera_aware ? std::optional<Camera>(scene.camera) : std::nullopt;
    std::vector<int> tokens;
    for (const auto& p : targets.people) tokens.push_back(p.token);
    nn::Graph g(&net.store(), grads != nullptr);
    const ForwardResult fwd = net.teacher_forced(g, image, tokens, camera);
    const LossTensors losses =
        compute_losses(g, fwd, targets, scene.camera, net.decode_camera(camera), config_.loss);
    slots[b].parts = losses.parts();
    slots[b].total = losses.total.value().item();
    if (grads) {
      g.backward(losses.total);
      slots[b].grads = g.parameter_gradients();
    }
  });
  StepLoss out;
  out.step = step;
  const double inv = 1.0 / static_cast<double>(items.size());
  for (const auto& s : slots) {
    out.parts.det += s.parts.det;
    out.parts.params += s.parts.params;
    out.parts.mesh += s.parts.mesh;
    out.parts.reproj += s.parts.reproj;
    out.total += s.total;
  }
  out.parts.det *= inv;
  out.parts.params *= inv;
  out.parts.mesh *= inv;
  out.parts.reproj *= inv;
  out.total *= inv;
  if (grads) {
    *grads = std::move(slots[0].grads);
    for (std::size_t b = 1; b < slots.size(); ++b) *grads += slots[b].grads;
    grads->scale(inv);
  }
  return out;
}

StepLoss Trainer::step() {
  const std::int64_t s = current_step();
  const nn::ParamStore& store = net_->store();
  for (nn::ParamId id = 0; id < store.size(); ++id)
    for (double v : store.value(id).values())
      if (!std::isfinite(v)) throw NonFiniteLoss("non-finite parameter " + store.name(id) + " at step " + std::to_string(s));
  nn::Gradients grads;
  const StepLoss loss = compute(s, &grads);
  if (!std::isfinite(loss.total) || !grads.all_finite())
    throw NonFiniteLoss("non-finite loss or gradient at step " + std::to_string(s));
  net_->store().adam_step(grads, config_.adam);
  return loss;
}

MetricReport evaluate(const Net& net, const Dataset& data, const EvalOptions& options) {
  const NetConfig& nc = net.config();
  if (data.header.image_size != nc.image_size || !(data.header.body == net.body().config()))
    throw std::invalid_argument("dataset does not match the checkpoint (image size or body model)");
  const double threshold = options.match_threshold > 0 ? options.match_threshold : 2.0 * nc.patch_size;
  std::vector<std::vector<PersonPrediction>> preds(data.samples.size());
  parallel_for(data.samples.size(), [&](std::size_t i) {
    const auto& s = data.samples[i];
    const std::optional<Camera> camera = nc.camera_aware ? std::optional<Camera>(s.scene.camera) : std::nullopt;
    std::optional<std::vector<int>> forced;
    if (options.forced_detections) {
      forced.emplace();
      for (const auto& t : build_targets(s.scene, net.body(), nc.patch_size).people) forced->push_back(t.token);
    }
    preds[i] = net.infer(s.image, camera, options.tau, forced);
  });
  MetricAccumulator acc(net.body(), threshold);
  for (std::size_t i = 0; i < data.samples.size(); ++i) acc.add(preds[i], data.samples[i].scene.people, data.samples[i].scene.camera);
  return acc.report();
}

std::vector<StepLoss> train(const TrainConfig& config, Net& net, const Dataset& data, const TrainOptions& options) {
  Trainer trainer(config, net, data);
  std::ofstream log;
  std::ofstream eval_log;
  if (!options.log.empty()) {
    log.open(options.log, std::ios::app);
    if (!log) throw std::runtime_error("cannot open log " + options.log.string());
  }
  std::vector<StepLoss> history;
  while (trainer.current_step() < config.max_steps) {
    const StepLoss loss = trainer.step();
    history.push_back(loss);
    if (log) log << loss.to_json() << '\n' << std::flush;
    if (options.on_step) options.on_step(loss);
    const std::int64_t done = trainer.current_step();
    if (config.eval_interval > 0 && done % config.eval_interval == 0) {
      const MetricReport r = evaluate(net, data);
      if (!options.log.empty()) {
        if (!eval_log.is_open()) {
          std::filesystem::path p = options.log;
          p += ".eval.jsonl";
          eval_log.open(p, std::ios::app);
        }
        json j = json::parse(r.to_json());
        j["step"] = done;
        eval_log << j.dump() << '\n' << std::flush;
      }
    }
    if (!options.checkpoint.empty() && config.checkpoint_interval > 0 && done % config.checkpoint_interval == 0)
      save_checkpoint(options.checkpoint, net, config);
  }
  if (!options.checkpoint.empty()) save_checkpoint(options.checkpoint, net, config);
  return history;
}

std::string BenchReport::to_json() const {
  json rs = json::array();
  for (const auto& r : results)
    rs.push_back({{"people", r.people},
                  {"median_ms", r.median_ms},
                  {"p10_ms", r.p10_ms},
                  {"p90_ms", r.p90_ms},
                  {"min_ms", r.min_ms},
                  {"max_ms", r.max_ms}});
  const json j = {{"parameter_count", parameter_count}, {"repetitions", repetitions}, {"warmup", warmup}, {"results", rs}};
  return j.dump(2);
}

BenchReport bench(const Net& net, const std::vector<int>& person_counts, int repetitions, int warmup,
                  std::uint64_t seed) {
  if (repetitions < 1 || warmup < 0) throw std::invalid_argument("bench: repetitions must be >= 1");
  const NetConfig& nc = net.config();
  BenchReport report;
  report.parameter_count = net.store().parameter_count();
  report.repetitions = repetitions;
  report.warmup = warmup;
  for (int n : person_counts) {
    if (n < 0 || n > nc.tokens()) throw std::invalid_argument("bench: person count out of range");
    GenConfig gen;
    gen.image_size = nc.image_size;
    gen.patch_size = nc.patch_size;
    gen.min_people = gen.max_people = n;
    const SceneSample scene = sample_scene(child_seed(seed, static_cast<std::uint64_t>(n)), gen, net.body());
    const io::Image image = render(scene, net.body());
    std::vector<int> tokens;
    for (const auto& t : build_targets(scene, net.body(), nc.patch_size).people) tokens.push_back(t.token);
    const std::optional<Camera> camera = nc.camera_aware ? std::optional<Camera>(scene.camera) : std::nullopt;
    std::vector<double> times;
    for (int r = 0; r < warmup + repetitions; ++r) {
      const auto t0 = std::chrono::steady_clock::now();
      const auto preds = net.infer(image, camera, std::nullopt, tokens);
      const auto t1 = std::chrono::steady_clock::now();
      if (preds.size() != tokens.size()) throw std::logic_error("bench: decoded person count mismatch");
      if (r >= warmup) times.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    BenchResult br;
    br.people = n;
    br.median_ms = percentile(times, 0.5);
    br.p10_ms = percentile(times, 0.1);
    br.p90_ms = percentile(times, 0.9);
    br.min_ms = *std::min_element(times.begin(), times.end());
    br.max_ms = *std::max_element(times.begin(), times.end());
    report.results.push_back(br);
  }
  return report;
}

nn::GradCheckResult check_network_gradients(const RunConfig& config, std::uint64_t seed, int people,
                                            const nn::GradCheckOptions& options) {
  const BodyModel body = BodyModel::make_toy(config.body);
  Net net(config.net, body, seed);
  GenConfig gen = config.gen;
  gen.image_size = config.net.image_size;
  gen.patch_size = config.net.patch_size;
  gen.min_people = gen.max_people = people;
  const SceneSample scene = sample_scene(child_seed(seed, 1), gen, body);
  const io::Image image = render(scene, body);
  const TrainTargets targets = build_targets(scene, body, config.net.patch_size);
  std::vector<int> tokens;
  for (const auto& p : targets.people) tokens.push_back(p.token);
  const std::optional<Camera> camera =
      config.net.camera_aware ? std::optional<Camera>(scene.camera) : std::nullopt;
  LossWeights weights = config.train.loss;
  weights.detection = weights.params = weights.mesh = weights.reproj = true;
  const nn::LossBuilder build = [&](nn::Graph& g) {
    const ForwardResult fwd = net.teacher_forced(g, image, tokens, camera);
    return compute_losses(g, fwd, targets, scene.camera, net.decode_camera(camera), weights).total;
  };
  return nn::grad_check(net.store(), build, options);
}

Letterbox letterbox(const io::Image& image, int size) {
  if (size <= 0 || image.width <= 0 || image.height <= 0) throw std::invalid_argument("letterbox: empty image or size");
  Letterbox out;
  out.scale = static_cast<double>(size) / std::max(image.width, image.height);
  const int w = std::max(1, static_cast<int>(std::lround(image.width * out.scale)));
  const int h = std::max(1, static_cast<int>(std::lround(image.height * out.scale)));
  out.image = io::Image{size, size, image.channels,
                        std::vector<float>(static_cast<std::size_t>(size) * size * image.channels, 0.0f)};
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      // Sample the source at the pixel center.
      const double sx = std::clamp((x + 0.5) / out.scale - 0.5, 0.0, image.width - 1.0);
      const double sy = std::clamp((y + 0.5) / out.scale - 0.5, 0.0, image.height - 1.0);
      const int x0 = static_cast<int>(std::floor(sx)), y0 = static_cast<int>(std::floor(sy));
      const int x1 = std::min(x0 + 1, image.width - 1), y1 = std::min(y0 + 1, image.height - 1);
      const double fx = sx - x0, fy = sy - y0;
      for (int c = 0; c < image.channels; ++c) {
        const double v = (1 - fx) * (1 - fy) * image.at(x0, y0, c) + fx * (1 - fy) * image.at(x1, y0, c) +
                         (1 - fx) * fy * image.at(x0, y1, c) + fx * fy * image.at(x1, y1, c);
        out.image.at(x, y, c) = static_cast<float>(v);
      }
    }
  return out;
}

}  // namespace mhmr

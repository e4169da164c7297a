// mhmr: generate data, train, evaluate, run inference and benchmark.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "mhmr/errors.hpp"
#include "mhmr/io.hpp"
#include "mhmr/pipeline.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace mhmr;

namespace {

// Exit codes.
enum Exit : int {
  kOk = 0,
  kRuntime = 1,
  kUsage = 2,
  kMissingFile = 3,
  kFormat = 4,
  kInvalidConfig = 5,
  kNonFinite = 6,
  kGradCheck = 7,
};

struct Failure {
  int code;
  std::string message;
};

[[noreturn]] void fail(int code, const std::string& message) { throw Failure{code, message}; }

void require_file(const std::string& path, const char* what) {
  if (path.empty()) fail(kUsage, std::string("missing --") + what);
  if (!fs::is_regular_file(path)) fail(kMissingFile, std::string(what) + " file not found: " + path);
}

RunConfig load_config(const std::string& path) {
  if (path.empty()) return RunConfig{};
  require_file(path, "config");
  try {
    return RunConfig::load(path);
  } catch (const std::invalid_argument& e) {
    fail(kInvalidConfig, e.what());
  }
}

Camera read_camera(const std::string& path) {
  require_file(path, "camera");
  try {
    return load_camera(path);
  } catch (const std::invalid_argument& e) {
    fail(kInvalidConfig, std::string("camera: ") + e.what());
  }
}

Dataset load_dataset(const std::string& path, std::optional<BodyModel>& body) {
  require_file(path, "data");
  const DatasetHeader h = read_dataset_header(path);
  if (!body) body.emplace(BodyModel::make_toy(h.body));
  return read_dataset(path, *body);
}

json vec_json(const Vec2& v) { return json::array({v.x(), v.y()}); }
json vec_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

json prediction_json(const PersonPrediction& p) {
  json pose = json::array();
  for (Eigen::Index r = 0; r < p.params.pose.rows(); ++r)
    pose.push_back(json::array({p.params.pose(r, 0), p.params.pose(r, 1), p.params.pose(r, 2)}));
  return {{"patch", json::array({p.patch_i, p.patch_j})},
          {"score", p.score},
          {"coords", vec_json(p.coords)},
          {"depth", p.depth},
          {"location", vec_json(p.location)},
          {"pose", pose},
          {"shape", std::vector<double>(p.params.shape.data(), p.params.shape.data() + p.params.shape.size())},
          {"expression",
           std::vector<double>(p.params.expression.data(), p.params.expression.data() + p.params.expression.size())}};
}

struct Args {
  std::string config, data, checkpoint, image, out, camera, log;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::size_t count = 0;
  std::optional<double> tau;
  std::vector<int> people = {1, 2, 5, 10};
  int repetitions = 30;
  bool forced = false;
};

int cmd_gen(const Args& a) {
  if (a.out.empty()) fail(kUsage, "missing --out");
  if (a.count == 0) fail(kUsage, "--count must be positive");
  const RunConfig rc = load_config(a.config);
  GenConfig gen = rc.gen;
  try {
    gen.validate();
  } catch (const std::invalid_argument& e) {
    fail(kInvalidConfig, e.what());
  }
  const BodyModel body = BodyModel::make_toy(rc.body);
  const Dataset d = generate_dataset(gen, body, a.seed, a.count);
  write_dataset(a.out, d);
  std::size_t people = 0;
  for (const auto& s : d.samples) people += s.scene.people.size();
  std::cout << "wrote " << d.samples.size() << " scenes (" << people << " people) to " << a.out << '\n';
  return kOk;
}

int cmd_train(const Args& a) {
  if (a.out.empty()) fail(kUsage, "missing --out");
  RunConfig rc = load_config(a.config);
  std::optional<Checkpoint> resume;
  if (!a.checkpoint.empty()) {
    require_file(a.checkpoint, "checkpoint");
    resume.emplace(load_checkpoint(a.checkpoint));
    if (a.config.empty()) {
      rc.net = resume->net;
      rc.body = resume->body;
      rc.train = resume->train;
    } else if (!(rc.net == resume->net) || !(rc.body == resume->body)) {
      fail(kFormat, "checkpoint network or body model does not match --config");
    }
  }
  if (a.seed_set) rc.train.seed = a.seed;
  try {
    rc.net.validate();
    rc.train.validate();
  } catch (const std::invalid_argument& e) {
    fail(kInvalidConfig, e.what());
  }
  std::optional<BodyModel> body(BodyModel::make_toy(rc.body));
  const Dataset data = load_dataset(a.data, body);
  if (!(data.header.body == rc.body)) fail(kFormat, "dataset was generated with a different body model than the config");
  std::optional<Net> net;
  if (resume) {
    net.emplace(rc.net, *body, std::move(resume->store));
  } else {
    net.emplace(rc.net, *body, rc.train.seed);
  }
  TrainOptions opts;
  opts.checkpoint = a.out;
  opts.log = a.log.empty() ? fs::path(a.out + ".log.jsonl") : fs::path(a.log);
  const std::int64_t start = net->store().step();
  try {
    train(rc.train, *net, data, opts);
  } catch (const std::invalid_argument& e) {
    fail(kFormat, e.what());
  } catch (const NonFiniteLoss& e) {
    fail(kNonFinite, std::string(e.what()) + "; last checkpoint kept at " + a.out);
  }
  std::cout << "trained steps " << start << ".." << net->store().step() << ", checkpoint " << a.out << '\n';
  return kOk;
}

Net net_from_checkpoint(const std::string& path, std::optional<BodyModel>& body) {
  require_file(path, "checkpoint");
  Checkpoint c = load_checkpoint(path);
  body.emplace(BodyModel::make_toy(c.body));
  return Net(c.net, *body, std::move(c.store));
}

int cmd_eval(const Args& a) {
  std::optional<BodyModel> body;
  const Net net = net_from_checkpoint(a.checkpoint, body);
  const Dataset data = load_dataset(a.data, body);
  EvalOptions opts;
  opts.tau = a.tau;
  opts.forced_detections = a.forced;
  MetricReport r;
  try {
    r = evaluate(net, data, opts);
  } catch (const std::invalid_argument& e) {
    fail(kFormat, e.what());
  }
  if (!a.out.empty()) io::write_text(a.out, r.to_json() + "\n");
  std::cout << r.table();
  return kOk;
}

int cmd_infer(const Args& a) {
  if (a.out.empty()) fail(kUsage, "missing --out");
  std::optional<BodyModel> body;
  const Net net = net_from_checkpoint(a.checkpoint, body);
  require_file(a.image, "image");
  io::Image image = io::read_pfm(a.image);
  const NetConfig& nc = net.config();
  if (image.channels != nc.channels)
    fail(kFormat, "image has " + std::to_string(image.channels) + " channels, network expects " +
                      std::to_string(nc.channels));
  double scale = 1.0;
  if (image.width != nc.image_size || image.height != nc.image_size) {
    Letterbox lb = letterbox(image, nc.image_size);
    image = std::move(lb.image);
    scale = lb.scale;
  }
  std::optional<Camera> camera;
  if (!a.camera.empty()) {
    camera = read_camera(a.camera);
    // Intrinsics follow the letterbox resize.
    camera->focal *= scale;
    camera->principal *= scale;
    camera->width = camera->height = nc.image_size;
  }
  // A camera-blind network still decodes depth and placement with the given camera.
  const std::vector<PersonPrediction> preds = net.infer(image, camera, a.tau);
  fs::create_directories(a.out);
  json people = json::array();
  for (std::size_t k = 0; k < preds.size(); ++k) {
    const auto& p = preds[k];
    json pj = prediction_json(p);
    const std::string obj = "person_" + std::to_string(k) + ".obj";
    write_obj(fs::path(a.out) / obj, p.vertices, body->faces());
    pj["mesh"] = obj;
    people.push_back(pj);
  }
  const json out = {{"image", fs::path(a.image).filename().string()}, {"scale", scale}, {"people", people}};
  const fs::path stem = fs::path(a.image).stem();
  io::write_text(fs::path(a.out) / (stem.string() + ".json"), out.dump(2) + "\n");
  std::cout << preds.size() << " people\n";
  return kOk;
}

int cmd_bench(const Args& a) {
  std::optional<BodyModel> body;
  std::optional<Net> net;
  if (!a.checkpoint.empty()) {
    net.emplace(net_from_checkpoint(a.checkpoint, body));
  } else {
    const RunConfig rc = load_config(a.config);
    body.emplace(BodyModel::make_toy(rc.body));
    net.emplace(rc.net, *body, a.seed);
  }
  const BenchReport r = bench(*net, a.people, a.repetitions, 3, a.seed);
  if (!a.out.empty()) io::write_text(a.out, r.to_json() + "\n");
  std::cout << r.to_json() << '\n';
  return kOk;
}

int cmd_gradcheck(const Args& a) {
  const RunConfig rc = a.config.empty() ? RunConfig::tiny() : load_config(a.config);
  nn::GradCheckOptions opts;
  opts.seed = a.seed;
  const nn::GradCheckResult r = check_network_gradients(rc, a.seed, 2, opts);
  const json j = {{"max_rel_error", r.max_rel_error}, {"worst_param", r.worst_param},
                  {"worst_index", r.worst_index},     {"analytic", r.worst_analytic},
                  {"numeric", r.worst_numeric},       {"coordinates", r.coordinates},
                  {"loss", r.loss}};
  if (!a.out.empty()) io::write_text(a.out, j.dump(2) + "\n");
  std::printf("max relative error %.3e over %zu coordinates (worst: %s[%zu])\n", r.max_rel_error, r.coordinates,
              r.worst_param.c_str(), r.worst_index);
  if (!(r.max_rel_error <= 1e-4)) fail(kGradCheck, "gradient check failed: error above 1e-4");
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-person whole-body mesh recovery"};
  app.require_subcommand(1);
  Args a;
  auto seed_opt = [&](CLI::App* c) {
    c->add_option_function<std::uint64_t>(
        "--seed",
        [&](std::uint64_t s) {
          a.seed = s;
          a.seed_set = true;
        },
        "Random seed");
  };

  CLI::App* gen = app.add_subcommand("gen", "Generate a synthetic dataset");
  gen->add_option("--config", a.config, "Run config JSON (body and gen sections)");
  gen->add_option("--count", a.count, "Number of scenes")->required();
  gen->add_option("--out", a.out, "Output dataset file")->required();
  seed_opt(gen);

  CLI::App* tr = app.add_subcommand("train", "Train (or resume) a network");
  tr->add_option("--config", a.config, "Run config JSON");
  tr->add_option("--data", a.data, "Dataset file")->required();
  tr->add_option("--checkpoint", a.checkpoint, "Checkpoint to resume from");
  tr->add_option("--out", a.out, "Output checkpoint")->required();
  tr->add_option("--log", a.log, "JSON-lines loss log (default <out>.log.jsonl)");
  seed_opt(tr);

  CLI::App* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  ev->add_option("--checkpoint", a.checkpoint, "Checkpoint")->required();
  ev->add_option("--data", a.data, "Dataset file")->required();
  ev->add_option("--tau", a.tau, "Detection threshold");
  ev->add_option("--out", a.out, "Metric JSON output");
  ev->add_flag("--forced", a.forced, "Decode at ground-truth patches instead of detections");

  CLI::App* inf = app.add_subcommand("infer", "Predict meshes for one PFM image");
  inf->add_option("--checkpoint", a.checkpoint, "Checkpoint")->required();
  inf->add_option("--image", a.image, "Input image (PFM)")->required();
  inf->add_option("--out", a.out, "Output directory")->required();
  inf->add_option("--tau", a.tau, "Detection threshold");
  inf->add_option("--camera", a.camera, "Camera JSON {focal, principal: [u, v], size: [w, h]}");

  CLI::App* be = app.add_subcommand("bench", "Time inference against the number of people");
  be->add_option("--checkpoint", a.checkpoint, "Checkpoint (default: untrained net from --config)");
  be->add_option("--config", a.config, "Run config JSON");
  be->add_option("--people", a.people, "Person counts")->expected(1, -1);
  be->add_option("--count", a.repetitions, "Timed repetitions per count")->check(CLI::PositiveNumber);
  be->add_option("--out", a.out, "Timing JSON output");
  seed_opt(be);

  CLI::App* gc = app.add_subcommand("gradcheck", "Compare analytic and finite-difference gradients");
  gc->add_option("--config", a.config, "Run config JSON (default: tiny)");
  gc->add_option("--out", a.out, "Result JSON output");
  seed_opt(gc);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*gen) return cmd_gen(a);
    if (*tr) return cmd_train(a);
    if (*ev) return cmd_eval(a);
    if (*inf) return cmd_infer(a);
    if (*be) return cmd_bench(a);
    if (*gc) return cmd_gradcheck(a);
  } catch (const Failure& f) {
    std::cerr << "error: " << f.message << '\n';
    return f.code;
  } catch (const FormatError& e) {
    std::cerr << "error: format: " << e.what() << '\n';
    return kFormat;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: invalid argument: " << e.what() << '\n';
    return kInvalidConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntime;
  }
  return kUsage;
}

// Acceptance runner: one PASS/FAIL line per criterion.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "mhmr/pipeline.hpp"

using namespace mhmr;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

struct Settings {
  fs::path workdir;
  std::int64_t steps = 20000;
  int bench_reps = 30;
};

Outcome gradients(const Settings&) {
  const auto t0 = std::chrono::steady_clock::now();
  nn::GradCheckOptions o;
  o.step = 1e-5;
  double worst = 0;
  std::string where;
  std::size_t coords = 0;
  for (std::uint64_t seed : {1, 2, 3}) {
    const nn::GradCheckResult r = check_network_gradients(RunConfig::tiny(), seed, 2, o);
    coords += r.coordinates;
    if (r.max_rel_error >= worst) {
      worst = r.max_rel_error;
      where = r.worst_param + "[" + std::to_string(r.worst_index) + "]";
    }
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-4 && secs <= 300,
          fmt("max rel err %.2e at %s over %zu coords, %.1f s", worst, where.c_str(), coords, secs)};
}

Outcome geometry(const Settings&) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(-1, 1), z(0.2, 20), f(50, 2000);
  double worst_rt = 0;
  for (int i = 0; i < 10000; ++i) {
    Camera c;
    c.focal = f(rng);
    c.width = c.height = 448;
    c.principal = Vec2(224 + 20 * u(rng), 224 + 20 * u(rng));
    const double d = z(rng);
    const Vec3 p(u(rng) * d, u(rng) * d, d);
    const Vec3 back = backproject(c, project(c, p), p.z());
    worst_rt = std::max(worst_rt, (back - p).norm() / std::max(1.0, p.norm()));
  }
  double worst_pa = 0;
  std::normal_distribution<double> n(0, 1);
  for (int i = 0; i < 100; ++i) {
    Points3 src(30, 3);
    for (Eigen::Index k = 0; k < src.size(); ++k) src.data()[k] = n(rng);
    const Vec3 aa(n(rng), n(rng), n(rng));
    const Mat3 R = axis_angle_to_matrix(aa).matrix();
    const double s = std::exp(0.5 * n(rng));
    const Vec3 t(n(rng), n(rng), n(rng));
    Points3 dst = (s * (src * R.transpose())).rowwise() + t.transpose();
    const SimilarityTransform T = procrustes_align(src, dst);
    worst_pa = std::max({worst_pa, std::abs(T.scale - s), (T.rotation.matrix() - R).cwiseAbs().maxCoeff(),
                         (T.translation - t).cwiseAbs().maxCoeff()});
  }
  return {worst_rt <= 1e-9 && worst_pa <= 1e-6,
          fmt("round trip err %.1e over 1e4 points, procrustes param err %.1e over 100 cases", worst_rt, worst_pa)};
}

Outcome depth_law(const Settings&) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0, 1.5);
  std::uniform_real_distribution<double> f(10, 3000);
  double worst = 0;
  for (int i = 0; i < 10000; ++i) {
    const double eta = n(rng), fs = f(rng);
    const double d1 = decode_depth(eta, fs, fs), d2 = decode_depth(eta, 2 * fs, fs);
    worst = std::max(worst, std::abs(d2 - std::sqrt(d1)) / std::sqrt(d1));
  }
  const double unit = decode_depth(0.0, 500.0, 500.0);
  // Same law through the network: one image, decode with f and 2f.
  const RunConfig rc = RunConfig::tiny();
  const BodyModel body = BodyModel::make_toy(rc.body);
  const Net net(rc.net, body, 1);
  const SceneSample s = sample_scene(2, rc.gen, body);
  const io::Image im = render(s, body);
  const std::vector<int> tokens = {build_targets(s, body, rc.net.patch_size).people.at(0).token};
  Camera wide = rc.net.standard_camera();
  Camera tele = wide;
  tele.focal *= 2;
  const double a = net.infer(im, wide, std::nullopt, tokens).at(0).depth;
  const double b = net.infer(im, tele, std::nullopt, tokens).at(0).depth;
  const double net_err = std::abs(b - std::sqrt(a)) / std::sqrt(a);
  const double eps = 4 * std::numeric_limits<double>::epsilon();
  return {worst <= eps && unit == 1.0 && net_err <= eps,
          fmt("rel err %.1e (10^4 draws), %.1e through the net, d(eta=0) = %.17g", worst, net_err, unit)};
}

Outcome loss_units(const Settings&) {
  const double b = bce(0.5, 1.0);
  const double t = total_loss({1, 2, 3, 4}, 0.5);
  return {std::abs(b - 0.6931) <= 1e-4 && t == 6.5, fmt("BCE(1, 0.5) = %.6f, total((1,2,3,4), 0.5) = %g", b, t)};
}

// Shared by criteria 5 and 6.
struct OverfitRun {
  bool done = false;
  double seconds = 0;
  double loss0 = 0, loss_end = 0;
  MetricReport train_init, train_final, train_forced_init, train_forced_final;
  MetricReport held_final, held_forced_init, held_forced_final;
};

const OverfitRun& overfit(const Settings& st) {
  static OverfitRun run;
  if (run.done) return run;
  const auto t0 = std::chrono::steady_clock::now();
  RunConfig rc = RunConfig::tiny();
  rc.train.max_steps = st.steps;
  rc.train.flip = false;
  rc.train.checkpoint_interval = 0;
  rc.train.seed = 1;
  const BodyModel body = BodyModel::make_toy(rc.body);
  const Dataset train_set = generate_dataset(rc.gen, body, 1, 64);
  const Dataset held = generate_dataset(rc.gen, body, 1001, 32);
  Net net(rc.net, body, rc.train.seed);
  EvalOptions forced;
  forced.forced_detections = true;
  run.train_init = evaluate(net, train_set);
  run.train_forced_init = evaluate(net, train_set, forced);
  run.held_forced_init = evaluate(net, held, forced);
  TrainOptions o;
  o.checkpoint = st.workdir / "overfit.ckpt";
  o.log = st.workdir / "overfit.log.jsonl";
  fs::remove(o.log);
  const auto hist = train(rc.train, net, train_set, o);
  // Mean over the last 100 steps smooths batch-to-batch noise.
  const std::size_t k = std::min<std::size_t>(100, hist.size());
  for (std::size_t i = hist.size() - k; i < hist.size(); ++i) run.loss_end += hist[i].total / static_cast<double>(k);
  run.loss0 = hist.front().total;
  run.train_final = evaluate(net, train_set);
  run.train_forced_final = evaluate(net, train_set, forced);
  run.seconds = seconds_since(t0);
  run.held_final = evaluate(net, held);
  run.held_forced_final = evaluate(net, held, forced);
  run.done = true;
  return run;
}

Outcome overfit_criterion(const Settings& st) {
  const OverfitRun& r = overfit(st);
  const double p0 = r.train_forced_init.pve.value_or(NAN), p1 = r.train_forced_final.pve.value_or(NAN);
  const double drop = 1 - p1 / p0;
  const double loss_drop = 1 - r.loss_end / r.loss0;
  const bool ok = r.train_final.f1 >= 0.95 && drop >= 0.8 && r.seconds <= 1800;
  return {ok, fmt("F1 %.3f (P %.3f R %.3f), PVE %.1f -> %.1f mm (-%.1f%%), loss -%.1f%%, %.0f s", r.train_final.f1,
                  r.train_final.precision, r.train_final.recall, p0, p1, 100 * drop, 100 * loss_drop, r.seconds)};
}

Outcome generalization(const Settings& st) {
  const OverfitRun& r = overfit(st);
  const double p0 = r.held_forced_init.pve.value_or(NAN), p1 = r.held_forced_final.pve.value_or(NAN);
  const bool ok = r.held_final.f1 >= 0.90 && p1 <= 0.5 * p0;
  return {ok, fmt("held-out F1 %.3f (P %.3f R %.3f), PVE %.1f -> %.1f mm (%.0f%% of untrained)", r.held_final.f1,
                  r.held_final.precision, r.held_final.recall, p0, p1, 100 * p1 / p0)};
}

Outcome camera_effect(const Settings& st) {
  RunConfig rc = RunConfig::tiny();
  rc.gen.focal_multipliers = {1.0, 1.5};
  rc.train.max_steps = st.steps;
  rc.train.checkpoint_interval = 0;
  rc.train.seed = 2;
  const BodyModel body = BodyModel::make_toy(rc.body);
  const Dataset train_set = generate_dataset(rc.gen, body, 2, 64);
  const Dataset held = generate_dataset(rc.gen, body, 2002, 32);
  EvalOptions forced;
  forced.forced_detections = true;
  double mrpe[2] = {0, 0};
  for (int aware = 0; aware < 2; ++aware) {
    NetConfig nc = rc.net;
    nc.camera_aware = aware == 1;
    Net net(nc, body, rc.train.seed);
    TrainOptions o;
    o.log = st.workdir / (aware ? "camera_aware.log.jsonl" : "camera_blind.log.jsonl");
    fs::remove(o.log);
    train(rc.train, net, train_set, o);
    mrpe[aware] = evaluate(net, held, forced).mrpe.value_or(NAN);
  }
  const double gain = 1 - mrpe[1] / mrpe[0];
  return {gain >= 0.10, fmt("held-out MRPE blind %.0f mm, camera-aware %.0f mm (%.1f%% lower)", mrpe[0], mrpe[1],
                            100 * gain)};
}

Outcome scaling(const Settings& st) {
  // Paper-resolution network; scaling is a property of the architecture, so
  // untrained weights time the same path.
  const RunConfig rc = RunConfig::from_json("{}");
  const BodyModel body = BodyModel::make_toy(rc.body);
  const Net net(rc.net, body, 0);
  const BenchReport r = bench(net, {1, 10}, st.bench_reps, 3, 4);
  std::ofstream(st.workdir / "bench.json") << r.to_json() << '\n';
  const double ratio = r.results[1].median_ms / r.results[0].median_ms;
  return {ratio <= 1.15, fmt("median %.2f ms (N=1) vs %.2f ms (N=10), ratio %.3f, %d reps, %zu params",
                             r.results[0].median_ms, r.results[1].median_ms, ratio, r.repetitions, r.parameter_count)};
}

Outcome metric_oracles(const Settings&) {
  std::vector<std::string> bad;
  // PCK: 14 joints, one off by 0.2 m.
  Points3 g = Points3::Zero(14, 3);
  for (int j = 0; j < 14; ++j) g.row(j) << 0.1 * j, -0.05 * j, 0.02 * j;
  Points3 p = g;
  p(7, 0) += 0.2;
  std::vector<int> all(14);
  for (int j = 0; j < 14; ++j) all[static_cast<std::size_t>(j)] = j;
  const double pck = pck3d(p, g, all, 0);
  if (std::abs(pck - 13.0 / 14.0) > 1e-12) bad.push_back(fmt("pck %.4f", pck));

  // Pairwise ordering: (2,1,3) vs (1,2,3) swaps one of three pairs.
  const double pc = pcod({2, 1, 3}, {1, 2, 3}).value_or(-1);
  const std::string pcod_note = fmt("PCOD((2,1,3),(1,2,3)) = %.4f", pc);
  if (std::abs(pc - 1.0 / 3.0) > 1e-12) bad.push_back(pcod_note + " (expected 1/3)");

  // Matching vs exhaustive search.
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0, 40);
  std::uniform_int_distribution<int> cnt(0, 4);
  int mismatches = 0;
  for (int t = 0; t < 5000; ++t) {
    std::vector<Vec2> a(static_cast<std::size_t>(cnt(rng))), b(static_cast<std::size_t>(cnt(rng)));
    for (auto& v : a) v = Vec2(u(rng), u(rng));
    for (auto& v : b) v = Vec2(u(rng), u(rng));
    const double tau = 12;
    const Matching m = match_people(a, b, tau);
    double d = 0;
    for (auto [i, j] : m.pairs) d += (a[i] - b[j]).norm();
    std::size_t best_n = 0;
    double best_d = 0;
    std::vector<bool> used(b.size(), false);
    std::function<void(std::size_t, std::size_t, double)> rec = [&](std::size_t k, std::size_t n, double dd) {
      if (k == a.size()) {
        if (n > best_n || (n == best_n && dd < best_d)) best_n = n, best_d = dd;
        return;
      }
      rec(k + 1, n, dd);
      for (std::size_t j = 0; j < b.size(); ++j) {
        const double dist = (a[k] - b[j]).norm();
        if (used[j] || dist > tau) continue;
        used[j] = true;
        rec(k + 1, n + 1, dd + dist);
        used[j] = false;
      }
    };
    rec(0, 0, 0.0);
    if (m.pairs.size() != best_n || std::abs(d - best_d) > 1e-9) ++mismatches;
  }
  if (mismatches) bad.push_back(fmt("%d matching mismatches", mismatches));

  // PA-PVE <= PVE.
  const BodyModel body = BodyModel::make_toy(BodyModelConfig::tiny());
  std::normal_distribution<double> n(0, 0.3);
  int pa_violations = 0;
  auto rnd = [&](int rows) {
    Points3 x(rows, 3);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = n(rng);
    return x;
  };
  for (int t = 0; t < 1000; ++t) {
    const Points3 pv = rnd(body.num_vertices()), gv = rnd(body.num_vertices());
    const Points3 pj = rnd(body.num_joints()), gj = rnd(body.num_joints());
    if (*pve(pv, pj, gv, gj, body, Align::Procrustes) > *pve(pv, pj, gv, gj, body) + 1e-9) ++pa_violations;
  }
  if (pa_violations) bad.push_back(fmt("%d PA-PVE > PVE", pa_violations));

  std::string detail = fmt("PCK %.4f, ", pck) + pcod_note + fmt(", matching 0/5000 off: %s, PA<=PVE 1000/1000: %s",
                                                                 mismatches ? "no" : "yes", pa_violations ? "no" : "yes");
  if (!bad.empty()) {
    detail += "; failing:";
    for (const auto& b : bad) detail += " " + b + ";";
  }
  return {bad.empty(), detail};
}

Outcome determinism(const Settings& st) {
  auto once = [&](const std::string& tag) {
    RunConfig rc = RunConfig::tiny();
    rc.train.max_steps = 300;
    rc.train.checkpoint_interval = 0;
    rc.train.seed = 11;
    const BodyModel body = BodyModel::make_toy(rc.body);
    const fs::path ds = st.workdir / ("det_" + tag + ".bin");
    write_dataset(ds, generate_dataset(rc.gen, body, 11, 16));
    const Dataset data = read_dataset(ds, body);
    Net net(rc.net, body, rc.train.seed);
    const fs::path ck = st.workdir / ("det_" + tag + ".ckpt");
    train(rc.train, net, data, {.checkpoint = ck});
    const Checkpoint c = load_checkpoint(ck);
    const Net back(c.net, body, c.store);
    EvalOptions o;
    o.tau = 0.2;
    const std::string metrics = evaluate(back, data, o).to_json();
    return std::make_tuple(slurp(ds), slurp(ck), metrics);
  };
  const auto a = once("a");
  const auto b = once("b");
  const bool ds = std::get<0>(a) == std::get<0>(b), ck = std::get<1>(a) == std::get<1>(b),
             m = std::get<2>(a) == std::get<2>(b);
  return {ds && ck && m, fmt("dataset %s, checkpoint (%zu bytes) %s, metric JSON %s", ds ? "identical" : "DIFFERS",
                             std::get<1>(a).size(), ck ? "identical" : "DIFFERS", m ? "identical" : "DIFFERS")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app("Acceptance checks");
  Settings st;
  std::string workdir = "acceptance_work";
  std::vector<int> only;
  std::vector<int> known;
  app.add_option("--workdir", workdir, "Scratch directory");
  app.add_option("--steps", st.steps, "Training steps for the learning runs");
  app.add_option("--bench-reps", st.bench_reps, "Timed repetitions for the scaling check");
  app.add_option("--only", only, "Run only these criteria");
  app.add_option("--expect-fail", known, "Criteria whose failure is documented and does not fail the run");
  CLI11_PARSE(app, argc, argv);
  st.workdir = workdir;
  fs::create_directories(st.workdir);

  const std::map<int, std::pair<const char*, std::function<Outcome(const Settings&)>>> criteria = {
      {1, {"gradient correctness", gradients}},
      {2, {"geometry round trips and procrustes", geometry}},
      {3, {"depth decode law", depth_law}},
      {4, {"loss unit values", loss_units}},
      {5, {"overfit run", overfit_criterion}},
      {6, {"generalization smoke", generalization}},
      {7, {"camera conditioning", camera_effect}},
      {8, {"single-shot scaling", scaling}},
      {9, {"metric oracles", metric_oracles}},
      {10, {"determinism", determinism}},
  };
  const std::set<int> selected(only.begin(), only.end());
  const std::set<int> expected(known.begin(), known.end());
  int unexpected = 0;
  for (const auto& [id, c] : criteria) {
    if (!selected.empty() && !selected.count(id)) continue;
    Outcome o;
    try {
      o = c.second(st);
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("%s criterion %d (%s): %s\n", o.pass ? "PASS" : "FAIL", id, c.first, o.detail.c_str());
    std::fflush(stdout);
    if (!o.pass && !expected.count(id)) ++unexpected;
  }
  if (!expected.empty()) {
    std::printf("failures tolerated for criteria:");
    for (int k : expected) std::printf(" %d", k);
    std::printf("\n");
  }
  return unexpected ? 1 : 0;
}

#include <benchmark/benchmark.h>

#include "mhmr/pipeline.hpp"

using namespace mhmr;

namespace {

struct Fixture {
  RunConfig rc;
  BodyModel body;
  Net net;
  Dataset data;

  explicit Fixture(RunConfig c)
      : rc(std::move(c)), body(BodyModel::make_toy(rc.body)), net(rc.net, body, 0), data(generate_dataset(rc.gen, body, 1, 8)) {}
};

Fixture& tiny() {
  static Fixture f(RunConfig::tiny());
  return f;
}

Fixture& full() {
  static Fixture f([] {
    RunConfig c = RunConfig::from_json("{}");
    c.gen.max_people = 10;
    return c;
  }());
  return f;
}

void BM_BodyForward(benchmark::State& state) {
  const BodyModel& b = full().body;
  const BodyParams p = b.mean_params();
  for (auto _ : state) benchmark::DoNotOptimize(b.forward(p));
}
BENCHMARK(BM_BodyForward);

void BM_EncodeFull(benchmark::State& state) {
  Fixture& f = full();
  const io::Image& im = f.data.samples[0].image;
  for (auto _ : state) {
    nn::Graph g(&f.net.store(), false);
    benchmark::DoNotOptimize(f.net.encode(g, im, nullptr));
  }
}
BENCHMARK(BM_EncodeFull)->Unit(benchmark::kMillisecond);

void BM_InferPeople(benchmark::State& state) {
  Fixture& f = full();
  const int n = static_cast<int>(state.range(0));
  GenConfig g = f.rc.gen;
  g.min_people = g.max_people = n;
  const SceneSample s = sample_scene(n, g, f.body);
  const io::Image im = render(s, f.body);
  std::vector<int> tokens;
  for (const auto& t : build_targets(s, f.body, f.rc.net.patch_size).people) tokens.push_back(t.token);
  for (auto _ : state) benchmark::DoNotOptimize(f.net.infer(im, std::nullopt, std::nullopt, tokens));
}
BENCHMARK(BM_InferPeople)->Arg(1)->Arg(2)->Arg(5)->Arg(10)->Unit(benchmark::kMillisecond);

void BM_TrainStepTiny(benchmark::State& state) {
  Fixture& f = tiny();
  TrainConfig c = f.rc.train;
  c.flip = false;
  Net net(f.rc.net, f.body, 0);
  Trainer t(c, net, f.data);
  for (auto _ : state) benchmark::DoNotOptimize(t.step());
}
BENCHMARK(BM_TrainStepTiny)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();

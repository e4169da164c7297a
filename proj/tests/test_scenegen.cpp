#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numbers>

#include "mhmr/errors.hpp"
#include "mhmr/scenegen.hpp"

using namespace mhmr;
namespace fs = std::filesystem;

namespace {

const BodyModel& body() {
  static const BodyModel m = BodyModel::make_toy(BodyModelConfig::tiny());
  return m;
}

GenConfig tiny_gen() {
  GenConfig g;
  g.image_size = 32;
  g.patch_size = 4;
  return g;
}

bool same_scene(const SceneSample& a, const SceneSample& b) {
  if (a.people.size() != b.people.size() || !(a.camera == b.camera) || a.seed != b.seed) return false;
  for (std::size_t i = 0; i < a.people.size(); ++i) {
    const auto& p = a.people[i];
    const auto& q = b.people[i];
    if (!(p.params == q.params) || p.location != q.location || p.vertices != q.vertices || p.joints != q.joints)
      return false;
  }
  return true;
}

std::size_t footprint(const io::Image& im) {
  std::size_t n = 0;
  for (int y = 0; y < im.height; ++y)
    for (int x = 0; x < im.width; ++x) {
      bool any = false;
      for (int c = 0; c < im.channels; ++c) any |= im.at(x, y, c) != 0.0f;
      n += any;
    }
  return n;
}

}  // namespace

TEST(SampleScene, Deterministic) {
  EXPECT_TRUE(same_scene(sample_scene(5, GenConfig{}, body()), sample_scene(5, GenConfig{}, body())));
  EXPECT_FALSE(same_scene(sample_scene(5, GenConfig{}, body()), sample_scene(6, GenConfig{}, body())));
}

TEST(SampleScene, DefaultCameraIs60DegreeFov) {
  const SceneSample s = sample_scene(1, GenConfig{}, body());
  EXPECT_NEAR(s.camera.focal, 112.0 / std::tan(std::numbers::pi / 6), 1e-12);
}

TEST(SampleScene, CloseUpIsOnePersonNearTwoAndAHalfMeters) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const SceneSample s = sample_scene(seed, GenConfig::close_up(), body());
    ASSERT_EQ(s.people.size(), 1u);
    EXPECT_NEAR(s.people[0].location.z(), 2.5, 0.2 + 1e-12);
  }
}

TEST(SampleScene, PeopleInRangeWithDistinctPatches) {
  const GenConfig g = tiny_gen();
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const SceneSample s = sample_scene(seed, g, body());
    EXPECT_GE(s.people.size(), 1u);
    EXPECT_LE(s.people.size(), 3u);
    const TrainTargets t = build_targets(s, body(), g.patch_size);
    double sum = 0;
    for (double v : t.score_map) sum += v;
    EXPECT_EQ(sum, static_cast<double>(s.people.size()));
    for (const auto& p : s.people) {
      EXPECT_GE(p.location.z(), g.depth_min);
      EXPECT_LE(p.location.z(), g.depth_max);
      EXPECT_LT((p.joints.row(body().primary_joint()).transpose() - p.location).norm(), 1e-12);
    }
  }
}

TEST(SampleScene, FocalMultipliers) {
  GenConfig g = tiny_gen();
  g.focal_multipliers = {1.0, 1.5};
  const double f = Camera::from_fov(32, 32, 60).focal;
  int seen_one = 0, seen_big = 0;
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const double k = sample_scene(seed, g, body()).camera.focal / f;
    seen_one += std::abs(k - 1.0) < 1e-12;
    seen_big += std::abs(k - 1.5) < 1e-12;
  }
  EXPECT_EQ(seen_one + seen_big, 40);
  EXPECT_GT(seen_one, 0);
  EXPECT_GT(seen_big, 0);
}

TEST(SampleScene, ImpossibleCrowdThrows) {
  GenConfig g = tiny_gen();
  g.min_people = g.max_people = 60;
  g.max_attempts = 50;
  EXPECT_THROW(sample_scene(1, g, body()), std::runtime_error);
}

TEST(GenConfig, Validation) {
  GenConfig g;
  g.depth_min = 5;
  g.depth_max = 2;
  EXPECT_THROW(g.validate(), std::invalid_argument);
  g = GenConfig{};
  g.image_size = 30;
  EXPECT_THROW(g.validate(), std::invalid_argument);
  g = GenConfig{};
  g.focal_multipliers.clear();
  EXPECT_THROW(g.validate(), std::invalid_argument);
  EXPECT_EQ(GenConfig::from_json(GenConfig::close_up().to_json()), GenConfig::close_up());
  EXPECT_THROW(GenConfig::from_json(R"({"nope": 1})"), std::invalid_argument);
}

TEST(Render, EmptySceneIsBlack) {
  SceneSample s;
  s.camera = Camera::from_fov(32, 32, 60);
  const io::Image im = render(s, body());
  EXPECT_EQ(im.width, 32);
  EXPECT_EQ(im.channels, kRenderChannels);
  for (float v : im.data) EXPECT_EQ(v, 0.0f);
}

TEST(Render, FartherPersonIsSmaller) {
  SceneSample s;
  s.camera = Camera::from_fov(64, 64, 60);
  s.people.push_back(make_person(body(), body().mean_params(), Vec3(0, -0.3, 2.0)));
  const std::size_t near = footprint(render(s, body()));
  s.people[0] = make_person(body(), body().mean_params(), Vec3(0, -0.3, 4.0));
  const std::size_t far = footprint(render(s, body()));
  EXPECT_GT(near, 0u);
  EXPECT_LT(far, near);
}

TEST(Render, Deterministic) {
  const SceneSample s = sample_scene(2, tiny_gen(), body());
  EXPECT_EQ(render(s, body()), render(s, body()));
}

TEST(BuildTargets, HeadPixelToPatch) {
  SceneSample s;
  s.camera = Camera::from_fov(224, 224, 60);
  const Vec3 t = backproject(s.camera, Vec2(100, 60), 3.0);
  s.people.push_back(make_person(body(), body().mean_params(), t));
  const TrainTargets tt = build_targets(s, body(), 14);
  ASSERT_EQ(tt.people.size(), 1u);
  // floor(100 / 14) = 7 (column), floor(60 / 14) = 4 (row), grid 16.
  EXPECT_EQ(tt.people[0].token, 4 * 16 + 7);
  EXPECT_EQ(tt.score_map[4 * 16 + 7], 1.0);
  EXPECT_NEAR(tt.people[0].coords.x(), 100, 1e-9);
  EXPECT_NEAR(tt.people[0].coords.y(), 60, 1e-9);
  const Vec2 off = tt.people[0].coords - patch_center(7, 4, 14);
  EXPECT_GT(off.x(), -7);
  EXPECT_LE(off.x(), 7);
  EXPECT_GT(off.y(), -7);
  EXPECT_LE(off.y(), 7);
  EXPECT_DOUBLE_EQ(tt.people[0].depth, 3.0);
}

TEST(BuildTargets, SharedPatchRejected) {
  SceneSample s;
  s.camera = Camera::from_fov(224, 224, 60);
  s.people.push_back(make_person(body(), body().mean_params(), backproject(s.camera, Vec2(100, 60), 3.0)));
  s.people.push_back(make_person(body(), body().mean_params(), backproject(s.camera, Vec2(101, 61), 4.0)));
  EXPECT_THROW(build_targets(s, body(), 14), std::invalid_argument);
}

TEST(Flip, SceneAndImageAgree) {
  const GenConfig g = tiny_gen();
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const SceneSample s = sample_scene(seed, g, body());
    const SceneSample f = flip_scene(s, body());
    const io::Image a = flip_image(render(s, body()));
    const io::Image b = render(f, body());
    ASSERT_EQ(a.data.size(), b.data.size());
    double worst = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i) worst = std::max(worst, double(std::abs(a.data[i] - b.data[i])));
    EXPECT_LT(worst, 1e-4);
    for (std::size_t n = 0; n < s.people.size(); ++n) {
      const Vec2 u = project(s.camera, s.people[n].location);
      const Vec2 v = project(f.camera, f.people[n].location);
      EXPECT_NEAR(u.x() + v.x(), 32.0, 1e-9);
      EXPECT_NEAR(u.y(), v.y(), 1e-9);
    }
  }
}

TEST(Dataset, WriteReadRoundTrip) {
  const Dataset d = generate_dataset(tiny_gen(), body(), 3, 10);
  const fs::path p = fs::temp_directory_path() / "mhmr_ds_test.bin";
  write_dataset(p, d);
  const Dataset r = read_dataset(p, body());
  ASSERT_EQ(r.samples.size(), 10u);
  EXPECT_EQ(r.header.seed, 3u);
  EXPECT_EQ(r.header.gen, d.header.gen);
  for (std::size_t i = 0; i < 10; ++i) {
    EXPECT_TRUE(same_scene(r.samples[i].scene, d.samples[i].scene)) << i;
    EXPECT_EQ(r.samples[i].image, d.samples[i].image);
  }
  fs::remove(p);
}

TEST(Dataset, GenerationIsThreadCountIndependent) {
  const Dataset a = generate_dataset(tiny_gen(), body(), 9, 6);
  for (std::size_t i = 0; i < 6; ++i) {
    const SceneSample s = sample_scene(child_seed(9, i), tiny_gen(), body());
    EXPECT_TRUE(same_scene(a.samples[i].scene, s));
    EXPECT_EQ(a.samples[i].image, render(s, body()));
  }
}

TEST(Dataset, TruncatedFileIsFormatError) {
  const Dataset d = generate_dataset(tiny_gen(), body(), 3, 4);
  const fs::path p = fs::temp_directory_path() / "mhmr_ds_trunc.bin";
  write_dataset(p, d);
  fs::resize_file(p, fs::file_size(p) - 17);
  EXPECT_THROW(read_dataset(p, body()), FormatError);
  fs::resize_file(p, 5);
  EXPECT_THROW(read_dataset(p, body()), FormatError);
  fs::remove(p);
}

TEST(Dataset, BodyMismatchRefused) {
  const Dataset d = generate_dataset(tiny_gen(), body(), 3, 2);
  const fs::path p = fs::temp_directory_path() / "mhmr_ds_body.bin";
  write_dataset(p, d);
  BodyModelConfig other = BodyModelConfig::tiny();
  other.seed = 99;
  try {
    read_dataset(p, BodyModel::make_toy(other));
    FAIL() << "expected a format error";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("body"), std::string::npos);
  }
  fs::remove(p);
}

TEST(Pfm, RoundTrip) {
  const io::Image im = render(sample_scene(4, tiny_gen(), body()), body());
  const fs::path p = fs::temp_directory_path() / "mhmr_img.pfm";
  io::write_pfm(p, im);
  EXPECT_EQ(io::read_pfm(p), im);
  fs::remove(p);
}

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mhmr/body_model.hpp"
#include "mhmr/geometry.hpp"
#include "mhmr/io.hpp"
#include "mhmr/losses.hpp"

namespace mhmr {

struct GenConfig {
  int image_size = 224;
  int patch_size = 14;
  int min_people = 1;
  int max_people = 3;
  double body_amplitude = 0.35;  // per axis-angle component, radians
  double hand_amplitude = 0.25;
  double jaw_amplitude = 0.15;
  double shape_range = 1.0;
  double expression_range = 1.0;
  double depth_min = 1.5;
  double depth_max = 6.0;
  double fov_deg = 60.0;
  // The focal is fov focal times one of these, chosen uniformly.
  std::vector<double> focal_multipliers = {1.0};
  // Head pixel ranges as fractions of the image size.
  double head_u_min = 0.05, head_u_max = 0.95;
  double head_v_min = 0.05, head_v_max = 0.65;
  int max_attempts = 500;

  /// One person around 2.5 m.
  static GenConfig close_up();
  void validate() const;
  std::string to_json() const;
  static GenConfig from_json(const std::string& text);
  bool operator==(const GenConfig&) const = default;
};

struct ScenePerson {
  BodyParams params;
  Vec3 location = Vec3::Zero();  // head position, camera space
  Points3 vertices;              // camera space
  Points3 joints;                // camera space
};

struct SceneSample {
  std::vector<ScenePerson> people;
  Camera camera;
  std::uint64_t seed = 0;
};

/// Derived seed for item `index` of a run seeded with `seed`.
std::uint64_t child_seed(std::uint64_t seed, std::uint64_t index);

/// Throws std::runtime_error when no valid placement is found.
SceneSample sample_scene(std::uint64_t seed, const GenConfig& config, const BodyModel& model);

/// Places a person with head at `location`.
ScenePerson make_person(const BodyModel& model, const BodyParams& params, const Vec3& location);

constexpr int kRenderChannels = 3;  // body, hands, face

/// Splat rendering; values are rounded to float.
io::Image render(const SceneSample& scene, const BodyModel& model);

TrainTargets build_targets(const SceneSample& scene, const BodyModel& model, int patch_size);

/// Mirror image of the scene about the vertical image axis.
SceneSample flip_scene(const SceneSample& scene, const BodyModel& model);
io::Image flip_image(const io::Image& image);

struct DatasetHeader {
  std::uint64_t count = 0;
  int image_size = 0;
  int patch_size = 0;
  int channels = kRenderChannels;
  BodyModelConfig body;
  GenConfig gen;
  std::uint64_t seed = 0;
};

struct DatasetSample {
  SceneSample scene;
  io::Image image;
};

struct Dataset {
  DatasetHeader header;
  std::vector<DatasetSample> samples;
};

/// `count` scenes from child seeds of `seed`, rendered.
Dataset generate_dataset(const GenConfig& config, const BodyModel& model, std::uint64_t seed, std::size_t count);

void write_dataset(const std::filesystem::path& path, const Dataset& dataset);
DatasetHeader read_dataset_header(const std::filesystem::path& path);
/// Refuses (FormatError) files generated with a different body model.
Dataset read_dataset(const std::filesystem::path& path, const BodyModel& model);

}  // namespace mhmr

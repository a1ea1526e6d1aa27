#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "gstvla/action_chunk.hpp"
#include "gstvla/camera.hpp"
#include "gstvla/vocab.hpp"

namespace gstvla {

inline constexpr std::size_t kImageSize = 224;
inline constexpr std::size_t kPatchGrid = 16;
inline constexpr std::size_t kNumPatches = kPatchGrid * kPatchGrid;
inline constexpr double kFarPlane = 2.0;
inline constexpr double kPreGraspStandoff = 0.10;
inline constexpr double kRetractLift = 0.15;
inline constexpr double kFeatureNoise = 0.05;

// Camera frame: +z looks down onto the table, so the table normal ("up")
// is -z and heights are measured as -z.
inline constexpr Vec3 kUp = {0.0, 0.0, -1.0};

enum class ObjectShape { box, sphere, cylinder, thin_plate };

const char* shape_name(ObjectShape s);
ObjectShape parse_shape(const std::string& s);

struct ObjectRecord {
  ObjectShape shape = ObjectShape::box;
  Vec3 centroid{};
  Vec3 half_extents{};  // sphere: radius on every axis; cylinder: (r, r, half height)
  int class_id = 0;
  Vec3 grasp_point{};
  Vec3 grasp_normal{};
};

/// Fixed geometry per object class used by the random generator.
struct ObjectClass {
  ObjectShape shape;
  Vec3 half_extents;
};
const std::vector<ObjectClass>& object_catalog();

class SceneError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct SceneSpec {
  std::uint64_t seed = 0;
  std::vector<ObjectRecord> objects;
  double table_height = -0.6;  // height of the table surface along kUp
  Intrinsics camera;
  int target_index = 0;
  Vec3 start_offset{};  // initial end-effector position relative to the pre-grasp point

  double table_depth() const { return -table_height; }
  /// Checks every SceneSpec/ObjectRecord invariant; throws SceneError.
  void validate() const;
};

struct SceneGenOptions {
  int min_objects = 1;
  int max_objects = 4;
  double lateral_extent = 0.16;  // |x|, |y| bound for object centroids
  double grid = 0.02;            // placement pitch
  double table_depth_min = 0.50;
  double table_depth_max = 0.60;
  double start_offset_max = 0.04;
};

/// Seeded random scene: distinct classes resting on the table.
SceneSpec random_scene(std::uint64_t seed, const SceneGenOptions& opts = {});

struct SceneSample {
  DepthMap depth;
  std::vector<double> features;  // kNumPatches x feature_width, row-major
  std::size_t feature_width = 0;
  Intrinsics intrinsics;
  SceneSpec spec;
  ThoughtChain chain_gt;
  ActionChunk action_gt;
  std::array<double, 7> proprio{};
  // Pixel index of the object hit per pixel (-1 for background).
  std::vector<int> hit_object;
};

/// Ray-cast depth in meters (z of the nearest hit) for pixel (u, v), or the
/// far plane. `hit` receives the object index or -1.
double cast_ray(const SceneSpec& spec, double u, double v, int* hit = nullptr);

SceneSample generate(const SceneSpec& spec, std::size_t feature_width = 64);

ThoughtChain annotate_chain(const SceneSpec& spec, int target_index);

/// Start end-effector position: pre-grasp point plus start_offset.
Vec3 start_position(const SceneSpec& spec);

/// Piecewise minimum-jerk demonstration through the annotated waypoints.
ActionChunk script_demo(const SceneSpec& spec, int target_index);

/// Feature vector of a class (reserved id -1 for background), unit-scale.
std::vector<double> class_embedding(int class_id, std::size_t width);

}  // namespace gstvla

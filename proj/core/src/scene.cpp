#include "gstvla/scene.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "gstvla/nn.hpp"

namespace gstvla {
namespace {

constexpr double kGrazingTol = 1e-12;
constexpr double kNudge = 1e-9;
constexpr double kMaxStepTranslation = 0.05;
constexpr double kMaxStepRotation = 0.2;
// Segment durations in control steps (start -> pre-grasp -> grasp -> retract).
// Rest-to-rest segments on integer steps cannot meet the per-step bound within
// ten steps, so waypoints are passed at fractional times.
constexpr std::array<double, 3> kSegmentDurations = {0.5, 3.0, 6.5};

double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
Vec3 add(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
Vec3 sub(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
Vec3 scaled(const Vec3& a, double s) { return {a[0] * s, a[1] * s, a[2] * s}; }

bool in_workspace(const Vec3& p) {
  return p[0] >= -0.5 && p[0] <= 0.5 && p[1] >= -0.5 && p[1] <= 0.5 && p[2] >= 0.2 && p[2] <= 1.0;
}

// Slab test along the ray s * r (s >= 0); returns the entry parameter or +inf.
double hit_box(const Vec3& r, const Vec3& c, const Vec3& h) {
  double t0 = 0.0, t1 = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 3; ++i) {
    const double lo = c[i] - h[i], hi = c[i] + h[i];
    if (r[i] == 0.0) {
      if (0.0 < lo || 0.0 > hi) return std::numeric_limits<double>::infinity();
      continue;
    }
    double a = lo / r[i], b = hi / r[i];
    if (a > b) std::swap(a, b);
    t0 = std::max(t0, a);
    t1 = std::min(t1, b);
    if (t0 > t1) return std::numeric_limits<double>::infinity();
  }
  return t0 > 0.0 ? t0 : std::numeric_limits<double>::infinity();
}

double hit_sphere(Vec3 r, const Vec3& c, double radius) {
  for (int attempt = 0; attempt < 2; ++attempt) {
    const double a = dot(r, r);
    const double b = -2.0 * dot(r, c);
    const double cc = dot(c, c) - radius * radius;
    const double disc = b * b - 4.0 * a * cc;
    if (std::abs(disc) < kGrazingTol && attempt == 0) {
      r[0] += kNudge;
      continue;
    }
    if (disc < 0.0) return std::numeric_limits<double>::infinity();
    const double s = (-b - std::sqrt(disc)) / (2.0 * a);
    return s > 0.0 ? s : std::numeric_limits<double>::infinity();
  }
  return std::numeric_limits<double>::infinity();
}

// Cylinder with its axis along the camera z axis.
double hit_cylinder(Vec3 r, const Vec3& c, double radius, double half_h) {
  double best = std::numeric_limits<double>::infinity();
  // Caps (r_z == 1, so the plane z = k is reached at s = k).
  for (double z : {c[2] - half_h, c[2] + half_h}) {
    const double dx = z * r[0] - c[0], dy = z * r[1] - c[1];
    if (z > 0.0 && dx * dx + dy * dy <= radius * radius) best = std::min(best, z);
  }
  for (int attempt = 0; attempt < 2; ++attempt) {
    const double a = r[0] * r[0] + r[1] * r[1];
    if (a == 0.0) break;
    const double b = -2.0 * (r[0] * c[0] + r[1] * c[1]);
    const double cc = c[0] * c[0] + c[1] * c[1] - radius * radius;
    const double disc = b * b - 4.0 * a * cc;
    if (std::abs(disc) < kGrazingTol && attempt == 0) {
      r[0] += kNudge;
      continue;
    }
    if (disc >= 0.0) {
      const double s = (-b - std::sqrt(disc)) / (2.0 * a);
      if (s > 0.0 && std::abs(s - c[2]) <= half_h) best = std::min(best, s);
    }
    break;
  }
  return best;
}

double hit_object(const ObjectRecord& o, const Vec3& r) {
  switch (o.shape) {
    case ObjectShape::sphere:
      return hit_sphere(r, o.centroid, o.half_extents[0]);
    case ObjectShape::cylinder:
      return hit_cylinder(r, o.centroid, o.half_extents[0], o.half_extents[2]);
    case ObjectShape::box:
    case ObjectShape::thin_plate:
      break;
  }
  return hit_box(r, o.centroid, o.half_extents);
}

// Signed distance to the object surface (exact on faces, conservative at edges).
double surface_distance(const ObjectRecord& o, const Vec3& p) {
  const Vec3 d = sub(p, o.centroid);
  switch (o.shape) {
    case ObjectShape::sphere:
      return std::sqrt(dot(d, d)) - o.half_extents[0];
    case ObjectShape::cylinder:
      return std::max(std::hypot(d[0], d[1]) - o.half_extents[0], std::abs(d[2]) - o.half_extents[2]);
    default:
      return std::max({std::abs(d[0]) - o.half_extents[0], std::abs(d[1]) - o.half_extents[1],
                       std::abs(d[2]) - o.half_extents[2]});
  }
}

bool overlaps(const ObjectRecord& a, const ObjectRecord& b, double gap = 0.0) {
  for (int i = 0; i < 3; ++i) {
    if (std::abs(a.centroid[i] - b.centroid[i]) >= a.half_extents[i] + b.half_extents[i] + gap) return false;
  }
  return true;
}

double min_jerk(double tau) { return tau * tau * tau * (10.0 + tau * (-15.0 + 6.0 * tau)); }

}  // namespace

const char* shape_name(ObjectShape s) {
  switch (s) {
    case ObjectShape::box:
      return "box";
    case ObjectShape::sphere:
      return "sphere";
    case ObjectShape::cylinder:
      return "cylinder";
    case ObjectShape::thin_plate:
      return "thin_plate";
  }
  return "box";
}

ObjectShape parse_shape(const std::string& s) {
  if (s == "box") return ObjectShape::box;
  if (s == "sphere") return ObjectShape::sphere;
  if (s == "cylinder") return ObjectShape::cylinder;
  if (s == "thin_plate") return ObjectShape::thin_plate;
  throw SceneError("unknown object shape '" + s + "'");
}

const std::vector<ObjectClass>& object_catalog() {
  // Half heights are multiples of 2 cm so resting centroids share the
  // placement grid.
  static const std::vector<ObjectClass> catalog = {
      {ObjectShape::box, {0.04, 0.04, 0.04}},      {ObjectShape::box, {0.06, 0.03, 0.02}},
      {ObjectShape::sphere, {0.04, 0.04, 0.04}},   {ObjectShape::sphere, {0.06, 0.06, 0.06}},
      {ObjectShape::cylinder, {0.03, 0.03, 0.06}}, {ObjectShape::cylinder, {0.05, 0.05, 0.02}},
      {ObjectShape::thin_plate, {0.07, 0.05, 0.02}}, {ObjectShape::box, {0.03, 0.05, 0.06}},
  };
  return catalog;
}

void SceneSpec::validate() const {
  if (objects.empty() || objects.size() > 6) {
    throw SceneError("scene must hold 1-6 objects, got " + std::to_string(objects.size()));
  }
  camera.validate(kImageSize, kImageSize);
  if (target_index < 0 || target_index >= static_cast<int>(objects.size())) {
    throw SceneError("target_index " + std::to_string(target_index) + " out of range");
  }
  for (std::size_t i = 0; i < objects.size(); ++i) {
    const auto& o = objects[i];
    const std::string tag = "object " + std::to_string(i) + ": ";
    for (double h : o.half_extents)
      if (!(h > 0.0)) throw SceneError(tag + "half extents must be positive");
    if (!in_workspace(o.centroid)) throw SceneError(tag + "centroid outside the workspace box");
    if (std::abs(std::sqrt(dot(o.grasp_normal, o.grasp_normal)) - 1.0) > 1e-9) {
      throw SceneError(tag + "grasp normal is not unit length");
    }
    if (std::abs(surface_distance(o, o.grasp_point)) > 1e-6) throw SceneError(tag + "grasp point is off the surface");
    for (std::size_t j = i + 1; j < objects.size(); ++j) {
      if (overlaps(o, objects[j])) {
        throw SceneError("objects " + std::to_string(i) + " and " + std::to_string(j) + " interpenetrate");
      }
    }
  }
}

SceneSpec random_scene(std::uint64_t seed, const SceneGenOptions& opts) {
  nn::Rng rng(nn::mix_seed(seed, 0x5CE7E));
  const auto& catalog = object_catalog();
  SceneSpec spec;
  spec.seed = seed;

  const auto grid_pick = [&](double lo, double hi) {
    const long n0 = std::lround(lo / opts.grid), n1 = std::lround(hi / opts.grid);
    const long n = n0 + static_cast<long>(rng() % static_cast<std::uint64_t>(n1 - n0 + 1));
    return static_cast<double>(n) * opts.grid;
  };
  const double table_depth = grid_pick(opts.table_depth_min, opts.table_depth_max);
  spec.table_height = -table_depth;

  const int span = opts.max_objects - opts.min_objects + 1;
  const int want = opts.min_objects + static_cast<int>(rng() % static_cast<std::uint64_t>(span));
  std::vector<int> classes(catalog.size());
  for (std::size_t i = 0; i < classes.size(); ++i) classes[i] = static_cast<int>(i);
  for (std::size_t i = classes.size(); i > 1; --i) std::swap(classes[i - 1], classes[rng() % i]);

  for (int k = 0; k < want; ++k) {
    const auto& cls = catalog[static_cast<std::size_t>(classes[static_cast<std::size_t>(k)])];
    ObjectRecord o;
    o.shape = cls.shape;
    o.half_extents = cls.half_extents;
    o.class_id = classes[static_cast<std::size_t>(k)];
    bool placed = false;
    for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
      o.centroid = {grid_pick(-opts.lateral_extent, opts.lateral_extent),
                    grid_pick(-opts.lateral_extent, opts.lateral_extent), table_depth - o.half_extents[2]};
      placed = std::none_of(spec.objects.begin(), spec.objects.end(),
                            [&](const ObjectRecord& other) { return overlaps(o, other, 0.01); });
    }
    if (!placed) break;
    o.grasp_point = add(o.centroid, scaled(kUp, o.half_extents[2]));
    o.grasp_normal = kUp;
    spec.objects.push_back(o);
  }
  spec.target_index = static_cast<int>(rng() % spec.objects.size());
  for (auto& x : spec.start_offset) x = grid_pick(-opts.start_offset_max, opts.start_offset_max);
  spec.validate();
  return spec;
}

double cast_ray(const SceneSpec& spec, double u, double v, int* hit) {
  const Vec3 r = pixel_ray(spec.camera, u, v);
  double best = std::numeric_limits<double>::infinity();
  int idx = -1;
  for (std::size_t i = 0; i < spec.objects.size(); ++i) {
    const double s = hit_object(spec.objects[i], r);
    if (s < best) {
      best = s;
      idx = static_cast<int>(i);
    }
  }
  if (idx < 0 || best >= kFarPlane) {
    if (hit) *hit = -1;
    return kFarPlane;
  }
  if (hit) *hit = idx;
  return best;
}

std::vector<double> class_embedding(int class_id, std::size_t width) {
  nn::Rng rng(nn::mix_seed(0xC1A55E5ULL, static_cast<std::uint64_t>(class_id + 1)));
  std::vector<double> e(width);
  for (auto& x : e) x = nn::uniform(rng, -1.0, 1.0);
  return e;
}

SceneSample generate(const SceneSpec& spec, std::size_t feature_width) {
  spec.validate();
  SceneSample s;
  s.spec = spec;
  s.intrinsics = spec.camera;
  s.feature_width = feature_width;
  s.depth.height = s.depth.width = kImageSize;
  s.depth.values.resize(kImageSize * kImageSize);
  s.hit_object.resize(kImageSize * kImageSize);
  for (std::size_t v = 0; v < kImageSize; ++v)
    for (std::size_t u = 0; u < kImageSize; ++u) {
      int hit = -1;
      s.depth.values[v * kImageSize + u] =
          cast_ray(spec, static_cast<double>(u), static_cast<double>(v), &hit);
      s.hit_object[v * kImageSize + u] = hit;
    }

  // Majority coverage per patch; ties go to the nearer object, background last.
  const std::size_t ps = kImageSize / kPatchGrid;
  const std::size_t n_obj = spec.objects.size();
  nn::Rng noise(nn::mix_seed(spec.seed, 0xFEA7));
  s.features.assign(kNumPatches * feature_width, 0.0);
  std::vector<std::vector<double>> emb;
  for (const auto& o : spec.objects) emb.push_back(class_embedding(o.class_id, feature_width));
  const auto background = class_embedding(-1, feature_width);
  for (std::size_t gy = 0; gy < kPatchGrid; ++gy)
    for (std::size_t gx = 0; gx < kPatchGrid; ++gx) {
      std::vector<std::size_t> count(n_obj + 1, 0);
      for (std::size_t v = gy * ps; v < (gy + 1) * ps; ++v)
        for (std::size_t u = gx * ps; u < (gx + 1) * ps; ++u) {
          const int h = s.hit_object[v * kImageSize + u];
          ++count[h < 0 ? n_obj : static_cast<std::size_t>(h)];
        }
      std::size_t winner = n_obj;
      for (std::size_t i = 0; i < n_obj; ++i) {
        const bool more = count[i] > count[winner];
        const bool tie_nearer = count[i] == count[winner] && count[i] > 0 &&
                                (winner == n_obj || spec.objects[i].centroid[2] < spec.objects[winner].centroid[2]);
        if (more || tie_nearer) winner = i;
      }
      const auto& base = winner == n_obj ? background : emb[winner];
      double* f = s.features.data() + (gy * kPatchGrid + gx) * feature_width;
      for (std::size_t j = 0; j < feature_width; ++j) f[j] = base[j];
      f[0] += 2.0 * static_cast<double>(gx) / static_cast<double>(kPatchGrid - 1) - 1.0;
      if (feature_width > 1) f[1] += 2.0 * static_cast<double>(gy) / static_cast<double>(kPatchGrid - 1) - 1.0;
      for (std::size_t j = 0; j < feature_width; ++j) f[j] += kFeatureNoise * nn::standard_normal(noise);
    }

  s.chain_gt = annotate_chain(spec, spec.target_index);
  s.action_gt = script_demo(spec, spec.target_index);
  const Vec3 start = start_position(spec);
  s.proprio = {start[0], start[1], start[2], 0.0, 0.0, 0.0, 0.0};
  return s;
}

Vec3 start_position(const SceneSpec& spec) {
  const auto& o = spec.objects.at(static_cast<std::size_t>(spec.target_index));
  return add(add(o.grasp_point, scaled(o.grasp_normal, kPreGraspStandoff)), spec.start_offset);
}

namespace {

std::array<Vec3, 4> demo_waypoints(const SceneSpec& spec, int target_index) {
  const auto& o = spec.objects.at(static_cast<std::size_t>(target_index));
  const Vec3 pre = add(o.grasp_point, scaled(o.grasp_normal, kPreGraspStandoff));
  const Vec3 start = add(pre, spec.start_offset);
  const Vec3 retract = add(o.grasp_point, scaled(kUp, kRetractLift));
  return {start, pre, o.grasp_point, retract};
}

}  // namespace

ThoughtChain annotate_chain(const SceneSpec& spec, int target_index) {
  if (target_index < 0 || target_index >= static_cast<int>(spec.objects.size())) {
    throw SceneError("annotate_chain: target index out of range");
  }
  const auto& o = spec.objects[static_cast<std::size_t>(target_index)];
  ThoughtChain c;
  c.centroid = o.centroid;
  c.contact_offset = sub(o.grasp_point, o.centroid);
  c.approach_normal = o.grasp_normal;
  c.vertical_distance = dot(o.centroid, kUp) - spec.table_height;
  double nearest = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < spec.objects.size(); ++i) {
    if (static_cast<int>(i) == target_index) continue;
    const auto& p = spec.objects[i].centroid;
    nearest = std::min(nearest, std::hypot(p[0] - o.centroid[0], p[1] - o.centroid[1]));
  }
  c.lateral_distance = std::isfinite(nearest) ? nearest : 0.0;
  const auto wp = demo_waypoints(spec, target_index);
  for (int w = 0; w < 3; ++w) {
    const Vec3 d = sub(wp[static_cast<std::size_t>(w + 1)], wp[static_cast<std::size_t>(w)]);
    c.waypoints[static_cast<std::size_t>(w)] = {d[0], d[1], d[2], 0.0, 0.0, 0.0};
  }
  return c;
}

ActionChunk script_demo(const SceneSpec& spec, int target_index) {
  const auto wp = demo_waypoints(spec, target_index);
  for (const auto& p : wp) {
    if (!in_workspace(p)) throw SceneError("script_demo: waypoint outside the workspace (unreachable target)");
  }
  ActionChunk chunk;
  const auto position = [&](double t) {
    double t0 = 0.0;
    for (std::size_t seg = 0; seg < kSegmentDurations.size(); ++seg) {
      const double t1 = t0 + kSegmentDurations[seg];
      if (t <= t1 || seg + 1 == kSegmentDurations.size()) {
        if (t >= t1) return wp[seg + 1];
        const double tau = std::max(0.0, (t - t0) / kSegmentDurations[seg]);
        return add(wp[seg], scaled(sub(wp[seg + 1], wp[seg]), min_jerk(tau)));
      }
      t0 = t1;
    }
    return wp[3];
  };
  const double grasp_time = kSegmentDurations[0] + kSegmentDurations[1];
  Vec3 prev = wp[0];
  for (std::size_t step = 0; step < kChunkLength; ++step) {
    const double t = static_cast<double>(step + 1);
    const Vec3 p = step + 1 == kChunkLength ? wp[3] : position(t);
    for (std::size_t ax = 0; ax < 3; ++ax) {
      const double d = p[ax] - prev[ax];
      if (std::abs(d) > kMaxStepTranslation + 1e-12) {
        throw SceneError("script_demo: step " + std::to_string(step) + " exceeds the per-step translation bound");
      }
      chunk.at(step, ax) = d;
    }
    for (std::size_t ax = 3; ax < 6; ++ax) {
      if (std::abs(chunk.at(step, ax)) > kMaxStepRotation) throw SceneError("script_demo: rotation bound exceeded");
    }
    // Gripper closes from the first step that reaches the grasp waypoint.
    chunk.at(step, 6) = t >= grasp_time ? 1.0 : 0.0;
    prev = p;
  }
  return chunk;
}

}  // namespace gstvla

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "gstvla/nn.hpp"
#include "gstvla/scene.hpp"

using namespace gstvla;

namespace {

ObjectRecord sphere_at(Vec3 c, double r, int cls = 2) {
  ObjectRecord o;
  o.shape = ObjectShape::sphere;
  o.centroid = c;
  o.half_extents = {r, r, r};
  o.class_id = cls;
  o.grasp_normal = {0, 0, -1};
  o.grasp_point = {c[0], c[1], c[2] - r};
  return o;
}

ObjectRecord box_at(Vec3 c, Vec3 h, int cls = 0) {
  ObjectRecord o;
  o.shape = ObjectShape::box;
  o.centroid = c;
  o.half_extents = h;
  o.class_id = cls;
  o.grasp_normal = {0, 0, -1};
  o.grasp_point = {c[0], c[1], c[2] - h[2]};
  return o;
}

SceneSpec two_box_scene() {
  SceneSpec s;
  s.seed = 7;
  s.table_height = -0.56;
  s.objects = {box_at({-0.06, 0.0, 0.52}, {0.04, 0.04, 0.04}), box_at({0.08, 0.04, 0.54}, {0.06, 0.03, 0.02}, 1)};
  s.start_offset = {0.01, -0.02, 0.0};
  return s;
}

}  // namespace

TEST(SceneSynth, SphereOnAxisDepth) {
  SceneSpec s;
  s.objects = {sphere_at({0, 0, 0.5}, 0.1)};
  EXPECT_NEAR(cast_ray(s, 112, 112), 0.4, 1e-12);
}

TEST(SceneSynth, EmptySceneIsFarPlane) {
  SceneSpec s;
  int hit = 0;
  for (double u : {0.0, 50.0, 112.0, 223.0}) {
    EXPECT_EQ(cast_ray(s, u, 100, &hit), kFarPlane);
    EXPECT_EQ(hit, -1);
  }
}

TEST(SceneSynth, SameSeedRegeneratesBitIdentically) {
  const SceneSpec s = two_box_scene();
  const SceneSample a = generate(s), b = generate(s);
  EXPECT_EQ(a.depth.values, b.depth.values);
  EXPECT_EQ(a.features, b.features);
  EXPECT_EQ(a.action_gt.deltas, b.action_gt.deltas);
  const SceneSpec r1 = random_scene(7), r2 = random_scene(7);
  EXPECT_EQ(generate(r1).features, generate(r2).features);
}

TEST(SceneSynth, RayCastMatchesAnalyticIntersections) {
  // Sphere: nearest root of |s r - c| = R, converted to z-depth (r_z = 1).
  SceneSpec s;
  const Vec3 c{0.05, -0.03, 0.6};
  const double R = 0.07;
  s.objects = {sphere_at(c, R)};
  const Intrinsics k;
  std::size_t hits = 0;
  for (std::size_t v = 80; v < 130; v += 3) {
    for (std::size_t u = 100; u < 160; u += 3) {
      const Vec3 r = pixel_ray(k, static_cast<double>(u), static_cast<double>(v));
      const double a = r[0] * r[0] + r[1] * r[1] + 1.0;
      const double b = -2.0 * (r[0] * c[0] + r[1] * c[1] + c[2]);
      const double cc = c[0] * c[0] + c[1] * c[1] + c[2] * c[2] - R * R;
      const double disc = b * b - 4 * a * cc;
      const double expected = disc < 0 ? kFarPlane : (-b - std::sqrt(disc)) / (2 * a);
      hits += disc >= 0;
      EXPECT_NEAR(cast_ray(s, static_cast<double>(u), static_cast<double>(v)), expected, 1e-9) << u << "," << v;
    }
  }
  EXPECT_GT(hits, 10u);
}

TEST(SceneSynth, BoxTopFaceDepth) {
  SceneSpec s = two_box_scene();
  const Intrinsics k;
  const auto uv = std::array<double, 2>{k.cx + k.fx * (-0.06 / 0.48), k.cy};
  EXPECT_NEAR(cast_ray(s, std::round(uv[0]), uv[1]), 0.48, 1e-12);
}

TEST(SceneSynth, DepthPositiveAndBackgroundFar) {
  const SceneSample smp = generate(random_scene(3));
  for (std::size_t i = 0; i < smp.depth.values.size(); ++i) {
    EXPECT_GT(smp.depth.values[i], 0.0);
    if (smp.hit_object[i] < 0) {
      EXPECT_EQ(smp.depth.values[i], kFarPlane);
    }
  }
  for (double f : smp.features) EXPECT_TRUE(std::isfinite(f));
  EXPECT_EQ(smp.features.size(), kNumPatches * 64);
}

TEST(SceneSynth, RandomScenesSatisfyInvariants) {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const SceneSpec s = random_scene(nn::mix_seed(7, seed));
    EXPECT_NO_THROW(s.validate()) << seed;
    EXPECT_GE(s.objects.size(), 1u);
    EXPECT_LE(s.objects.size(), 6u);
  }
}

TEST(SceneSynth, ValidateRejectsInterpenetration) {
  SceneSpec s = two_box_scene();
  s.objects[1].centroid = s.objects[0].centroid;
  s.objects[1].grasp_point = {s.objects[1].centroid[0], s.objects[1].centroid[1],
                              s.objects[1].centroid[2] - s.objects[1].half_extents[2]};
  EXPECT_THROW(s.validate(), SceneError);
}

TEST(SceneSynth, ValidateRejectsOffSurfaceGrasp) {
  SceneSpec s = two_box_scene();
  s.objects[0].grasp_point[2] -= 0.01;
  EXPECT_THROW(s.validate(), SceneError);
}

TEST(SceneSynth, C1KeepsTheCentroid) {
  SceneSpec s;
  s.table_height = -0.5;
  s.objects = {box_at({0.15, -0.08, 0.42}, {0.04, 0.04, 0.04})};
  const ThoughtChain c = annotate_chain(s, 0);
  EXPECT_EQ(c.centroid, (Vec3{0.15, -0.08, 0.42}));
}

TEST(SceneSynth, VerticalDistanceIsHeightAboveTable) {
  SceneSpec s;
  s.table_height = -0.56;
  s.objects = {box_at({0.0, 0.0, 0.52}, {0.04, 0.04, 0.04})};
  // Height along the up axis (-z) is -0.52; table at -0.56.
  EXPECT_NEAR(annotate_chain(s, 0).vertical_distance, -0.52 - (-0.56), 1e-15);
}

TEST(SceneSynth, WaypointsReintegrateToGraspPoint) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const SceneSpec s = random_scene(seed);
    const ThoughtChain c = annotate_chain(s, s.target_index);
    const Vec3 start = start_position(s);
    Vec3 p = start;
    for (int w = 0; w < 2; ++w)
      for (int i = 0; i < 3; ++i) p[i] += c.waypoints[w][i];
    const auto& g = s.objects[s.target_index].grasp_point;
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(p[i], g[i], 0.01);
  }
}

TEST(SceneSynth, DemoTelescopesToFinalWaypoint) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const SceneSpec s = random_scene(seed);
    const ActionChunk a = script_demo(s, s.target_index);
    const ThoughtChain c = annotate_chain(s, s.target_index);
    Vec3 net{};
    for (std::size_t k = 0; k < kChunkLength; ++k)
      for (int i = 0; i < 3; ++i) net[i] += a.at(k, i);
    for (int i = 0; i < 3; ++i) {
      const double expected = c.waypoints[0][i] + c.waypoints[1][i] + c.waypoints[2][i];
      EXPECT_NEAR(net[i], expected, 1e-9);
    }
  }
}

TEST(SceneSynth, DemoRespectsStepBoundsAndGripperIsMonotone) {
  for (std::uint64_t seed = 0; seed < 300; ++seed) {
    const SceneSpec s = random_scene(nn::mix_seed(seed, 99));
    const ActionChunk a = script_demo(s, s.target_index);
    for (std::size_t k = 0; k < kChunkLength; ++k) {
      for (int i = 0; i < 3; ++i) EXPECT_LE(std::abs(a.at(k, i)), 0.05 + 1e-12);
      for (int i = 3; i < 6; ++i) EXPECT_LE(std::abs(a.at(k, i)), 0.2);
      if (k > 0) {
        EXPECT_GE(a.at(k, 6), a.at(k - 1, 6));
      }
    }
    EXPECT_EQ(a.at(0, 6), 0.0);
    EXPECT_EQ(a.at(kChunkLength - 1, 6), 1.0);
  }
}

TEST(SceneSynth, DemoIsDeterministic) {
  const SceneSpec s = random_scene(42);
  EXPECT_EQ(script_demo(s, s.target_index).deltas, script_demo(s, s.target_index).deltas);
}

TEST(SceneSynth, AnnotationsAreTranslationCovariant) {
  const SceneSpec s = random_scene(17);
  SceneSpec t = s;
  const Vec3 v{0.02, -0.04, 0.06};
  for (auto& o : t.objects)
    for (int i = 0; i < 3; ++i) {
      o.centroid[i] += v[i];
      o.grasp_point[i] += v[i];
    }
  t.table_height -= v[2];  // the table moves with the objects (height is measured along -z)
  const ThoughtChain a = annotate_chain(s, s.target_index), b = annotate_chain(t, t.target_index);
  for (int i = 0; i < 3; ++i) {
    EXPECT_NEAR(b.centroid[i], a.centroid[i] + v[i], 1e-12);
    EXPECT_NEAR(b.contact_offset[i], a.contact_offset[i], 1e-12);
  }
  EXPECT_NEAR(b.vertical_distance, a.vertical_distance, 1e-12);
  EXPECT_NEAR(b.lateral_distance, a.lateral_distance, 1e-12);
  for (int w = 0; w < 3; ++w)
    for (int i = 0; i < 6; ++i) EXPECT_NEAR(b.waypoints[w][i], a.waypoints[w][i], 1e-12);
  const ActionChunk da = script_demo(s, s.target_index), db = script_demo(t, t.target_index);
  for (std::size_t i = 0; i < kChunkSize; ++i) EXPECT_NEAR(da.deltas[i], db.deltas[i], 1e-12);
}

TEST(SceneSynth, FeaturesArePureFunctionOfSpec) {
  const SceneSpec s = random_scene(5);
  SceneSpec other = s;
  other.seed = s.seed + 1;
  EXPECT_EQ(generate(s).features, generate(s).features);
  EXPECT_NE(generate(s).features, generate(other).features);
}

TEST(SceneSynth, UnreachableTargetRejected) {
  SceneSpec s;
  s.table_height = -1.04;
  s.objects = {box_at({0.0, 0.0, 0.24}, {0.04, 0.04, 0.04})};
  // The pre-grasp point lies 0.10 m above the grasp point, outside the workspace.
  EXPECT_THROW(script_demo(s, 0), SceneError);
}

TEST(SceneSynth, ClassEmbeddingsAreDistinctAndStable) {
  const auto a = class_embedding(3, 64), b = class_embedding(3, 64), c = class_embedding(4, 64);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
  EXPECT_NE(class_embedding(-1, 64), a);
}

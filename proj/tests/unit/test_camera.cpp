#include <gtest/gtest.h>

#include "gstvla/camera.hpp"
#include "gstvla/nn.hpp"

using namespace gstvla;

namespace {

DepthMap constant_depth(double z, std::size_t n = 224) { return {n, n, std::vector<double>(n * n, z)}; }

}  // namespace

TEST(Camera, PrincipalPointBackprojectsOntoAxis) {
  const Intrinsics k;
  DepthMap d = constant_depth(1.0);
  d.values[112 * 224 + 112] = 0.5;
  const Vec3 p = backproject(d, k).at(112, 112);
  EXPECT_EQ(p[0], 0.0);
  EXPECT_EQ(p[1], 0.0);
  EXPECT_EQ(p[2], 0.5);
}

TEST(Camera, FortyFiveDegreeRay) {
  const Intrinsics k;
  DepthMap d = constant_depth(1.0, 400);
  const Vec3 p = backproject(d, k).at(112, 112 + 220);
  EXPECT_NEAR(p[0], 1.0, 1e-15);
  EXPECT_NEAR(p[1], 0.0, 1e-15);
  EXPECT_NEAR(p[2], 1.0, 1e-15);
}

TEST(Camera, ProjectInvertsBackproject) {
  const Intrinsics k;
  nn::Rng rng(4);
  DepthMap d = constant_depth(0.0);
  for (double& v : d.values) v = nn::uniform(rng, 0.2, 2.0);
  const PointMap pm = backproject(d, k);
  for (int i = 0; i < 200; ++i) {
    const std::size_t u = rng() % 224, v = rng() % 224;
    const auto uv = project(k, pm.at(v, u));
    EXPECT_NEAR(uv[0], static_cast<double>(u), 1e-9);
    EXPECT_NEAR(uv[1], static_cast<double>(v), 1e-9);
  }
}

TEST(Camera, NonPositiveDepthIsRejectedWithPixel) {
  DepthMap d = constant_depth(1.0);
  d.values[5 * 224 + 7] = 0.0;
  try {
    backproject(d, Intrinsics{});
    FAIL();
  } catch (const NonPositiveDepth& e) {
    EXPECT_EQ(e.u, 7u);
    EXPECT_EQ(e.v, 5u);
  }
}

TEST(Camera, InvalidIntrinsicsRejected) {
  EXPECT_THROW((Intrinsics{-1.0, 220, 112, 112}.validate(224, 224)), std::invalid_argument);
  EXPECT_THROW((Intrinsics{220, 220, 300, 112}.validate(224, 224)), std::invalid_argument);
}

TEST(Camera, BackprojectionIsHomogeneousInDepth) {
  nn::Rng rng(8);
  DepthMap d = constant_depth(0.0);
  for (double& v : d.values) v = nn::uniform(rng, 0.3, 1.5);
  DepthMap d2 = d;
  for (double& v : d2.values) v *= 2.5;
  const PointMap a = backproject(d, Intrinsics{}), b = backproject(d2, Intrinsics{});
  for (std::size_t i = 0; i < a.xyz.size(); ++i) EXPECT_NEAR(b.xyz[i], 2.5 * a.xyz[i], 1e-15 * std::abs(b.xyz[i]) + 1e-15);
}

TEST(Camera, PlaneAnchorsShareDepth) {
  const AnchorSet a = patch_anchors(backproject(constant_depth(0.73), Intrinsics{}));
  ASSERT_EQ(a.anchors.size(), 256u);
  for (const auto& p : a.anchors) EXPECT_NEAR(p[2], 0.73, 1e-12);
}

TEST(Camera, DepthStepInsidePatchAveragesToMidpoint) {
  // Principal patch (row 8, col 8) covers pixels 112..125; left half 0.4, right half 0.6.
  DepthMap d = constant_depth(1.0);
  for (std::size_t v = 112; v < 126; ++v)
    for (std::size_t u = 112; u < 126; ++u) d.values[v * 224 + u] = u < 119 ? 0.4 : 0.6;
  const AnchorSet a = patch_anchors(backproject(d, Intrinsics{}));
  EXPECT_NEAR(a.anchors[8 * 16 + 8][2], 0.5, 1e-12);
  EXPECT_NEAR(patch_mean_depth(d)[8 * 16 + 8], 0.5, 1e-12);
}

TEST(Camera, AnchorsMatchBruteForceBlockMeans) {
  nn::Rng rng(21);
  DepthMap d = constant_depth(0.0);
  for (double& v : d.values) v = nn::uniform(rng, 0.3, 2.0);
  const Intrinsics k;
  const PointMap pm = backproject(d, k);
  const AnchorSet a = patch_anchors(pm);
  for (std::size_t gy = 0; gy < 16; ++gy) {
    for (std::size_t gx = 0; gx < 16; ++gx) {
      Vec3 s{};
      for (std::size_t v = gy * 14; v < gy * 14 + 14; ++v)
        for (std::size_t u = gx * 14; u < gx * 14 + 14; ++u) {
          const double z = d.at(v, u);
          s[0] += z * (static_cast<double>(u) - k.cx) / k.fx;
          s[1] += z * (static_cast<double>(v) - k.cy) / k.fy;
          s[2] += z;
        }
      for (int i = 0; i < 3; ++i) EXPECT_NEAR(a.anchors[gy * 16 + gx][i], s[i] / 196.0, 1e-12);
    }
  }
}

TEST(Camera, GridMustDivideImage) {
  EXPECT_THROW(patch_anchors(backproject(constant_depth(1.0), Intrinsics{}), 15), std::invalid_argument);
}

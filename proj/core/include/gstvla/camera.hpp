#pragma once

#include <array>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace gstvla {

using Vec3 = std::array<double, 3>;

/// Pinhole intrinsics in pixels.
struct Intrinsics {
  double fx = 220.0;
  double fy = 220.0;
  double cx = 112.0;
  double cy = 112.0;

  /// Throws std::invalid_argument unless fx, fy > 0 and (cx, cy) lies in the image.
  void validate(std::size_t width, std::size_t height) const;
};

/// Row-major H x W depth map in meters.
struct DepthMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> values;

  double at(std::size_t v, std::size_t u) const { return values[v * width + u]; }
};

/// Row-major H x W x 3 camera-frame point map.
struct PointMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> xyz;

  Vec3 at(std::size_t v, std::size_t u) const {
    const double* p = xyz.data() + 3 * (v * width + u);
    return {p[0], p[1], p[2]};
  }
};

class NonPositiveDepth : public std::invalid_argument {
 public:
  NonPositiveDepth(std::size_t u, std::size_t v, double d);
  std::size_t u, v;
};

/// Unnormalized ray K^-1 [u, v, 1]^T (z component 1) at integer pixel coordinates.
Vec3 pixel_ray(const Intrinsics& k, double u, double v);

/// Projects a camera-frame point to pixel coordinates (u, v).
std::array<double, 2> project(const Intrinsics& k, const Vec3& p);

/// p_uv = D_uv * K^-1 [u, v, 1]^T for every pixel.
PointMap backproject(const DepthMap& depth, const Intrinsics& k);

/// Per-patch 3D anchors: the mean point of each (H/grid) x (W/grid) block.
struct AnchorSet {
  std::size_t grid = 0;
  std::vector<Vec3> anchors;  // row-major over the patch grid
};

AnchorSet patch_anchors(const PointMap& points, std::size_t patch_grid = 16);

/// Mean depth over each patch block, in the same order as patch_anchors.
std::vector<double> patch_mean_depth(const DepthMap& depth, std::size_t patch_grid = 16);

}  // namespace gstvla

#include "gstvla/camera.hpp"

#include <cmath>
#include <string>

namespace gstvla {

void Intrinsics::validate(std::size_t width, std::size_t height) const {
  if (!(fx > 0.0) || !(fy > 0.0)) throw std::invalid_argument("intrinsics: focal lengths must be positive");
  if (!(cx >= 0.0 && cx < static_cast<double>(width) && cy >= 0.0 && cy < static_cast<double>(height))) {
    throw std::invalid_argument("intrinsics: principal point outside the image");
  }
}

NonPositiveDepth::NonPositiveDepth(std::size_t u_, std::size_t v_, double d)
    : std::invalid_argument("non-positive or non-finite depth " + std::to_string(d) + " at pixel (u=" +
                            std::to_string(u_) + ", v=" + std::to_string(v_) + ")"),
      u(u_),
      v(v_) {}

Vec3 pixel_ray(const Intrinsics& k, double u, double v) { return {(u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0}; }

std::array<double, 2> project(const Intrinsics& k, const Vec3& p) {
  return {k.fx * p[0] / p[2] + k.cx, k.fy * p[1] / p[2] + k.cy};
}

PointMap backproject(const DepthMap& depth, const Intrinsics& k) {
  PointMap pm;
  pm.height = depth.height;
  pm.width = depth.width;
  pm.xyz.resize(3 * depth.height * depth.width);
  for (std::size_t v = 0; v < depth.height; ++v) {
    for (std::size_t u = 0; u < depth.width; ++u) {
      const double d = depth.at(v, u);
      if (!(d > 0.0) || !std::isfinite(d)) throw NonPositiveDepth(u, v, d);
      const Vec3 r = pixel_ray(k, static_cast<double>(u), static_cast<double>(v));
      double* p = pm.xyz.data() + 3 * (v * depth.width + u);
      p[0] = d * r[0];
      p[1] = d * r[1];
      p[2] = d;
    }
  }
  return pm;
}

AnchorSet patch_anchors(const PointMap& points, std::size_t patch_grid) {
  if (patch_grid == 0 || points.height % patch_grid != 0 || points.width % patch_grid != 0) {
    throw std::invalid_argument("patch_anchors: image " + std::to_string(points.height) + "x" +
                                std::to_string(points.width) + " not divisible by grid " + std::to_string(patch_grid));
  }
  const std::size_t ph = points.height / patch_grid;
  const std::size_t pw = points.width / patch_grid;
  AnchorSet out;
  out.grid = patch_grid;
  out.anchors.resize(patch_grid * patch_grid);
  const double inv = 1.0 / static_cast<double>(ph * pw);
  for (std::size_t gy = 0; gy < patch_grid; ++gy) {
    for (std::size_t gx = 0; gx < patch_grid; ++gx) {
      Vec3 s{0, 0, 0};
      for (std::size_t v = gy * ph; v < (gy + 1) * ph; ++v)
        for (std::size_t u = gx * pw; u < (gx + 1) * pw; ++u) {
          const double* p = points.xyz.data() + 3 * (v * points.width + u);
          s[0] += p[0];
          s[1] += p[1];
          s[2] += p[2];
        }
      out.anchors[gy * patch_grid + gx] = {s[0] * inv, s[1] * inv, s[2] * inv};
    }
  }
  return out;
}

std::vector<double> patch_mean_depth(const DepthMap& depth, std::size_t patch_grid) {
  const std::size_t ph = depth.height / patch_grid;
  const std::size_t pw = depth.width / patch_grid;
  std::vector<double> out(patch_grid * patch_grid, 0.0);
  for (std::size_t gy = 0; gy < patch_grid; ++gy)
    for (std::size_t gx = 0; gx < patch_grid; ++gx) {
      double s = 0;
      for (std::size_t v = gy * ph; v < (gy + 1) * ph; ++v)
        for (std::size_t u = gx * pw; u < (gx + 1) * pw; ++u) s += depth.at(v, u);
      out[gy * patch_grid + gx] = s / static_cast<double>(ph * pw);
    }
  return out;
}

}  // namespace gstvla

#pragma once

#include <cstdint>
#include <vector>

#include "gstvla/autodiff/ops.hpp"
#include "gstvla/camera.hpp"

namespace gstvla {

struct SceneSample;
using ad::Tensor;

/// Camera rays through selected pixels. Origins are the camera center.
/// Target depths are distances along the unit direction, i.e. the z-depth
/// of the pixel scaled by the length of K^-1 [u, v, 1].
struct RayBundle {
  std::vector<Vec3> directions;
  std::vector<double> target_depths;
  std::vector<std::size_t> pixel_ids;

  std::size_t size() const { return directions.size(); }
  void validate() const;
};

struct RenderOptions {
  bool footprint_cutoff = false;  // drop contributions beyond 3 standard deviations
  bool keep_weights = true;
};

struct RenderOutput {
  Tensor rendered;              // [M]
  std::vector<double> weights;  // M x N_p in storage order of the primitives
  std::size_t num_primitives = 0;

  double weight(std::size_t ray, std::size_t prim) const { return weights[ray * num_primitives + prim]; }
};

/// Front-to-back compositing order: ascending distance to the camera center,
/// ties within 1e-12 broken by index.
std::vector<std::size_t> compositing_order(const Tensor& centroids);

/// Alpha-composited expected depth per ray with an analytic backward pass to
/// centroids [N,3], log_scales [N,3] and opacities [N].
RenderOutput render_depth(const Tensor& centroids, const Tensor& log_scales, const Tensor& opacities,
                          const RayBundle& rays, const RenderOptions& opts = {});

/// Scale-invariant log loss (1/n) sum d^2 - (0.85/n^2)(sum d)^2 with
/// d = log(max(rendered, 1e-6)) - log(target).
Tensor depth_loss(const Tensor& rendered, const std::vector<double>& target);

/// Seeded uniform subsample of `count` distinct pixels (every pixel once when
/// count = H*W).
RayBundle ray_bundle_from(const SceneSample& sample, std::size_t count, std::uint64_t seed);

/// Seeded draw of `count` distinct pixel ids out of `total`.
std::vector<std::size_t> ray_bundle_ids(std::size_t total, std::size_t count, std::uint64_t seed);

/// Ray bundle from a depth map and intrinsics for explicit pixel ids.
RayBundle ray_bundle_for(const DepthMap& depth, const Intrinsics& k, const std::vector<std::size_t>& pixel_ids);

}  // namespace gstvla

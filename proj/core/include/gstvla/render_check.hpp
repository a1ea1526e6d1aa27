#pragma once

#include <cstdint>

#include "gstvla/autodiff/grad_check.hpp"
#include "gstvla/splat_render.hpp"

namespace gstvla {

/// Small seeded field with overlapping footprints and a ray bundle through it.
struct RenderCheckCase {
  Tensor centroids, log_scales, opacities;
  RayBundle rays;
};

RenderCheckCase make_render_check_case(std::uint64_t seed, std::size_t primitives = 3, std::size_t rays = 16);

/// Finite-difference check of depth_loss(render_depth(...)) with respect to
/// centroids ("mu"), log-scales ("sigma") and opacities ("alpha").
ad::GradCheckReport check_render_gradients(std::uint64_t seed, std::size_t primitives = 3, std::size_t rays = 16,
                                           double tolerance = 1e-4);

}  // namespace gstvla

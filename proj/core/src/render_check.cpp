#include "gstvla/render_check.hpp"

#include <cmath>

#include "gstvla/nn.hpp"

namespace gstvla {

RenderCheckCase make_render_check_case(std::uint64_t seed, std::size_t primitives, std::size_t rays) {
  if (primitives == 0 || rays == 0) throw std::invalid_argument("render check needs primitives and rays");
  nn::Rng rng(nn::mix_seed(seed, 0x6C4EC));
  const Intrinsics k;
  std::vector<double> c, s, a;
  for (std::size_t i = 0; i < primitives; ++i) {
    // Distinct depths keep the compositing order stable under perturbation.
    const double z = 0.5 + 0.1 * static_cast<double>(i) + nn::uniform(rng, -0.02, 0.02);
    c.insert(c.end(), {nn::uniform(rng, -0.02, 0.02), nn::uniform(rng, -0.02, 0.02), z});
    for (int ax = 0; ax < 3; ++ax) s.push_back(std::log(nn::uniform(rng, 0.02, 0.05)));
    a.push_back(nn::uniform(rng, 0.3, 0.8));
  }
  RenderCheckCase out;
  out.centroids = Tensor::from({primitives, 3}, c, true);
  out.log_scales = Tensor::from({primitives, 3}, s, true);
  out.opacities = Tensor::from({primitives}, a, true);
  for (std::size_t r = 0; r < rays; ++r) {
    const double u = k.cx + nn::uniform(rng, -15.0, 15.0);
    const double v = k.cy + nn::uniform(rng, -15.0, 15.0);
    const Vec3 d = pixel_ray(k, u, v);
    const double len = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
    out.rays.directions.push_back({d[0] / len, d[1] / len, d[2] / len});
    out.rays.target_depths.push_back(nn::uniform(rng, 0.4, 0.9));
    out.rays.pixel_ids.push_back(r);
  }
  return out;
}

ad::GradCheckReport check_render_gradients(std::uint64_t seed, std::size_t primitives, std::size_t rays,
                                           double tolerance) {
  RenderCheckCase cc = make_render_check_case(seed, primitives, rays);
  RenderOptions ro;
  ro.keep_weights = false;
  const auto f = [&] {
    return depth_loss(render_depth(cc.centroids, cc.log_scales, cc.opacities, cc.rays, ro).rendered,
                      cc.rays.target_depths);
  };
  ad::GradCheckOptions opts;
  opts.tolerance = tolerance;
  return ad::grad_check(f, {{"mu", cc.centroids}, {"sigma", cc.log_scales}, {"alpha", cc.opacities}}, opts);
}

}  // namespace gstvla

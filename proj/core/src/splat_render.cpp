#include "gstvla/splat_render.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <stdexcept>

#include "gstvla/nn.hpp"
#include "gstvla/scene.hpp"

namespace gstvla {
namespace {

constexpr double kVarFloor = 1e-12;
constexpr double kRenderedFloor = 1e-6;
constexpr double kSilogLambda = 0.85;

}  // namespace

void RayBundle::validate() const {
  if (target_depths.size() != directions.size() || pixel_ids.size() != directions.size()) {
    throw std::invalid_argument("ray bundle: field lengths differ");
  }
  for (const auto& d : directions) {
    const double n = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
    if (std::abs(n - 1.0) > 1e-9) throw std::invalid_argument("ray bundle: direction is not unit length");
  }
  for (double t : target_depths)
    if (!(t > 0.0)) throw std::invalid_argument("ray bundle: nonpositive target depth");
}

std::vector<std::size_t> compositing_order(const Tensor& centroids) {
  const std::size_t n = centroids.dim(0);
  const auto c = centroids.values();
  std::vector<double> t(n);
  for (std::size_t k = 0; k < n; ++k) t[k] = std::sqrt(c[3 * k] * c[3 * k] + c[3 * k + 1] * c[3 * k + 1] + c[3 * k + 2] * c[3 * k + 2]);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (std::abs(t[a] - t[b]) < 1e-12) return a < b;
    return t[a] < t[b];
  });
  return order;
}

RenderOutput render_depth(const Tensor& centroids, const Tensor& log_scales, const Tensor& opacities,
                          const RayBundle& rays, const RenderOptions& opts) {
  const std::size_t n = centroids.dim(0);
  if (centroids.shape() != ad::Shape{n, 3} || log_scales.shape() != ad::Shape{n, 3} ||
      opacities.shape() != ad::Shape{n}) {
    throw ad::ShapeError("render_depth: centroids " + ad::shape_str(centroids.shape()) + ", log_scales " +
                         ad::shape_str(log_scales.shape()) + ", opacities " + ad::shape_str(opacities.shape()));
  }
  const std::size_t m = rays.size();
  const auto order = compositing_order(centroids);
  const auto c = centroids.values();
  const auto s = log_scales.values();
  const auto alpha = opacities.values();

  // Per-primitive quantities independent of the ray.
  std::vector<double> t(n), var_w(3 * n);
  for (std::size_t k = 0; k < n; ++k) {
    t[k] = std::sqrt(c[3 * k] * c[3 * k] + c[3 * k + 1] * c[3 * k + 1] + c[3 * k + 2] * c[3 * k + 2]);
    for (int i = 0; i < 3; ++i) var_w[3 * k + i] = std::exp(2.0 * s[3 * k + i]);
  }

  RenderOutput out;
  out.num_primitives = n;
  if (opts.keep_weights) out.weights.assign(m * n, 0.0);
  std::vector<double> rendered(m, 0.0);
  for (std::size_t r = 0; r < m; ++r) {
    const Vec3& d = rays.directions[r];
    double trans = 1.0, depth = 0.0;
    for (std::size_t k : order) {
      const double p = c[3 * k] * d[0] + c[3 * k + 1] * d[1] + c[3 * k + 2] * d[2];
      const double e = t[k] - p;
      const double var = std::max(kVarFloor, d[0] * d[0] * var_w[3 * k] + d[1] * d[1] * var_w[3 * k + 1] +
                                                 d[2] * d[2] * var_w[3 * k + 2]);
      if (opts.footprint_cutoff && e * e > 9.0 * var) continue;
      const double a = alpha[k] * std::exp(-0.5 * e * e / var);
      const double w = a * trans;
      depth += w * p;
      if (opts.keep_weights) out.weights[r * n + k] = w;
      trans *= 1.0 - a;
    }
    rendered[r] = depth;
  }

  auto dirs = std::make_shared<std::vector<Vec3>>(rays.directions);
  const bool cutoff = opts.footprint_cutoff;
  out.rendered = ad::make_op(
      "render_depth", {m}, std::move(rendered), {centroids, log_scales, opacities},
      [dirs, order, n, cutoff](ad::Node& self) {
        const auto& cv = self.inputs[0]->value;
        const auto& sv = self.inputs[1]->value;
        const auto& av = self.inputs[2]->value;
        auto& gc = self.inputs[0]->grad_buffer();
        auto& gs = self.inputs[1]->grad_buffer();
        auto& ga = self.inputs[2]->grad_buffer();
        std::vector<double> t(n), vw(3 * n);
        for (std::size_t k = 0; k < n; ++k) {
          t[k] = std::sqrt(cv[3 * k] * cv[3 * k] + cv[3 * k + 1] * cv[3 * k + 1] + cv[3 * k + 2] * cv[3 * k + 2]);
          for (int i = 0; i < 3; ++i) vw[3 * k + i] = std::exp(2.0 * sv[3 * k + i]);
        }
        std::vector<double> p(n), e(n), var(n), g(n), a(n), tr(n);
        std::vector<char> floored(n), skipped(n);
        for (std::size_t r = 0; r < dirs->size(); ++r) {
          const double up = self.grad[r];
          if (up == 0.0) continue;
          const Vec3& d = (*dirs)[r];
          double trans = 1.0;
          for (std::size_t k : order) {
            p[k] = cv[3 * k] * d[0] + cv[3 * k + 1] * d[1] + cv[3 * k + 2] * d[2];
            e[k] = t[k] - p[k];
            const double raw = d[0] * d[0] * vw[3 * k] + d[1] * d[1] * vw[3 * k + 1] + d[2] * d[2] * vw[3 * k + 2];
            floored[k] = raw < kVarFloor;
            var[k] = floored[k] ? kVarFloor : raw;
            skipped[k] = cutoff && e[k] * e[k] > 9.0 * var[k];
            g[k] = skipped[k] ? 0.0 : std::exp(-0.5 * e[k] * e[k] / var[k]);
            a[k] = av[k] * g[k];
            tr[k] = trans;
            trans *= 1.0 - a[k];
          }
          // Suffix R_k = a_{k+1} p_{k+1} + (1 - a_{k+1}) R_{k+1}.
          double rest = 0.0;
          for (auto it = order.rbegin(); it != order.rend(); ++it) {
            const std::size_t k = *it;
            const double w = a[k] * tr[k];
            const double d_a = up * tr[k] * (p[k] - rest);
            rest = a[k] * p[k] + (1.0 - a[k]) * rest;
            if (skipped[k]) continue;
            ga[k] += d_a * g[k];
            const double d_g = d_a * av[k];
            const double d_e = -d_g * g[k] * e[k] / var[k];
            const double d_var = d_g * g[k] * 0.5 * e[k] * e[k] / (var[k] * var[k]);
            const double d_p = up * w - d_e;  // direct depth term, and e = t - p
            const double inv_t = t[k] > 0.0 ? 1.0 / t[k] : 0.0;
            for (int i = 0; i < 3; ++i) {
              gc[3 * k + i] += d_p * d[i] + d_e * cv[3 * k + i] * inv_t;
              if (!floored[k]) gs[3 * k + i] += d_var * 2.0 * d[i] * d[i] * vw[3 * k + i];
            }
          }
        }
      });
  return out;
}

Tensor depth_loss(const Tensor& rendered, const std::vector<double>& target) {
  const std::size_t n = rendered.numel();
  if (target.size() != n) {
    throw ad::ShapeError("depth_loss: rendered " + ad::shape_str(rendered.shape()) + " vs target [" +
                         std::to_string(target.size()) + "]");
  }
  std::vector<double> log_t(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!(target[i] > 0.0)) throw std::invalid_argument("depth_loss: nonpositive target depth");
    log_t[i] = std::log(target[i]);
  }
  const Tensor d = ad::sub(ad::log(ad::clamp_min(ad::reshape(rendered, {n}), kRenderedFloor)),
                           Tensor::from({n}, std::move(log_t)));
  const Tensor m = ad::mean(d);
  return ad::sub(ad::mean(ad::square(d)), ad::scale(ad::square(m), kSilogLambda));
}

RayBundle ray_bundle_for(const DepthMap& depth, const Intrinsics& k, const std::vector<std::size_t>& pixel_ids) {
  RayBundle b;
  b.pixel_ids = pixel_ids;
  for (std::size_t id : pixel_ids) {
    if (id >= depth.values.size()) throw std::out_of_range("ray bundle: pixel id out of range");
    const Vec3 r = pixel_ray(k, static_cast<double>(id % depth.width), static_cast<double>(id / depth.width));
    const double len = std::sqrt(r[0] * r[0] + r[1] * r[1] + r[2] * r[2]);
    b.directions.push_back({r[0] / len, r[1] / len, r[2] / len});
    b.target_depths.push_back(depth.values[id] * len);
  }
  return b;
}

std::vector<std::size_t> ray_bundle_ids(std::size_t total, std::size_t count, std::uint64_t seed) {
  if (count > total) throw std::invalid_argument("ray bundle: count exceeds pixel count");
  std::vector<std::size_t> ids(total);
  std::iota(ids.begin(), ids.end(), 0);
  if (count < total) {
    // Partial Fisher-Yates on a seeded stream.
    nn::Rng rng(nn::mix_seed(seed, 0x4A75));
    for (std::size_t i = 0; i < count; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng() % (total - i));
      std::swap(ids[i], ids[j]);
    }
    ids.resize(count);
  }
  return ids;
}

RayBundle ray_bundle_from(const SceneSample& sample, std::size_t count, std::uint64_t seed) {
  return ray_bundle_for(sample.depth, sample.intrinsics, ray_bundle_ids(sample.depth.values.size(), count, seed));
}

}  // namespace gstvla

#include "gstvla/gst.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace gstvla {
namespace {

// sigma = -2 + 3 tanh(raw + atanh(2/3)) maps raw = 0 to 0 and spans (-5, 1).
const double kSigmaShift = std::atanh(2.0 / 3.0);
constexpr double kMuBound = 0.1;
constexpr double kFixedOpacity = 1.0 - 1e-9;

}  // namespace

std::vector<std::size_t> GSTConfig::f_theta_widths() const {
  const double d = static_cast<double>(feature_width);
  return {feature_width, static_cast<std::size_t>(std::lround(2.0 * d / 3.0)),
          static_cast<std::size_t>(std::lround(d / 2.0)), 7};
}

void GSTConfig::validate() const {
  if (octaves < 1) throw std::invalid_argument("gst: octaves must be >= 1");
  if (num_tokens == 0 || num_tokens > num_patches) {
    throw std::invalid_argument("gst: num_tokens must be in [1, num_patches]");
  }
  if (patch_grid * patch_grid != num_patches) throw std::invalid_argument("gst: num_patches must equal patch_grid^2");
  if (feature_width < 2 || width == 0 || exp_hidden == 0) throw std::invalid_argument("gst: widths must be positive");
  if (pool_mode == PoolMode::average && num_patches % num_tokens != 0) {
    throw std::invalid_argument("gst: average pooling needs num_patches divisible by num_tokens");
  }
}

GSTInput make_gst_input(const std::vector<double>& features, std::size_t feature_width, const DepthMap& depth,
                        const Intrinsics& k, std::size_t patch_grid) {
  const std::size_t n = patch_grid * patch_grid;
  if (features.size() != n * feature_width) throw std::invalid_argument("gst input: feature size mismatch");
  GSTInput in;
  in.features = Tensor::from({n, feature_width}, features);
  const AnchorSet anchors = patch_anchors(backproject(depth, k), patch_grid);
  std::vector<double> a(3 * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < 3; ++j) a[3 * i + j] = anchors.anchors[i][j];
  in.anchors = Tensor::from({n, 3}, std::move(a));
  in.mean_depth = Tensor::from({n, 1}, patch_mean_depth(depth, patch_grid));
  return in;
}

Tensor grid_block_mean(const Tensor& x, std::size_t grid, std::size_t block) {
  const std::size_t n = x.dim(0), d = x.dim(1);
  if (n != grid * grid) throw ad::ShapeError("grid_block_mean: rows " + std::to_string(n) + " != grid^2");
  // Group id per patch and the member list of each group.
  const std::size_t nb = (grid + block - 1) / block;
  std::vector<std::size_t> group(n);
  std::vector<std::vector<std::size_t>> members(nb * nb);
  for (std::size_t gy = 0; gy < grid; ++gy)
    for (std::size_t gx = 0; gx < grid; ++gx) {
      const std::size_t g = (gy / block) * nb + gx / block;
      group[gy * grid + gx] = g;
      members[g].push_back(gy * grid + gx);
    }
  std::vector<double> means(nb * nb * d, 0.0);
  const auto xv = x.values();
  for (std::size_t g = 0; g < members.size(); ++g) {
    if (members[g].empty()) continue;
    const double inv = 1.0 / static_cast<double>(members[g].size());
    for (std::size_t r : members[g])
      for (std::size_t j = 0; j < d; ++j) means[g * d + j] += xv[r * d + j];
    for (std::size_t j = 0; j < d; ++j) means[g * d + j] *= inv;
  }
  std::vector<double> out(n * d);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = means[group[r] * d + j];
  return ad::make_op("grid_block_mean", {n, d}, std::move(out), {x},
                     [group, members, d](ad::Node& self) {
                       auto& gx = self.inputs[0]->grad_buffer();
                       std::vector<double> gsum(members.size() * d, 0.0);
                       for (std::size_t r = 0; r < group.size(); ++r)
                         for (std::size_t j = 0; j < d; ++j) gsum[group[r] * d + j] += self.grad[r * d + j];
                       for (std::size_t g = 0; g < members.size(); ++g) {
                         if (members[g].empty()) continue;
                         const double inv = 1.0 / static_cast<double>(members[g].size());
                         for (std::size_t r : members[g])
                           for (std::size_t j = 0; j < d; ++j) gx[r * d + j] += gsum[g * d + j] * inv;
                       }
                     });
}

Tensor fourier_pe(const Tensor& c, std::size_t octaves) {
  std::vector<Tensor> parts;
  parts.reserve(2 * octaves);
  for (std::size_t l = 0; l < octaves; ++l) {
    const Tensor arg = ad::scale(c, std::ldexp(std::numbers::pi, static_cast<int>(l)));
    parts.push_back(ad::sin(arg));
    parts.push_back(ad::cos(arg));
  }
  return ad::concat(parts, 1);
}

Tensor average_pool_matrix(std::size_t n_queries, std::size_t n_keys) {
  const std::size_t b = n_keys / n_queries;
  std::vector<double> a(n_queries * n_keys, 0.0);
  for (std::size_t q = 0; q < n_queries; ++q)
    for (std::size_t k = q * b; k < (q + 1) * b; ++k) a[q * n_keys + k] = 1.0 / static_cast<double>(b);
  return Tensor::from({n_queries, n_keys}, std::move(a));
}

GST::GST(nn::ParameterStore& ps, const GSTConfig& cfg, nn::Rng& rng, const std::string& prefix) : cfg_(cfg) {
  cfg_.validate();
  const auto w = cfg_.f_theta_widths();
  f0_ = nn::Linear(ps, prefix + ".f_theta.0", w[0], w[1], rng);
  f1_ = nn::Linear(ps, prefix + ".f_theta.1", w[1], w[2], rng);
  f2_ = nn::Linear(ps, prefix + ".f_theta.2", w[2], w[3], rng, true, /*zero_init=*/true);
  e0_ = nn::Linear(ps, prefix + ".f_exp.0", cfg_.mip_width(), cfg_.exp_hidden, rng);
  e1_ = nn::Linear(ps, prefix + ".f_exp.1", cfg_.exp_hidden, 1, rng);
  w_tok_ = nn::Linear(ps, prefix + ".w_tok", cfg_.raw_width(), cfg_.width, rng, false);
  // Every parameter is created regardless of the ablation flags so that
  // initial values do not depend on them.
  std::vector<double> pe(cfg_.num_patches * cfg_.pe_width());
  for (auto& x : pe) x = nn::uniform(rng, -1.0, 1.0);
  learned_pe_ = ps.add(prefix + ".learned_pe", Tensor::from({cfg_.num_patches, cfg_.pe_width()}, std::move(pe), true));
  std::vector<double> q(cfg_.num_tokens * cfg_.width);
  const double bound = 1.0 / std::sqrt(static_cast<double>(cfg_.width));
  for (auto& x : q) x = nn::uniform(rng, -bound, bound);
  q_pool_ = ps.add(prefix + ".q_pool", Tensor::from({cfg_.num_tokens, cfg_.width}, std::move(q), true));
  k_pool_ = nn::Linear(ps, prefix + ".k_pool", cfg_.width, cfg_.width, rng, false);
  v_pool_ = nn::Linear(ps, prefix + ".v_pool", cfg_.width, cfg_.width, rng, false);
}

GaussianParams GST::estimate_params(const Tensor& features) const {
  const Tensor raw = f2_(ad::gelu(f1_(ad::gelu(f0_(features)))));
  GaussianParams p;
  if (cfg_.residual_mode == ResidualMode::zero) {
    p.mu = Tensor::zeros({features.dim(0), 3});
  } else {
    p.mu = ad::scale(ad::tanh(ad::slice(raw, 1, 0, 3)), kMuBound);
  }
  p.sigma = ad::add_scalar(ad::scale(ad::tanh(ad::add_scalar(ad::slice(raw, 1, 3, 6), kSigmaShift)), 3.0), -2.0);
  if (cfg_.scale_mode == ScaleMode::isotropic) {
    const Tensor m = ad::mean(p.sigma, 1);  // [N]
    const Tensor col = ad::reshape(m, {features.dim(0), 1});
    p.sigma = ad::concat({col, col, col}, 1);
  }
  p.logit = ad::slice(raw, 1, 6, 7);
  return p;
}

Tensor GST::opacity(const Tensor& features, const Tensor& logit) const {
  const std::size_t n = features.dim(0);
  if (cfg_.opacity_mode == OpacityMode::fixed_one) return Tensor::full({n}, kFixedOpacity);
  const Tensor mip = ad::concat({features, grid_block_mean(features, cfg_.patch_grid, 2),
                                 grid_block_mean(features, cfg_.patch_grid, 4)},
                                1);
  const Tensor z = ad::add(e1_(ad::gelu(e0_(mip))), logit);
  return ad::reshape(ad::sigmoid(z), {n});
}

Tensor GST::positional_code(const Tensor& centroids) const {
  if (cfg_.pe_mode == PeMode::learned2d) return learned_pe_;
  return fourier_pe(centroids, cfg_.octaves);
}

Tensor GST::form_raw_tokens(const Tensor& features, const Tensor& pe, const Tensor& sigma, const Tensor& alpha,
                            const Tensor* mean_depth) const {
  const std::size_t n = features.dim(0);
  Tensor pe_part = pe, sigma_part = sigma;
  Tensor alpha_part = ad::reshape(alpha, {n, 1});
  switch (cfg_.token_content) {
    case TokenContent::gaussian:
      break;
    case TokenContent::position_only:
      sigma_part = Tensor::zeros({n, 3});
      alpha_part = Tensor::zeros({n, 1});
      break;
    case TokenContent::depth_scalar: {
      if (!mean_depth) throw std::invalid_argument("gst: depth_scalar tokens need patch mean depth");
      pe_part = ad::concat({*mean_depth, Tensor::zeros({n, cfg_.pe_width() - 1})}, 1);
      sigma_part = Tensor::zeros({n, 3});
      alpha_part = Tensor::zeros({n, 1});
      break;
    }
  }
  return w_tok_(ad::concat({features, pe_part, sigma_part, alpha_part}, 1));
}

SpatialTokenSet GST::pool(const Tensor& raw) const {
  SpatialTokenSet out;
  if (cfg_.pool_mode == PoolMode::average) {
    out.attention = average_pool_matrix(cfg_.num_tokens, raw.dim(0));
    out.tokens = ad::matmul(out.attention, raw);
    return out;
  }
  const double s = 1.0 / std::sqrt(static_cast<double>(cfg_.width));
  out.attention = ad::softmax_lastdim(ad::scale(ad::matmul_nt(q_pool_, k_pool_(raw)), s));
  out.tokens = ad::matmul(out.attention, v_pool_(raw));
  return out;
}

std::pair<GaussianField, SpatialTokenSet> GST::tokenize(const GSTInput& in) const {
  GaussianField f;
  const GaussianParams p = estimate_params(in.features);
  f.anchors = in.anchors;
  f.centroids = cfg_.residual_mode == ResidualMode::zero ? in.anchors : ad::add(in.anchors, p.mu);
  f.log_scales = p.sigma;
  f.opacities = opacity(in.features, p.logit);
  f.raw_tokens = form_raw_tokens(in.features, positional_code(f.centroids), f.log_scales, f.opacities, &in.mean_depth);
  SpatialTokenSet z = pool(f.raw_tokens);
  return {std::move(f), std::move(z)};
}

}  // namespace gstvla

#pragma once

#include <string>
#include <utility>
#include <vector>

#include "gstvla/camera.hpp"
#include "gstvla/nn.hpp"

namespace gstvla {

using ad::Tensor;

enum class PeMode { fourier3d, learned2d };
enum class PoolMode { attention, average };
enum class OpacityMode { learned, fixed_one };
enum class ResidualMode { learned, zero };
enum class ScaleMode { anisotropic, isotropic };
/// What the raw-token concat carries besides the patch feature.
enum class TokenContent { gaussian, position_only, depth_scalar };

struct GSTConfig {
  std::size_t num_patches = 256;
  std::size_t num_tokens = 128;  // N_g
  std::size_t width = 128;       // d_g
  std::size_t octaves = 6;       // L
  std::size_t feature_width = 64;
  std::size_t patch_grid = 16;
  std::size_t exp_hidden = 64;  // f_exp hidden width
  PeMode pe_mode = PeMode::fourier3d;
  PoolMode pool_mode = PoolMode::attention;
  OpacityMode opacity_mode = OpacityMode::learned;
  ResidualMode residual_mode = ResidualMode::learned;
  ScaleMode scale_mode = ScaleMode::anisotropic;
  TokenContent token_content = TokenContent::gaussian;

  std::size_t pe_width() const { return 6 * octaves; }
  std::size_t mip_width() const { return 3 * feature_width; }
  std::size_t raw_width() const { return feature_width + pe_width() + 3 + 1; }
  /// f_theta layer widths: d_f, round(2 d_f / 3), round(d_f / 2), 7.
  std::vector<std::size_t> f_theta_widths() const;
  void validate() const;
};

struct GaussianField {
  Tensor anchors;     // [N_p, 3] constant
  Tensor centroids;   // [N_p, 3] anchors + mu
  Tensor log_scales;  // [N_p, 3]
  Tensor opacities;   // [N_p]
  Tensor raw_tokens;  // [N_p, d_g]
};

struct SpatialTokenSet {
  Tensor tokens;     // [N_g, d_g]
  Tensor attention;  // [N_g, N_p]
};

struct GaussianParams {
  Tensor mu;     // [N_p, 3]
  Tensor sigma;  // [N_p, 3]
  Tensor logit;  // [N_p, 1]
};

/// Per-sample inputs of the tokenizer that do not depend on parameters.
struct GSTInput {
  Tensor features;  // [N_p, d_f]
  Tensor anchors;   // [N_p, 3]
  Tensor mean_depth;  // [N_p, 1]
};

GSTInput make_gst_input(const std::vector<double>& features, std::size_t feature_width, const DepthMap& depth,
                        const Intrinsics& k, std::size_t patch_grid = 16);

/// Mean over the (block x block) patch-grid cell containing each patch,
/// with blocks clamped at the grid edge. Rows are patches in row-major grid order.
Tensor grid_block_mean(const Tensor& x, std::size_t grid, std::size_t block);

/// Octave-major Fourier code: per octave l, sin(2^l pi c) then cos(2^l pi c).
Tensor fourier_pe(const Tensor& c, std::size_t octaves);

/// Attention pooling matrix for pool_mode=average: uniform 1/B over
/// contiguous index blocks of size B = n_keys / n_queries.
Tensor average_pool_matrix(std::size_t n_queries, std::size_t n_keys);

class GST {
 public:
  GST() = default;
  GST(nn::ParameterStore& ps, const GSTConfig& cfg, nn::Rng& rng, const std::string& prefix = "gst");

  const GSTConfig& config() const { return cfg_; }
  GSTConfig& mutable_config() { return cfg_; }

  GaussianParams estimate_params(const Tensor& features) const;
  Tensor opacity(const Tensor& features, const Tensor& logit) const;
  Tensor positional_code(const Tensor& centroids) const;
  Tensor form_raw_tokens(const Tensor& features, const Tensor& pe, const Tensor& sigma, const Tensor& alpha,
                         const Tensor* mean_depth = nullptr) const;
  SpatialTokenSet pool(const Tensor& raw_tokens) const;

  std::pair<GaussianField, SpatialTokenSet> tokenize(const GSTInput& in) const;

 private:
  GSTConfig cfg_;
  nn::Linear f0_, f1_, f2_;      // f_theta
  nn::Linear e0_, e1_;           // f_exp
  nn::Linear w_tok_;
  Tensor learned_pe_;            // [N_p, 6L] for pe_mode=learned2d
  Tensor q_pool_;                // [N_g, d_g]
  nn::Linear k_pool_, v_pool_;
};

}  // namespace gstvla

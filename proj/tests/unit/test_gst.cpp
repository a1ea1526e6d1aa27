#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <set>

#include "gstvla/autodiff/grad_check.hpp"
#include "gstvla/gst.hpp"
#include "gstvla/scene.hpp"

using namespace gstvla;

namespace {

struct Fixture {
  nn::ParameterStore ps;
  GST gst;
  GSTInput input;

  explicit Fixture(GSTConfig cfg = {}, std::uint64_t scene_seed = 3) {
    nn::Rng rng(1);
    gst = GST(ps, cfg, rng);
    const SceneSample s = generate(random_scene(scene_seed), cfg.feature_width);
    input = make_gst_input(s.features, s.feature_width, s.depth, s.intrinsics, cfg.patch_grid);
  }
};

GSTConfig small_config() {
  GSTConfig c;
  c.width = 32;
  c.num_tokens = 128;
  return c;
}

}  // namespace

TEST(Gst, ZeroInitialisedHeadGivesZeroParams) {
  Fixture f(small_config());
  const GaussianParams p = f.gst.estimate_params(f.input.features);
  for (double v : p.mu.values()) EXPECT_EQ(v, 0.0);
  for (double v : p.sigma.values()) EXPECT_NEAR(v, 0.0, 1e-15);
  for (double v : p.logit.values()) EXPECT_EQ(v, 0.0);
}

TEST(Gst, ZeroResidualKeepsAnchors) {
  GSTConfig c = small_config();
  c.residual_mode = ResidualMode::zero;
  Fixture f(c);
  for (double& w : f.ps.get("gst.f_theta.2.weight").mutable_values()) w = 0.3;
  const auto [field, pooled] = f.gst.tokenize(f.input);
  const auto a = field.anchors.values(), cc = field.centroids.values();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(cc[i], a[i]);
}

TEST(Gst, IsotropicScalesAreEqualMeans) {
  GSTConfig c = small_config();
  c.scale_mode = ScaleMode::isotropic;
  Fixture f(c);
  nn::Rng rng(2);
  for (double& w : f.ps.get("gst.f_theta.2.weight").mutable_values()) w = nn::uniform(rng, -0.5, 0.5);
  const auto s = f.gst.estimate_params(f.input.features).sigma.values();
  for (std::size_t k = 0; k < s.size() / 3; ++k) {
    EXPECT_EQ(s[3 * k], s[3 * k + 1]);
    EXPECT_EQ(s[3 * k], s[3 * k + 2]);
  }
  // Same heads without the flag: the isotropic value is their mean.
  GSTConfig a = c;
  a.scale_mode = ScaleMode::anisotropic;
  Fixture g(a);
  nn::Rng rng2(2);
  for (double& w : g.ps.get("gst.f_theta.2.weight").mutable_values()) w = nn::uniform(rng2, -0.5, 0.5);
  const auto sa = g.gst.estimate_params(g.input.features).sigma.values();
  EXPECT_NE(sa[0], sa[1]);
}

TEST(Gst, ZeroExpansionWeightsGiveHalfOpacity) {
  Fixture f(small_config());
  for (const auto& p : f.ps.paths_with_prefix("gst.f_exp."))
    for (double& w : f.ps.get(p).mutable_values()) w = 0.0;
  const Tensor feats = Tensor::full({256, 64}, 0.7);
  const GaussianParams p = f.gst.estimate_params(feats);
  for (double a : f.gst.opacity(feats, p.logit).values()) EXPECT_DOUBLE_EQ(a, 0.5);
}

TEST(Gst, FixedOpacityIsOne) {
  GSTConfig c = small_config();
  c.opacity_mode = OpacityMode::fixed_one;
  Fixture f(c);
  const auto [field, pooled] = f.gst.tokenize(f.input);
  for (double a : field.opacities.values()) EXPECT_NEAR(a, 1.0, 1e-9);
}

TEST(Gst, WidthArithmetic) {
  GSTConfig c;
  EXPECT_EQ(c.pe_width(), 36u);
  EXPECT_EQ(c.raw_width(), 104u);
  c.feature_width = 1152;
  EXPECT_EQ(c.mip_width(), 3456u);
  EXPECT_EQ(c.raw_width(), 1192u);
}

TEST(Gst, FourierCodeAtOrigin) {
  const Tensor pe = fourier_pe(Tensor::from({1, 3}, {0, 0, 0}), 6);
  ASSERT_EQ(pe.numel(), 36u);
  for (std::size_t l = 0; l < 6; ++l)
    for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(pe[6 * l + i], i < 3 ? 0.0 : 1.0);
}

TEST(Gst, FourierCodeFirstOctaveAtUnitX) {
  const Tensor pe = fourier_pe(Tensor::from({1, 3}, {1, 0, 0}), 6);
  EXPECT_NEAR(pe[0], 0.0, 1e-12);
  EXPECT_NEAR(pe[3], -1.0, 1e-12);
}

TEST(Gst, FourierCodeIsInjectiveOnCentimetreGrid) {
  std::vector<double> pts;
  nn::Rng rng(12);
  std::set<std::array<int, 3>> seen;
  while (seen.size() < 100) {
    const std::array<int, 3> g{static_cast<int>(rng() % 101) - 50, static_cast<int>(rng() % 101) - 50,
                               static_cast<int>(rng() % 81) + 20};
    if (!seen.insert(g).second) continue;
    for (int v : g) pts.push_back(0.01 * v);
  }
  const Tensor pe = fourier_pe(Tensor::from({100, 3}, pts), 6);
  for (std::size_t i = 0; i < 100; ++i) {
    for (std::size_t j = i + 1; j < 100; ++j) {
      double d = 0;
      for (std::size_t k = 0; k < 36; ++k) d = std::max(d, std::abs(pe.at(i, k) - pe.at(j, k)));
      EXPECT_GT(d, 1e-9) << i << " " << j;
    }
  }
}

TEST(Gst, ZeroInputsGiveZeroTokens) {
  Fixture f(small_config());
  const Tensor raw = f.gst.form_raw_tokens(Tensor::zeros({256, 64}), Tensor::zeros({256, 36}), Tensor::zeros({256, 3}),
                                           Tensor::zeros({256}));
  for (double v : raw.values()) EXPECT_EQ(v, 0.0);
}

TEST(Gst, IdenticalKeysPoolToCommonValue) {
  Fixture f(small_config());
  std::vector<double> row(32), raw;
  nn::Rng rng(4);
  for (double& v : row) v = nn::uniform(rng, -1, 1);
  for (int i = 0; i < 256; ++i) raw.insert(raw.end(), row.begin(), row.end());
  const SpatialTokenSet z = f.gst.pool(Tensor::from({256, 32}, raw));
  const Tensor v = ad::matmul(Tensor::from({1, 32}, row), f.ps.get("gst.v_pool.weight"));
  for (std::size_t q = 0; q < 128; ++q)
    for (std::size_t c = 0; c < 32; ++c) EXPECT_NEAR(z.tokens.at(q, c), v[c], 1e-12);
}

TEST(Gst, PoolingRowsAreDistributions) {
  Fixture f(small_config());
  const auto [field, z] = f.gst.tokenize(f.input);
  ASSERT_EQ(z.attention.shape(), (ad::Shape{128, 256}));
  for (std::size_t q = 0; q < 128; ++q) {
    double s = 0;
    for (std::size_t k = 0; k < 256; ++k) {
      EXPECT_GE(z.attention.at(q, k), 0.0);
      s += z.attention.at(q, k);
    }
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(Gst, AveragePoolingReturnsBlockMeans) {
  GSTConfig c = small_config();
  c.pool_mode = PoolMode::average;
  Fixture f(c);
  std::vector<double> raw(256 * 32);
  for (std::size_t i = 0; i < 256; ++i)
    for (std::size_t d = 0; d < 32; ++d) raw[i * 32 + d] = static_cast<double>(i / 2) + 0.01 * static_cast<double>(d);
  const SpatialTokenSet z = f.gst.pool(Tensor::from({256, 32}, raw));
  for (std::size_t q = 0; q < 128; ++q)
    for (std::size_t d = 0; d < 32; ++d)
      EXPECT_NEAR(z.tokens.at(q, d), 0.5 * (raw[(2 * q) * 32 + d] + raw[(2 * q + 1) * 32 + d]), 1e-12);
}

TEST(Gst, Learned2dCodeIgnoresDepth) {
  GSTConfig c = small_config();
  c.pe_mode = PeMode::learned2d;
  Fixture f(c);
  const Tensor a = f.gst.positional_code(Tensor::full({256, 3}, 0.4));
  const Tensor b = f.gst.positional_code(Tensor::full({256, 3}, 0.9));
  ASSERT_EQ(a.shape(), (ad::Shape{256, 36}));
  EXPECT_TRUE(std::equal(a.values().begin(), a.values().end(), b.values().begin()));
}

TEST(Gst, TokenizationIsDeterministic) {
  Fixture f(small_config()), g(small_config());
  const auto a = f.gst.tokenize(f.input), b = g.gst.tokenize(g.input);
  EXPECT_TRUE(std::equal(a.second.tokens.values().begin(), a.second.tokens.values().end(),
                         b.second.tokens.values().begin()));
}

TEST(Gst, ResidualNeverExceedsTenCentimetres) {
  Fixture f(small_config());
  nn::Rng rng(6);
  for (const auto& p : f.ps.paths_with_prefix("gst.f_theta."))
    for (double& w : f.ps.get(p).mutable_values()) w = nn::uniform(rng, -20, 20);
  const auto [field, z] = f.gst.tokenize(f.input);
  const auto a = field.anchors.values(), c = field.centroids.values();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_LE(std::abs(c[i] - a[i]), 0.1 + 1e-15);
  for (double s : field.log_scales.values()) {
    EXPECT_GE(s, -5.0);
    EXPECT_LE(s, 1.0);
  }
}

TEST(Gst, OpacityFlagLeavesGeometryUntouched) {
  GSTConfig c = small_config();
  Fixture a(c);
  c.opacity_mode = OpacityMode::fixed_one;
  Fixture b(c);
  for (const auto& [path, t] : a.ps.all()) {
    const auto u = t.values(), v = b.ps.get(path).values();
    EXPECT_TRUE(std::equal(u.begin(), u.end(), v.begin())) << path;
  }
  const auto fa = a.gst.tokenize(a.input).first, fb = b.gst.tokenize(b.input).first;
  EXPECT_TRUE(std::equal(fa.centroids.values().begin(), fa.centroids.values().end(), fb.centroids.values().begin()));
  EXPECT_TRUE(std::equal(fa.log_scales.values().begin(), fa.log_scales.values().end(), fb.log_scales.values().begin()));
}

TEST(Gst, PositionOnlyTokensZeroGaussianChannels) {
  GSTConfig c = small_config();
  c.token_content = TokenContent::position_only;
  Fixture f(c);
  // Same features and PE but sigma/alpha differ: position-only tokens must not see them.
  const Tensor feats = f.input.features, pe = Tensor::zeros({256, 36});
  const Tensor r1 = f.gst.form_raw_tokens(feats, pe, Tensor::full({256, 3}, 0.3), Tensor::full({256}, 0.2));
  const Tensor r2 = f.gst.form_raw_tokens(feats, pe, Tensor::full({256, 3}, -1.0), Tensor::full({256}, 0.9));
  EXPECT_TRUE(std::equal(r1.values().begin(), r1.values().end(), r2.values().begin()));
}

TEST(Gst, GridBlockMeanMatchesBruteForce) {
  nn::Rng rng(1);
  std::vector<double> x(256 * 2);
  for (double& v : x) v = nn::uniform(rng, -1, 1);
  const Tensor m = grid_block_mean(Tensor::from({256, 2}, x), 16, 4);
  for (std::size_t r = 0; r < 16; ++r)
    for (std::size_t c = 0; c < 16; ++c) {
      double s = 0;
      for (std::size_t i = (r / 4) * 4; i < (r / 4) * 4 + 4; ++i)
        for (std::size_t j = (c / 4) * 4; j < (c / 4) * 4 + 4; ++j) s += x[(i * 16 + j) * 2];
      EXPECT_NEAR(m.at(r * 16 + c, 0), s / 16.0, 1e-12);
    }
}

TEST(Gst, TokenizerGradientsMatchFiniteDifferences) {
  GSTConfig c = small_config();
  c.feature_width = 8;
  c.width = 8;
  c.num_tokens = 4;
  c.patch_grid = 4;
  c.num_patches = 16;
  c.exp_hidden = 4;
  nn::ParameterStore ps;
  nn::Rng rng(3);
  GST gst(ps, c, rng);
  for (double& w : ps.get("gst.f_theta.2.weight").mutable_values()) w = nn::uniform(rng, -0.3, 0.3);
  std::vector<double> feats(16 * 8), anchors(16 * 3), md(16);
  for (double& v : feats) v = nn::uniform(rng, -1, 1);
  for (std::size_t i = 0; i < 16; ++i) {
    anchors[3 * i] = nn::uniform(rng, -0.2, 0.2);
    anchors[3 * i + 1] = nn::uniform(rng, -0.2, 0.2);
    anchors[3 * i + 2] = md[i] = nn::uniform(rng, 0.4, 0.8);
  }
  const GSTInput in{Tensor::from({16, 8}, feats), Tensor::from({16, 3}, anchors), Tensor::from({16, 1}, md)};
  std::vector<std::pair<std::string, Tensor>> params;
  for (const auto& [p, t] : ps.all()) params.emplace_back(p, t);
  const auto rep = ad::grad_check(
      [&] {
        const auto [field, z] = gst.tokenize(in);
        return ad::add(ad::sum(ad::square(z.tokens)), ad::sum(ad::mul(field.opacities, field.opacities)));
      },
      params);
  EXPECT_TRUE(rep.pass()) << rep.table();
}

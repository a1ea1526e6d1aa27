#include "gstvla/model.hpp"

#include <stdexcept>

namespace gstvla {

void ModelConfig::validate() const {
  gst.validate();
  reasoner.validate();
  expert.validate();
  if (rays_per_sample == 0 || rays_per_sample > kImageSize * kImageSize) {
    throw std::invalid_argument("model: rays_per_sample must be in [1, H*W]");
  }
  if (gst.token_content == TokenContent::depth_scalar && gst.pe_mode == PeMode::learned2d) {
    throw std::invalid_argument("model: depth_scalar tokens replace the positional code; pe_mode must be fourier3d");
  }
  if (reasoner.num_classes != static_cast<int>(object_catalog().size())) {
    throw std::invalid_argument("model: reasoner num_classes must match the object catalog");
  }
}

PreparedSample prepare(const SceneSample& s, std::size_t patch_grid) {
  PreparedSample p;
  p.gst_input = make_gst_input(s.features, s.feature_width, s.depth, s.intrinsics, patch_grid);
  p.instruction = {0, s.spec.objects.at(static_cast<std::size_t>(s.spec.target_index)).class_id};
  p.proprio = s.proprio;
  p.chain_gt = s.chain_gt;
  p.action_gt = s.action_gt;
  p.depth = s.depth;
  p.intrinsics = s.intrinsics;
  p.scene_seed = s.spec.seed;
  return p;
}

namespace {

nn::Rng init_rng(const ModelConfig& cfg, std::uint64_t stream) { return nn::Rng(nn::mix_seed(cfg.init_seed, stream)); }

}  // namespace

Model::Model(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  // Independent streams per component keep initial values stable when an
  // unrelated component changes shape.
  auto r1 = init_rng(cfg_, 1);
  gst_ = GST(ps_, cfg_.gst, r1);
  auto r2 = init_rng(cfg_, 2);
  reasoner_ = Reasoner(ps_, cfg_.reasoner, cfg_.gst.width, cfg_.gst.feature_width, cfg_.gst.num_tokens, r2);
  auto r3 = init_rng(cfg_, 3);
  expert_ = ActionExpert(ps_, cfg_.expert, cfg_.reasoner.width, r3);
}

std::vector<std::string> Model::group_paths(const std::string& group) const {
  if (group != "gst" && group != "reasoner" && group != "expert") {
    throw std::invalid_argument("unknown parameter group '" + group + "'");
  }
  return ps_.paths_with_prefix(group + ".");
}

Encoded Model::encode(const PreparedSample& s) const {
  Encoded e;
  auto [field, pooled] = gst_.tokenize(s.gst_input);
  e.field = std::move(field);
  e.pooled = std::move(pooled);
  e.prefix = reasoner_.inject(e.pooled.tokens, s.gst_input.features, s.instruction, s.proprio);
  return e;
}

const Tensor& Model::chain_context(const Encoded& e) const {
  return cfg_.reasoner.dacot_attends_raw ? e.field.raw_tokens : e.pooled.tokens;
}

LossTerms Model::losses(const PreparedSample& s, const LossSwitches& sw, std::uint64_t seed) const {
  LossTerms out;
  GaussianField field;
  ChainOutput chain;
  const auto run_reasoner = [&]() {
    auto [f, pooled] = gst_.tokenize(s.gst_input);
    field = f;
    const Tensor prefix = reasoner_.inject(pooled.tokens, s.gst_input.features, s.instruction, s.proprio);
    chain = reasoner_.teacher_forced(prefix, cfg_.reasoner.dacot_attends_raw ? f.raw_tokens : pooled.tokens,
                                     s.chain_gt);
  };
  if (sw.detach_reasoner) {
    {
      ad::NoGradGuard guard;
      run_reasoner();
    }
    if (sw.depth) {
      // The tokenizer is re-run on the tape for the depth path only.
      const GaussianParams p = gst_.estimate_params(s.gst_input.features);
      field.centroids = cfg_.gst.residual_mode == ResidualMode::zero ? s.gst_input.anchors
                                                                      : ad::add(s.gst_input.anchors, p.mu);
      field.log_scales = p.sigma;
      field.opacities = gst_.opacity(s.gst_input.features, p.logit);
    }
  } else {
    run_reasoner();
  }
  if (sw.depth) {
    const RayBundle rays = ray_bundle_for(
        s.depth, s.intrinsics, ray_bundle_ids(s.depth.values.size(), cfg_.rays_per_sample, nn::mix_seed(seed, 1)));
    RenderOptions ro;
    ro.keep_weights = false;
    const RenderOutput r = render_depth(field.centroids, field.log_scales, field.opacities, rays, ro);
    out.depth = depth_loss(r.rendered, rays.target_depths);
  }
  if (sw.cot) out.cot = reasoner_.cot_loss(chain);
  if (sw.flow) {
    nn::Rng rng(nn::mix_seed(seed, 2));
    out.flow = expert_.flow_loss(s.action_gt, {chain.h_vlm, chain.l_action, s.proprio}, rng);
  }
  return out;
}

Inference Model::infer(const PreparedSample& s, std::uint64_t seed) const {
  ad::NoGradGuard guard;
  const Encoded e = encode(s);
  const ChainOutput chain = reasoner_.greedy(e.prefix, chain_context(e));
  Inference out;
  out.chain_tokens = reasoner_.value_tokens(chain.tokens);
  out.chain = decode_chain_tokens(reasoner_.vocab(), cfg_.reasoner.flags, out.chain_tokens);
  out.chunk = expert_.sample({chain.h_vlm, chain.l_action, s.proprio}, seed);
  return out;
}

}  // namespace gstvla

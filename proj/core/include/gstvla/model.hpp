#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "gstvla/action_expert.hpp"
#include "gstvla/gst.hpp"
#include "gstvla/reasoner.hpp"
#include "gstvla/scene.hpp"
#include "gstvla/splat_render.hpp"

namespace gstvla {

struct ModelConfig {
  GSTConfig gst;
  ReasonerConfig reasoner;
  ExpertConfig expert;
  std::size_t rays_per_sample = 256;
  std::uint64_t init_seed = 1;

  void validate() const;
};

/// Parameter-free view of one scene used by every forward pass.
struct PreparedSample {
  GSTInput gst_input;
  Instruction instruction;
  std::array<double, 7> proprio{};
  ThoughtChain chain_gt;
  ActionChunk action_gt;
  DepthMap depth;
  Intrinsics intrinsics;
  std::uint64_t scene_seed = 0;
};

PreparedSample prepare(const SceneSample& s, std::size_t patch_grid = kPatchGrid);

struct LossSwitches {
  bool flow = true;
  bool cot = true;
  bool depth = true;
  // Run the reasoner without recording (frozen reasoner in the first stage).
  bool detach_reasoner = false;
};

/// Component losses of one sample; inactive components are undefined.
struct LossTerms {
  Tensor flow, cot, depth;
};

struct Encoded {
  GaussianField field;
  SpatialTokenSet pooled;
  Tensor prefix;
};

struct Inference {
  std::vector<int> chain_tokens;
  ThoughtChain chain;
  ActionChunk chunk;
};

class Model {
 public:
  explicit Model(const ModelConfig& cfg);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return cfg_; }
  nn::ParameterStore& params() { return ps_; }
  const nn::ParameterStore& params() const { return ps_; }

  const GST& gst() const { return gst_; }
  const Reasoner& reasoner() const { return reasoner_; }
  const ActionExpert& expert() const { return expert_; }

  Encoded encode(const PreparedSample& s) const;
  /// Cross-attention keys of the chain decoder: T_raw, or Z_spatial when the
  /// decoder is configured to attend the pooled set.
  const Tensor& chain_context(const Encoded& e) const;

  /// `seed` drives ray subsampling and the flow noise.
  LossTerms losses(const PreparedSample& s, const LossSwitches& sw, std::uint64_t seed) const;

  /// Greedy chain, L_action from the decoded chain, Euler-sampled chunk.
  Inference infer(const PreparedSample& s, std::uint64_t seed) const;

  /// Parameter path groups: "gst", "reasoner", "expert".
  std::vector<std::string> group_paths(const std::string& group) const;

 private:
  ModelConfig cfg_;
  nn::ParameterStore ps_;
  GST gst_;
  Reasoner reasoner_;
  ActionExpert expert_;
};

}  // namespace gstvla

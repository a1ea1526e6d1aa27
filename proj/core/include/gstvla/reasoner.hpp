#pragma once

#include <array>
#include <string>
#include <vector>

#include "gstvla/nn.hpp"
#include "gstvla/vocab.hpp"

namespace gstvla {

using ad::Tensor;

struct ReasonerConfig {
  std::size_t layers = 4;
  std::size_t width = 192;  // d_v
  std::size_t heads = 4;
  std::size_t ffn_mult = 4;
  int num_action_tokens = 8;  // N_a
  int num_classes = 8;
  bool dacot_attends_raw = true;
  ThoughtFlags flags;

  void validate() const;
};

/// Symbolic instruction: a verb and the target object class.
struct Instruction {
  int verb = 0;
  int target_class = 0;
};

struct ChainOutput {
  std::vector<int> tokens;  // full chain layout tokens (BOS ... ACT)
  Tensor logits;            // [chain length, V]; row i predicts token i + 1
  Tensor h_vlm;             // [prefix length, d_v]
  Tensor l_action;          // [N_a, d_v]
};

struct ChainMetrics {
  double centroid_err_m = 0;
  double contact_err_m = 0;
  double waypoint_err_m = 0;
  double token_acc = 0;
  std::size_t tokens_compared = 0;
  std::size_t tokens_correct = 0;
};

class Reasoner {
 public:
  Reasoner() = default;
  /// `context_width` is d_g; `feature_width` is d_f; `prefix_tokens` is N_g.
  Reasoner(nn::ParameterStore& ps, const ReasonerConfig& cfg, std::size_t context_width, std::size_t feature_width,
           std::size_t prefix_tokens, nn::Rng& rng, const std::string& prefix = "reasoner");

  const ReasonerConfig& config() const { return cfg_; }
  ReasonerConfig& mutable_config() { return cfg_; }
  const CoTVocab& vocab() const { return vocab_; }

  std::size_t prefix_length() const { return prefix_tokens_ + 3; }
  std::size_t max_chain_length() const;

  /// [Z~; verb, class embeddings; proprio embedding] with Z~ = W_proj of the
  /// two residual cross-attention layers over the patch features.
  Tensor inject(const Tensor& z_spatial, const Tensor& features, const Instruction& ins,
                const std::array<double, 7>& proprio) const;

  /// Runs the decoder on prefix + chain tokens. `context` is T_raw or
  /// Z_spatial depending on the configuration.
  ChainOutput forward(const Tensor& prefix, const Tensor& context, const std::vector<int>& chain_tokens) const;

  /// Teacher-forced pass on the ground-truth layout of `gt`.
  ChainOutput teacher_forced(const Tensor& prefix, const Tensor& context, const ThoughtChain& gt) const;

  /// Greedy decoding with per-position vocabulary masks; structural tokens are fixed.
  ChainOutput greedy(const Tensor& prefix, const Tensor& context) const;

  /// Cross-entropy targets aligned with ChainOutput::logits rows (-1 = unsupervised).
  std::vector<std::int64_t> cot_targets(const std::vector<int>& chain_tokens) const;

  /// Mean token cross entropy over the enabled value positions.
  Tensor cot_loss(const ChainOutput& out) const;

  /// Value tokens of a chain layout (structural tokens dropped).
  std::vector<int> value_tokens(const std::vector<int>& chain_tokens) const;

 private:
  struct Block {
    nn::LayerNorm ln1, ln2, ln3;
    nn::Attention self_attn, cross_attn;
    nn::FeedForward ffn;
  };

  Tensor run_blocks(Tensor x, const Tensor& context) const;

  ReasonerConfig cfg_;
  CoTVocab vocab_{1, 1};
  std::size_t prefix_tokens_ = 0;
  nn::LayerNorm inj_ln1_, inj_ln2_;
  nn::Attention inj_ca1_, inj_ca2_;
  nn::Linear w_proj_, proprio_embed_, head_;
  Tensor token_embed_, pos_embed_;
  std::vector<Block> blocks_;
  nn::LayerNorm final_ln_;
};

/// De-quantized errors of decoded value tokens against the metric ground
/// truth, plus token accuracy against the quantized ground truth. Both use
/// the thoughts enabled in gt.flags.
ChainMetrics chain_metrics(const CoTVocab& vocab, const std::vector<int>& decoded_values, const ThoughtChain& gt);

}  // namespace gstvla

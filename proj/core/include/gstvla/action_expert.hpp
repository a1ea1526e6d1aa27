#pragma once

#include <functional>
#include <string>
#include <vector>

#include "gstvla/action_chunk.hpp"
#include "gstvla/nn.hpp"

namespace gstvla {

using ad::Tensor;

struct ExpertConfig {
  std::size_t layers = 6;
  std::size_t width = 128;  // d_e
  std::size_t heads = 4;
  std::size_t experts = 8;
  std::size_t top_k = 2;
  std::size_t expert_hidden = 512;
  std::size_t time_dim = 16;
  std::size_t euler_steps = 10;
  double ensemble_dt = 0.01;    // seconds
  double control_rate = 10.0;   // Hz
  bool dense_ffn = false;       // ablation: one feedforward of equal hidden width
  bool zero_l_action = false;   // ablation: drop the L_action stream

  void validate() const;
};

/// Per-layer, per-token routing decisions.
struct RouterTrace {
  struct Layer {
    std::vector<std::vector<std::size_t>> selected;  // expert indices per token, best first
    std::vector<std::vector<double>> gates;          // matching gate weights
  };
  std::vector<Layer> layers;
};

/// Per-channel affine map between metric actions and the flow space:
/// positions / 0.05 m, rotations / 0.2 rad, gripper (g - 0.5) / 0.5.
std::array<double, kChunkSize> normalize_actions(const ActionChunk& a);
ActionChunk denormalize_actions(const std::array<double, kChunkSize>& z);

using VelocityFn = std::function<std::vector<double>(const std::vector<double>& a, double t)>;

/// Fixed-grid Euler integration a <- a + (1/steps) v(a, t), t = 0, 1/steps, ...
/// Throws on a non-finite state, naming the step.
std::vector<double> euler_integrate(std::vector<double> a0, const VelocityFn& v, std::size_t steps);

/// Flow target construction: a_t = (1 - t) a0 + t a1.
std::vector<double> interpolate(const std::vector<double>& a0, const std::vector<double>& a1, double t);

/// Mean squared error between v(a_t, t) and a1 - a0 with seeded a0 ~ N(0, I), t ~ U(0, 1).
double flow_loss_value(const std::vector<double>& a1, const VelocityFn& v, nn::Rng& rng);

struct EnsembleEntry {
  ActionChunk chunk;
  std::size_t age = 0;  // steps since the chunk was predicted; row `age` is the current step
};

/// Weighted mean of overlapping predictions for the current step with
/// weights exp(-age * dt * control_rate), normalized.
std::array<double, kActionDim> temporal_ensemble(const std::vector<EnsembleEntry>& history, double dt,
                                                 double control_rate);

struct Conditioning {
  Tensor h_vlm;     // [P, d_v]
  Tensor l_action;  // [N_a, d_v]
  std::array<double, 7> proprio{};
};

class ActionExpert {
 public:
  ActionExpert() = default;
  ActionExpert(nn::ParameterStore& ps, const ExpertConfig& cfg, std::size_t cond_width, nn::Rng& rng,
               const std::string& prefix = "expert");

  const ExpertConfig& config() const { return cfg_; }
  ExpertConfig& mutable_config() { return cfg_; }

  /// Velocity in the normalized action space: a_t [70] -> [70].
  Tensor velocity(const Tensor& a_t, double t, const Conditioning& cond, RouterTrace* trace = nullptr) const;

  /// Flow-matching loss on one demonstration chunk with seeded a0 and t.
  Tensor flow_loss(const ActionChunk& a1, const Conditioning& cond, nn::Rng& rng) const;

  /// Euler-sampled chunk from seeded noise; the gripper is clamped to [0, 1].
  ActionChunk sample(const Conditioning& cond, std::uint64_t seed) const;

 private:
  struct Layer {
    nn::LayerNorm ln1, ln2, ln3;
    nn::Attention self_attn, ca_vlm, ca_action;
    nn::Linear router;
    std::vector<nn::FeedForward> experts;
    nn::FeedForward dense;
  };

  Tensor moe(const Layer& l, const Tensor& x, RouterTrace::Layer* trace) const;

  ExpertConfig cfg_;
  nn::Linear state_embed_, action_embed_, time_embed_, readout_;
  nn::LayerNorm out_ln_;
  Tensor step_embed_;  // [L_act, d_e]
  std::vector<Layer> layers_;
};

}  // namespace gstvla

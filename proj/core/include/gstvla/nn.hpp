#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "gstvla/autodiff/checkpoint.hpp"
#include "gstvla/autodiff/ops.hpp"

namespace gstvla::nn {

using ad::Tensor;
using Rng = std::mt19937_64;

/// Stable 64-bit mix used to derive independent seeds (splitmix64 finalizer).
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b = 0);

// Library-independent draws so seeded runs match across standard libraries.
double uniform01(Rng& rng);
double uniform(Rng& rng, double lo, double hi);
double standard_normal(Rng& rng);

/// Ordered registry of trainable tensors keyed by dotted path
/// ("gst.f_theta.0.weight"). Iteration order is lexicographic and therefore
/// deterministic.
class ParameterStore {
 public:
  Tensor& add(const std::string& path, Tensor t);
  Tensor& get(const std::string& path);
  const Tensor& get(const std::string& path) const;
  bool contains(const std::string& path) const { return params_.count(path) != 0; }

  std::map<std::string, Tensor>& all() { return params_; }
  const std::map<std::string, Tensor>& all() const { return params_; }
  std::vector<std::string> paths_with_prefix(const std::string& prefix) const;

  void zero_grad();
  std::size_t total_size() const;
  /// FNV-1a over the raw payload bytes of the parameters under `prefix`.
  std::uint64_t checksum(const std::string& prefix = "") const;

  void export_to(ad::Checkpoint& ck) const;
  /// Copies matching entries; throws on shape mismatch or a missing path.
  void import_from(const ad::Checkpoint& ck);

 private:
  std::map<std::string, Tensor> params_;
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero bias.
struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out], undefined when bias-free

  Linear() = default;
  Linear(ParameterStore& ps, const std::string& path, std::size_t in, std::size_t out, Rng& rng,
         bool with_bias = true, bool zero_init = false);

  Tensor operator()(const Tensor& x) const;
  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }
};

struct LayerNorm {
  Tensor gain, bias;
  LayerNorm() = default;
  LayerNorm(ParameterStore& ps, const std::string& path, std::size_t width);
  Tensor operator()(const Tensor& x) const { return ad::layer_norm(x, gain, bias); }
};

/// Multi-head scaled dot-product attention. Queries come from `x`, keys and
/// values from `context` (pass x again for self-attention).
struct Attention {
  Linear q, k, v, o;
  std::size_t heads = 1;

  Attention() = default;
  Attention(ParameterStore& ps, const std::string& path, std::size_t width, std::size_t context_width,
            std::size_t heads, Rng& rng, bool zero_output = false);

  /// `mask`, when given, is added to the [Tq, Tk] logits of every head.
  Tensor operator()(const Tensor& x, const Tensor& context, const Tensor* mask = nullptr) const;
};

/// Additive causal mask: 0 on and below the diagonal, -1e9 above.
Tensor causal_mask(std::size_t n);

enum class Activation { gelu, silu };

struct FeedForward {
  Linear up, down;
  Activation act = Activation::gelu;

  FeedForward() = default;
  FeedForward(ParameterStore& ps, const std::string& path, std::size_t width, std::size_t hidden, Rng& rng,
              Activation act);
  Tensor operator()(const Tensor& x) const;
};

/// Sinusoidal embedding of a scalar into `dim` channels (half sin, half cos).
std::vector<double> sinusoidal_embedding(double t, std::size_t dim, double max_period = 100.0);

struct AdamOptions {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 1.0;
};

/// Adaptive-moment optimizer with global gradient-norm clipping over a
/// chosen subset of the parameter store.
class Adam {
 public:
  Adam(ParameterStore& ps, std::vector<std::string> trainable, AdamOptions opts);

  /// Applies one update from the accumulated gradients scaled by
  /// `grad_scale`; returns the pre-clip global gradient norm.
  double step(double grad_scale = 1.0);
  std::int64_t steps_taken() const { return t_; }

  void export_to(ad::Checkpoint& ck) const;
  void import_from(const ad::Checkpoint& ck);

 private:
  ParameterStore& ps_;
  std::vector<std::string> trainable_;
  AdamOptions opts_;
  std::map<std::string, std::vector<double>> m_, v_;
  std::int64_t t_ = 0;
};

}  // namespace gstvla::nn

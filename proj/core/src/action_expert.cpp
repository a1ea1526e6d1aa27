#include "gstvla/action_expert.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace gstvla {
namespace {

constexpr std::array<double, kActionDim> kScale = {0.05, 0.05, 0.05, 0.2, 0.2, 0.2, 0.5};
constexpr std::array<double, kActionDim> kOffset = {0, 0, 0, 0, 0, 0, 0.5};

}  // namespace

std::vector<std::array<double, 3>> ActionChunk::cumulative_positions() const {
  std::vector<std::array<double, 3>> out(kChunkLength);
  std::array<double, 3> p{};
  for (std::size_t s = 0; s < kChunkLength; ++s) {
    for (std::size_t i = 0; i < 3; ++i) p[i] += at(s, i);
    out[s] = p;
  }
  return out;
}

void ExpertConfig::validate() const {
  if (layers == 0 || width == 0 || heads == 0 || width % heads != 0) {
    throw std::invalid_argument("expert: width must be positive and divisible by heads");
  }
  if (top_k == 0 || top_k > experts) throw std::invalid_argument("expert: top_k must be in [1, experts]");
  if (euler_steps == 0) throw std::invalid_argument("expert: euler_steps must be positive");
  if (time_dim < 2) throw std::invalid_argument("expert: time_dim must be >= 2");
}

std::array<double, kChunkSize> normalize_actions(const ActionChunk& a) {
  std::array<double, kChunkSize> z{};
  for (std::size_t i = 0; i < kChunkSize; ++i) z[i] = (a.deltas[i] - kOffset[i % kActionDim]) / kScale[i % kActionDim];
  return z;
}

ActionChunk denormalize_actions(const std::array<double, kChunkSize>& z) {
  ActionChunk a;
  for (std::size_t i = 0; i < kChunkSize; ++i) a.deltas[i] = z[i] * kScale[i % kActionDim] + kOffset[i % kActionDim];
  return a;
}

std::vector<double> euler_integrate(std::vector<double> a, const VelocityFn& v, std::size_t steps) {
  const double h = 1.0 / static_cast<double>(steps);
  for (std::size_t s = 0; s < steps; ++s) {
    const auto vel = v(a, static_cast<double>(s) * h);
    if (vel.size() != a.size()) throw std::invalid_argument("euler: velocity size mismatch");
    for (std::size_t i = 0; i < a.size(); ++i) {
      a[i] += h * vel[i];
      if (!std::isfinite(a[i])) throw std::runtime_error("euler: non-finite state at step " + std::to_string(s));
    }
  }
  return a;
}

std::vector<double> interpolate(const std::vector<double>& a0, const std::vector<double>& a1, double t) {
  std::vector<double> out(a0.size());
  for (std::size_t i = 0; i < a0.size(); ++i) out[i] = (1.0 - t) * a0[i] + t * a1[i];
  return out;
}

double flow_loss_value(const std::vector<double>& a1, const VelocityFn& v, nn::Rng& rng) {
  std::vector<double> a0(a1.size());
  for (auto& x : a0) x = nn::standard_normal(rng);
  const double t = nn::uniform01(rng);
  const auto vel = v(interpolate(a0, a1, t), t);
  double s = 0;
  for (std::size_t i = 0; i < a1.size(); ++i) {
    const double d = vel[i] - (a1[i] - a0[i]);
    s += d * d;
  }
  return s / static_cast<double>(a1.size());
}

std::array<double, kActionDim> temporal_ensemble(const std::vector<EnsembleEntry>& history, double dt,
                                                 double control_rate) {
  if (history.empty()) throw std::invalid_argument("temporal_ensemble: empty history");
  std::array<double, kActionDim> out{};
  double total = 0;
  for (const auto& e : history) {
    if (e.age >= kChunkLength) throw std::invalid_argument("temporal_ensemble: chunk does not cover the current step");
    const double w = std::exp(-static_cast<double>(e.age) * dt * control_rate);
    total += w;
    for (std::size_t c = 0; c < kActionDim; ++c) out[c] += w * e.chunk.at(e.age, c);
  }
  for (auto& x : out) x /= total;
  return out;
}

ActionExpert::ActionExpert(nn::ParameterStore& ps, const ExpertConfig& cfg, std::size_t cond_width, nn::Rng& rng,
                           const std::string& prefix)
    : cfg_(cfg) {
  cfg_.validate();
  const std::size_t d = cfg_.width;
  state_embed_ = nn::Linear(ps, prefix + ".state_embed", 7, d, rng);
  action_embed_ = nn::Linear(ps, prefix + ".action_embed", kActionDim, d, rng);
  time_embed_ = nn::Linear(ps, prefix + ".time_embed", cfg_.time_dim, d, rng);
  std::vector<double> se(kChunkLength * d);
  for (auto& x : se) x = nn::uniform(rng, -0.1, 0.1);
  step_embed_ = ps.add(prefix + ".step_embed", Tensor::from({kChunkLength, d}, std::move(se), true));
  for (std::size_t l = 0; l < cfg_.layers; ++l) {
    const std::string p = prefix + ".layer" + std::to_string(l);
    Layer L;
    L.ln1 = nn::LayerNorm(ps, p + ".ln1", d);
    L.self_attn = nn::Attention(ps, p + ".self_attn", d, d, cfg_.heads, rng);
    L.ln2 = nn::LayerNorm(ps, p + ".ln2", d);
    L.ca_vlm = nn::Attention(ps, p + ".ca_vlm", d, cond_width, cfg_.heads, rng);
    L.ca_action = nn::Attention(ps, p + ".ca_action", d, cond_width, cfg_.heads, rng);
    L.ln3 = nn::LayerNorm(ps, p + ".ln3", d);
    if (cfg_.dense_ffn) {
      L.dense = nn::FeedForward(ps, p + ".dense_ffn", d, cfg_.expert_hidden, rng, nn::Activation::silu);
    } else {
      L.router = nn::Linear(ps, p + ".router", d, cfg_.experts, rng, false);
      for (std::size_t e = 0; e < cfg_.experts; ++e) {
        L.experts.emplace_back(ps, p + ".expert" + std::to_string(e), d, cfg_.expert_hidden, rng,
                               nn::Activation::silu);
      }
    }
    layers_.push_back(std::move(L));
  }
  out_ln_ = nn::LayerNorm(ps, prefix + ".out_ln", d);
  readout_ = nn::Linear(ps, prefix + ".readout", d, kActionDim, rng);
}

Tensor ActionExpert::moe(const Layer& l, const Tensor& x, RouterTrace::Layer* trace) const {
  if (cfg_.dense_ffn) return l.dense(x);
  const std::size_t n = x.dim(0), ne = cfg_.experts, k = cfg_.top_k;
  const Tensor logits = l.router(x);  // [n, E]
  const auto lv = logits.values();
  std::vector<std::size_t> flat;
  std::vector<std::vector<std::size_t>> chosen(n);
  flat.reserve(n * k);
  for (std::size_t t = 0; t < n; ++t) {
    std::vector<std::size_t> idx(ne);
    std::iota(idx.begin(), idx.end(), 0);
    // Stable partial sort: ties go to the lower expert index.
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return lv[t * ne + a] > lv[t * ne + b]; });
    idx.resize(k);
    for (std::size_t e : idx) flat.push_back(t * ne + e);
    chosen[t] = std::move(idx);
  }
  const Tensor gates = ad::reshape(ad::softmax_lastdim(ad::reshape(ad::take(logits, flat), {n, k})), {n * k});
  if (trace) {
    trace->selected = chosen;
    trace->gates.assign(n, std::vector<double>(k));
    for (std::size_t t = 0; t < n; ++t)
      for (std::size_t j = 0; j < k; ++j) trace->gates[t][j] = gates[t * k + j];
  }
  Tensor out;
  for (std::size_t e = 0; e < ne; ++e) {
    std::vector<std::size_t> rows, gpos;
    for (std::size_t t = 0; t < n; ++t)
      for (std::size_t j = 0; j < k; ++j)
        if (chosen[t][j] == e) {
          rows.push_back(t);
          gpos.push_back(t * k + j);
        }
    if (rows.empty()) continue;
    const Tensor y = l.experts[e](ad::gather_rows(x, rows));
    const Tensor g = ad::reshape(ad::take(gates, gpos), {rows.size(), 1});
    const Tensor contrib = ad::scatter_add_rows(ad::mul(y, g), rows, n);
    out = out.defined() ? ad::add(out, contrib) : contrib;
  }
  return out;
}

Tensor ActionExpert::velocity(const Tensor& a_t, double t, const Conditioning& cond, RouterTrace* trace) const {
  if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("expert: t must lie in [0, 1]");
  if (a_t.numel() != kChunkSize) throw ad::ShapeError("expert: action state " + ad::shape_str(a_t.shape()) + " vs [70]");
  const Tensor s = state_embed_(Tensor::from({1, 7}, {cond.proprio.begin(), cond.proprio.end()}));
  const Tensor acts = ad::add(action_embed_(ad::reshape(a_t, {kChunkLength, kActionDim})), step_embed_);
  const auto te = nn::sinusoidal_embedding(t, cfg_.time_dim);
  const Tensor tt = time_embed_(Tensor::from({1, cfg_.time_dim}, te));
  Tensor x = ad::concat({s, acts, tt}, 0);
  const Tensor l_action = cfg_.zero_l_action ? Tensor::zeros(cond.l_action.shape()) : cond.l_action;
  if (trace) trace->layers.assign(layers_.size(), {});
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const Layer& L = layers_[i];
    const Tensor h = L.ln1(x);
    x = ad::add(x, L.self_attn(h, h));
    const Tensor q = L.ln2(x);
    x = ad::add(x, ad::add(L.ca_vlm(q, cond.h_vlm), L.ca_action(q, l_action)));
    x = ad::add(x, moe(L, L.ln3(x), trace ? &trace->layers[i] : nullptr));
  }
  const Tensor y = readout_(out_ln_(ad::slice(x, 0, 1, 1 + kChunkLength)));
  return ad::reshape(y, {kChunkSize});
}

Tensor ActionExpert::flow_loss(const ActionChunk& a1, const Conditioning& cond, nn::Rng& rng) const {
  const auto z1 = normalize_actions(a1);
  std::vector<double> a0(kChunkSize), at(kChunkSize), target(kChunkSize);
  for (auto& x : a0) x = nn::standard_normal(rng);
  const double t = nn::uniform01(rng);
  for (std::size_t i = 0; i < kChunkSize; ++i) {
    at[i] = (1.0 - t) * a0[i] + t * z1[i];
    target[i] = z1[i] - a0[i];
  }
  const Tensor v = velocity(Tensor::from({kChunkSize}, std::move(at)), t, cond);
  return ad::mse(v, Tensor::from({kChunkSize}, std::move(target)));
}

ActionChunk ActionExpert::sample(const Conditioning& cond, std::uint64_t seed) const {
  ad::NoGradGuard guard;
  nn::Rng rng(nn::mix_seed(seed, 0xF10E));
  std::vector<double> a0(kChunkSize);
  for (auto& x : a0) x = nn::standard_normal(rng);
  const auto z = euler_integrate(
      std::move(a0),
      [&](const std::vector<double>& a, double t) {
        const Tensor v = velocity(Tensor::from({kChunkSize}, a), t, cond);
        return std::vector<double>(v.values().begin(), v.values().end());
      },
      cfg_.euler_steps);
  std::array<double, kChunkSize> za{};
  std::copy(z.begin(), z.end(), za.begin());
  ActionChunk out = denormalize_actions(za);
  for (std::size_t s = 0; s < kChunkLength; ++s) out.at(s, 6) = std::clamp(out.at(s, 6), 0.0, 1.0);
  return out;
}

}  // namespace gstvla

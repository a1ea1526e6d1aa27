#include "gstvla/nn.hpp"

#include <cmath>
#include <cstring>
#include <numbers>
#include <stdexcept>

namespace gstvla::nn {

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

double standard_normal(Rng& rng) {
  // Box-Muller; the (0,1] draw keeps log finite.
  const double u1 = 1.0 - uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Tensor& ParameterStore::add(const std::string& path, Tensor t) {
  auto [it, inserted] = params_.emplace(path, std::move(t));
  if (!inserted) throw std::invalid_argument("parameter path registered twice: " + path);
  return it->second;
}

Tensor& ParameterStore::get(const std::string& path) {
  auto it = params_.find(path);
  if (it == params_.end()) throw std::out_of_range("unknown parameter path: " + path);
  return it->second;
}

const Tensor& ParameterStore::get(const std::string& path) const {
  auto it = params_.find(path);
  if (it == params_.end()) throw std::out_of_range("unknown parameter path: " + path);
  return it->second;
}

std::vector<std::string> ParameterStore::paths_with_prefix(const std::string& prefix) const {
  std::vector<std::string> out;
  for (const auto& [k, v] : params_)
    if (k.compare(0, prefix.size(), prefix) == 0) out.push_back(k);
  return out;
}

void ParameterStore::zero_grad() {
  for (auto& [k, t] : params_) t.zero_grad();
}

std::size_t ParameterStore::total_size() const {
  std::size_t n = 0;
  for (const auto& [k, t] : params_) n += t.numel();
  return n;
}

std::uint64_t ParameterStore::checksum(const std::string& prefix) const {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& [k, t] : params_) {
    if (k.compare(0, prefix.size(), prefix) != 0) continue;
    for (char c : k) h = (h ^ static_cast<unsigned char>(c)) * 1099511628211ULL;
    for (double x : t.values()) {
      unsigned char bytes[sizeof(double)];
      std::memcpy(bytes, &x, sizeof x);
      for (unsigned char b : bytes) h = (h ^ b) * 1099511628211ULL;
    }
  }
  return h;
}

void ParameterStore::export_to(ad::Checkpoint& ck) const {
  for (const auto& [k, t] : params_) ck.entries[k] = {t.shape(), {t.values().begin(), t.values().end()}};
}

void ParameterStore::import_from(const ad::Checkpoint& ck) {
  for (auto& [k, t] : params_) {
    auto it = ck.entries.find(k);
    if (it == ck.entries.end()) throw ad::CheckpointError("checkpoint is missing parameter " + k);
    if (it->second.shape != t.shape()) {
      throw ad::CheckpointError("checkpoint shape " + ad::shape_str(it->second.shape) + " for " + k +
                                " does not match model shape " + ad::shape_str(t.shape()));
    }
    std::copy(it->second.values.begin(), it->second.values.end(), t.mutable_values().begin());
  }
}

Linear::Linear(ParameterStore& ps, const std::string& path, std::size_t in, std::size_t out, Rng& rng,
               bool with_bias, bool zero_init) {
  std::vector<double> w(in * out, 0.0);
  if (!zero_init) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    for (auto& x : w) x = uniform(rng, -bound, bound);
  }
  weight = ps.add(path + ".weight", Tensor::from({in, out}, std::move(w), true));
  if (with_bias) bias = ps.add(path + ".bias", Tensor::zeros({out}, true));
}

Tensor Linear::operator()(const Tensor& x) const {
  Tensor y = ad::matmul(x, weight);
  return bias.defined() ? ad::add(y, bias) : y;
}

LayerNorm::LayerNorm(ParameterStore& ps, const std::string& path, std::size_t width) {
  gain = ps.add(path + ".gain", Tensor::full({width}, 1.0, true));
  bias = ps.add(path + ".bias", Tensor::zeros({width}, true));
}

Attention::Attention(ParameterStore& ps, const std::string& path, std::size_t width, std::size_t context_width,
                     std::size_t heads_, Rng& rng, bool zero_output)
    : heads(heads_) {
  if (heads == 0 || width % heads != 0) {
    throw std::invalid_argument(path + ": width " + std::to_string(width) + " not divisible by heads " +
                                std::to_string(heads));
  }
  q = Linear(ps, path + ".q", width, width, rng, false);
  k = Linear(ps, path + ".k", context_width, width, rng, false);
  v = Linear(ps, path + ".v", context_width, width, rng, false);
  o = Linear(ps, path + ".o", width, width, rng, true, zero_output);
}

Tensor Attention::operator()(const Tensor& x, const Tensor& context, const Tensor* mask) const {
  const Tensor qa = q(x);
  const Tensor ka = k(context);
  const Tensor va = v(context);
  const std::size_t width = qa.dim(1);
  const std::size_t hd = width / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  std::vector<Tensor> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const Tensor qh = heads == 1 ? qa : ad::slice(qa, 1, h * hd, (h + 1) * hd);
    const Tensor kh = heads == 1 ? ka : ad::slice(ka, 1, h * hd, (h + 1) * hd);
    const Tensor vh = heads == 1 ? va : ad::slice(va, 1, h * hd, (h + 1) * hd);
    Tensor logits = ad::scale(ad::matmul_nt(qh, kh), scale);
    if (mask) logits = ad::add(logits, *mask);
    outs.push_back(ad::matmul(ad::softmax_lastdim(logits), vh));
  }
  return o(heads == 1 ? outs[0] : ad::concat(outs, 1));
}

Tensor causal_mask(std::size_t n) {
  std::vector<double> m(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) m[i * n + j] = -1e9;
  return Tensor::from({n, n}, std::move(m));
}

FeedForward::FeedForward(ParameterStore& ps, const std::string& path, std::size_t width, std::size_t hidden, Rng& rng,
                         Activation a)
    : act(a) {
  up = Linear(ps, path + ".up", width, hidden, rng);
  down = Linear(ps, path + ".down", hidden, width, rng);
}

Tensor FeedForward::operator()(const Tensor& x) const {
  const Tensor h = up(x);
  return down(act == Activation::gelu ? ad::gelu(h) : ad::silu(h));
}

std::vector<double> sinusoidal_embedding(double t, std::size_t dim, double max_period) {
  std::vector<double> e(dim, 0.0);
  const std::size_t half = dim / 2;
  for (std::size_t i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(max_period) * static_cast<double>(i) / static_cast<double>(half));
    e[i] = std::sin(t * freq * max_period);
    e[half + i] = std::cos(t * freq * max_period);
  }
  return e;
}

Adam::Adam(ParameterStore& ps, std::vector<std::string> trainable, AdamOptions opts)
    : ps_(ps), trainable_(std::move(trainable)), opts_(opts) {
  for (const auto& p : trainable_) {
    const auto n = ps_.get(p).numel();
    m_[p].assign(n, 0.0);
    v_[p].assign(n, 0.0);
  }
}

double Adam::step(double grad_scale) {
  double sq = 0;
  for (const auto& p : trainable_) {
    const Tensor& t = ps_.get(p);
    if (!t.has_grad()) continue;
    for (double g : t.grad()) sq += (g * grad_scale) * (g * grad_scale);
  }
  const double norm = std::sqrt(sq);
  const double clip = (opts_.clip_norm > 0 && norm > opts_.clip_norm) ? opts_.clip_norm / norm : 1.0;
  ++t_;
  const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
  for (const auto& p : trainable_) {
    Tensor& t = ps_.get(p);
    auto& m = m_[p];
    auto& v = v_[p];
    auto vals = t.mutable_values();
    const bool has = t.has_grad();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double g = has ? t.grad()[i] * grad_scale * clip : 0.0;
      m[i] = opts_.beta1 * m[i] + (1.0 - opts_.beta1) * g;
      v[i] = opts_.beta2 * v[i] + (1.0 - opts_.beta2) * g * g;
      vals[i] -= opts_.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + opts_.eps);
    }
  }
  return norm;
}

void Adam::export_to(ad::Checkpoint& ck) const {
  for (const auto& p : trainable_) {
    const auto& shape = ps_.get(p).shape();
    ck.entries["adam.m." + p] = {shape, m_.at(p)};
    ck.entries["adam.v." + p] = {shape, v_.at(p)};
  }
  ck.meta["adam.t"] = std::to_string(t_);
}

void Adam::import_from(const ad::Checkpoint& ck) {
  for (const auto& p : trainable_) {
    auto im = ck.entries.find("adam.m." + p);
    auto iv = ck.entries.find("adam.v." + p);
    if (im == ck.entries.end() || iv == ck.entries.end()) {
      throw ad::CheckpointError("checkpoint has no optimizer state for " + p);
    }
    m_[p] = im->second.values;
    v_[p] = iv->second.values;
  }
  auto it = ck.meta.find("adam.t");
  t_ = it == ck.meta.end() ? 0 : std::stoll(it->second);
}

}  // namespace gstvla::nn

#include "gstvla/reasoner.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace gstvla {

void ReasonerConfig::validate() const {
  if (layers == 0 || width == 0 || heads == 0) throw std::invalid_argument("reasoner: sizes must be positive");
  if (width % heads != 0) throw std::invalid_argument("reasoner: width must be divisible by heads");
  if (num_action_tokens < 1 || num_classes < 1) throw std::invalid_argument("reasoner: token counts must be positive");
}

Reasoner::Reasoner(nn::ParameterStore& ps, const ReasonerConfig& cfg, std::size_t context_width,
                   std::size_t feature_width, std::size_t prefix_tokens, nn::Rng& rng, const std::string& prefix)
    : cfg_(cfg), vocab_(cfg.num_classes, cfg.num_action_tokens), prefix_tokens_(prefix_tokens) {
  cfg_.validate();
  const std::size_t d = cfg_.width;
  inj_ln1_ = nn::LayerNorm(ps, prefix + ".inject.ln1", context_width);
  inj_ca1_ = nn::Attention(ps, prefix + ".inject.ca1", context_width, feature_width, 1, rng);
  inj_ln2_ = nn::LayerNorm(ps, prefix + ".inject.ln2", context_width);
  inj_ca2_ = nn::Attention(ps, prefix + ".inject.ca2", context_width, feature_width, 1, rng);
  w_proj_ = nn::Linear(ps, prefix + ".inject.w_proj", context_width, d, rng);
  proprio_embed_ = nn::Linear(ps, prefix + ".proprio_embed", 7, d, rng);

  const auto vs = static_cast<std::size_t>(vocab_.size());
  std::vector<double> emb(vs * d);
  for (auto& x : emb) x = nn::uniform(rng, -1.0, 1.0);
  token_embed_ = ps.add(prefix + ".token_embed", Tensor::from({vs, d}, std::move(emb), true));
  const std::size_t positions = prefix_length() + max_chain_length();
  std::vector<double> pos(positions * d);
  for (auto& x : pos) x = nn::uniform(rng, -0.1, 0.1);
  pos_embed_ = ps.add(prefix + ".pos_embed", Tensor::from({positions, d}, std::move(pos), true));

  for (std::size_t l = 0; l < cfg_.layers; ++l) {
    const std::string p = prefix + ".block" + std::to_string(l);
    Block b;
    b.ln1 = nn::LayerNorm(ps, p + ".ln1", d);
    b.self_attn = nn::Attention(ps, p + ".self_attn", d, d, cfg_.heads, rng);
    b.ln2 = nn::LayerNorm(ps, p + ".ln2", d);
    b.cross_attn = nn::Attention(ps, p + ".cross_attn", d, context_width, cfg_.heads, rng);
    b.ln3 = nn::LayerNorm(ps, p + ".ln3", d);
    b.ffn = nn::FeedForward(ps, p + ".ffn", d, cfg_.ffn_mult * d, rng, nn::Activation::gelu);
    blocks_.push_back(std::move(b));
  }
  final_ln_ = nn::LayerNorm(ps, prefix + ".final_ln", d);
  head_ = nn::Linear(ps, prefix + ".head", d, vs, rng);
}

std::size_t Reasoner::max_chain_length() const {
  ThoughtFlags all;
  return chain_layout(vocab_, all, nullptr).size();
}

Tensor Reasoner::inject(const Tensor& z_spatial, const Tensor& features, const Instruction& ins,
                        const std::array<double, 7>& proprio) const {
  if (ins.target_class < 0 || ins.target_class >= vocab_.num_classes()) {
    throw std::invalid_argument("reasoner: instruction class out of range");
  }
  Tensor z = ad::add(z_spatial, inj_ca1_(inj_ln1_(z_spatial), features));
  z = ad::add(z, inj_ca2_(inj_ln2_(z), features));
  const Tensor z_tilde = w_proj_(z);
  const std::size_t ids[2] = {static_cast<std::size_t>(vocab_.verb(ins.verb)),
                              static_cast<std::size_t>(vocab_.cls(ins.target_class))};
  const Tensor instr = ad::gather_rows(token_embed_, ids);
  const Tensor s = proprio_embed_(Tensor::from({1, 7}, {proprio.begin(), proprio.end()}));
  return ad::concat({z_tilde, instr, s}, 0);
}

Tensor Reasoner::run_blocks(Tensor x, const Tensor& context) const {
  const Tensor mask = nn::causal_mask(x.dim(0));
  for (const auto& b : blocks_) {
    const Tensor h = b.ln1(x);
    x = ad::add(x, b.self_attn(h, h, &mask));
    x = ad::add(x, b.cross_attn(b.ln2(x), context));
    x = ad::add(x, b.ffn(b.ln3(x)));
  }
  return final_ln_(x);
}

ChainOutput Reasoner::forward(const Tensor& prefix, const Tensor& context, const std::vector<int>& chain) const {
  const std::size_t p = prefix.dim(0), n = chain.size();
  if (p != prefix_length()) throw ad::ShapeError("reasoner: prefix rows " + std::to_string(p) + " != " +
                                                 std::to_string(prefix_length()));
  std::vector<std::size_t> ids(n);
  for (std::size_t i = 0; i < n; ++i) ids[i] = static_cast<std::size_t>(chain[i]);
  Tensor x = ad::concat({prefix, ad::gather_rows(token_embed_, ids)}, 0);
  x = ad::add(x, ad::slice(pos_embed_, 0, 0, p + n));
  const Tensor h = run_blocks(x, context);

  ChainOutput out;
  out.tokens = chain;
  out.h_vlm = ad::slice(h, 0, 0, p);
  out.logits = head_(ad::slice(h, 0, p, p + n));
  const auto na = static_cast<std::size_t>(vocab_.num_action_tokens());
  if (n >= na && chain[n - na] == vocab_.act(0)) out.l_action = ad::slice(h, 0, p + n - na, p + n);
  return out;
}

ChainOutput Reasoner::teacher_forced(const Tensor& prefix, const Tensor& context, const ThoughtChain& gt) const {
  ThoughtChain c = gt;
  c.flags = cfg_.flags;
  std::vector<int> tokens;
  for (const auto& s : chain_layout(vocab_, c.flags, &c)) tokens.push_back(s.token);
  return forward(prefix, context, tokens);
}

ChainOutput Reasoner::greedy(const Tensor& prefix, const Tensor& context) const {
  const auto layout = chain_layout(vocab_, cfg_.flags, nullptr);
  std::vector<int> tokens;
  tokens.reserve(layout.size());
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (layout[i].kind == TokenKind::structural) {
      tokens.push_back(layout[i].token);
      continue;
    }
    ChainOutput step;
    {
      ad::NoGradGuard guard;
      step = forward(prefix, context, tokens);
    }
    const auto [lo, hi] = vocab_.range(layout[i].kind);
    const auto v = step.logits.values();
    const std::size_t vs = static_cast<std::size_t>(vocab_.size());
    const double* row = v.data() + (tokens.size() - 1) * vs;
    int best = lo;
    for (int t = lo + 1; t < hi; ++t)
      if (row[t] > row[best]) best = t;
    tokens.push_back(best);
  }
  return forward(prefix, context, tokens);
}

std::vector<std::int64_t> Reasoner::cot_targets(const std::vector<int>& chain) const {
  const auto layout = chain_layout(vocab_, cfg_.flags, nullptr);
  if (layout.size() != chain.size()) throw std::invalid_argument("reasoner: chain does not match the layout");
  std::vector<std::int64_t> tg(chain.size(), -1);
  for (std::size_t i = 1; i < chain.size(); ++i)
    if (layout[i].kind != TokenKind::structural) tg[i - 1] = chain[i];
  return tg;
}

Tensor Reasoner::cot_loss(const ChainOutput& out) const {
  const auto tg = cot_targets(out.tokens);
  return ad::cross_entropy(out.logits, tg);
}

std::vector<int> Reasoner::value_tokens(const std::vector<int>& chain) const {
  std::vector<int> v;
  for (int t : chain)
    if (vocab_.kind_of(t) != TokenKind::structural) v.push_back(t);
  return v;
}

namespace {

double dist3(const double* a, const double* b) {
  return std::sqrt((a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]) + (a[2] - b[2]) * (a[2] - b[2]));
}

}  // namespace

ChainMetrics chain_metrics(const CoTVocab& vocab, const std::vector<int>& decoded_values, const ThoughtChain& gt) {
  ChainMetrics m;
  const std::vector<int> gt_values = encode_chain(vocab, gt);
  if (gt_values.size() != decoded_values.size()) throw std::invalid_argument("chain_metrics: token count mismatch");
  for (std::size_t i = 0; i < gt_values.size(); ++i) m.tokens_correct += gt_values[i] == decoded_values[i];
  m.tokens_compared = gt_values.size();
  m.token_acc = m.tokens_compared ? static_cast<double>(m.tokens_correct) / static_cast<double>(m.tokens_compared) : 1.0;
  const ThoughtChain d = decode_chain_tokens(vocab, gt.flags, decoded_values);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  m.centroid_err_m = gt.flags.c1 ? dist3(d.centroid.data(), gt.centroid.data()) : nan;
  m.contact_err_m = gt.flags.c2 ? dist3(d.contact_offset.data(), gt.contact_offset.data()) : nan;
  if (gt.flags.c4) {
    double s = 0;
    for (int w = 0; w < 3; ++w) s += dist3(d.waypoints[w].data(), gt.waypoints[w].data());
    m.waypoint_err_m = s / 3.0;
  } else {
    m.waypoint_err_m = nan;
  }
  return m;
}

}  // namespace gstvla

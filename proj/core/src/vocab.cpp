#include "gstvla/vocab.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <stdexcept>

namespace gstvla {

CoTVocab::CoTVocab(int num_classes, int num_action_tokens, int num_verbs)
    : num_classes_(num_classes), num_act_(num_action_tokens), num_verbs_(num_verbs) {
  if (num_classes < 1 || num_action_tokens < 1 || num_verbs < 1) {
    throw std::invalid_argument("CoTVocab: counts must be positive");
  }
  act_base_ = 6;  // BOS, EOS, SEP_c1..SEP_c4
  verb_base_ = act_base_ + num_act_;
  class_base_ = verb_base_ + num_verbs_;
  coord_base_ = class_base_ + num_classes_;
  normal_base_ = coord_base_ + kCoordBins;
  angle_base_ = normal_base_ + kNormalBins;
  size_ = angle_base_ + kAngleBins;
}

int CoTVocab::encode_coord(double x) const {
  const long k = std::lround((x - kCoordMin) / kCoordStep);
  return coord_token(static_cast<int>(std::clamp<long>(k, 0, kCoordBins - 1)));
}

double CoTVocab::decode_coord(int token) const { return kCoordMin + kCoordStep * (token - coord_base_); }

int CoTVocab::encode_normal(double x) const {
  const double w = 2.0 / kNormalBins;
  const long k = static_cast<long>(std::floor((x + 1.0) / w));
  return normal_token(static_cast<int>(std::clamp<long>(k, 0, kNormalBins - 1)));
}

double CoTVocab::decode_normal(int token) const {
  const double w = 2.0 / kNormalBins;
  return -1.0 + (static_cast<double>(token - normal_base_) + 0.5) * w;
}

int CoTVocab::encode_angle(double a) const {
  const double w = 2.0 * std::numbers::pi / kAngleBins;
  long k = std::lround((a + std::numbers::pi) / w) % kAngleBins;
  if (k < 0) k += kAngleBins;
  return angle_token(static_cast<int>(k));
}

double CoTVocab::decode_angle(int token) const {
  const double w = 2.0 * std::numbers::pi / kAngleBins;
  return -std::numbers::pi + w * (token - angle_base_);
}

std::pair<int, int> CoTVocab::range(TokenKind kind) const {
  switch (kind) {
    case TokenKind::coord:
      return {coord_base_, coord_base_ + kCoordBins};
    case TokenKind::normal:
      return {normal_base_, normal_base_ + kNormalBins};
    case TokenKind::angle:
      return {angle_base_, angle_base_ + kAngleBins};
    case TokenKind::structural:
      break;
  }
  return {0, coord_base_};
}

TokenKind CoTVocab::kind_of(int token) const {
  if (token >= angle_base_) return TokenKind::angle;
  if (token >= normal_base_) return TokenKind::normal;
  if (token >= coord_base_) return TokenKind::coord;
  return TokenKind::structural;
}

std::string CoTVocab::token_name(int t) const {
  if (t == bos()) return "<bos>";
  if (t == eos()) return "<eos>";
  if (t >= 2 && t < 6) return "<c" + std::to_string(t - 1) + ">";
  if (t >= act_base_ && t < verb_base_) return "<act" + std::to_string(t - act_base_) + ">";
  if (t >= verb_base_ && t < class_base_) return "<verb" + std::to_string(t - verb_base_) + ">";
  if (t >= class_base_ && t < coord_base_) return "<class" + std::to_string(t - class_base_) + ">";
  char buf[32];
  switch (kind_of(t)) {
    case TokenKind::coord:
      std::snprintf(buf, sizeof buf, "%+.2f", decode_coord(t));
      break;
    case TokenKind::normal:
      std::snprintf(buf, sizeof buf, "n%+.4f", decode_normal(t));
      break;
    default:
      std::snprintf(buf, sizeof buf, "r%+.3f", decode_angle(t));
      break;
  }
  return buf;
}

namespace {

// Value kinds of each thought in generation order.
std::vector<TokenKind> thought_kinds(int j) {
  using K = TokenKind;
  switch (j) {
    case 0:
      return {K::coord, K::coord, K::coord};
    case 1:
      return {K::coord, K::coord, K::coord, K::normal, K::normal, K::normal};
    case 2:
      return {K::coord, K::coord};
    default: {
      std::vector<K> k;
      for (int w = 0; w < 3; ++w) k.insert(k.end(), {K::coord, K::coord, K::coord, K::angle, K::angle, K::angle});
      return k;
    }
  }
}

std::vector<double> thought_values(const ThoughtChain& c, int j) {
  switch (j) {
    case 0:
      return {c.centroid[0], c.centroid[1], c.centroid[2]};
    case 1:
      return {c.contact_offset[0],  c.contact_offset[1],  c.contact_offset[2],
              c.approach_normal[0], c.approach_normal[1], c.approach_normal[2]};
    case 2:
      return {c.vertical_distance, c.lateral_distance};
    default: {
      std::vector<double> v;
      for (const auto& w : c.waypoints) v.insert(v.end(), w.begin(), w.end());
      return v;
    }
  }
}

int encode_value(const CoTVocab& vocab, TokenKind k, double x) {
  switch (k) {
    case TokenKind::coord:
      return vocab.encode_coord(x);
    case TokenKind::normal:
      return vocab.encode_normal(x);
    default:
      return vocab.encode_angle(x);
  }
}

double decode_value(const CoTVocab& vocab, TokenKind k, int t) {
  const auto [lo, hi] = vocab.range(k);
  if (t < lo || t >= hi) throw std::invalid_argument("decode: token " + std::to_string(t) + " has the wrong kind");
  switch (k) {
    case TokenKind::coord:
      return vocab.decode_coord(t);
    case TokenKind::normal:
      return vocab.decode_normal(t);
    default:
      return vocab.decode_angle(t);
  }
}

}  // namespace

std::vector<ChainSlot> chain_layout(const CoTVocab& vocab, const ThoughtFlags& flags, const ThoughtChain* chain) {
  std::vector<ChainSlot> slots;
  slots.push_back({vocab.bos(), TokenKind::structural, -1});
  for (int j = 0; j < 4; ++j) {
    if (!flags.enabled(j)) continue;
    slots.push_back({vocab.sep(j), TokenKind::structural, -1});
    const auto kinds = thought_kinds(j);
    std::vector<double> vals;
    if (chain) vals = thought_values(*chain, j);
    for (std::size_t i = 0; i < kinds.size(); ++i) {
      slots.push_back({chain ? encode_value(vocab, kinds[i], vals[i]) : -1, kinds[i], j});
    }
  }
  slots.push_back({vocab.eos(), TokenKind::structural, -1});
  for (int i = 0; i < vocab.num_action_tokens(); ++i) slots.push_back({vocab.act(i), TokenKind::structural, -1});
  return slots;
}

std::vector<int> encode_chain(const CoTVocab& vocab, const ThoughtChain& chain) {
  std::vector<int> out;
  for (const auto& s : chain_layout(vocab, chain.flags, &chain))
    if (s.kind != TokenKind::structural) out.push_back(s.token);
  return out;
}

ThoughtChain decode_chain_tokens(const CoTVocab& vocab, const ThoughtFlags& flags, const std::vector<int>& values) {
  ThoughtChain c;
  c.flags = flags;
  std::size_t pos = 0;
  for (int j = 0; j < 4; ++j) {
    if (!flags.enabled(j)) continue;
    const auto kinds = thought_kinds(j);
    if (pos + kinds.size() > values.size()) throw std::invalid_argument("decode: too few value tokens");
    std::vector<double> v;
    for (auto k : kinds) v.push_back(decode_value(vocab, k, values[pos++]));
    switch (j) {
      case 0:
        c.centroid = {v[0], v[1], v[2]};
        break;
      case 1: {
        c.contact_offset = {v[0], v[1], v[2]};
        const double n = std::sqrt(v[3] * v[3] + v[4] * v[4] + v[5] * v[5]);
        c.approach_normal = {v[3] / n, v[4] / n, v[5] / n};
        break;
      }
      case 2:
        c.vertical_distance = v[0];
        c.lateral_distance = v[1];
        break;
      default:
        for (int w = 0; w < 3; ++w)
          for (int i = 0; i < 6; ++i) c.waypoints[w][i] = v[6 * w + i];
        break;
    }
  }
  if (pos != values.size()) throw std::invalid_argument("decode: trailing value tokens");
  return c;
}

std::string format_chain(const ThoughtChain& c) {
  std::string out;
  char buf[256];
  if (c.flags.c1) {
    std::snprintf(buf, sizeof buf, "target centroid: (%.2f, %.2f, %.2f) m\n", c.centroid[0], c.centroid[1],
                  c.centroid[2]);
    out += buf;
  }
  if (c.flags.c2) {
    std::snprintf(buf, sizeof buf, "contact offset: (%.2f, %.2f, %.2f) m, approach normal: (%.3f, %.3f, %.3f)\n",
                  c.contact_offset[0], c.contact_offset[1], c.contact_offset[2], c.approach_normal[0],
                  c.approach_normal[1], c.approach_normal[2]);
    out += buf;
  }
  if (c.flags.c3) {
    std::snprintf(buf, sizeof buf, "vertical distance to table: %.2f m, lateral distance to nearest object: %.2f m\n",
                  c.vertical_distance, c.lateral_distance);
    out += buf;
  }
  if (c.flags.c4) {
    static const char* names[3] = {"pre-grasp", "grasp", "retract"};
    for (int w = 0; w < 3; ++w) {
      const auto& p = c.waypoints[w];
      std::snprintf(buf, sizeof buf, "waypoint %s: delta (%.2f, %.2f, %.2f) m, (%.3f, %.3f, %.3f) rad\n", names[w],
                    p[0], p[1], p[2], p[3], p[4], p[5]);
      out += buf;
    }
  }
  return out;
}

}  // namespace gstvla

#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "gstvla/camera.hpp"

namespace gstvla {

/// Per-thought enable switches (c1 grounding, c2 grasp, c3 relations, c4 plan).
struct ThoughtFlags {
  bool c1 = true, c2 = true, c3 = true, c4 = true;
  bool enabled(int j) const { return j == 0 ? c1 : j == 1 ? c2 : j == 2 ? c3 : c4; }
  bool any() const { return c1 || c2 || c3 || c4; }
};

using Waypoint = std::array<double, 6>;  // dx dy dz drx dry drz

/// The four structured spatial thoughts, in metric units.
struct ThoughtChain {
  Vec3 centroid{};         // c1
  Vec3 contact_offset{};   // c2: grasp point minus centroid
  Vec3 approach_normal{};  // c2: unit approach surface normal
  double vertical_distance = 0;  // c3: target height above the table
  double lateral_distance = 0;   // c3: distance to the nearest other object
  std::array<Waypoint, 3> waypoints{};  // c4: pre-grasp, grasp, retract deltas
  ThoughtFlags flags;
};

/// Number of value tokens each thought contributes.
inline constexpr std::array<int, 4> kThoughtTokens = {3, 6, 2, 18};

enum class TokenKind : std::uint8_t { structural, coord, normal, angle };

/// Quantized alphabet for chain generation.
///
/// Coordinates use 64 bins with centers -0.64 + 0.02 k (2 cm pitch, values
/// round to the nearest center, out-of-range clamps). Normal components use
/// 32 equal-width bins over [-1, 1] decoded at bin centers. Angles use 32
/// centers -pi + k * 2pi/32 with wrap-around.
class CoTVocab {
 public:
  static constexpr int kCoordBins = 64;
  static constexpr double kCoordMin = -0.64;
  static constexpr double kCoordStep = 0.02;
  static constexpr int kNormalBins = 32;
  static constexpr int kAngleBins = 32;

  CoTVocab(int num_classes, int num_action_tokens, int num_verbs = 1);

  int size() const { return size_; }
  int bos() const { return 0; }
  int eos() const { return 1; }
  int sep(int thought) const { return 2 + thought; }
  int act(int i) const { return act_base_ + i; }
  int verb(int i) const { return verb_base_ + i; }
  int cls(int c) const { return class_base_ + c; }
  int coord_token(int bin) const { return coord_base_ + bin; }
  int normal_token(int bin) const { return normal_base_ + bin; }
  int angle_token(int bin) const { return angle_base_ + bin; }

  int encode_coord(double x) const;
  double decode_coord(int token) const;
  int encode_normal(double x) const;
  double decode_normal(int token) const;
  int encode_angle(double a) const;
  double decode_angle(int token) const;

  /// [first, last) token id range for a value kind.
  std::pair<int, int> range(TokenKind kind) const;
  TokenKind kind_of(int token) const;
  std::string token_name(int token) const;

  int num_action_tokens() const { return num_act_; }
  int num_classes() const { return num_classes_; }

 private:
  int num_classes_, num_act_, num_verbs_;
  int act_base_, verb_base_, class_base_, coord_base_, normal_base_, angle_base_, size_;
};

/// One position of the decoder token stream.
struct ChainSlot {
  int token = -1;                           // fixed id for structural slots, or the value id
  TokenKind kind = TokenKind::structural;   // value kind when not structural
  int thought = -1;                         // 0..3 for value slots
};

/// Token layout: BOS, then for each enabled thought SEP_cj followed by its
/// value tokens, then EOS and N_a ACT tokens. Value tokens are filled from
/// `chain` when given; otherwise value slots carry token -1.
std::vector<ChainSlot> chain_layout(const CoTVocab& vocab, const ThoughtFlags& flags, const ThoughtChain* chain);

/// Value tokens of a chain in layout order (enabled thoughts only).
std::vector<int> encode_chain(const CoTVocab& vocab, const ThoughtChain& chain);

/// Reads value tokens (layout order for `flags`) back into metric units.
/// The decoded normal is re-normalized to unit length.
ThoughtChain decode_chain_tokens(const CoTVocab& vocab, const ThoughtFlags& flags, const std::vector<int>& values);

/// Human-readable rendering, e.g. "target centroid: (0.16, -0.08, 0.42) m".
std::string format_chain(const ThoughtChain& chain);

}  // namespace gstvla

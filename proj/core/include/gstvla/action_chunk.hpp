#pragma once

#include <array>
#include <cstddef>
#include <vector>

namespace gstvla {

inline constexpr std::size_t kChunkLength = 10;  // L_act
inline constexpr std::size_t kActionDim = 7;     // dx dy dz drx dry drz gripper
inline constexpr std::size_t kChunkSize = kChunkLength * kActionDim;

/// L_act x 7 delta poses, row-major by step.
struct ActionChunk {
  std::array<double, kChunkSize> deltas{};

  double& at(std::size_t step, std::size_t ch) { return deltas[step * kActionDim + ch]; }
  double at(std::size_t step, std::size_t ch) const { return deltas[step * kActionDim + ch]; }

  /// End-effector positions after each step, starting from the origin.
  std::vector<std::array<double, 3>> cumulative_positions() const;
};

}  // namespace gstvla

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "gstvla/autodiff/tensor.hpp"

namespace gstvla::ad {

/// On-disk layout (all integers and reals little-endian):
///
///   magic      8 bytes  "GSTVLACK"
///   version    u32      (kCheckpointVersion)
///   n_meta     u32
///   n_meta x { u32 key_len, key bytes, u32 val_len, val bytes }
///   n_entries  u32
///   n_entries x { u32 path_len, path bytes, u32 rank, u64 extents[rank],
///                 f64 payload[prod(extents)] }
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointEntry {
  Shape shape;
  std::vector<double> values;
};

struct Checkpoint {
  std::map<std::string, std::string> meta;
  std::map<std::string, CheckpointEntry> entries;

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace gstvla::ad

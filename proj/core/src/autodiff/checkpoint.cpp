#include "gstvla/autodiff/checkpoint.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>

namespace gstvla::ad {
namespace {

constexpr std::array<char, 8> kMagic = {'G', 'S', 'T', 'V', 'L', 'A', 'C', 'K'};

template <class T>
void put(std::ostream& os, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    os.write(bytes.data(), sizeof(T));
  } else {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
}

template <class T>
T get(std::istream& is) {
  std::array<char, sizeof(T)> bytes{};
  if (!is.read(bytes.data(), sizeof(T))) throw CheckpointError("checkpoint: truncated file");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  return std::bit_cast<T>(bytes);
}

void put_string(std::ostream& os, const std::string& s) {
  put<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& is) {
  const auto n = get<std::uint32_t>(is);
  if (n > (1u << 30)) throw CheckpointError("checkpoint: implausible string length");
  std::string s(n, '\0');
  if (n && !is.read(s.data(), n)) throw CheckpointError("checkpoint: truncated string");
  return s;
}

}  // namespace

void Checkpoint::save(const std::filesystem::path& path) const {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw CheckpointError("checkpoint: cannot open " + tmp.string() + " for writing");
    os.write(kMagic.data(), kMagic.size());
    put<std::uint32_t>(os, kCheckpointVersion);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(meta.size()));
    for (const auto& [k, v] : meta) {
      put_string(os, k);
      put_string(os, v);
    }
    put<std::uint32_t>(os, static_cast<std::uint32_t>(entries.size()));
    for (const auto& [name, e] : entries) {
      put_string(os, name);
      put<std::uint32_t>(os, static_cast<std::uint32_t>(e.shape.size()));
      for (auto d : e.shape) put<std::uint64_t>(os, d);
      for (double x : e.values) put<double>(os, x);
    }
    if (!os) throw CheckpointError("checkpoint: write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("checkpoint: cannot open " + path.string());
  std::array<char, 8> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kMagic) {
    throw CheckpointError("checkpoint: bad magic in " + path.string());
  }
  const auto version = get<std::uint32_t>(is);
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));
  }
  Checkpoint ck;
  const auto n_meta = get<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    auto k = get_string(is);
    ck.meta[k] = get_string(is);
  }
  const auto n = get<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < n; ++i) {
    auto name = get_string(is);
    CheckpointEntry e;
    const auto rank = get<std::uint32_t>(is);
    if (rank > 8) throw CheckpointError("checkpoint: implausible rank for " + name);
    for (std::uint32_t r = 0; r < rank; ++r) e.shape.push_back(static_cast<std::size_t>(get<std::uint64_t>(is)));
    e.values.resize(numel_of(e.shape));
    for (auto& x : e.values) x = get<double>(is);
    ck.entries.emplace(std::move(name), std::move(e));
  }
  return ck;
}

}  // namespace gstvla::ad

#include "gstvla/ply.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace gstvla {

static_assert(std::endian::native == std::endian::little, "PLY writer assumes a little-endian host");

void write_gaussians_ply(const std::filesystem::path& path, const GaussianField& f) {
  const std::size_t n = f.centroids.dim(0);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "ply\nformat binary_little_endian 1.0\n"
      << "comment gaussian field: centroid (m), axis scales exp(sigma) (m), opacity\n"
      << "element vertex " << n << "\n";
  for (const char* p : {"x", "y", "z", "sx", "sy", "sz", "opacity"}) out << "property double " << p << "\n";
  out << "end_header\n";
  const auto c = f.centroids.values();
  const auto s = f.log_scales.values();
  const auto a = f.opacities.values();
  for (std::size_t k = 0; k < n; ++k) {
    const double row[7] = {c[3 * k], c[3 * k + 1], c[3 * k + 2], std::exp(s[3 * k]), std::exp(s[3 * k + 1]),
                           std::exp(s[3 * k + 2]), a[k]};
    out.write(reinterpret_cast<const char*>(row), sizeof row);
  }
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::vector<double> read_gaussians_ply(const std::filesystem::path& path, std::size_t* count) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("cannot open " + path.string());
  std::size_t n = 0, props = 0;
  for (std::string line; std::getline(in, line);) {
    if (line.rfind("element vertex ", 0) == 0) n = std::stoull(line.substr(15));
    if (line.rfind("property ", 0) == 0) ++props;
    if (line == "end_header") break;
  }
  if (props != 7) throw std::runtime_error("ply: expected 7 vertex properties");
  std::vector<double> v(n * 7);
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
  if (!in) throw std::runtime_error("ply: truncated body");
  if (count) *count = n;
  return v;
}

}  // namespace gstvla

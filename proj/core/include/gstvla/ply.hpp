#pragma once

#include <filesystem>

#include "gstvla/gst.hpp"

namespace gstvla {

/// Binary little-endian PLY with one vertex per primitive:
/// float64 x, y, z (m), sx, sy, sz (= exp(sigma)), opacity.
void write_gaussians_ply(const std::filesystem::path& path, const GaussianField& field);

/// Reads the vertex block written by write_gaussians_ply (N x 7 values).
std::vector<double> read_gaussians_ply(const std::filesystem::path& path, std::size_t* count = nullptr);

}  // namespace gstvla

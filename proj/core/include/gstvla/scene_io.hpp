#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "gstvla/scene.hpp"

namespace gstvla {

/// Scene file: one JSON document per SceneSpec.
///
///   {
///     "format": "gstvla-scene", "version": 1,
///     "seed": <u64>, "table_height": <m>, "target_index": <int>,
///     "camera": {"fx": .., "fy": .., "cx": .., "cy": ..},
///     "start_offset": [x, y, z],
///     "objects": [{"shape": "box|sphere|cylinder|thin_plate",
///                  "centroid": [x, y, z], "half_extents": [x, y, z],
///                  "class_id": <int>, "grasp_point": [x, y, z],
///                  "grasp_normal": [x, y, z]}, ...]
///   }
std::string scene_to_json(const SceneSpec& spec);
SceneSpec scene_from_json(const std::string& text);

void save_scene(const std::filesystem::path& path, const SceneSpec& spec);
SceneSpec load_scene(const std::filesystem::path& path);

/// Manifest: one "relative/path<TAB>split" line per scene.
struct ManifestEntry {
  std::string path;
  std::string split;
};
void save_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path);

}  // namespace gstvla

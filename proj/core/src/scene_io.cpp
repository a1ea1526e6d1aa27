#include "gstvla/scene_io.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace gstvla {
namespace {

using json = nlohmann::json;

json vec(const Vec3& v) { return json::array({v[0], v[1], v[2]}); }

Vec3 to_vec(const json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 3) throw SceneError("scene: " + what + " must be a 3-element array");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw SceneError("scene: " + where + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key())) throw SceneError("scene: unknown key " + where + "." + it.key());
}

}  // namespace

std::string scene_to_json(const SceneSpec& s) {
  json objs = json::array();
  for (const auto& o : s.objects) {
    objs.push_back({{"shape", shape_name(o.shape)},
                    {"centroid", vec(o.centroid)},
                    {"half_extents", vec(o.half_extents)},
                    {"class_id", o.class_id},
                    {"grasp_point", vec(o.grasp_point)},
                    {"grasp_normal", vec(o.grasp_normal)}});
  }
  json j = {{"format", "gstvla-scene"},
            {"version", 1},
            {"seed", s.seed},
            {"table_height", s.table_height},
            {"target_index", s.target_index},
            {"camera", {{"fx", s.camera.fx}, {"fy", s.camera.fy}, {"cx", s.camera.cx}, {"cy", s.camera.cy}}},
            {"start_offset", vec(s.start_offset)},
            {"objects", objs}};
  return j.dump(2) + "\n";
}

SceneSpec scene_from_json(const std::string& text) {
  SceneSpec s;
  try {
    const json j = json::parse(text);
    check_keys(j, {"format", "version", "seed", "table_height", "target_index", "camera", "start_offset", "objects"},
               "scene");
    if (j.value("format", "") != "gstvla-scene") throw SceneError("scene: format must be \"gstvla-scene\"");
    if (j.value("version", 0) != 1) throw SceneError("scene: unsupported version");
    s.seed = j.at("seed").get<std::uint64_t>();
    s.table_height = j.at("table_height").get<double>();
    s.target_index = j.at("target_index").get<int>();
    if (j.contains("camera")) {
      const json& c = j.at("camera");
      check_keys(c, {"fx", "fy", "cx", "cy"}, "camera");
      s.camera = {c.at("fx").get<double>(), c.at("fy").get<double>(), c.at("cx").get<double>(), c.at("cy").get<double>()};
    }
    if (j.contains("start_offset")) s.start_offset = to_vec(j.at("start_offset"), "start_offset");
    for (const json& o : j.at("objects")) {
      check_keys(o, {"shape", "centroid", "half_extents", "class_id", "grasp_point", "grasp_normal"}, "objects[]");
      ObjectRecord r;
      r.shape = parse_shape(o.at("shape").get<std::string>());
      r.centroid = to_vec(o.at("centroid"), "centroid");
      r.half_extents = to_vec(o.at("half_extents"), "half_extents");
      r.class_id = o.at("class_id").get<int>();
      r.grasp_point = to_vec(o.at("grasp_point"), "grasp_point");
      r.grasp_normal = to_vec(o.at("grasp_normal"), "grasp_normal");
      s.objects.push_back(r);
    }
  } catch (const json::exception& e) {
    throw SceneError(std::string("scene: malformed document: ") + e.what());
  }
  s.validate();
  return s;
}

void save_scene(const std::filesystem::path& path, const SceneSpec& spec) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << scene_to_json(spec);
}

SceneSpec load_scene(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open scene file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return scene_from_json(ss.str());
}

void save_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& e : entries) out << e.path << '\t' << e.split << '\n';
}

std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open manifest " + path.string());
  std::vector<ManifestEntry> out;
  for (std::string line; std::getline(in, line);) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw std::invalid_argument("manifest: line without a split tag: " + line);
    out.push_back({line.substr(0, tab), line.substr(tab + 1)});
  }
  return out;
}

}  // namespace gstvla

#include "gstvla/config_io.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace gstvla {
namespace {

using json = nlohmann::json;

const char* pe_str(PeMode m) { return m == PeMode::fourier3d ? "fourier3d" : "learned2d"; }
const char* pool_str(PoolMode m) { return m == PoolMode::attention ? "attention" : "average"; }
const char* opacity_str(OpacityMode m) { return m == OpacityMode::learned ? "learned" : "fixed_one"; }
const char* residual_str(ResidualMode m) { return m == ResidualMode::learned ? "learned" : "zero"; }
const char* scale_str(ScaleMode m) { return m == ScaleMode::anisotropic ? "anisotropic" : "isotropic"; }
const char* content_str(TokenContent c) {
  switch (c) {
    case TokenContent::gaussian:
      return "gaussian";
    case TokenContent::position_only:
      return "position_only";
    case TokenContent::depth_scalar:
      return "depth_scalar";
  }
  return "gaussian";
}

std::string thoughts_str(const ThoughtFlags& f) {
  std::string s;
  for (int j = 0; j < 4; ++j)
    if (f.enabled(j)) s += (s.empty() ? "c" : ",c") + std::to_string(j + 1);
  return s.empty() ? "none" : s;
}

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw std::invalid_argument("config: " + where + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!allowed.count(it.key())) throw std::invalid_argument("config: unknown key " + where + "." + it.key());
  }
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw std::invalid_argument("config: bad value for " + where + "." + key + ": " + e.what());
  }
}

json stage_json(const StagePlan& p) {
  return {{"stage", stage_name(p.stage)},
          {"steps", p.steps},
          {"batch", p.batch},
          {"lr", p.lr},
          {"trainable", p.trainable},
          {"loss_flow", p.loss_flow},
          {"loss_cot", p.loss_cot},
          {"loss_depth", p.loss_depth},
          {"detach_reasoner", p.detach_reasoner}};
}

}  // namespace

std::string config_to_json(const TrainConfig& c) {
  const auto& g = c.model.gst;
  const auto& r = c.model.reasoner;
  const auto& e = c.model.expert;
  json stages = json::array();
  for (const auto& p : c.stages) stages.push_back(stage_json(p));
  json j = {
      {"model",
       {{"gst",
         {{"num_patches", g.num_patches},
          {"num_tokens", g.num_tokens},
          {"width", g.width},
          {"octaves", g.octaves},
          {"feature_width", g.feature_width},
          {"patch_grid", g.patch_grid},
          {"exp_hidden", g.exp_hidden},
          {"pe_mode", pe_str(g.pe_mode)},
          {"pool_mode", pool_str(g.pool_mode)},
          {"opacity_mode", opacity_str(g.opacity_mode)},
          {"residual_mode", residual_str(g.residual_mode)},
          {"scale_mode", scale_str(g.scale_mode)},
          {"token_content", content_str(g.token_content)}}},
        {"reasoner",
         {{"layers", r.layers},
          {"width", r.width},
          {"heads", r.heads},
          {"ffn_mult", r.ffn_mult},
          {"num_action_tokens", r.num_action_tokens},
          {"num_classes", r.num_classes},
          {"dacot_attends_raw", r.dacot_attends_raw},
          {"thoughts", thoughts_str(r.flags)}}},
        {"expert",
         {{"layers", e.layers},
          {"width", e.width},
          {"heads", e.heads},
          {"experts", e.experts},
          {"top_k", e.top_k},
          {"expert_hidden", e.expert_hidden},
          {"time_dim", e.time_dim},
          {"euler_steps", e.euler_steps},
          {"ensemble_dt", e.ensemble_dt},
          {"control_rate", e.control_rate},
          {"dense_ffn", e.dense_ffn},
          {"zero_l_action", e.zero_l_action}}},
        {"rays_per_sample", c.model.rays_per_sample},
        {"init_seed", c.model.init_seed}}},
      {"stages", stages},
      {"weights", {{"cot", c.weights.cot}, {"depth", c.weights.depth}}},
      {"train_scenes", c.train_scenes},
      {"val_scenes", c.val_scenes},
      {"seed", c.seed},
      {"data_seed", c.data_seed},
      {"feature_width", c.feature_width},
      {"skip_s1", c.skip_s1},
      {"freeze_gst_s2", c.freeze_gst_s2},
      {"checkpoint_every", c.checkpoint_every},
      {"val_flow_draws", c.val_flow_draws},
  };
  return j.dump(2) + "\n";
}

namespace {

void parse_into(TrainConfig& c, const json& j) {
  check_keys(j, {"model", "stages", "weights", "train_scenes", "val_scenes", "seed", "data_seed", "feature_width",
                 "skip_s1", "freeze_gst_s2", "checkpoint_every", "val_flow_draws"},
             "config");
  std::map<std::string, std::string> flags;
  if (j.contains("model")) {
    const json& m = j.at("model");
    check_keys(m, {"gst", "reasoner", "expert", "rays_per_sample", "init_seed"}, "model");
    read(m, "rays_per_sample", c.model.rays_per_sample, "model");
    read(m, "init_seed", c.model.init_seed, "model");
    if (m.contains("gst")) {
      const json& g = m.at("gst");
      check_keys(g, {"num_patches", "num_tokens", "width", "octaves", "feature_width", "patch_grid", "exp_hidden",
                     "pe_mode", "pool_mode", "opacity_mode", "residual_mode", "scale_mode", "token_content"},
                 "model.gst");
      auto& t = c.model.gst;
      read(g, "num_patches", t.num_patches, "model.gst");
      read(g, "num_tokens", t.num_tokens, "model.gst");
      read(g, "width", t.width, "model.gst");
      read(g, "octaves", t.octaves, "model.gst");
      read(g, "feature_width", t.feature_width, "model.gst");
      read(g, "patch_grid", t.patch_grid, "model.gst");
      read(g, "exp_hidden", t.exp_hidden, "model.gst");
      for (const char* k : {"pe_mode", "pool_mode", "opacity_mode", "residual_mode", "scale_mode", "token_content"}) {
        if (g.contains(k)) {
          if (!g.at(k).is_string()) throw std::invalid_argument(std::string("config: model.gst.") + k + " must be a string");
          flags[k] = g.at(k).get<std::string>();
        }
      }
    }
    if (m.contains("reasoner")) {
      const json& r = m.at("reasoner");
      check_keys(r, {"layers", "width", "heads", "ffn_mult", "num_action_tokens", "num_classes", "dacot_attends_raw",
                     "thoughts"},
                 "model.reasoner");
      auto& t = c.model.reasoner;
      read(r, "layers", t.layers, "model.reasoner");
      read(r, "width", t.width, "model.reasoner");
      read(r, "heads", t.heads, "model.reasoner");
      read(r, "ffn_mult", t.ffn_mult, "model.reasoner");
      read(r, "num_action_tokens", t.num_action_tokens, "model.reasoner");
      read(r, "num_classes", t.num_classes, "model.reasoner");
      read(r, "dacot_attends_raw", t.dacot_attends_raw, "model.reasoner");
      if (r.contains("thoughts")) flags["thoughts"] = r.at("thoughts").get<std::string>();
    }
    if (m.contains("expert")) {
      const json& e = m.at("expert");
      check_keys(e, {"layers", "width", "heads", "experts", "top_k", "expert_hidden", "time_dim", "euler_steps",
                     "ensemble_dt", "control_rate", "dense_ffn", "zero_l_action"},
                 "model.expert");
      auto& t = c.model.expert;
      read(e, "layers", t.layers, "model.expert");
      read(e, "width", t.width, "model.expert");
      read(e, "heads", t.heads, "model.expert");
      read(e, "experts", t.experts, "model.expert");
      read(e, "top_k", t.top_k, "model.expert");
      read(e, "expert_hidden", t.expert_hidden, "model.expert");
      read(e, "time_dim", t.time_dim, "model.expert");
      read(e, "euler_steps", t.euler_steps, "model.expert");
      read(e, "ensemble_dt", t.ensemble_dt, "model.expert");
      read(e, "control_rate", t.control_rate, "model.expert");
      read(e, "dense_ffn", t.dense_ffn, "model.expert");
      read(e, "zero_l_action", t.zero_l_action, "model.expert");
    }
  }
  if (j.contains("stages")) {
    if (!j.at("stages").is_array()) throw std::invalid_argument("config: stages must be an array");
    c.stages.clear();
    for (const json& s : j.at("stages")) {
      check_keys(s, {"stage", "steps", "batch", "lr", "trainable", "loss_flow", "loss_cot", "loss_depth",
                     "detach_reasoner"},
                 "stages[]");
      if (!s.contains("stage")) throw std::invalid_argument("config: stages[] entry needs a stage name");
      StagePlan p = default_plan(parse_stage(s.at("stage").get<std::string>()));
      read(s, "steps", p.steps, "stages[]");
      read(s, "batch", p.batch, "stages[]");
      read(s, "lr", p.lr, "stages[]");
      read(s, "trainable", p.trainable, "stages[]");
      read(s, "loss_flow", p.loss_flow, "stages[]");
      read(s, "loss_cot", p.loss_cot, "stages[]");
      read(s, "loss_depth", p.loss_depth, "stages[]");
      read(s, "detach_reasoner", p.detach_reasoner, "stages[]");
      c.stages.push_back(p);
    }
  }
  if (j.contains("weights")) {
    check_keys(j.at("weights"), {"cot", "depth"}, "weights");
    read(j.at("weights"), "cot", c.weights.cot, "weights");
    read(j.at("weights"), "depth", c.weights.depth, "weights");
  }
  read(j, "train_scenes", c.train_scenes, "config");
  read(j, "val_scenes", c.val_scenes, "config");
  read(j, "seed", c.seed, "config");
  read(j, "data_seed", c.data_seed, "config");
  read(j, "feature_width", c.feature_width, "config");
  read(j, "skip_s1", c.skip_s1, "config");
  read(j, "freeze_gst_s2", c.freeze_gst_s2, "config");
  read(j, "checkpoint_every", c.checkpoint_every, "config");
  read(j, "val_flow_draws", c.val_flow_draws, "config");
  // Keep the two feature widths in step when only one is given.
  const bool top = j.contains("feature_width");
  const bool nested = j.contains("model") && j.at("model").contains("gst") &&
                      j.at("model").at("gst").contains("feature_width");
  if (top && !nested) c.model.gst.feature_width = c.feature_width;
  if (nested && !top) c.feature_width = c.model.gst.feature_width;
  c = apply_flags(c, flags);
}

}  // namespace

TrainConfig config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: parse error: ") + e.what());
  }
  TrainConfig c;
  parse_into(c, j);
  return c;
}

namespace {

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TrainConfig load_config(const std::filesystem::path& path) { return config_from_json(slurp(path)); }

AblationGrid load_ablation_grid(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(slurp(path));
  } catch (const json::exception& e) {
    throw std::invalid_argument("ablation grid: parse error: " + std::string(e.what()));
  }
  check_keys(j, {"base", "cells"}, "grid");
  AblationGrid g;
  if (j.contains("base")) parse_into(g.base, j.at("base"));
  if (!j.contains("cells") || !j.at("cells").is_array()) throw std::invalid_argument("ablation grid: cells array missing");
  for (const json& c : j.at("cells")) {
    check_keys(c, {"name", "flags"}, "cells[]");
    AblationCell cell;
    cell.name = c.at("name").get<std::string>();
    if (c.contains("flags")) {
      for (auto it = c.at("flags").begin(); it != c.at("flags").end(); ++it) {
        const json& v = it.value();
        cell.flags[it.key()] = v.is_string() ? v.get<std::string>() : v.dump();
      }
    }
    g.cells.push_back(cell);
  }
  return g;
}

}  // namespace gstvla

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "gstvla/autodiff/checkpoint.hpp"
#include "gstvla/config_io.hpp"
#include "gstvla/ply.hpp"
#include "gstvla/render_check.hpp"
#include "gstvla/scene_io.hpp"
#include "gstvla/trainer.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace gstvla;

namespace {

constexpr std::uint64_t kDefaultSeed = 20240601;

// Missing input files map to exit code 2.
struct PathError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

bool verbose() {
  const char* v = std::getenv("GSTVLA_VERBOSE");
  return v && *v && std::string(v) != "0";
}

void note(const std::string& msg) {
  if (verbose()) std::cerr << "[gstvla] " << msg << '\n';
}

void require_file(const std::string& path, const char* what) {
  if (!fs::is_regular_file(path)) throw PathError(std::string(what) + " not found: " + path);
}

TrainConfig config_or_default(const std::string& path) {
  if (path.empty()) return TrainConfig{};
  require_file(path, "config");
  return load_config(path);
}

// Snapshot of the command line plus the fully resolved training config.
void write_snapshot(const fs::path& dir, const std::string& command, const json& args, const TrainConfig* cfg) {
  fs::create_directories(dir);
  json j = {{"command", command}, {"args", args}};
  if (cfg) j["config"] = json::parse(config_to_json(*cfg));
  std::ofstream(dir / (command + ".config.json")) << j.dump(2) << '\n';
}

void load_weights(Model& m, const std::string& ckpt) {
  require_file(ckpt, "checkpoint");
  m.params().import_from(ad::Checkpoint::load(ckpt));
}

PreparedSample sample_from_scene(const std::string& path, const TrainConfig& cfg) {
  require_file(path, "scene");
  return prepare(generate(load_scene(path), cfg.feature_width), cfg.model.gst.patch_grid);
}

Dataset dataset_from_manifest(const std::string& path, const TrainConfig& cfg) {
  require_file(path, "manifest");
  Dataset d;
  const fs::path base = fs::path(path).parent_path();
  for (const auto& e : load_manifest(path)) {
    const fs::path p = fs::path(e.path).is_absolute() ? fs::path(e.path) : base / e.path;
    auto s = sample_from_scene(p.string(), cfg);
    if (e.split == "train") {
      d.train.push_back(std::move(s));
    } else if (e.split == "val") {
      d.val.push_back(std::move(s));
    } else {
      throw std::invalid_argument("manifest: unknown split '" + e.split + "'");
    }
  }
  return d;
}

std::string metrics_line(const EvalMetrics& m) {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "samples=%zu flow=%.17g cot=%.17g depth=%.17g composite=%.17g token_acc=%.17g "
                "centroid_err_median_m=%.17g rollout_err_mean_m=%.17g pool_near_zero_frac=%.17g",
                m.samples, m.flow, m.cot, m.depth, m.composite, m.token_acc, m.centroid_err_median,
                m.rollout_err_mean, m.pool_near_zero_frac);
  return buf;
}

// ---- subcommands -----------------------------------------------------------

struct GenArgs {
  std::size_t count = 8;
  std::size_t val = 0;
  std::uint64_t seed = kDefaultSeed;
  std::string out;
};

int run_gen(const GenArgs& a) {
  if (a.val > a.count) throw std::invalid_argument("--val exceeds --count");
  fs::create_directories(a.out);
  std::vector<ManifestEntry> manifest;
  for (std::size_t i = 0; i < a.count; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "scene_%05zu.json", i);
    save_scene(fs::path(a.out) / name, random_scene(nn::mix_seed(a.seed, i)));
    manifest.push_back({name, i < a.count - a.val ? "train" : "val"});
  }
  save_manifest(fs::path(a.out) / "manifest.tsv", manifest);
  write_snapshot(a.out, "gen-scenes", {{"count", a.count}, {"val", a.val}, {"seed", a.seed}}, nullptr);
  std::cout << "wrote " << a.count << " scenes to " << a.out << '\n';
  return 0;
}

struct TrainArgs {
  std::string config, out, stage = "all", init, resume, manifest;
  std::optional<std::uint64_t> seed;
  std::size_t stop_after = 0;
};

int run_train(const TrainArgs& a) {
  TrainConfig cfg = config_or_default(a.config);
  if (a.seed) cfg.seed = *a.seed;
  cfg.validate();
  if (!a.init.empty()) require_file(a.init, "init checkpoint");
  if (!a.resume.empty()) require_file(a.resume, "resume checkpoint");
  const bool all = a.stage == "all";
  std::optional<Stage> only;
  if (!all) only = parse_stage(a.stage);
  if (only && *only != Stage::S1 && a.init.empty() && a.resume.empty() && !cfg.skip_s1) {
    throw PathError(std::string("stage ") + a.stage + " needs an --init checkpoint from the previous stage (or skip_s1)");
  }
  if (all && !a.resume.empty()) throw std::invalid_argument("--resume needs a single --stage");
  write_snapshot(a.out, "train",
                 {{"config", a.config}, {"stage", a.stage}, {"init", a.init}, {"resume", a.resume},
                  {"manifest", a.manifest}, {"stop_after", a.stop_after}},
                 &cfg);
  note("building dataset");
  const Dataset data = a.manifest.empty() ? make_dataset(cfg) : dataset_from_manifest(a.manifest, cfg);
  Trainer tr(cfg, data, a.out);
  if (!a.init.empty()) tr.load_parameters(a.init);
  std::vector<StageResult> results;
  if (all) {
    results = tr.run_all();
  } else {
    const auto it = std::find_if(cfg.stages.begin(), cfg.stages.end(), [&](const StagePlan& p) { return p.stage == *only; });
    if (it == cfg.stages.end()) throw std::invalid_argument("stage " + a.stage + " is not in the config");
    std::optional<fs::path> resume;
    if (!a.resume.empty()) resume = a.resume;
    results.push_back(tr.run_stage(*it, resume, a.stop_after));
  }
  for (const auto& r : results) {
    std::cout << "checkpoint " << r.checkpoint.string();
    if (!r.log.empty()) std::cout << " final " << format_step(r.log.back());
    std::cout << '\n';
  }
  return 0;
}

struct EvalArgs {
  std::string config, checkpoint, out, split = "val", manifest;
  std::uint64_t seed = 99;
  std::size_t max_samples = 0;
  bool no_decode = false;
};

int run_eval(const EvalArgs& a) {
  TrainConfig cfg = config_or_default(a.config);
  require_file(a.checkpoint, "checkpoint");
  write_snapshot(a.out, "eval",
                 {{"config", a.config}, {"checkpoint", a.checkpoint}, {"split", a.split}, {"seed", a.seed},
                  {"max_samples", a.max_samples}, {"no_decode", a.no_decode}, {"manifest", a.manifest}},
                 &cfg);
  const Dataset data = a.manifest.empty() ? make_dataset(cfg) : dataset_from_manifest(a.manifest, cfg);
  Model m(cfg.model);
  load_weights(m, a.checkpoint);
  EvalOptions eo;
  eo.seed = a.seed;
  eo.decode = !a.no_decode;
  eo.max_samples = a.max_samples;
  const EvalMetrics em = evaluate(m, a.split == "train" ? data.train : data.val, cfg, eo);
  const std::string line = metrics_line(em);
  std::ofstream(fs::path(a.out) / "eval_metrics.txt") << line << '\n';
  std::cout << line << '\n';
  return 0;
}

struct GradArgs {
  std::string module = "splat_render", out;
  double tol = 1e-4;
  std::uint64_t seed = kDefaultSeed;
  std::size_t primitives = 3, rays = 16;
};

int run_grad(const GradArgs& a) {
  if (a.module != "splat_render") throw std::invalid_argument("grad-check supports --module splat_render");
  const ad::GradCheckReport rep = check_render_gradients(a.seed, a.primitives, a.rays, a.tol);
  if (!a.out.empty()) {
    write_snapshot(a.out, "grad-check",
                   {{"module", a.module}, {"tol", a.tol}, {"seed", a.seed}, {"primitives", a.primitives},
                    {"rays", a.rays}},
                   nullptr);
    std::ofstream(fs::path(a.out) / "grad_check.txt") << rep.table();
  }
  std::cout << rep.table();
  std::cout << (rep.pass() ? "PASS" : "FAIL") << '\n';
  return rep.pass() ? 0 : 1;
}

struct AblateArgs {
  std::string grid, out;
};

int run_ablate(const AblateArgs& a) {
  require_file(a.grid, "grid");
  const AblationGrid g = load_ablation_grid(a.grid);
  write_snapshot(a.out, "ablate", {{"grid", a.grid}, {"cells", json::parse(std::ifstream(a.grid))["cells"]}}, &g.base);
  const auto rows = ablation_matrix(g.base, g.cells, a.out);
  const std::string table = format_ablation_table(rows);
  std::ofstream(fs::path(a.out) / "ablation.tsv") << table;
  std::cout << table;
  return 0;
}

struct SceneArgs {
  std::string config, checkpoint, scene, out = ".";
  std::uint64_t seed = kDefaultSeed;
  std::size_t ensemble = 4;
};

json scene_args_json(const SceneArgs& a) {
  return {{"config", a.config}, {"checkpoint", a.checkpoint}, {"scene", a.scene}, {"seed", a.seed}};
}

int run_export(const SceneArgs& a) {
  TrainConfig cfg = config_or_default(a.config);
  const PreparedSample s = sample_from_scene(a.scene, cfg);
  Model m(cfg.model);
  load_weights(m, a.checkpoint);
  const fs::path out(a.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_snapshot(out.has_parent_path() ? out.parent_path() : fs::path("."), "export-gaussians", scene_args_json(a),
                 &cfg);
  ad::NoGradGuard guard;
  const Encoded e = m.encode(s);
  write_gaussians_ply(out, e.field);
  std::cout << "wrote " << e.field.centroids.dim(0) << " gaussians to " << out.string() << '\n';
  return 0;
}

int run_decode(const SceneArgs& a) {
  TrainConfig cfg = config_or_default(a.config);
  const PreparedSample s = sample_from_scene(a.scene, cfg);
  Model m(cfg.model);
  load_weights(m, a.checkpoint);
  write_snapshot(a.out, "decode-chain", scene_args_json(a), &cfg);
  const Inference inf = m.infer(s, a.seed);
  const std::string text = format_chain(inf.chain);
  std::ofstream(fs::path(a.out) / "decode_chain.txt") << text << '\n';
  std::cout << text << '\n';
  return 0;
}

int run_rollout(const SceneArgs& a) {
  TrainConfig cfg = config_or_default(a.config);
  if (a.ensemble == 0 || a.ensemble > kChunkLength) throw std::invalid_argument("--ensemble must be in 1..10");
  const PreparedSample s = sample_from_scene(a.scene, cfg);
  Model m(cfg.model);
  load_weights(m, a.checkpoint);
  json args = scene_args_json(a);
  args["ensemble"] = a.ensemble;
  write_snapshot(a.out, "rollout", args, &cfg);

  std::vector<ActionChunk> draws;
  for (std::size_t j = 0; j < a.ensemble; ++j) draws.push_back(m.infer(s, nn::mix_seed(a.seed, j)).chunk);
  const auto pred = draws[0].cumulative_positions();
  const auto demo = s.action_gt.cumulative_positions();
  const auto& ec = cfg.model.expert;

  std::ostringstream t;
  t << "step\tdx\tdy\tdz\tgrip\tens_dx\tens_dy\tens_dz\tens_grip\tpos_err_m\n";
  char buf[256];
  double total = 0;
  for (std::size_t k = 0; k < kChunkLength; ++k) {
    // Draw j plays the chunk predicted j steps earlier: its row j is step k.
    std::vector<EnsembleEntry> hist;
    for (std::size_t j = 0; j < draws.size(); ++j) {
      EnsembleEntry e{draws[j], j};
      for (std::size_t ch = 0; ch < kActionDim; ++ch) e.chunk.at(j, ch) = draws[j].at(k, ch);
      hist.push_back(e);
    }
    const auto ens = temporal_ensemble(hist, ec.ensemble_dt, ec.control_rate);
    const double err = std::sqrt(std::pow(pred[k][0] - demo[k][0], 2) + std::pow(pred[k][1] - demo[k][1], 2) +
                                 std::pow(pred[k][2] - demo[k][2], 2));
    total += err;
    const ActionChunk& c = draws[0];
    std::snprintf(buf, sizeof buf, "%zu\t%.5f\t%.5f\t%.5f\t%.3f\t%.5f\t%.5f\t%.5f\t%.3f\t%.5f\n", k, c.at(k, 0),
                  c.at(k, 1), c.at(k, 2), c.at(k, 6), ens[0], ens[1], ens[2], ens[6], err);
    t << buf;
  }
  std::snprintf(buf, sizeof buf, "mean_pos_err_m\t%.6f\n", total / static_cast<double>(kChunkLength));
  t << buf;
  std::ofstream(fs::path(a.out) / "rollout.tsv") << t.str();
  std::cout << t.str();
  return 0;
}

int run_render(const SceneArgs& a) {
  TrainConfig cfg = config_or_default(a.config);
  const PreparedSample s = sample_from_scene(a.scene, cfg);
  Model m(cfg.model);
  load_weights(m, a.checkpoint);
  write_snapshot(a.out, "render-depth", scene_args_json(a), &cfg);
  ad::NoGradGuard guard;
  const Encoded e = m.encode(s);
  const std::size_t n = s.depth.values.size();
  std::vector<std::size_t> ids(n);
  for (std::size_t i = 0; i < n; ++i) ids[i] = i;
  const RayBundle rays = ray_bundle_for(s.depth, s.intrinsics, ids);
  RenderOptions ro;
  ro.keep_weights = false;
  const Tensor r = render_depth(e.field.centroids, e.field.log_scales, e.field.opacities, rays, ro).rendered;
  const double silog = depth_loss(r, rays.target_depths).item();
  const auto rv = r.values();
  double abs_rel = 0;
  for (std::size_t i = 0; i < n; ++i) abs_rel += std::abs(rv[i] - rays.target_depths[i]) / rays.target_depths[i];
  abs_rel /= static_cast<double>(n);
  const fs::path dir(a.out);
  const auto dump = [&](const char* name, const double* p) {
    std::ofstream f(dir / name, std::ios::binary);
    f.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n * sizeof(double)));
  };
  // Ray-range depth in metres, row-major H x W float64.
  dump("rendered_depth.f64", rv.data());
  dump("target_depth.f64", rays.target_depths.data());
  char buf[160];
  std::snprintf(buf, sizeof buf, "height=%zu width=%zu silog=%.10g abs_rel=%.10g", s.depth.height, s.depth.width, silog,
                abs_rel);
  std::ofstream(dir / "render_metrics.txt") << buf << '\n';
  std::cout << buf << '\n';
  return 0;
}

std::string one_line(std::string s) {
  for (char& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gstvla: synthetic-scene spatial tokenizer, reasoner and action expert"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "gstvla 0.1.0");

  GenArgs gen;
  auto* c_gen = app.add_subcommand("gen-scenes", "Write seeded scene files and a manifest");
  c_gen->add_option("--count", gen.count, "Number of scenes")->check(CLI::PositiveNumber);
  c_gen->add_option("--val", gen.val, "Trailing scenes tagged as validation");
  c_gen->add_option("--seed", gen.seed, "Base seed")->capture_default_str();
  c_gen->add_option("--out", gen.out, "Output directory")->required();

  TrainArgs tr;
  std::uint64_t train_seed = 0;
  auto* c_train = app.add_subcommand("train", "Run training stages");
  c_train->add_option("--config", tr.config, "JSON config (defaults when omitted)");
  c_train->add_option("--out", tr.out, "Output directory")->required();
  c_train->add_option("--stage", tr.stage, "S1, S2, S3 or all")->check(CLI::IsMember({"S1", "S2", "S3", "all"}));
  c_train->add_option("--init", tr.init, "Checkpoint to start from");
  c_train->add_option("--resume", tr.resume, "Mid-stage checkpoint to resume");
  c_train->add_option("--manifest", tr.manifest, "Scene manifest instead of generated scenes");
  c_train->add_option("--stop-after", tr.stop_after, "End the stage early after this many steps");
  auto* o_train_seed = c_train->add_option("--seed", train_seed, "Training seed (overrides the config)");

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  c_eval->add_option("--config", ev.config, "JSON config");
  c_eval->add_option("--checkpoint", ev.checkpoint, "Checkpoint")->required();
  c_eval->add_option("--out", ev.out, "Output directory")->required();
  c_eval->add_option("--split", ev.split, "val or train")->check(CLI::IsMember({"val", "train"}));
  c_eval->add_option("--manifest", ev.manifest, "Scene manifest instead of generated scenes");
  c_eval->add_option("--seed", ev.seed, "Evaluation seed")->capture_default_str();
  c_eval->add_option("--max-samples", ev.max_samples, "Limit the number of samples (0 = all)");
  c_eval->add_flag("--no-decode", ev.no_decode, "Skip greedy decoding and rollouts");

  GradArgs gc;
  auto* c_grad = app.add_subcommand("grad-check", "Finite-difference gradient check");
  c_grad->add_option("--module", gc.module, "Module to check")->capture_default_str();
  c_grad->add_option("--tol", gc.tol, "Maximum relative error")->capture_default_str();
  c_grad->add_option("--seed", gc.seed, "Seed of the random field")->capture_default_str();
  c_grad->add_option("--primitives", gc.primitives, "Primitive count")->capture_default_str();
  c_grad->add_option("--rays", gc.rays, "Ray count")->capture_default_str();
  c_grad->add_option("--out", gc.out, "Optional output directory");

  AblateArgs ab;
  auto* c_ablate = app.add_subcommand("ablate", "Train and evaluate every cell of an ablation grid");
  c_ablate->add_option("--grid", ab.grid, "JSON grid file")->required();
  c_ablate->add_option("--out", ab.out, "Output directory")->required();

  const auto scene_cmd = [&](const char* name, const char* help, SceneArgs& s, const char* out_help) {
    auto* c = app.add_subcommand(name, help);
    c->add_option("--config", s.config, "JSON config");
    c->add_option("--checkpoint", s.checkpoint, "Checkpoint")->required();
    c->add_option("--scene", s.scene, "Scene file")->required();
    c->add_option("--out", s.out, out_help)->capture_default_str();
    c->add_option("--seed", s.seed, "Sampling seed")->capture_default_str();
    return c;
  };
  SceneArgs ex, dc, ro, rd;
  auto* c_export = scene_cmd("export-gaussians", "Write the Gaussian field of a scene as PLY", ex, "PLY file");
  c_export->get_option("--out")->required();
  auto* c_decode = scene_cmd("decode-chain", "Print the decoded spatial chain", dc, "Output directory");
  auto* c_roll = scene_cmd("rollout", "Decoded chunk, ensemble and error against the scripted demo", ro,
                           "Output directory");
  c_roll->add_option("--ensemble", ro.ensemble, "Chunks combined by the temporal ensemble")->capture_default_str();
  auto* c_render = scene_cmd("render-depth", "Render depth and compare with the target", rd, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage: " << one_line(e.what()) << '\n';
    return 2;
  }

  try {
    if (*c_gen) return run_gen(gen);
    if (*c_train) {
      if (*o_train_seed) tr.seed = train_seed;
      return run_train(tr);
    }
    if (*c_eval) return run_eval(ev);
    if (*c_grad) return run_grad(gc);
    if (*c_ablate) return run_ablate(ab);
    if (*c_export) return run_export(ex);
    if (*c_decode) return run_decode(dc);
    if (*c_roll) return run_rollout(ro);
    if (*c_render) return run_render(rd);
  } catch (const PathError& e) {
    std::cerr << "error: path: " << one_line(e.what()) << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: runtime: " << one_line(e.what()) << '\n';
    return 1;
  }
  return 2;
}

#include "gstvla/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

namespace gstvla {
namespace fs = std::filesystem;

const char* stage_name(Stage s) {
  switch (s) {
    case Stage::S1:
      return "S1";
    case Stage::S2:
      return "S2";
    case Stage::S3:
      return "S3";
  }
  return "S1";
}

Stage parse_stage(const std::string& s) {
  if (s == "S1" || s == "s1") return Stage::S1;
  if (s == "S2" || s == "s2") return Stage::S2;
  if (s == "S3" || s == "s3") return Stage::S3;
  throw std::invalid_argument("unknown stage '" + s + "'");
}

void StagePlan::validate() const {
  if (steps == 0) throw std::invalid_argument(std::string(stage_name(stage)) + ": steps must be > 0");
  if (batch == 0) throw std::invalid_argument(std::string(stage_name(stage)) + ": batch must be > 0");
  if (!(lr > 0.0)) throw std::invalid_argument(std::string(stage_name(stage)) + ": lr must be > 0");
  if (trainable.empty()) throw std::invalid_argument(std::string(stage_name(stage)) + ": no trainable groups");
  for (const auto& g : trainable)
    if (g != "gst" && g != "reasoner" && g != "expert") throw std::invalid_argument("unknown parameter group '" + g + "'");
  if (!loss_flow && !loss_cot && !loss_depth) throw std::invalid_argument("stage has no active loss");
  if (stage == Stage::S1 && std::count(trainable.begin(), trainable.end(), "reasoner")) {
    throw std::invalid_argument("S1 keeps the reasoner frozen");
  }
}

StagePlan default_plan(Stage s) {
  StagePlan p;
  p.stage = s;
  switch (s) {
    case Stage::S1:
      p.steps = 4000, p.batch = 16, p.lr = 3e-4;
      p.trainable = {"gst", "expert"};
      p.loss_cot = false;
      p.detach_reasoner = true;
      break;
    case Stage::S2:
      p.steps = 2000, p.batch = 8, p.lr = 1e-4;
      p.trainable = {"gst", "reasoner", "expert"};
      break;
    case Stage::S3:
      p.steps = 1000, p.batch = 4, p.lr = 3e-5;
      p.trainable = {"gst", "reasoner", "expert"};
      break;
  }
  return p;
}

void TrainConfig::validate() const {
  model.validate();
  for (const auto& s : stages) s.validate();
  if (weights.cot < 0 || weights.depth < 0) throw std::invalid_argument("loss weights must be nonnegative");
  if (train_scenes == 0) throw std::invalid_argument("dataset must be nonempty");
  if (feature_width != model.gst.feature_width) {
    throw std::invalid_argument("feature_width must equal gst.feature_width");
  }
  if (val_flow_draws == 0) throw std::invalid_argument("val_flow_draws must be positive");
}

Breakdown composite_loss(double flow, double cot, double depth, const StagePlan& plan, const LossWeights& w) {
  Breakdown b;
  b.flow = plan.loss_flow ? flow : 0.0;
  b.cot = plan.loss_cot ? cot : 0.0;
  b.depth = plan.loss_depth ? depth : 0.0;
  b.total = b.flow + w.cot * b.cot + w.depth * b.depth;
  return b;
}

std::string format_step(const StepRecord& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%s %zu %.17g %.17g %.17g %.17g %.17g", stage_name(r.stage), r.step, r.loss.total,
                r.loss.flow, r.loss.cot, r.loss.depth, r.grad_norm);
  return buf;
}

Dataset make_dataset(const TrainConfig& cfg) {
  Dataset d;
  const std::size_t total = cfg.train_scenes + cfg.val_scenes;
  for (std::size_t i = 0; i < total; ++i) {
    const SceneSpec spec = random_scene(nn::mix_seed(cfg.data_seed, i));
    const SceneSample s = generate(spec, cfg.feature_width);
    (i < cfg.train_scenes ? d.train : d.val).push_back(prepare(s, cfg.model.gst.patch_grid));
  }
  return d;
}

double rollout_position_error(const ActionChunk& predicted, const ActionChunk& demo) {
  const auto a = predicted.cumulative_positions();
  const auto b = demo.cumulative_positions();
  double s = 0;
  for (std::size_t k = 0; k < kChunkLength; ++k) {
    s += std::sqrt((a[k][0] - b[k][0]) * (a[k][0] - b[k][0]) + (a[k][1] - b[k][1]) * (a[k][1] - b[k][1]) +
                   (a[k][2] - b[k][2]) * (a[k][2] - b[k][2]));
  }
  return s / static_cast<double>(kChunkLength);
}

EvalMetrics evaluate(const Model& model, const std::vector<PreparedSample>& samples, const TrainConfig& cfg,
                     const EvalOptions& opts) {
  ad::NoGradGuard guard;
  EvalMetrics m;
  const std::size_t n = opts.max_samples ? std::min(opts.max_samples, samples.size()) : samples.size();
  std::vector<double> centroid_errs;
  std::size_t correct = 0, compared = 0;
  double rollout = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const PreparedSample& s = samples[i];
    const std::uint64_t seed = nn::mix_seed(opts.seed, i);
    const Encoded e = model.encode(s);
    {
      const Tensor& att = e.pooled.attention;
      const std::size_t nq = att.dim(0), nk = att.dim(1);
      const double floor = 0.01 * static_cast<double>(nq) / static_cast<double>(nk);
      std::size_t low = 0;
      for (std::size_t k = 0; k < nk; ++k) {
        double col = 0;
        for (std::size_t q = 0; q < nq; ++q) col += att.at(q, k);
        low += col < floor;
      }
      m.pool_near_zero_frac += static_cast<double>(low) / static_cast<double>(nk);
    }
    const ChainOutput tf = model.reasoner().teacher_forced(e.prefix, model.chain_context(e), s.chain_gt);
    m.cot += model.reasoner().cot_loss(tf).item();
    const RayBundle rays =
        ray_bundle_for(s.depth, s.intrinsics, ray_bundle_ids(s.depth.values.size(), cfg.model.rays_per_sample, seed));
    RenderOptions ro;
    ro.keep_weights = false;
    m.depth += depth_loss(render_depth(e.field.centroids, e.field.log_scales, e.field.opacities, rays, ro).rendered,
                          rays.target_depths)
                   .item();
    double flow = 0;
    for (std::size_t k = 0; k < cfg.val_flow_draws; ++k) {
      nn::Rng rng(nn::mix_seed(seed, 100 + k));
      flow += model.expert().flow_loss(s.action_gt, {tf.h_vlm, tf.l_action, s.proprio}, rng).item();
    }
    m.flow += flow / static_cast<double>(cfg.val_flow_draws);
    if (opts.decode) {
      const Inference inf = model.infer(s, seed);
      ThoughtChain gt = s.chain_gt;
      gt.flags = model.config().reasoner.flags;
      const ChainMetrics cm = chain_metrics(model.reasoner().vocab(), inf.chain_tokens, gt);
      correct += cm.tokens_correct;
      compared += cm.tokens_compared;
      if (gt.flags.c1) centroid_errs.push_back(cm.centroid_err_m);
      rollout += rollout_position_error(inf.chunk, s.action_gt);
    }
  }
  const double dn = static_cast<double>(std::max<std::size_t>(n, 1));
  m.samples = n;
  m.flow /= dn;
  m.cot /= dn;
  m.depth /= dn;
  m.pool_near_zero_frac /= dn;
  m.composite = m.flow + cfg.weights.depth * m.depth;
  if (opts.decode) {
    m.token_acc = compared ? static_cast<double>(correct) / static_cast<double>(compared) : 1.0;
    if (!centroid_errs.empty()) {
      std::sort(centroid_errs.begin(), centroid_errs.end());
      const std::size_t c = centroid_errs.size();
      m.centroid_err_median = c % 2 ? centroid_errs[c / 2] : 0.5 * (centroid_errs[c / 2 - 1] + centroid_errs[c / 2]);
    } else {
      m.centroid_err_median = std::nan("");
    }
    m.rollout_err_mean = rollout / dn;
  }
  return m;
}

Trainer::Trainer(const TrainConfig& cfg, const Dataset& data, fs::path out_dir)
    : cfg_(cfg), data_(data), out_(std::move(out_dir)), model_(cfg.model) {
  cfg_.validate();
  if (data_.train.empty()) throw std::invalid_argument("trainer: empty training split");
  fs::create_directories(out_);
}

void Trainer::load_parameters(const fs::path& ckpt) { model_.params().import_from(ad::Checkpoint::load(ckpt)); }

namespace {

std::uint64_t stage_stream(Stage s) { return 0x5751 + static_cast<std::uint64_t>(s); }

void save_checkpoint(const fs::path& path, const Model& model, const nn::Adam& adam, Stage stage, std::size_t step) {
  ad::Checkpoint ck;
  model.params().export_to(ck);
  adam.export_to(ck);
  ck.meta["stage"] = stage_name(stage);
  ck.meta["step"] = std::to_string(step);
  ck.save(path);
}

}  // namespace

StageResult Trainer::run_stage(const StagePlan& plan, const std::optional<fs::path>& resume, std::size_t stop_after) {
  plan.validate();
  std::set<std::string> groups(plan.trainable.begin(), plan.trainable.end());
  if (plan.stage == Stage::S2 && cfg_.freeze_gst_s2) groups.erase("gst");
  std::vector<std::string> paths;
  for (const auto& g : groups) {
    const auto p = model_.group_paths(g);
    paths.insert(paths.end(), p.begin(), p.end());
  }
  nn::Adam adam(model_.params(), paths, nn::AdamOptions{plan.lr});

  std::size_t start = 0;
  const std::string tag = stage_name(plan.stage);
  const fs::path log_path = out_ / ("metrics_" + tag + ".log");
  StageResult result;
  if (resume) {
    const auto ck = ad::Checkpoint::load(*resume);
    auto it = ck.meta.find("step");
    const auto st = ck.meta.find("stage");
    if (it == ck.meta.end() || st == ck.meta.end() || st->second != tag) {
      throw std::invalid_argument("checkpoint " + resume->string() + " is not a " + tag + " mid-stage checkpoint");
    }
    model_.params().import_from(ck);
    adam.import_from(ck);
    start = std::stoull(it->second);
    // Keep the log consistent with the restored step.
    std::vector<std::string> kept;
    std::ifstream in(log_path);
    for (std::string line; std::getline(in, line) && kept.size() < start;) kept.push_back(line);
    std::ofstream out(log_path, std::ios::trunc);
    for (const auto& l : kept) out << l << '\n';
  } else {
    std::ofstream(log_path, std::ios::trunc);
  }
  std::ofstream log(log_path, std::ios::app);

  for (const char* g : {"gst", "reasoner", "expert"})
    if (!groups.count(g)) result.frozen_before[g] = model_.params().checksum(std::string(g) + ".");

  LossSwitches sw{plan.loss_flow, plan.loss_cot, plan.loss_depth, plan.detach_reasoner};
  const std::size_t end = stop_after ? std::min(stop_after, plan.steps) : plan.steps;
  const fs::path latest = out_ / ("ckpt_" + tag + "_latest.bin");
  const double inv_b = 1.0 / static_cast<double>(plan.batch);
  for (std::size_t step = start + 1; step <= end; ++step) {
    nn::Rng rng(nn::mix_seed(nn::mix_seed(cfg_.seed, stage_stream(plan.stage)), step));
    model_.params().zero_grad();
    Breakdown mean_b;
    for (std::size_t b = 0; b < plan.batch; ++b) {
      const std::size_t idx = static_cast<std::size_t>(rng() % data_.train.size());
      const std::uint64_t sample_seed = rng();
      ad::Tape::current().reset();
      const LossTerms t = model_.losses(data_.train[idx], sw, sample_seed);
      const double fv = t.flow.defined() ? t.flow.item() : 0.0;
      const double cv = t.cot.defined() ? t.cot.item() : 0.0;
      const double dv = t.depth.defined() ? t.depth.item() : 0.0;
      for (auto [name, v] : {std::pair{"flow", fv}, {"cot", cv}, {"depth", dv}}) {
        if (!std::isfinite(v)) {
          throw TrainingDiverged(tag + " step " + std::to_string(step) + ": non-finite " + name + " loss");
        }
      }
      const Breakdown bd = composite_loss(fv, cv, dv, plan, cfg_.weights);
      mean_b.total += bd.total * inv_b;
      mean_b.flow += bd.flow * inv_b;
      mean_b.cot += bd.cot * inv_b;
      mean_b.depth += bd.depth * inv_b;
      Tensor total;
      const auto acc = [&](const Tensor& x, double w) {
        if (!x.defined()) return;
        const Tensor y = ad::scale(x, w * inv_b);
        total = total.defined() ? ad::add(total, y) : y;
      };
      if (plan.loss_flow) acc(t.flow, 1.0);
      if (plan.loss_cot) acc(t.cot, cfg_.weights.cot);
      if (plan.loss_depth) acc(t.depth, cfg_.weights.depth);
      if (total.defined() && total.requires_grad()) ad::backward(total);
      ad::Tape::current().reset();
    }
    StepRecord rec{plan.stage, step, mean_b, adam.step()};
    log << format_step(rec) << '\n';
    log.flush();
    result.log.push_back(rec);
    if (!std::isfinite(mean_b.total) || mean_b.total > 1e4) {
      throw TrainingDiverged(tag + " step " + std::to_string(step) + ": loss " + std::to_string(mean_b.total) +
                             " diverged; last good checkpoint kept at " + latest.string());
    }
    if ((cfg_.checkpoint_every && step % cfg_.checkpoint_every == 0) || step == end) {
      save_checkpoint(latest, model_, adam, plan.stage, step);
    }
  }
  model_.params().zero_grad();
  result.checkpoint = end == plan.steps ? out_ / ("ckpt_" + tag + ".bin") : latest;
  if (end == plan.steps) save_checkpoint(result.checkpoint, model_, adam, plan.stage, end);
  for (const auto& [g, h] : result.frozen_before) result.frozen_after[g] = model_.params().checksum(g + ".");
  return result;
}

std::vector<StageResult> Trainer::run_all() {
  std::vector<StageResult> out;
  std::ofstream plan_log(out_ / "run_plan.txt", std::ios::trunc);
  for (const auto& p : cfg_.stages) {
    if (p.stage == Stage::S1 && cfg_.skip_s1) {
      plan_log << "S1 absent (skip_s1)\n";
      continue;
    }
    plan_log << stage_name(p.stage) << " steps=" << p.steps << " batch=" << p.batch << " lr=" << p.lr << '\n';
    plan_log.flush();
    out.push_back(run_stage(p));
  }
  return out;
}

namespace {

bool parse_bool(const std::string& k, const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw std::invalid_argument("flag " + k + ": expected a boolean, got '" + v + "'");
}

ThoughtFlags parse_thoughts(const std::string& v) {
  ThoughtFlags f{false, false, false, false};
  if (v == "none") return f;
  std::stringstream ss(v);
  for (std::string item; std::getline(ss, item, ',');) {
    if (item == "c1") f.c1 = true;
    else if (item == "c2") f.c2 = true;
    else if (item == "c3") f.c3 = true;
    else if (item == "c4") f.c4 = true;
    else throw std::invalid_argument("flag thoughts: unknown thought '" + item + "'");
  }
  return f;
}

template <typename E>
E pick(const std::string& k, const std::string& v, std::initializer_list<std::pair<const char*, E>> options) {
  for (const auto& [name, e] : options)
    if (v == name) return e;
  throw std::invalid_argument("flag " + k + ": invalid value '" + v + "'");
}

}  // namespace

TrainConfig apply_flags(TrainConfig cfg, const std::map<std::string, std::string>& flags) {
  auto& g = cfg.model.gst;
  for (const auto& [k, v] : flags) {
    if (k == "pe_mode") {
      g.pe_mode = pick<PeMode>(k, v, {{"fourier3d", PeMode::fourier3d}, {"learned2d", PeMode::learned2d}});
    } else if (k == "pool_mode") {
      g.pool_mode = pick<PoolMode>(k, v, {{"attention", PoolMode::attention}, {"average", PoolMode::average}});
    } else if (k == "opacity_mode") {
      g.opacity_mode =
          pick<OpacityMode>(k, v, {{"learned", OpacityMode::learned}, {"fixed_one", OpacityMode::fixed_one}});
    } else if (k == "residual_mode") {
      g.residual_mode = pick<ResidualMode>(k, v, {{"learned", ResidualMode::learned}, {"zero", ResidualMode::zero}});
    } else if (k == "scale_mode") {
      g.scale_mode =
          pick<ScaleMode>(k, v, {{"anisotropic", ScaleMode::anisotropic}, {"isotropic", ScaleMode::isotropic}});
    } else if (k == "token_content") {
      g.token_content = pick<TokenContent>(k, v,
                                           {{"gaussian", TokenContent::gaussian},
                                            {"position_only", TokenContent::position_only},
                                            {"depth_scalar", TokenContent::depth_scalar}});
    } else if (k == "thoughts") {
      cfg.model.reasoner.flags = parse_thoughts(v);
    } else if (k == "no_cot") {
      if (parse_bool(k, v)) {
        if (flags.count("thoughts") && flags.at("thoughts") != "none") {
          throw std::invalid_argument("flags no_cot and thoughts conflict");
        }
        cfg.model.reasoner.flags = ThoughtFlags{false, false, false, false};
      }
    } else if (k == "dacot_attends_raw") {
      cfg.model.reasoner.dacot_attends_raw = parse_bool(k, v);
    } else if (k == "dense_ffn") {
      cfg.model.expert.dense_ffn = parse_bool(k, v);
    } else if (k == "zero_l_action") {
      cfg.model.expert.zero_l_action = parse_bool(k, v);
    } else if (k == "skip_s1") {
      cfg.skip_s1 = parse_bool(k, v);
    } else if (k == "freeze_gst_s2") {
      cfg.freeze_gst_s2 = parse_bool(k, v);
    } else if (k == "steps_scale") {
      const double s = std::stod(v);
      if (!(s > 0.0)) throw std::invalid_argument("flag steps_scale must be positive");
      for (auto& p : cfg.stages) p.steps = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(p.steps * s)));
    } else {
      throw std::invalid_argument("unknown ablation flag '" + k + "'");
    }
  }
  cfg.validate();
  return cfg;
}

std::vector<AblationRow> ablation_matrix(const TrainConfig& base, const std::vector<AblationCell>& grid,
                                         const fs::path& out_dir) {
  std::set<std::string> names;
  std::vector<TrainConfig> cfgs;
  for (const auto& cell : grid) {
    if (!names.insert(cell.name).second) throw std::invalid_argument("duplicate ablation cell '" + cell.name + "'");
    cfgs.push_back(apply_flags(base, cell.flags));  // reject invalid cells before any training
  }
  const Dataset data = make_dataset(base);
  std::vector<AblationRow> rows;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    Trainer tr(cfgs[i], data, out_dir / grid[i].name);
    const auto results = tr.run_all();
    AblationRow row;
    row.name = grid[i].name;
    if (!results.empty() && !results.back().log.empty()) row.final_train = results.back().log.back().loss;
    row.metrics = evaluate(tr.model(), data.val, cfgs[i], EvalOptions{});
    rows.push_back(row);
  }
  return rows;
}

std::string format_ablation_table(const std::vector<AblationRow>& rows) {
  std::string out =
      "cell\ttrain_total\tval_flow\tval_cot\tval_depth\tval_composite\ttoken_acc\tcentroid_err_m\trollout_err_m\n";
  char buf[512];
  for (const auto& r : rows) {
    const auto& m = r.metrics;
    std::snprintf(buf, sizeof buf, "%s\t%.6g\t%.6g\t%.6g\t%.6g\t%.6g\t%.4f\t%.4f\t%.4f\n", r.name.c_str(),
                  r.final_train.total, m.flow, m.cot, m.depth, m.composite, m.token_acc, m.centroid_err_median,
                  m.rollout_err_mean);
    out += buf;
  }
  return out;
}

}  // namespace gstvla

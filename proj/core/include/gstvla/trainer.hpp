#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gstvla/model.hpp"

namespace gstvla {

enum class Stage { S1, S2, S3 };
const char* stage_name(Stage s);
Stage parse_stage(const std::string& s);

struct StagePlan {
  Stage stage = Stage::S1;
  std::size_t steps = 1;
  std::size_t batch = 1;
  double lr = 3e-4;
  std::vector<std::string> trainable;  // parameter groups
  bool loss_flow = true;
  bool loss_cot = true;
  bool loss_depth = true;
  bool detach_reasoner = false;

  void validate() const;
};

/// Desk-scale defaults: S1 4000 x 16 at 3e-4 (gst + expert, no CoT),
/// S2 2000 x 8 at 1e-4 (all losses), S3 1000 x 4 at 3e-5 (all groups).
StagePlan default_plan(Stage s);

struct LossWeights {
  double cot = 0.5;
  double depth = 0.1;
};

struct TrainConfig {
  ModelConfig model;
  std::vector<StagePlan> stages = {default_plan(Stage::S1), default_plan(Stage::S2), default_plan(Stage::S3)};
  LossWeights weights;
  std::size_t train_scenes = 256;
  std::size_t val_scenes = 32;
  std::uint64_t seed = 20240601;  // training stream
  std::uint64_t data_seed = 7;    // scene generation
  std::size_t feature_width = 64;
  bool skip_s1 = false;        // ablation: S2 + S3 only
  bool freeze_gst_s2 = false;  // keep the tokenizer frozen in S2
  std::size_t checkpoint_every = 250;
  std::size_t val_flow_draws = 4;

  void validate() const;
};

struct Breakdown {
  double total = 0, flow = 0, cot = 0, depth = 0;
};

/// L = flow + w_cot cot + w_depth depth over the active components.
Breakdown composite_loss(double flow, double cot, double depth, const StagePlan& plan, const LossWeights& w);

struct StepRecord {
  Stage stage = Stage::S1;
  std::size_t step = 0;
  Breakdown loss;
  double grad_norm = 0;
};
std::string format_step(const StepRecord& r);

struct Dataset {
  std::vector<PreparedSample> train, val;
};

/// Seeded synthetic split: scene i of the train split uses seed
/// mix(data_seed, i), validation scenes continue the index range.
Dataset make_dataset(const TrainConfig& cfg);

struct EvalMetrics {
  double flow = 0, cot = 0, depth = 0;
  double composite = 0;  // flow + w_depth depth
  double token_acc = 0;
  double centroid_err_median = 0;
  double rollout_err_mean = 0;
  // Share of patch tokens whose total pooling attention is under 1% of the
  // uniform share N_g / N_p (logged, never asserted).
  double pool_near_zero_frac = 0;
  std::size_t samples = 0;
};

struct EvalOptions {
  bool decode = true;   // greedy chains + rollouts
  std::uint64_t seed = 99;
  std::size_t max_samples = 0;  // 0 = all
};

EvalMetrics evaluate(const Model& model, const std::vector<PreparedSample>& samples, const TrainConfig& cfg,
                     const EvalOptions& opts);

/// Mean per-step distance between integrated predicted and demonstrated positions.
double rollout_position_error(const ActionChunk& predicted, const ActionChunk& demo);

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct StageResult {
  std::filesystem::path checkpoint;
  std::vector<StepRecord> log;
  std::map<std::string, std::uint64_t> frozen_before, frozen_after;  // group checksums
};

class Trainer {
 public:
  Trainer(const TrainConfig& cfg, const Dataset& data, std::filesystem::path out_dir);

  Model& model() { return model_; }
  const TrainConfig& config() const { return cfg_; }

  /// Runs one stage. With `resume` the checkpoint's parameters, optimizer
  /// state and step counter are restored and the stage continues from there.
  /// `stop_after` (when nonzero) ends the stage early after that many total
  /// steps, writing a checkpoint; used to test resumption.
  StageResult run_stage(const StagePlan& plan, const std::optional<std::filesystem::path>& resume = std::nullopt,
                        std::size_t stop_after = 0);

  /// Runs every configured stage in order (S1 dropped when skip_s1).
  std::vector<StageResult> run_all();

  void load_parameters(const std::filesystem::path& ckpt);

 private:
  TrainConfig cfg_;
  const Dataset& data_;
  std::filesystem::path out_;
  Model model_;
};

struct AblationCell {
  std::string name;
  std::map<std::string, std::string> flags;
};

/// Applies named flags to a configuration; rejects unknown flags and invalid
/// combinations.
TrainConfig apply_flags(TrainConfig cfg, const std::map<std::string, std::string>& flags);

struct AblationRow {
  std::string name;
  EvalMetrics metrics;
  Breakdown final_train;
};

std::vector<AblationRow> ablation_matrix(const TrainConfig& base, const std::vector<AblationCell>& grid,
                                         const std::filesystem::path& out_dir);
std::string format_ablation_table(const std::vector<AblationRow>& rows);

}  // namespace gstvla

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "transfg/model.hpp"
#include "transfg/synth_data.hpp"

namespace transfg {

/// Everything a training run depends on. Field names map one-to-one onto
/// kebab-case CLI flags and key=value config lines (see to_key_values).
struct TrainConfig {
  // model
  std::size_t layers = 4;
  std::size_t heads = 4;
  std::size_t dim = 64;
  std::size_t mlp_ratio = 4;
  // patches; with overlap off the stride is forced to the patch size
  std::size_t patch = 4;
  std::size_t stride = 3;
  bool overlap = true;
  bool psm = true;
  bool rollout_identity = false;
  // optimisation
  double learning_rate = 0.2;
  double momentum = 0.9;
  std::size_t batch_size = 160;
  std::size_t steps = 300;
  double max_grad_norm = 1.0;  // 0 disables clipping
  // loss
  double alpha = 0.4;
  bool contrastive = true;
  std::uint64_t seed = 0;
  SynthConfig data;
  std::string output_dir = "run";

  void validate() const;
  PatchConfig patch_config() const;
  ModelConfig model_config() const;

  // Every field except output_dir, in a fixed order.
  std::vector<std::pair<std::string, std::string>> to_key_values() const;
  static TrainConfig from_key_values(const std::map<std::string, std::string>& kv);
  // FNV-1a over the canonical key=value text.
  std::uint64_t hash() const;
};

void save_config(const TrainConfig& cfg, const std::filesystem::path& path);
TrainConfig load_config(const std::filesystem::path& path);

// Cosine annealing from base_lr at step 0 to 0 at the final step.
double cosine_lr(double base_lr, std::size_t step, std::size_t total_steps);

/// SGD with heavy-ball momentum: v ← μ·v + g, w ← w − lr·v (v starts at 0).
class SgdMomentum {
 public:
  explicit SgdMomentum(double momentum) : momentum_(momentum) {}

  template <typename T>
  void step(std::vector<std::pair<std::string, Tensor<T>>>& params, double lr);

 private:
  double momentum_;
  std::vector<std::vector<double>> velocity_;
};

// Rescales all gradients so their joint L2 norm is at most max_norm. Returns
// the norm before clipping.
template <typename T>
double clip_grad_norm(std::vector<std::pair<std::string, Tensor<T>>>& params, double max_norm);

struct StepMetrics {
  std::size_t step = 0;
  double lr = 0;
  double loss_cross = 0;
  double loss_con = 0;
  double train_acc = 0;  // accuracy on the step's batch
};

struct TrainResult {
  ModelParams<float> params;
  std::vector<StepMetrics> trace;
};

TrainResult train(const TrainConfig& cfg, const LabeledSplit& split,
                  const std::function<void(const StepMetrics&)>& on_step = {});

void write_metrics_csv(const std::vector<StepMetrics>& trace, const std::filesystem::path& path);

struct EvalResult {
  std::size_t samples = 0;
  double accuracy = 0;
  std::vector<double> per_class_accuracy;
  double localization_hit_rate = 0;  // NaN-free; 0 when the split has no metadata
};

// Deterministic and independent of `threads` (per-sample results are merged in order).
EvalResult evaluate(const ModelParams<float>& params, const ModelConfig& cfg,
                    const LabeledSplit& split, std::size_t threads = 1);

// Trains on the generated dataset. The run directory cfg.output_dir gets
// metrics.csv, model.tfgt, model.manifest and config.txt.
TrainResult run_training(const TrainConfig& cfg);

struct Checkpoint {
  TrainConfig config;
  ModelParams<float> params;
};
Checkpoint load_run(const std::filesystem::path& dir);

struct AblationCell {
  std::string group;  // "grid" for the 2x2x2 switches, "margin" for the alpha sweep
  bool overlap = true;
  bool psm = true;
  bool contrastive = true;
  double alpha = 0.4;
};

// 2·2·2 switch cross-product followed by the margin sweep {0, 0.2, 0.4, 0.6}.
std::vector<AblationCell> ablation_grid();
TrainConfig apply_cell(const TrainConfig& base, const AblationCell& cell);

struct AblationRow {
  std::size_t index = 0;
  AblationCell cell;
  std::uint64_t config_hash = 0;
  double final_loss = 0;
  double train_acc = 0;
  double test_acc = 0;
  double localization_hit_rate = 0;
};

// Runs every cell (up to `threads` at once) and writes results.csv under
// out_dir, flushing rows in cell order as they complete.
std::vector<AblationRow> run_ablation(const TrainConfig& base, const std::filesystem::path& out_dir,
                                      std::size_t threads = 1);

// TRANSFG_THREADS if set and positive, else 1.
std::size_t thread_budget();

}  // namespace transfg

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "fovea/config.hpp"
#include "fovea/data.hpp"
#include "fovea/grpo.hpp"
#include "fovea/model.hpp"
#include "fovea/policy.hpp"

namespace fovea {
inline namespace FOVEA_PRECISION_NS {

/// JSON-lines metrics sink. Records are kept in memory and, when a path is
/// given, appended to the file as they arrive. Records carry no timestamps.
class MetricsLog {
public:
  MetricsLog() = default;
  explicit MetricsLog(const std::filesystem::path& path);

  void write(const nlohmann::json& record);
  const std::vector<nlohmann::json>& records() const { return records_; }

private:
  std::filesystem::path path_;
  std::vector<nlohmann::json> records_;
};

/// Per-step validation accuracy; index t is step t + 1.
struct StepMetrics {
  std::vector<double> top1;
  std::vector<double> top5;
  std::vector<double> loss;
  std::size_t count = 0;

  nlohmann::json to_json() const;
};

struct DataSplits {
  std::shared_ptr<const ImageSource> train;
  std::shared_ptr<const ImageSource> val;
};

DataSplits make_splits(const RunConfig& config);

enum class GazeMode { Random, Learned, Fixed };
GazeMode parse_gaze_mode(const std::string& name);
/// "x,y;x,y;..." -> centres.
std::vector<GazeCenter> parse_centers(const std::string& text);

/// Random centre for validation image `index` at `step`; a pure function of its arguments.
GazeCenter eval_random_center(std::uint64_t seed, std::size_t index, int step);

struct EvalOptions {
  int steps = 8;
  GazeMode mode = GazeMode::Random;
  const GazePolicy* policy = nullptr;   // Learned
  std::vector<GazeCenter> centers;      // Fixed, cycled over steps
  std::uint64_t seed = 0;
  int batch_size = 100;
  int threads = 1;
  std::size_t limit = 0;  // 0: the whole source
};

/// Per-step top-1/top-5 of glimpse episodes. Learned mode uses deterministic actions.
StepMetrics evaluate(const Model& model, const ImageSource& source, const EvalOptions& options);

/// Gaze centres the learned policy picks for each image (deterministic actions).
std::vector<std::vector<GazeCenter>> policy_centers(const Model& model, const GazePolicy& policy,
                                                    std::span<const Image> images, int steps, int threads = 1);

/// Tile permutation for the shuffled experiment: `groups` disjoint lists that
/// together cover every tile exactly once.
std::vector<std::vector<int>> shuffled_groups(int tiles, int groups, std::mt19937_64& rng);

StepMetrics evaluate_shuffled(const Model& model, const ImageSource& source, int groups, std::uint64_t seed,
                              int batch_size);
StepMetrics evaluate_baseline(const Model& model, const ImageSource& source, int batch_size);

/// Computes the training loss of one batch.
using BatchLoss = std::function<Tensor(const Model& model, std::span<const Image> images, const Tensor& targets,
                                       std::mt19937_64& rng)>;

struct TrainResult {
  Model model;
  StepMetrics val;
  std::vector<double> batch_losses;  // one per optimizer step, before the update
  int steps = 0;
};

struct TrainHooks {
  std::string phase = "stage1";
  std::filesystem::path checkpoint;  // written after every epoch when set
  std::function<StepMetrics(const Model&)> evaluate;
};

/// Generic loop: seeded batch order per epoch, optional MixUp, AdamW with a
/// warmup + cosine schedule, gradient clipping and per-epoch validation. A
/// non-finite loss aborts with NumericError; the last epoch checkpoint stays.
TrainResult train_model(const RunConfig& config, const ImageSource& train, const BatchLoss& loss_fn,
                        MetricsLog& log, const TrainHooks& hooks);

/// Mean over steps of the per-step cross-entropy with uniform random centres.
Tensor stage1_loss(const Model& model, std::span<const Image> images, const Tensor& targets, std::mt19937_64& rng,
                   int steps, int threads);

TrainResult pretrain_stage1(const RunConfig& config, const ImageSource& train, const ImageSource& val,
                            MetricsLog& log, const std::filesystem::path& checkpoint = {});
TrainResult train_shuffled(const RunConfig& config, const ImageSource& train, const ImageSource& val,
                           MetricsLog& log, const std::filesystem::path& checkpoint = {});
TrainResult train_vit_baseline(const RunConfig& config, const ImageSource& train, const ImageSource& val,
                               MetricsLog& log, const std::filesystem::path& checkpoint = {});

struct ShuffledReport {
  StepMetrics iterative;
  StepMetrics baseline;
  nlohmann::json summary;
};

ShuffledReport shuffled_vit_experiment(const RunConfig& config, const ImageSource& train, const ImageSource& val,
                                       MetricsLog& log, const std::filesystem::path& output_dir = {});

struct Stage2Result {
  GazePolicy policy;
  StepMetrics random;
  StepMetrics learned;
  int outer_steps = 0;
  bool encoder_unchanged = false;
  nlohmann::json summary;
};

/// GRPO with the encoder and head frozen, then random-vs-learned evaluation.
Stage2Result train_stage2(const RunConfig& config, const Model& stage1, const ImageSource& train,
                          const ImageSource& val, MetricsLog& log);

/// Loads a checkpoint into a freshly built model (all "encoder." and "head." tensors).
Model load_model(const RunConfig& config, const std::filesystem::path& path);
GazePolicy load_policy(const RunConfig& config, const std::filesystem::path& path);

/// Experiment entry points writing into config.output_dir: the effective
/// config (config.txt), metrics.jsonl, summary.json and checkpoints.
nlohmann::json run_pretrain(const RunConfig& config);
nlohmann::json run_shuffled(const RunConfig& config);
nlohmann::json run_baseline(const RunConfig& config);
nlohmann::json run_train_policy(const RunConfig& config);
nlohmann::json run_eval(const RunConfig& config);

/// Table-shaped summary rows: "<prefix> - Step k" -> {top1, top5}.
nlohmann::json step_table(const std::string& prefix, const StepMetrics& metrics);

}  // namespace FOVEA_PRECISION_NS
}  // namespace fovea

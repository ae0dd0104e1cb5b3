#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace fovea {

struct EncoderConfig {
  int layers = 4;
  int dim = 128;
  int heads = 4;
  int state_size = 8;   // N
  int patch_size = 16;  // P
  int patches = 8;      // M per glimpse
  int classes = 10;     // K
  int mlp_ratio = 4;
  int pos_hidden = 64;  // hidden width of the (x, y, z) embedding MLP
  double max_zoom = 4.0;

  int patch_features() const { return patch_size * patch_size * 3; }
  void validate() const;
};

struct PolicyConfig {
  int components = 4;
  double sigma = 0.1;
  int dim = 64;
  int heads = 4;

  void validate() const;
};

struct DatasetConfig {
  std::string kind = "cluttered";  // cluttered | digits | manifest
  std::string images = "data/mnist5k-images-idx3-ubyte";
  std::string labels = "data/mnist5k-labels-idx1-ubyte";
  std::string manifest;
  std::string val_manifest;
  int val_count = 1000;
  int train_count = 0;  // 0: every non-validation item
  int canvas = 128;
  int distractors = 4;
  int distractor_size = 8;
  int image_size = 0;  // square resize for digits/manifest; 0 keeps native size
};

struct TrainConfig {
  int episode_length = 8;
  int epochs = 10;
  int batch_size = 32;
  int eval_batch_size = 100;
  int max_steps = 0;  // 0: epochs * batches
  double lr = 5e-4;
  double warmup_fraction = 0.05;
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double mixup_alpha = 0.2;  // 0 disables MixUp
  double grad_clip = 1.0;    // 0 disables clipping
  int overfit_batches = 0;   // >0: train on this many fixed batches only
};

struct GrpoConfig {
  int group_size = 16;  // G
  int inner_epochs = 8;
  double clip_eps = 0.2;
  double lr = 1e-4;
  double weight_decay = 0.0;
  std::string advantage = "improvement";  // improvement | terminal
  int epochs = 1;
  int batch_size = 16;  // images per outer step
  int max_outer_steps = 0;  // 0: no cap
};

struct ShuffledConfig {
  int groups = 4;
};

struct EvalConfig {
  std::string policy = "random";  // random | learned | fixed
  std::string centers = "0.5,0.5";  // for fixed: "x,y;x,y;..." cycled over steps
};

struct RunConfig {
  DatasetConfig dataset;
  EncoderConfig model;
  PolicyConfig policy;
  TrainConfig train;
  GrpoConfig grpo;
  ShuffledConfig shuffled;
  EvalConfig eval;
  std::uint64_t seed = 0;
  std::string output_dir = "runs/default";
  std::string checkpoint;         // stage-1 (or model) checkpoint input
  std::string policy_checkpoint;  // learned-policy checkpoint input
  int threads = 1;

  /// Range checks plus existence of every file the dataset kind needs.
  void validate() const;
};

struct ConfigKey {
  std::string name;
  std::string type;  // int | real | string | uint
  std::string help;
};

/// Every recognised key with its type and a one-line description.
const std::vector<ConfigKey>& config_keys();

/// Parses `key = value` lines ('#' comments) from `path` (empty path: defaults
/// only), then applies `overrides` ("key=value"), which win over the file.
/// Unknown keys are rejected with the nearest valid key suggested.
/// `base` supplies the values keys fall back to (the documented defaults unless given).
RunConfig parse_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {},
                       const RunConfig& base = RunConfig{});
RunConfig parse_config_text(const std::string& text, const std::vector<std::string>& overrides = {},
                            const RunConfig& base = RunConfig{});

/// Serialises every key in registry order; parse_config_text(to_text(c)) == c.
std::string to_text(const RunConfig& config);

void set_config_value(RunConfig& config, const std::string& key, const std::string& value);
std::string get_config_value(const RunConfig& config, const std::string& key);

}  // namespace fovea

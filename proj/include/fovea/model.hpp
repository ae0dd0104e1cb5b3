#pragma once

// Iterative glimpse transformer.
//
// The encoder keeps an N x D state. Each step concatenates the state with the
// M tokens of one glimpse, runs L pre-norm blocks over all N + M tokens and
// keeps the first N rows as the next state. The step's input state is re-added
// to the state rows at the input of every block (DETR-style query skip). The
// task head pools the state with learned weights and maps it to K logits.
//
// Every tensor carries a leading batch axis B: states are [B,N,D], glimpse
// patches [B,M,P*P*3] and coordinates [B,M,3] holding (x, y, z_norm).

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "fovea/config.hpp"
#include "fovea/layers.hpp"
#include "fovea/patchify.hpp"

namespace fovea {
inline namespace FOVEA_PRECISION_NS {

struct Block {
  LayerNorm norm1;
  MultiHeadAttention attn;
  LayerNorm norm2;
  Mlp mlp;

  Block() = default;
  Block(int dim, int heads, int hidden, std::mt19937_64& rng);

  Tensor operator()(const Tensor& x, const Tensor& skip) const;
  void collect(const std::string& prefix, ParameterList& out) const;
};

/// Glimpse tokens ready for the encoder.
struct Glimpse {
  Tensor patches;  // [B,M,F]
  Tensor coords;   // [B,M,3]
};

/// Packs per-image patch sets (all with the same count and patch size).
Glimpse make_glimpse(std::span<const PatchSet> sets);

/// Packs grid tiles: `tiles[b]` lists the tile indices (raster order) used for
/// image b. Coordinates are tile centres with a fixed z_norm.
Glimpse make_grid_glimpse(std::span<const Image> images, int patch_size,
                          const std::vector<std::vector<int>>& tiles, double z_norm);

/// z_norm of a grid tile: the zoom whose crop equals one tile, log2(min(H,W)/P),
/// divided by max_zoom and clamped into [0,1].
double grid_z_norm(int height, int width, int patch_size, double max_zoom);

class GlimpseEncoder {
public:
  GlimpseEncoder() = default;
  GlimpseEncoder(const EncoderConfig& config, std::mt19937_64& rng);

  const EncoderConfig& config() const { return config_; }

  /// The learned task prompt broadcast to [B,N,D].
  Tensor initial_state(int batch) const;

  /// Embedding of (x, y, z_norm) coordinates [..,3] -> [..,D]. Every
  /// coordinate must lie in [0,1].
  Tensor pos_embed(const Tensor& coords) const;

  /// Patch projection plus positional embedding: [B,M,D].
  Tensor tokenize(const Glimpse& glimpse) const;

  /// One iteration: [B,N,D] state and [B,M,D] tokens -> [B,N,D].
  Tensor step(const Tensor& state, const Tensor& tokens) const;

  void collect(const std::string& prefix, ParameterList& out) const;

  Tensor prompt;  // [N,D]
  Linear patch_embed;
  Mlp pos_mlp;
  std::vector<Block> blocks;

private:
  EncoderConfig config_;
};

class TaskHead {
public:
  TaskHead() = default;
  TaskHead(const EncoderConfig& config, std::mt19937_64& rng);

  /// [B,N,D] -> [B,K].
  Tensor operator()(const Tensor& state) const;
  void collect(const std::string& prefix, ParameterList& out) const;

  Tensor pool;  // [N], initialised to 1/N
  LayerNorm norm;
  Mlp mlp;
};

/// Encoder plus task head; parameters are named "encoder.*" and "head.*".
class Model {
public:
  Model() = default;
  Model(const EncoderConfig& config, std::uint64_t seed);

  const EncoderConfig& config() const { return encoder.config(); }
  ParameterList parameters() const;

  GlimpseEncoder encoder;
  TaskHead head;
};

struct StepOutput {
  Tensor state;   // state after the step, [B,N,D]
  Tensor logits;  // [B,K]
};

/// Supplies the glimpse for step t (0-based) given the state the step starts from.
using GlimpseProvider = std::function<Glimpse(int step, const Tensor& state)>;

/// Runs `steps` iterations from the task prompt. The state is detached at the
/// start of every step, so no gradient crosses an iteration boundary.
std::vector<StepOutput> run_episode(const Model& model, int batch, int steps, const GlimpseProvider& provider);

/// Fixed centres: centers[t][b] is image b's gaze at step t.
std::vector<StepOutput> run_episode(const Model& model, std::span<const Image> images,
                                    const std::vector<std::vector<GazeCenter>>& centers, int threads = 1);

/// Single pass over all grid tiles of each image, one encoder step from the prompt.
Tensor vit_baseline_forward(const Model& model, std::span<const Image> images);

/// Mean soft-target cross-entropy of [B,K] logits against [B,K] targets.
Tensor classification_loss(const Tensor& logits, const Tensor& targets);

/// Packs row-major targets into a [B,K] tensor.
Tensor target_tensor(std::span<const std::vector<double>> targets);

}  // namespace FOVEA_PRECISION_NS
}  // namespace fovea

#pragma once

// Gaze policy: K+1 learned queries cross-attend to the encoder state. The
// first K queries each produce one mixture component mean (sigmoid-squashed
// into the unit square); the last produces the K component logits. The
// standard deviation is a fixed constant shared by all components.

#include <cstdint>
#include <random>
#include <vector>

#include "fovea/config.hpp"
#include "fovea/layers.hpp"
#include "fovea/patchify.hpp"

namespace fovea {
inline namespace FOVEA_PRECISION_NS {

/// Differentiable mixture parameters for a batch.
struct MixtureParams {
  Tensor means;   // [B,K,2] in (0,1)
  Tensor logits;  // [B,K]
};

/// Plain-value mixture for one batch row.
struct MixtureValues {
  std::vector<double> means;   // K x 2
  std::vector<double> logits;  // K
  double sigma = 0.1;

  int components() const { return static_cast<int>(logits.size()); }
};

class GazePolicy {
public:
  GazePolicy() = default;
  GazePolicy(const PolicyConfig& config, int state_dim, std::uint64_t seed);

  /// [B,N,D] state -> mixture parameters.
  MixtureParams forward(const Tensor& state) const;

  const PolicyConfig& config() const { return config_; }
  double sigma() const { return config_.sigma; }

  /// Parameters named "policy.*".
  ParameterList parameters() const;

  Linear in_proj;
  LayerNorm in_norm;
  Tensor queries;  // [K+1,Dp]
  LayerNorm query_norm;
  MultiHeadAttention attn;
  LayerNorm mlp_norm;
  Mlp mlp;
  Tensor mean_weight;  // [K,Dp,2]
  Tensor mean_bias;    // [K,2]
  Linear logit_head;

private:
  PolicyConfig config_;
};

/// Splits batched parameters into per-row values.
std::vector<MixtureValues> mixture_values(const MixtureParams& params, double sigma);

/// Component ~ softmax(logits), then (x, y) ~ N(mean, sigma^2 I), clamped to [0,1]^2.
GazeCenter sample_action(const MixtureValues& params, std::mt19937_64& rng);

/// Mean of the most probable component; ties go to the lowest index.
GazeCenter deterministic_action(const MixtureValues& params);

/// log sum_c w_c N(action; mean_c, sigma^2 I) of the unclamped mixture.
double log_prob(const MixtureValues& params, GazeCenter action);

/// Batched, differentiable form: actions [B,2] -> [B].
Tensor log_prob(const MixtureParams& params, const Tensor& actions, double sigma);

/// Positions the component means start at: a sqrt(K)-sided grid spanning
/// [0.3, 0.7]^2 (the centre for K = 1).
std::vector<GazeCenter> initial_component_means(int components);

}  // namespace FOVEA_PRECISION_NS
}  // namespace fovea

#pragma once

// Group relative policy optimisation of the gaze policy against a frozen
// encoder. Advantages are normalised across the G traces of one image,
// separately for each time step.

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "fovea/config.hpp"
#include "fovea/data.hpp"
#include "fovea/model.hpp"
#include "fovea/policy.hpp"

namespace fovea {
inline namespace FOVEA_PRECISION_NS {

/// One episode: n actions, n + 1 states and losses (index 0 is the prompt).
struct Trace {
  std::vector<std::vector<real>> states;  // n + 1 flattened N x D states
  std::vector<GazeCenter> actions;        // n
  std::vector<double> old_log_probs;      // n
  std::vector<double> losses;             // n + 1
  std::vector<std::vector<double>> logits;  // n + 1

  int steps() const { return static_cast<int>(actions.size()); }
};

using Matrix = std::vector<std::vector<double>>;

/// G stochastic episodes on one image. Trace g draws from make_rng({seed, 0, g}).
std::vector<Trace> rollout_group(const Model& model, const GazePolicy& policy, const Image& image, int label,
                                 int steps, int group_size, std::uint64_t seed, int threads = 1);

/// rollout_group for several images at once; image i, trace g draws from
/// make_rng({seed, i, g}). Result is [image][trace].
std::vector<std::vector<Trace>> rollout_batch(const Model& model, const GazePolicy& policy,
                                              std::span<const Image> images, std::span<const int> labels, int steps,
                                              int group_size, std::uint64_t seed, int threads = 1);

/// alpha[i][t] = -l[i][n] (log-probability of the true class after the last step).
Matrix advantage_terminal(std::span<const Trace> traces);

/// (a - b) / (a + b); 0 when both losses are 0.
double improvement_ratio(double loss_before, double loss_after);

/// alpha[i][t] = improvement_ratio(l[i][t], l[i][t+1]).
Matrix advantage_improvement(std::span<const Trace> traces);

/// Per-column standardisation with the population std; columns whose std is
/// below 1e-8 become zeros. Needs at least two rows.
Matrix group_normalize(const Matrix& alpha);

struct ObjectiveStats {
  double objective = 0.0;  // the clipped surrogate (to be maximised)
  double mean_ratio = 0.0;
  double clip_fraction = 0.0;  // share of entries where the clipped branch is taken
};

/// -mean(min(r A, clip(r, 1-eps, 1+eps) A)) with r = exp(new - old); all
/// operands are [rows, steps]. Only `new_log_probs` carries gradient.
Tensor grpo_objective(const Tensor& new_log_probs, const Tensor& old_log_probs, const Tensor& advantages,
                      double clip_eps, ObjectiveStats* stats = nullptr);

struct GrpoRecord {
  int outer_step = 0;
  int inner_epoch = 0;
  ObjectiveStats stats;
  std::vector<double> per_step_accuracy;  // of the collected traces, steps 1..n
};

struct GrpoOptions {
  GrpoConfig grpo;
  int steps = 8;
  std::uint64_t seed = 0;
  int threads = 1;
};

/// Runs the outer loop over `source` with the encoder and task head frozen.
/// Every outer step collects G traces per image with the current policy as
/// pi_old, then takes `inner_epochs` full-batch AdamW steps on the objective.
/// Returns the number of outer steps taken.
int grpo_train(const Model& model, GazePolicy& policy, const ImageSource& source, const GrpoOptions& options,
               const std::function<void(const GrpoRecord&)>& on_record = {});

}  // namespace FOVEA_PRECISION_NS
}  // namespace fovea

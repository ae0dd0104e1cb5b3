#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fovea/tensor.hpp"

namespace fovea {
inline namespace FOVEA_PRECISION_NS {

struct NamedParameter {
  std::string name;
  Tensor tensor;
};

using ParameterList = std::vector<NamedParameter>;

/// Sets `requires_grad` on every tensor of the list.
void set_trainable(const ParameterList& params, bool on);
void zero_grads(ParameterList& params);
std::int64_t parameter_count(const ParameterList& params);

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;
};

/// Decoupled weight decay Adam. Weight decay applies to tensors of rank >= 2
/// (matrices and the task prompt); biases, norms and vectors are not decayed.
class AdamW {
public:
  AdamW(ParameterList params, AdamWConfig config);

  /// One update at learning rate `lr`. Missing gradients count as zero. A
  /// non-finite gradient rejects the whole step (nothing is modified) and
  /// throws NumericError naming the parameter.
  void step(double lr);
  void zero_grad();

  std::int64_t steps() const { return t_; }
  const AdamWConfig& config() const { return config_; }
  const ParameterList& parameters() const { return params_; }
  const std::vector<double>& first_moment(std::size_t i) const { return m_.at(i); }
  const std::vector<double>& second_moment(std::size_t i) const { return v_.at(i); }

private:
  ParameterList params_;
  AdamWConfig config_;
  std::vector<std::vector<double>> m_, v_;
  std::int64_t t_ = 0;
};

/// Linear warmup from 0 to `base_lr`, then half-cosine decay to 0 at `total_steps`.
double cosine_lr(std::int64_t step, std::int64_t warmup_steps, std::int64_t total_steps, double base_lr);

/// Rescales gradients so their global L2 norm is at most `max_norm`; returns the norm before clipping.
double clip_grad_norm(ParameterList& params, double max_norm);

}  // namespace FOVEA_PRECISION_NS
}  // namespace fovea

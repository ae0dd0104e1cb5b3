#include "fovea/optim.hpp"

#include <cmath>
#include <numbers>

#include "fovea/error.hpp"

namespace fovea {
inline namespace FOVEA_PRECISION_NS {

void set_trainable(const ParameterList& params, bool on) {
  for (const auto& p : params) {
    Tensor t = p.tensor;
    t.set_requires_grad(on);
  }
}

void zero_grads(ParameterList& params) {
  for (auto& p : params) p.tensor.zero_grad();
}

std::int64_t parameter_count(const ParameterList& params) {
  std::int64_t n = 0;
  for (const auto& p : params) n += p.tensor.numel();
  return n;
}

AdamW::AdamW(ParameterList params, AdamWConfig config) : params_(std::move(params)), config_(config) {
  for (const auto& p : params_) {
    if (!p.tensor.is_leaf()) throw ValidationError("AdamW: parameter '" + p.name + "' is not a leaf tensor");
    m_.emplace_back(static_cast<std::size_t>(p.tensor.numel()), 0.0);
    v_.emplace_back(static_cast<std::size_t>(p.tensor.numel()), 0.0);
  }
}

void AdamW::step(double lr) {
  if (!(lr >= 0.0)) throw ValidationError("AdamW: learning rate must be >= 0");
  for (const auto& p : params_) {
    if (!p.tensor.has_grad()) continue;
    for (real g : p.tensor.grad()) {
      if (!std::isfinite(static_cast<double>(g))) {
        throw NumericError("AdamW: non-finite gradient in parameter '" + p.name + "'");
      }
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& t = params_[i].tensor;
    auto data = t.mutable_data();
    const bool decay = t.dim() >= 2 && config_.weight_decay != 0.0;
    std::span<const real> grad = t.has_grad() ? t.grad() : std::span<const real>{};
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < data.size(); ++j) {
      const double g = grad.empty() ? 0.0 : static_cast<double>(grad[j]);
      m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * g;
      v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * g * g;
      double p = static_cast<double>(data[j]);
      if (decay) p *= 1.0 - lr * config_.weight_decay;
      p -= lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + config_.eps);
      data[j] = static_cast<real>(p);
    }
  }
}

void AdamW::zero_grad() { zero_grads(params_); }

double cosine_lr(std::int64_t step, std::int64_t warmup_steps, std::int64_t total_steps, double base_lr) {
  if (step < 0 || step > total_steps) throw ValidationError("cosine_lr: step outside [0, total_steps]");
  if (warmup_steps < 0 || warmup_steps >= total_steps) {
    throw ValidationError("cosine_lr: warmup_steps must lie in [0, total_steps)");
  }
  if (step < warmup_steps) return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
  const double progress =
      static_cast<double>(step - warmup_steps) / static_cast<double>(total_steps - warmup_steps);
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

double clip_grad_norm(ParameterList& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) continue;
    for (real g : p.tensor.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const real scale = static_cast<real>(max_norm / (norm + 1e-12));
    for (auto& p : params) {
      if (!p.tensor.has_grad()) continue;
      for (real& g : p.tensor.mutable_grad()) g *= scale;
    }
  }
  return norm;
}

}  // namespace FOVEA_PRECISION_NS
}  // namespace fovea

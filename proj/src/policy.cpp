#include "fovea/policy.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "fovea/error.hpp"
#include "fovea/random.hpp"

namespace fovea {
inline namespace FOVEA_PRECISION_NS {

std::vector<GazeCenter> initial_component_means(int components) {
  if (components < 1) throw ValidationError("policy: need at least one component");
  if (components == 1) return {GazeCenter(0.5, 0.5)};
  const int side = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(components))));
  std::vector<GazeCenter> out;
  for (int k = 0; k < components; ++k) {
    const int r = k / side, c = k % side;
    const int rows = (components + side - 1) / side;
    const double x = side > 1 ? 0.3 + 0.4 * c / (side - 1) : 0.5;
    const double y = rows > 1 ? 0.3 + 0.4 * r / (rows - 1) : 0.5;
    out.emplace_back(x, y);
  }
  return out;
}

GazePolicy::GazePolicy(const PolicyConfig& config, int state_dim, std::uint64_t seed) : config_(config) {
  config.validate();
  auto rng = make_rng({seed, 0x706f6c696379ULL});
  const int k = config.components, d = config.dim;
  in_proj = Linear(state_dim, d, rng);
  in_norm = LayerNorm(d);
  queries = trunc_normal({k + 1, d}, 0.02, rng);
  query_norm = LayerNorm(d);
  attn = MultiHeadAttention(d, config.heads, rng);
  mlp_norm = LayerNorm(d);
  mlp = Mlp(d, 4 * d, d, rng);
  mean_weight = trunc_normal({k, d, 2}, 0.02, rng);
  std::vector<real> bias;
  for (const GazeCenter& g : initial_component_means(k)) {
    bias.push_back(static_cast<real>(std::log(g.x / (1.0 - g.x))));
    bias.push_back(static_cast<real>(std::log(g.y / (1.0 - g.y))));
  }
  mean_bias = Tensor::from({k, 2}, std::move(bias), true);
  logit_head = Linear(d, k, rng, 0.02);
}

MixtureParams GazePolicy::forward(const Tensor& state) const {
  if (state.dim() != 3 || state.size(2) != in_proj.weight.size(0)) {
    throw ShapeError("policy: expected [B,N," + std::to_string(in_proj.weight.size(0)) + "] state, got " +
                     shape_str(state.shape()));
  }
  const int b = state.size(0), k = config_.components, d = config_.dim;
  Tensor context = in_norm(in_proj(state));
  Tensor q = add(Tensor::zeros({b, k + 1, d}), queries);
  q = add(q, attn(query_norm(q), context));
  q = add(q, mlp(mlp_norm(q)));
  Tensor comp = permute(slice(q, 1, 0, k), {1, 0, 2});             // [K,B,Dp]
  Tensor raw = permute(matmul(comp, mean_weight), {1, 0, 2});      // [B,K,2]
  Tensor means = sigmoid(add(raw, mean_bias));
  Tensor logits = logit_head(reshape(slice(q, 1, k, 1), {b, d}));  // [B,K]
  return {means, logits};
}

ParameterList GazePolicy::parameters() const {
  ParameterList out;
  in_proj.collect("policy.in_proj", out);
  in_norm.collect("policy.in_norm", out);
  out.push_back({"policy.queries", queries});
  query_norm.collect("policy.query_norm", out);
  attn.collect("policy.attn", out);
  mlp_norm.collect("policy.mlp_norm", out);
  mlp.collect("policy.mlp", out);
  out.push_back({"policy.mean_weight", mean_weight});
  out.push_back({"policy.mean_bias", mean_bias});
  logit_head.collect("policy.logit_head", out);
  return out;
}

std::vector<MixtureValues> mixture_values(const MixtureParams& params, double sigma) {
  const int b = params.logits.size(0), k = params.logits.size(1);
  const auto m = params.means.data();
  const auto l = params.logits.data();
  std::vector<MixtureValues> out(static_cast<std::size_t>(b));
  for (int i = 0; i < b; ++i) {
    out[i].sigma = sigma;
    out[i].means.assign(m.begin() + static_cast<std::ptrdiff_t>(i) * k * 2,
                        m.begin() + static_cast<std::ptrdiff_t>(i + 1) * k * 2);
    out[i].logits.assign(l.begin() + static_cast<std::ptrdiff_t>(i) * k, l.begin() + static_cast<std::ptrdiff_t>(i + 1) * k);
  }
  return out;
}

namespace {

std::vector<double> softmax_weights(const std::vector<double>& logits) {
  const double hi = *std::max_element(logits.begin(), logits.end());
  std::vector<double> w(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) total += w[i] = std::exp(logits[i] - hi);
  for (double& v : w) v /= total;
  return w;
}

// Box-Muller on uniform01 keeps draws identical across standard libraries.
double standard_normal(std::mt19937_64& rng) {
  double u1 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace

GazeCenter sample_action(const MixtureValues& params, std::mt19937_64& rng) {
  const std::vector<double> w = softmax_weights(params.logits);
  const double u = uniform01(rng);
  int c = params.components() - 1;
  double acc = 0.0;
  for (int i = 0; i < params.components(); ++i) {
    acc += w[i];
    if (u < acc) {
      c = i;
      break;
    }
  }
  const double x = params.means[2 * c] + params.sigma * standard_normal(rng);
  const double y = params.means[2 * c + 1] + params.sigma * standard_normal(rng);
  return GazeCenter(x, y);
}

GazeCenter deterministic_action(const MixtureValues& params) {
  int best = 0;
  for (int i = 1; i < params.components(); ++i) {
    if (params.logits[i] > params.logits[best]) best = i;
  }
  return GazeCenter(params.means[2 * best], params.means[2 * best + 1]);
}

double log_prob(const MixtureValues& params, GazeCenter action) {
  const double hi = *std::max_element(params.logits.begin(), params.logits.end());
  double z = 0.0;
  for (double l : params.logits) z += std::exp(l - hi);
  const double log_norm = hi + std::log(z);
  const double var = params.sigma * params.sigma;
  const double log_gauss = -std::log(2.0 * std::numbers::pi * var);
  std::vector<double> terms(params.logits.size());
  for (int i = 0; i < params.components(); ++i) {
    const double dx = action.x - params.means[2 * i], dy = action.y - params.means[2 * i + 1];
    terms[i] = params.logits[i] - log_norm + log_gauss - (dx * dx + dy * dy) / (2.0 * var);
  }
  const double top = *std::max_element(terms.begin(), terms.end());
  double s = 0.0;
  for (double t : terms) s += std::exp(t - top);
  return top + std::log(s);
}

Tensor log_prob(const MixtureParams& params, const Tensor& actions, double sigma) {
  const int b = params.logits.size(0);
  if (actions.shape() != Shape{b, 2}) {
    throw ShapeError("log_prob: expected [" + std::to_string(b) + ",2] actions, got " + shape_str(actions.shape()));
  }
  const double var = sigma * sigma;
  Tensor diff = sub(params.means, reshape(actions, {b, 1, 2}));
  Tensor sq = sum(square(diff), -1);  // [B,K]
  Tensor terms = add_scalar(add(log_softmax(params.logits, -1), mul_scalar(sq, static_cast<real>(-0.5 / var))),
                            static_cast<real>(-std::log(2.0 * std::numbers::pi * var)));
  return logsumexp(terms, -1);
}

}  // namespace FOVEA_PRECISION_NS
}  // namespace fovea

#include "fovea/layers.hpp"

#include <cmath>

#include "fovea/error.hpp"

namespace fovea {
inline namespace FOVEA_PRECISION_NS {

Tensor trunc_normal(Shape shape, double std, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<real> values(static_cast<std::size_t>(shape_numel(shape)));
  for (real& v : values) {
    double z = dist(rng);
    while (std::abs(z) > 2.0) z = dist(rng);
    v = static_cast<real>(z * std);
  }
  return Tensor::from(std::move(shape), std::move(values), true);
}

Tensor uniform(Shape shape, double a, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-a, a);
  std::vector<real> values(static_cast<std::size_t>(shape_numel(shape)));
  for (real& v : values) v = static_cast<real>(dist(rng));
  return Tensor::from(std::move(shape), std::move(values), true);
}

Linear::Linear(int in, int out, std::mt19937_64& rng)
    : weight(uniform({in, out}, 1.0 / std::sqrt(static_cast<double>(in)), rng)),
      bias(uniform({out}, 1.0 / std::sqrt(static_cast<double>(in)), rng)) {}

Linear::Linear(int in, int out, std::mt19937_64& rng, double init_std)
    : weight(trunc_normal({in, out}, init_std, rng)), bias(Tensor::zeros({out}, true)) {}

void Linear::collect(const std::string& prefix, ParameterList& out) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

LayerNorm::LayerNorm(int dim) : gamma(Tensor::full({dim}, real(1), true)), beta(Tensor::zeros({dim}, true)) {}

void LayerNorm::collect(const std::string& prefix, ParameterList& out) const {
  out.push_back({prefix + ".gamma", gamma});
  out.push_back({prefix + ".beta", beta});
}

Mlp::Mlp(int in, int hidden, int out, std::mt19937_64& rng) : fc1(in, hidden, rng), fc2(hidden, out, rng) {}

void Mlp::collect(const std::string& prefix, ParameterList& out) const {
  fc1.collect(prefix + ".fc1", out);
  fc2.collect(prefix + ".fc2", out);
}

Tensor split_heads(const Tensor& x, int heads) {
  const int b = x.size(0), t = x.size(1), d = x.size(2);
  if (d % heads != 0) throw ShapeError("split_heads: dim " + std::to_string(d) + " not divisible by heads");
  return permute(reshape(x, {b, t, heads, d / heads}), {0, 2, 1, 3});
}

Tensor merge_heads(const Tensor& x) {
  const int b = x.size(0), h = x.size(1), t = x.size(2), dh = x.size(3);
  return reshape(permute(x, {0, 2, 1, 3}), {b, t, h * dh});
}

Tensor scaled_dot_product_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  const real scale = real(1) / std::sqrt(static_cast<real>(q.shape().back()));
  Tensor scores = mul_scalar(matmul(q, transpose_last(k)), scale);
  return matmul(softmax(scores, -1), v);
}

MultiHeadAttention::MultiHeadAttention(int dim, int heads_, std::mt19937_64& rng)
    : heads(heads_), q_proj(dim, dim, rng), k_proj(dim, dim, rng), v_proj(dim, dim, rng), out_proj(dim, dim, rng) {
  if (dim % heads != 0) throw ValidationError("attention: dim must be divisible by heads");
  // Projections as one fused [D, 3D] xavier-uniform kernel; zero biases.
  const double a = std::sqrt(1.5 / static_cast<double>(dim));
  for (Linear* l : {&q_proj, &k_proj, &v_proj}) {
    l->weight = uniform({dim, dim}, a, rng);
    l->bias = Tensor::zeros({dim}, true);
  }
  out_proj.bias = Tensor::zeros({dim}, true);
}

Tensor MultiHeadAttention::operator()(const Tensor& queries, const Tensor& context) const {
  Tensor q = split_heads(q_proj(queries), heads);
  Tensor k = split_heads(k_proj(context), heads);
  Tensor v = split_heads(v_proj(context), heads);
  return out_proj(merge_heads(scaled_dot_product_attention(q, k, v)));
}

void MultiHeadAttention::collect(const std::string& prefix, ParameterList& out) const {
  q_proj.collect(prefix + ".q", out);
  k_proj.collect(prefix + ".k", out);
  v_proj.collect(prefix + ".v", out);
  out_proj.collect(prefix + ".out", out);
}

}  // namespace FOVEA_PRECISION_NS
}  // namespace fovea

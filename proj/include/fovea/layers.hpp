#pragma once

#include <random>
#include <string>

#include "fovea/optim.hpp"
#include "fovea/tensor.hpp"

namespace fovea {
inline namespace FOVEA_PRECISION_NS {

/// Normal(0, std) truncated at two standard deviations, ViT-style.
Tensor trunc_normal(Shape shape, double std, std::mt19937_64& rng);
/// Uniform(-a, a) samples.
Tensor uniform(Shape shape, double a, std::mt19937_64& rng);

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]

  Linear() = default;
  /// Kernel and bias uniform in +-1/sqrt(in).
  Linear(int in, int out, std::mt19937_64& rng);
  /// Truncated-normal kernel with the given std (0 gives a zero kernel), zero bias.
  Linear(int in, int out, std::mt19937_64& rng, double init_std);

  Tensor operator()(const Tensor& x) const { return add(matmul(x, weight), bias); }
  void collect(const std::string& prefix, ParameterList& out) const;
};

struct LayerNorm {
  Tensor gamma;
  Tensor beta;

  LayerNorm() = default;
  explicit LayerNorm(int dim);

  Tensor operator()(const Tensor& x) const { return layer_norm(x, gamma, beta, real(1e-5)); }
  void collect(const std::string& prefix, ParameterList& out) const;
};

/// Two linear layers with a GELU in between.
struct Mlp {
  Linear fc1;
  Linear fc2;

  Mlp() = default;
  Mlp(int in, int hidden, int out, std::mt19937_64& rng);

  Tensor operator()(const Tensor& x) const { return fc2(gelu(fc1(x))); }
  void collect(const std::string& prefix, ParameterList& out) const;
};

/// Multi-head scaled dot-product attention of `queries` [B,Tq,D] over
/// `context` [B,Tk,D]. No masking.
struct MultiHeadAttention {
  int heads = 1;
  Linear q_proj, k_proj, v_proj, out_proj;

  MultiHeadAttention() = default;
  MultiHeadAttention(int dim, int heads, std::mt19937_64& rng);

  Tensor operator()(const Tensor& queries, const Tensor& context) const;
  void collect(const std::string& prefix, ParameterList& out) const;
};

/// Splits [B,T,D] into heads: [B,h,T,D/h].
Tensor split_heads(const Tensor& x, int heads);
/// Inverse of split_heads.
Tensor merge_heads(const Tensor& x);
/// softmax(q k^T / sqrt(d)) v on [B,h,T,d] operands.
Tensor scaled_dot_product_attention(const Tensor& q, const Tensor& k, const Tensor& v);

}  // namespace FOVEA_PRECISION_NS
}  // namespace fovea

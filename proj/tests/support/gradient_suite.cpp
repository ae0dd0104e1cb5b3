#include "support/gradient_suite.hpp"

#include <random>

#include "fovea/layers.hpp"
#include "fovea/model.hpp"
#include "fovea/policy.hpp"
#include "support/finite_diff.hpp"

namespace fovea::testing {
namespace {

Tensor randn(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  std::vector<real> v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& x : v) x = n(rng);
  return Tensor::from(std::move(shape), std::move(v), true);
}

Tensor uniform(Shape shape, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<real> v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& x : v) x = u(rng);
  return Tensor::from(std::move(shape), std::move(v), true);
}

// Contracts an arbitrary output with fixed random weights so every element of
// the output contributes a distinct coefficient to the scalar.
Tensor contract(const Tensor& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x5eed);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<real> w(static_cast<std::size_t>(y.numel()));
  for (auto& x : w) x = n(rng);
  return sum(mul(y, Tensor::from(y.shape(), std::move(w))));
}

class Recorder {
public:
  void operator()(const std::string& op, const GradReport& r) {
    out.push_back({r.worst_name.rfind("input ", 0) == 0 ? op : op + ": " + r.worst_name, r.worst});
  }
  std::vector<GradCheck> out;
};

EncoderConfig tiny_encoder() {
  EncoderConfig c;
  c.layers = 2;
  c.dim = 8;
  c.heads = 2;
  c.state_size = 3;
  c.patch_size = 2;
  c.patches = 2;
  c.classes = 4;
  c.mlp_ratio = 2;
  c.pos_hidden = 6;
  return c;
}

// Inflates small default inits so gradients are not dominated by rounding.
void scramble(ParameterList& params, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 0.3);
  for (auto& p : params) {
    for (auto& v : p.tensor.mutable_data()) v += n(rng);
  }
}

Glimpse random_glimpse(int batch, const EncoderConfig& c, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.05, 0.95);
  std::vector<real> px(static_cast<std::size_t>(batch) * c.patches * c.patch_features());
  std::vector<real> xy(static_cast<std::size_t>(batch) * c.patches * 3);
  for (auto& v : px) v = u(rng);
  for (auto& v : xy) v = u(rng);
  return {Tensor::from({batch, c.patches, c.patch_features()}, px), Tensor::from({batch, c.patches, 3}, xy)};
}

std::vector<GradCheck> elementwise_checks(int s) {
  Recorder rec;
  std::mt19937_64 rng(s);
  Tensor a = randn({2, 3, 4}, rng), b = randn({3, 4}, rng), c = randn({4}, rng);
  Tensor pos = uniform({2, 1, 4}, rng, 0.5, 2.0);
  rec("add", check_gradients([&] { return contract(add(a, b), s); }, {a, b}));
  rec("sub", check_gradients([&] { return contract(sub(a, c), s); }, {a, c}));
  rec("mul", check_gradients([&] { return contract(mul(a, b), s); }, {a, b}));
  rec("div", check_gradients([&] { return contract(div(a, pos), s); }, {a, pos}));
  rec("add_scalar", check_gradients([&] { return contract(add_scalar(mul_scalar(a, 1.7), -0.3), s); }, {a}));
  return rec.out;
}

std::vector<GradCheck> minimum_checks(int s) {
  Recorder rec;
  std::mt19937_64 rng(100 + s);
  Tensor a = randn({5, 3}, rng), b = randn({5, 3}, rng);
  rec("minimum", check_gradients([&] { return contract(minimum(a, b), s); }, {a, b}));
  return rec.out;
}

std::vector<GradCheck> unary_checks(int s) {
  Recorder rec;
  std::mt19937_64 rng(200 + s);
  Tensor x = randn({3, 5}, rng);
  Tensor p = uniform({3, 5}, rng, 0.2, 3.0);
  Tensor c = uniform({3, 5}, rng, -2.0, 2.0);
  rec("exp", check_gradients([&] { return contract(exp(x), s); }, {x}));
  rec("log", check_gradients([&] { return contract(log(p), s); }, {p}));
  rec("square", check_gradients([&] { return contract(square(x), s); }, {x}));
  rec("sigmoid", check_gradients([&] { return contract(sigmoid(x), s); }, {x}));
  rec("gelu", check_gradients([&] { return contract(gelu(x), s); }, {x}));
  // keep clamp inputs away from the kinks
  auto cd = c.mutable_data();
  for (auto& v : cd) {
    if (std::abs(std::abs(v) - 1.0) < 0.05) v += 0.1;
  }
  rec("clamp", check_gradients([&] { return contract(clamp(c, -1.0, 1.0), s); }, {c}));
  return rec.out;
}

std::vector<GradCheck> matmul_checks(int s) {
  Recorder rec;
  std::mt19937_64 rng(300 + s);
  Tensor a = randn({4, 3}, rng), b = randn({3, 5}, rng);
  Tensor ab = randn({2, 4, 3}, rng), bb = randn({2, 3, 5}, rng);
  Tensor a4 = randn({2, 2, 4, 3}, rng), b4 = randn({2, 2, 3, 2}, rng);
  rec("matmul", check_gradients([&] { return contract(matmul(a, b), s); }, {a, b}));
  rec("matmul", check_gradients([&] { return contract(matmul(ab, bb), s); }, {ab, bb}));
  rec("matmul", check_gradients([&] { return contract(matmul(ab, b), s); }, {ab, b}));
  rec("matmul", check_gradients([&] { return contract(matmul(a4, b4), s); }, {a4, b4}));
  return rec.out;
}

std::vector<GradCheck> reductions_checks(int s) {
  Recorder rec;
  std::mt19937_64 rng(400 + s);
  Tensor x = randn({2, 3, 4}, rng);
  rec("sum of squares", check_gradients([&] { return mul_scalar(sum(square(x)), 0.5); }, {x}));
  rec("mean", check_gradients([&] { return mean(exp(x)); }, {x}));
  for (int axis = 0; axis < 3; ++axis) {
    rec("sum", check_gradients([&] { return contract(sum(x, axis), s); }, {x}));
    rec("mean", check_gradients([&] { return contract(mean(x, axis, true), s); }, {x}));
    rec("softmax", check_gradients([&] { return contract(softmax(x, axis), s); }, {x}));
    rec("log_softmax", check_gradients([&] { return contract(log_softmax(x, axis), s); }, {x}));
    rec("logsumexp", check_gradients([&] { return contract(logsumexp(x, axis), s); }, {x}));
  }
  return rec.out;
}

std::vector<GradCheck> normalisation_checks(int s) {
  Recorder rec;
  std::mt19937_64 rng(500 + s);
  Tensor x = randn({2, 3, 6}, rng), g = randn({6}, rng), b = randn({6}, rng);
  rec("layer_norm", check_gradients([&] { return contract(layer_norm(x, g, b), s); }, {x, g, b}, {"x", "gamma", "beta"}));
  Tensor logits = randn({4, 5}, rng, 2.0);
  std::vector<real> t(20, 0.0);
  for (int i = 0; i < 4; ++i) {
    t[i * 5 + (s + i) % 5] = 0.7;
    t[i * 5 + (s + i + 2) % 5] = 0.3;
  }
  Tensor target = Tensor::from({4, 5}, t);
  rec("cross_entropy", check_gradients([&] { return contract(cross_entropy(logits, target), s); }, {logits}));
  return rec.out;
}

std::vector<GradCheck> shape_ops_checks(int s) {
  Recorder rec;
  std::mt19937_64 rng(600 + s);
  Tensor x = randn({2, 3, 4}, rng), y = randn({2, 2, 4}, rng);
  rec("reshape", check_gradients([&] { return contract(reshape(x, {6, 4}), s); }, {x}));
  rec("permute", check_gradients([&] { return contract(permute(x, {2, 0, 1}), s); }, {x}));
  rec("transpose_last", check_gradients([&] { return contract(transpose_last(x), s); }, {x}));
  rec("concat", check_gradients([&] { return contract(concat({x, y}, 1), s); }, {x, y}));
  rec("slice", check_gradients([&] { return contract(slice(x, 1, 1, 2), s); }, {x}));
  rec("slice", check_gradients([&] { return contract(slice(x, 2, 0, 3), s); }, {x}));
  return rec.out;
}

std::vector<GradCheck> attention_checks(int s) {
  Recorder rec;
  std::mt19937_64 rng(700 + s);
  MultiHeadAttention attn(8, 2, rng);
  ParameterList params;
  attn.collect("attn", params);
  for (auto& p : params) {
    auto d = p.tensor.mutable_data();
    std::normal_distribution<double> n(0.0, 0.4);
    for (auto& v : d) v = n(rng);
  }
  Tensor q = randn({2, 3, 8}, rng), c = randn({2, 5, 8}, rng);
  std::vector<Tensor> inputs{q, c};
  std::vector<std::string> names{"q", "context"};
  for (auto& p : params) {
    inputs.push_back(p.tensor);
    names.push_back(p.name);
  }
  rec("attention", check_gradients([&] { return contract(attn(q, c), s); }, inputs, names));
  return rec.out;
}

std::vector<GradCheck> encoder_step_checks(int s) {
  Recorder rec;
  std::mt19937_64 rng(800 + s);
  const EncoderConfig c = tiny_encoder();
  Model model(c, 800 + s);
  ParameterList params = model.parameters();
  scramble(params, rng);
  const Glimpse g = random_glimpse(2, c, rng);
  std::vector<Tensor> inputs;
  std::vector<std::string> names;
  for (auto& p : params) {
    inputs.push_back(p.tensor);
    names.push_back(p.name);
  }
  auto loss = [&] {
    Tensor state = model.encoder.step(model.encoder.initial_state(2), model.encoder.tokenize(g));
    return contract(model.head(state), s);
  };
  rec("encoder step", check_gradients(loss, inputs, names));
  return rec.out;
}

std::vector<GradCheck> pos_embed_checks(int s) {
  Recorder rec;
  std::mt19937_64 rng(900 + s);
  Model model(tiny_encoder(), 900 + s);
  ParameterList params = model.parameters();
  scramble(params, rng);
  Tensor coords = uniform({2, 3, 3}, rng, 0.1, 0.9);
  rec("pos_embed", check_gradients([&] { return contract(model.encoder.pos_embed(coords), s); }, {coords}));
  return rec.out;
}

std::vector<GradCheck> policy_log_prob_checks(int s) {
  Recorder rec;
  std::mt19937_64 rng(1000 + s);
  PolicyConfig pc;
  pc.components = 3;
  pc.dim = 8;
  pc.heads = 2;
  pc.sigma = 0.2;
  GazePolicy policy(pc, 8, 1000 + s);
  ParameterList params = policy.parameters();
  scramble(params, rng);
  Tensor state = randn({2, 3, 8}, rng);
  Tensor actions = uniform({2, 2}, rng, 0.1, 0.9);
  actions.set_requires_grad(false);
  std::vector<Tensor> inputs{state};
  std::vector<std::string> names{"state"};
  for (auto& p : params) {
    inputs.push_back(p.tensor);
    names.push_back(p.name);
  }
  auto loss = [&] { return contract(log_prob(policy.forward(state), actions, pc.sigma), s); };
  rec("policy log_prob", check_gradients(loss, inputs, names));
  return rec.out;
}

}  // namespace

std::vector<GradGroup> gradient_groups() {
  return {
      {"elementwise binary ops with broadcasting", elementwise_checks},
      {"minimum routes the gradient to the smaller operand", minimum_checks},
      {"unary ops", unary_checks},
      {"matmul, batched and broadcast right operand", matmul_checks},
      {"reductions", reductions_checks},
      {"layer norm, cross-entropy", normalisation_checks},
      {"shape ops", shape_ops_checks},
      {"attention layer", attention_checks},
      {"full encoder step and head: every parameter gradient", encoder_step_checks},
      {"positional embedding with respect to coordinates", pos_embed_checks},
      {"policy log-probability: every policy parameter gradient", policy_log_prob_checks},
  };
}

}  // namespace fovea::testing

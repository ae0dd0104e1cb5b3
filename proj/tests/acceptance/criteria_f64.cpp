#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "criteria.hpp"
#include "fovea/grpo.hpp"
#include "fovea/model.hpp"
#include "support/finite_diff.hpp"
#include "support/gradient_suite.hpp"

namespace fovea::acceptance {
namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(3);
  os << v;
  return os.str();
}

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

Glimpse random_glimpse(const EncoderConfig& c, std::mt19937_64& rng, bool requires_grad) {
  std::uniform_real_distribution<double> u(0.05, 0.95);
  std::vector<real> px(2 * static_cast<std::size_t>(c.patches) * c.patch_features()), xy(2 * c.patches * 3);
  for (auto& v : px) v = u(rng);
  for (auto& v : xy) v = u(rng);
  return {Tensor::from({2, c.patches, c.patch_features()}, px, requires_grad), Tensor::from({2, c.patches, 3}, xy)};
}

bool all_zero(const Tensor& t) {
  if (!t.has_grad()) return true;
  return std::all_of(t.grad().begin(), t.grad().end(), [](real v) { return v == 0; });
}

double objective_oracle(const std::vector<double>& r, const std::vector<double>& a, double eps) {
  double total = 0;
  for (std::size_t i = 0; i < r.size(); ++i) total += std::min(r[i] * a[i], std::clamp(r[i], 1 - eps, 1 + eps) * a[i]);
  return -total / static_cast<double>(r.size());
}

}  // namespace

Outcome gradient_suite() {
  double worst = 0;
  std::string where;
  int checks = 0;
  for (const auto& group : testing::gradient_groups()) {
    for (int s = 0; s < testing::kGradSeeds; ++s) {
      for (const auto& c : group.run(s)) {
        ++checks;
        if (c.error >= worst) {
          worst = c.error;
          where = c.name;
        }
      }
    }
  }
  return {worst <= testing::kGradTolerance,
          std::to_string(checks) + " checks over " + std::to_string(testing::kGradSeeds) +
              " seeds, worst relative error " + fmt(worst) + " (" + where + "), tolerance 1e-4"};
}

Outcome detachment_contract() {
  bool graph_ok = true, zero_ok = true;
  double worst = 0;
  for (int s = 0; s < 5; ++s) {
    const EncoderConfig c = tiny_encoder();
    Model m(c, 100 + s);
    std::mt19937_64 rng(100 + s);
    ParameterList params = m.parameters();
    std::normal_distribution<double> n(0, 0.3);
    for (auto& p : params) {
      for (auto& v : p.tensor.mutable_data()) v += n(rng);
    }
    const Glimpse g1 = random_glimpse(c, rng, true), g2 = random_glimpse(c, rng, false);
    zero_grads(params);
    const auto out = run_episode(m, 2, 2, [&](int t, const Tensor&) { return t == 0 ? g1 : g2; });
    graph_ok = graph_ok && !out[1].logits.depends_on(out[0].state) && !out[1].logits.depends_on(g1.patches) &&
               !out[1].logits.depends_on(m.encoder.prompt) && out[0].logits.depends_on(m.encoder.prompt);
    sum(out[1].logits).backward();
    zero_ok = zero_ok && all_zero(g1.patches) && all_zero(m.encoder.prompt);

    Tensor s1;
    {
      NoGradGuard guard;
      s1 = m.encoder.step(m.encoder.initial_state(2), m.encoder.tokenize(g1));
    }
    auto within = [&] { return sum(m.head(m.encoder.step(s1, m.encoder.tokenize(g2)))).item(); };
    for (auto& p : params) {
      if (p.name == "encoder.prompt") continue;
      std::vector<double> analytic(p.tensor.numel(), 0.0), numeric(p.tensor.numel(), 0.0);
      if (p.tensor.has_grad()) std::copy(p.tensor.grad().begin(), p.tensor.grad().end(), analytic.begin());
      auto data = p.tensor.mutable_data();
      NoGradGuard guard;
      for (std::size_t i = 0; i < data.size(); ++i) {
        const double saved = data[i];
        data[i] = saved + 1e-5;
        const double up = within();
        data[i] = saved - 1e-5;
        const double down = within();
        data[i] = saved;
        numeric[i] = (up - down) / 2e-5;
      }
      worst = std::max(worst, testing::relative_error(analytic, numeric));
    }
  }
  const bool pass = graph_ok && zero_ok && worst <= 1e-4;
  return {pass, std::string("graph: step-2 output ") + (graph_ok ? "independent of" : "DEPENDS ON") +
                    " step-1 state/input; gradient into step-1 input and prompt " + (zero_ok ? "exactly 0" : "NONZERO") +
                    "; step-2 parameter gradient vs within-step finite difference " + fmt(worst)};
}

Outcome grpo_battery() {
  std::vector<std::string> failed;
  auto expect = [&](bool ok, const std::string& what) {
    if (!ok) failed.push_back(what);
  };
  std::mt19937_64 rng(5);
  std::normal_distribution<double> d(0.3, 2.0);
  double worst_mean = 0, worst_std = 0, worst_inv = 0;
  for (int s = 0; s < 50; ++s) {
    Matrix a(16, std::vector<double>(8));
    for (auto& row : a) {
      for (auto& v : row) v = d(rng);
    }
    const Matrix n = group_normalize(a);
    Matrix b = a;
    for (int t = 0; t < 8; ++t) {
      const double shift = d(rng), scale = std::exp(d(rng) / 4);
      for (auto& row : b) row[t] = scale * row[t] + shift;
    }
    const Matrix nb = group_normalize(b);
    for (int t = 0; t < 8; ++t) {
      double mean = 0, var = 0;
      for (int i = 0; i < 16; ++i) mean += n[i][t];
      mean /= 16;
      for (int i = 0; i < 16; ++i) var += (n[i][t] - mean) * (n[i][t] - mean);
      worst_mean = std::max(worst_mean, std::abs(mean));
      worst_std = std::max(worst_std, std::abs(std::sqrt(var / 16) - 1));
      for (int i = 0; i < 16; ++i) worst_inv = std::max(worst_inv, std::abs(n[i][t] - nb[i][t]));
    }
  }
  expect(worst_mean <= 1e-9, "column mean " + fmt(worst_mean));
  expect(worst_std <= 1e-6, "column std " + fmt(worst_std));
  expect(worst_inv <= 1e-8, "shift/scale invariance " + fmt(worst_inv));
  const Matrix degenerate = group_normalize({{0.4, 1.0}, {0.4, 3.0}});
  expect(degenerate[0][0] == 0.0 && degenerate[1][0] == 0.0, "degenerate column zeros");

  expect(std::abs(improvement_ratio(2, 1) - 1.0 / 3) <= 1e-12, "improvement 2->1 = 1/3");
  expect(std::abs(improvement_ratio(1, 2) + 1.0 / 3) <= 1e-12, "improvement 1->2 = -1/3");
  std::exponential_distribution<double> loss(0.5);
  bool in_range = true;
  for (int i = 0; i < 10000; ++i) {
    const double a = i % 7 == 0 ? 0.0 : loss(rng), b = i % 5 == 0 ? 0.0 : loss(rng);
    const double r = improvement_ratio(a, b);
    in_range = in_range && r >= -1 && r <= 1;
  }
  expect(in_range, "improvement ratio within [-1,1]");

  // Hand case A = [+1,-1], r = [1.5, 0.5], eps = 0.2, stated as -0.35.
  const Tensor hand = grpo_objective(Tensor::from({2, 1}, {std::log(1.5), std::log(0.5)}), Tensor::zeros({2, 1}),
                                     Tensor::from({2, 1}, {1.0, -1.0}), 0.2);
  const double oracle = objective_oracle({1.5, 0.5}, {1.0, -1.0}, 0.2);
  expect(std::abs(hand.item() - oracle) <= 1e-9, "objective matches min/clip oracle");
  expect(std::abs(hand.item() - (-0.35)) <= 1e-9,
         "clipped-objective hand case: got " + fmt(hand.item()) + ", stated -0.35; the min/clip formula gives " +
             "min(1.5,1.2)*1 = 1.2 and min(-0.5,-0.8) = -0.8, so -(1.2-0.8)/2 = " + fmt(oracle) +
             "; -0.35 needs min(-0.5,-0.8) taken as -0.5");

  double worst_unit = 0;
  for (int s = 0; s < 20; ++s) {
    Matrix a(16, std::vector<double>(8));
    for (auto& row : a) {
      for (auto& v : row) v = d(rng);
    }
    const Matrix n = group_normalize(a);
    std::vector<real> adv, lp;
    for (const auto& row : n) {
      for (double v : row) {
        adv.push_back(v);
        lp.push_back(d(rng) - 3);
      }
    }
    const Tensor l = Tensor::from({16, 8}, lp);
    worst_unit = std::max(worst_unit, std::abs(grpo_objective(l, l, Tensor::from({16, 8}, adv), 0.2).item()));
  }
  expect(worst_unit <= 1e-9, "r=1 loss " + fmt(worst_unit));

  if (failed.empty()) {
    return {true, "column stats (mean " + fmt(worst_mean) + ", std " + fmt(worst_std) +
                      "), invariance, degenerate zeros, +-1/3, range, -0.35 hand case, r=1 loss " + fmt(worst_unit)};
  }
  std::string detail = "failed: ";
  for (std::size_t i = 0; i < failed.size(); ++i) detail += (i ? "; " : "") + failed[i];
  return {false, detail + ". Other checks passed."};
}

}  // namespace fovea::acceptance

#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "fovea/error.hpp"
#include "fovea/model.hpp"
#include "fovea/policy.hpp"
#include "fovea/random.hpp"

using namespace fovea;

namespace {

MixtureValues mixture(std::vector<double> means, std::vector<double> logits, double sigma) {
  MixtureValues m;
  m.means = std::move(means);
  m.logits = std::move(logits);
  m.sigma = sigma;
  return m;
}

PolicyConfig small_policy() {
  PolicyConfig c;
  c.components = 4;
  c.dim = 16;
  c.heads = 2;
  c.sigma = 0.1;
  return c;
}

Tensor random_state(int b, int n, int d, std::uint64_t seed) {
  auto rng = make_rng({seed});
  std::normal_distribution<float> dist;
  std::vector<real> v(static_cast<std::size_t>(b) * n * d);
  for (auto& x : v) x = dist(rng);
  return Tensor::from({b, n, d}, v);
}

}  // namespace

TEST_CASE("policy forward shapes and purity") {
  const GazePolicy policy(small_policy(), 24, 1);
  const Tensor s = random_state(3, 5, 24, 1);
  const MixtureParams a = policy.forward(s), b = policy.forward(s);
  CHECK(a.means.shape() == Shape{3, 4, 2});
  CHECK(a.logits.shape() == Shape{3, 4});
  for (std::size_t i = 0; i < a.means.numel(); ++i) {
    CHECK(a.means.data()[i] == b.means.data()[i]);
    CHECK(a.means.data()[i] > 0);
    CHECK(a.means.data()[i] < 1);
  }
  for (std::size_t i = 0; i < a.logits.numel(); ++i) CHECK(a.logits.data()[i] == b.logits.data()[i]);
  const auto rows = mixture_values(a, policy.sigma());
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].components() == 4);
  CHECK(rows[0].means.size() == 8);
  CHECK_THROWS_AS(policy.forward(random_state(1, 5, 23, 1)), ShapeError);
}

TEST_CASE("initial component means") {
  const auto one = initial_component_means(1);
  CHECK(one[0].x == 0.5);
  const auto four = initial_component_means(4);
  CHECK(four[0].x == doctest::Approx(0.3));
  CHECK(four[3].x == doctest::Approx(0.7));
  CHECK(four[3].y == doctest::Approx(0.7));
  GazePolicy policy(small_policy(), 24, 2);
  for (auto& v : policy.mean_weight.mutable_data()) v = 0;
  const auto rows = mixture_values(policy.forward(random_state(1, 5, 24, 2)), 0.1);
  for (int k = 0; k < 4; ++k) {
    CHECK(rows[0].means[2 * k] == doctest::Approx(four[k].x).epsilon(1e-5));
    CHECK(rows[0].means[2 * k + 1] == doctest::Approx(four[k].y).epsilon(1e-5));
  }
}

TEST_CASE("vanishing sigma returns the sampled component mean") {
  const MixtureValues m = mixture({0.2, 0.3, 0.7, 0.9}, {0.0, 0.0}, 1e-12);
  auto rng = make_rng({3});
  for (int i = 0; i < 200; ++i) {
    const GazeCenter g = sample_action(m, rng);
    const bool first = std::abs(g.x - 0.2) < 1e-9 && std::abs(g.y - 0.3) < 1e-9;
    const bool second = std::abs(g.x - 0.7) < 1e-9 && std::abs(g.y - 0.9) < 1e-9;
    CHECK((first || second));
  }
}

TEST_CASE("single-component sample mean within three standard errors") {
  const MixtureValues m = mixture({0.42, 0.57}, {0.0}, 0.1);
  auto rng = make_rng({4});
  const int n = 100000;
  double sx = 0, sy = 0;
  for (int i = 0; i < n; ++i) {
    const GazeCenter g = sample_action(m, rng);
    sx += g.x;
    sy += g.y;
  }
  const double se = 0.1 / std::sqrt(static_cast<double>(n));
  CHECK(std::abs(sx / n - 0.42) < 3 * se);
  CHECK(std::abs(sy / n - 0.57) < 3 * se);
}

TEST_CASE("samples stay in the unit square") {
  const MixtureValues m = mixture({0.02, 0.98, 0.5, 0.5, 1.0, 0.0}, {0.3, -1.0, 0.8}, 0.3);
  auto rng = make_rng({5});
  for (int i = 0; i < 100000; ++i) {
    const GazeCenter g = sample_action(m, rng);
    REQUIRE(g.x >= 0);
    REQUIRE(g.x <= 1);
    REQUIRE(g.y >= 0);
    REQUIRE(g.y <= 1);
  }
}

TEST_CASE("component frequencies follow the softmax (chi-squared)") {
  // Far-apart means with tiny sigma identify the component of every draw.
  const std::vector<double> logits{0.5, -0.7, 1.2, 0.0};
  const MixtureValues m = mixture({0.1, 0.1, 0.9, 0.1, 0.1, 0.9, 0.9, 0.9}, logits, 1e-4);
  auto rng = make_rng({6});
  const int n = 100000;
  std::vector<int> counts(4, 0);
  for (int i = 0; i < n; ++i) {
    const GazeCenter g = sample_action(m, rng);
    counts[(g.x > 0.5 ? 1 : 0) + (g.y > 0.5 ? 2 : 0)]++;
  }
  double z = 0;
  for (double l : logits) z += std::exp(l);
  double chi2 = 0;
  for (int k = 0; k < 4; ++k) {
    const double expected = n * std::exp(logits[k]) / z;
    chi2 += (counts[k] - expected) * (counts[k] - expected) / expected;
  }
  CHECK(chi2 < 16.27);  // 3 degrees of freedom, p = 0.001
}

TEST_CASE("deterministic action") {
  const MixtureValues m = mixture({0.2, 0.2, 0.8, 0.8}, {2.0, 0.0}, 0.1);
  const GazeCenter a = deterministic_action(m);
  CHECK(a.x == doctest::Approx(0.2));
  CHECK(a.y == doctest::Approx(0.2));
  const GazeCenter again = deterministic_action(m);
  CHECK(again.x == a.x);
  CHECK(again.y == a.y);
  CHECK(deterministic_action(mixture({0.2, 0.2, 0.8, 0.8}, {1.0, 1.0}, 0.1)).x == doctest::Approx(0.2));
  CHECK(deterministic_action(mixture({0.35, 0.65}, {7.0}, 0.1)).y == doctest::Approx(0.65));
  const MixtureValues shifted = mixture({0.2, 0.2, 0.8, 0.8, 0.5, 0.1}, {-1.0, 3.0, 2.0}, 0.1);
  for (double c : {-100.0, 0.0, 55.5}) {
    MixtureValues s = shifted;
    for (auto& l : s.logits) l += c;
    CHECK(deterministic_action(s).x == doctest::Approx(0.8));
  }
}

TEST_CASE("log probability") {
  SUBCASE("peak of a single Gaussian") {
    const double sigma = 0.07;
    const MixtureValues m = mixture({0.3, 0.6}, {0.4}, sigma);
    CHECK(log_prob(m, GazeCenter(0.3, 0.6)) ==
          doctest::Approx(std::log(1.0 / (2 * std::numbers::pi * sigma * sigma))).epsilon(1e-12));
  }
  SUBCASE("mixture density integrates to one") {
    const MixtureValues m = mixture({0.35, 0.4, 0.6, 0.55, 0.5, 0.7}, {0.2, -0.4, 1.0}, 0.05);
    auto rng = make_rng({7});
    const int n = 200000;
    double total = 0;
    for (int i = 0; i < n; ++i) total += std::exp(log_prob(m, GazeCenter(uniform01(rng), uniform01(rng))));
    CHECK(std::abs(total / n - 1.0) < 0.02);
  }
  SUBCASE("finite on a million sampled actions") {
    const MixtureValues m = mixture({0.01, 0.99, 0.5, 0.5, 0.99, 0.02, 0.3, 0.3}, {5.0, -5.0, 0.0, 1.0}, 0.1);
    auto rng = make_rng({8});
    bool finite = true;
    for (int i = 0; i < 1000000; ++i) finite = finite && std::isfinite(log_prob(m, sample_action(m, rng)));
    CHECK(finite);
  }
  SUBCASE("batched form matches the scalar form") {
    const GazePolicy policy(small_policy(), 24, 9);
    const MixtureParams params = policy.forward(random_state(2, 5, 24, 9));
    const auto rows = mixture_values(params, 0.1);
    const Tensor actions = Tensor::from({2, 2}, {0.31f, 0.77f, 0.5f, 0.12f});
    const Tensor lp = log_prob(params, actions, 0.1);
    CHECK(lp.data()[0] == doctest::Approx(log_prob(rows[0], GazeCenter(0.31f, 0.77f))).epsilon(1e-4));
    CHECK(lp.data()[1] == doctest::Approx(log_prob(rows[1], GazeCenter(0.5f, 0.12f))).epsilon(1e-4));
  }
}

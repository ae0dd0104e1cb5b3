#include <doctest.h>

#include <cmath>
#include <random>

#include "fovea/error.hpp"
#include "fovea/model.hpp"
#include "support/images.hpp"

using namespace fovea;
using namespace fovea::testing;

namespace {

EncoderConfig small_config() {
  EncoderConfig c;
  c.layers = 2;
  c.dim = 16;
  c.heads = 2;
  c.state_size = 4;
  c.patch_size = 8;
  c.patches = 3;
  c.classes = 5;
  c.mlp_ratio = 2;
  c.pos_hidden = 8;
  c.max_zoom = 2;
  return c;
}

Glimpse random_glimpse(int b, const EncoderConfig& c, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(0, 1);
  std::vector<real> px(static_cast<std::size_t>(b) * c.patches * c.patch_features()), xy(b * c.patches * 3);
  for (auto& v : px) v = u(rng);
  for (auto& v : xy) v = u(rng);
  return {Tensor::from({b, c.patches, c.patch_features()}, px), Tensor::from({b, c.patches, 3}, xy)};
}

double max_diff(std::span<const real> a, std::span<const real> b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, static_cast<double>(std::abs(a[i] - b[i])));
  return m;
}

}  // namespace

TEST_CASE("encoder config validation") {
  EncoderConfig c = small_config();
  c.heads = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK(EncoderConfig{}.patch_features() == 768);
}

TEST_CASE("step and head shapes hold over many steps") {
  const EncoderConfig c = small_config();
  Model m(c, 1);
  std::mt19937_64 rng(1);
  Tensor s = m.encoder.initial_state(3);
  for (int t = 0; t < 6; ++t) {
    s = m.encoder.step(s.detach(), m.encoder.tokenize(random_glimpse(3, c, rng)));
    CHECK(s.shape() == Shape{3, 4, 16});
    const Tensor logits = m.head(s);
    CHECK(logits.shape() == Shape{3, 5});
    for (real v : logits.data()) CHECK(std::isfinite(v));
  }
}

TEST_CASE("permuting the glimpse tokens leaves the state unchanged") {
  const EncoderConfig c = small_config();
  Model m(c, 2);
  std::mt19937_64 rng(2);
  const Glimpse g = random_glimpse(2, c, rng);
  const Tensor tokens = m.encoder.tokenize(g);
  const Tensor perm = concat({slice(tokens, 1, 2, 1), slice(tokens, 1, 0, 1), slice(tokens, 1, 1, 1)}, 1);
  const Tensor s0 = m.encoder.initial_state(2);
  CHECK(max_diff(m.encoder.step(s0, tokens).data(), m.encoder.step(s0, perm).data()) <= 1e-5);
}

TEST_CASE("zero layers return the input state") {
  EncoderConfig c = small_config();
  c.layers = 0;
  Model m(c, 3);
  std::mt19937_64 rng(3);
  const Tensor s0 = m.encoder.initial_state(2);
  const Tensor s1 = m.encoder.step(s0, m.encoder.tokenize(random_glimpse(2, c, rng)));
  CHECK(max_diff(s0.data(), s1.data()) == 0);
}

TEST_CASE("tokenizer linearity") {
  const EncoderConfig c = small_config();
  Model m(c, 4);
  SUBCASE("zero patch and zero positional output give the projection bias") {
    for (auto& v : m.encoder.pos_mlp.fc2.weight.mutable_data()) v = 0;
    for (auto& v : m.encoder.pos_mlp.fc2.bias.mutable_data()) v = 0;
    Glimpse g{Tensor::zeros({1, c.patches, c.patch_features()}), Tensor::full({1, c.patches, 3}, 0.5)};
    const Tensor tok = m.encoder.tokenize(g);
    for (int i = 0; i < c.patches; ++i) {
      for (int d = 0; d < c.dim; ++d) CHECK(tok.at({0, i, d}) == m.encoder.patch_embed.bias.data()[d]);
    }
  }
  SUBCASE("identical patches at different zoom differ by the positional difference") {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<float> u(0, 1);
    std::vector<real> px(c.patch_features());
    for (auto& v : px) v = u(rng);
    std::vector<real> both(px);
    both.insert(both.end(), px.begin(), px.end());
    const Tensor coords = Tensor::from({1, 2, 3}, {0.3f, 0.6f, 0.0f, 0.3f, 0.6f, 1.0f});
    EncoderConfig c2 = c;
    c2.patches = 2;
    Model m2(c2, 4);
    const Tensor tok = m2.encoder.tokenize({Tensor::from({1, 2, c.patch_features()}, both), coords});
    const Tensor pos = m2.encoder.pos_embed(coords);
    for (int d = 0; d < c.dim; ++d) {
      CHECK(tok.at({0, 1, d}) - tok.at({0, 0, d}) == doctest::Approx(pos.at({0, 1, d}) - pos.at({0, 0, d})).epsilon(1e-4));
    }
  }
}

TEST_CASE("positional embedding contract") {
  Model m(small_config(), 5);
  const Tensor a = m.encoder.pos_embed(Tensor::from({1, 3}, {0.2f, 0.4f, 0.6f}));
  const Tensor b = m.encoder.pos_embed(Tensor::from({1, 3}, {0.2f, 0.4f, 0.6f}));
  CHECK(max_diff(a.data(), b.data()) == 0);
  const Tensor near = m.encoder.pos_embed(Tensor::from({1, 3}, {0.2f + 1e-6f, 0.4f, 0.6f}));
  CHECK(max_diff(a.data(), near.data()) < 1e-4);
  CHECK_THROWS_AS(m.encoder.pos_embed(Tensor::from({1, 3}, {1.2f, 0.4f, 0.6f})), ValidationError);
  CHECK_THROWS_AS(m.encoder.pos_embed(Tensor::from({1, 3}, {0.2f, -0.1f, 0.6f})), ValidationError);
}

TEST_CASE("task head") {
  EncoderConfig c = small_config();
  c.state_size = 1;
  Model m(c, 6);
  std::mt19937_64 rng(6);
  std::normal_distribution<float> n;
  std::vector<real> v(2 * 16);
  for (auto& x : v) x = n(rng);
  const Tensor s = Tensor::from({2, 1, 16}, v);
  m.head.pool.mutable_data()[0] = 2.5;
  const Tensor scaled = Tensor::from({2, 1, 16}, [&] {
    auto w = v;
    for (auto& x : w) x *= 2.5f;
    return w;
  }());
  m.head.pool.mutable_data()[0] = 1;
  const Tensor expect = m.head(scaled);
  m.head.pool.mutable_data()[0] = 2.5;
  CHECK(max_diff(m.head(s).data(), expect.data()) <= 1e-5);

  const Tensor logits = m.head(s);
  CHECK(logits.shape() == Shape{2, 5});
  const Tensor p = softmax(logits, -1);
  for (int b = 0; b < 2; ++b) {
    double total = 0;
    for (int k = 0; k < 5; ++k) total += p.at({b, k});
    CHECK(total == doctest::Approx(1).epsilon(1e-6));
  }
  std::vector<real> onehot(10, 0);
  onehot[2] = 1;
  onehot[5 + 4] = 1;
  const Tensor ce = cross_entropy(logits, Tensor::from({2, 5}, onehot));
  CHECK(ce.data()[0] == doctest::Approx(-std::log(p.at({0, 2}))).epsilon(1e-5));
  CHECK(ce.data()[1] == doctest::Approx(-std::log(p.at({1, 4}))).epsilon(1e-5));
}

TEST_CASE("single-step episode is plain classification") {
  const EncoderConfig c = small_config();
  Model m(c, 7);
  std::mt19937_64 rng(7);
  std::vector<Image> images{random_image(20, 24, rng), random_image(33, 17, rng)};
  std::vector<std::vector<GazeCenter>> centers{{GazeCenter(0.3, 0.4), GazeCenter(0.8, 0.1)}};
  const auto out = run_episode(m, images, centers);
  REQUIRE(out.size() == 1);
  const ZoomSchedule sched = zoom_schedule(c.patches, c.max_zoom);
  std::vector<PatchSet> sets{extract_multizoom(images[0], centers[0][0], c.patch_size, sched),
                             extract_multizoom(images[1], centers[0][1], c.patch_size, sched)};
  const Tensor direct = m.head(m.encoder.step(m.encoder.initial_state(2), m.encoder.tokenize(make_glimpse(sets))));
  CHECK(max_diff(out[0].logits.data(), direct.data()) == 0);
  CHECK_THROWS_AS(run_episode(m, images, {}), ValidationError);
}

TEST_CASE("repeating one centre still evolves the state") {
  const EncoderConfig c = small_config();
  Model m(c, 8);
  std::mt19937_64 rng(8);
  std::vector<Image> images{random_image(24, 24, rng)};
  std::vector<std::vector<GazeCenter>> centers(4, {GazeCenter(0.5, 0.5)});
  const auto out = run_episode(m, images, centers);
  for (std::size_t t = 1; t < out.size(); ++t) CHECK(max_diff(out[t].state.data(), out[t - 1].state.data()) > 0);
}

TEST_CASE("episode states do not depend on earlier iterations in the graph") {
  const EncoderConfig c = small_config();
  Model m(c, 9);
  std::mt19937_64 rng(9);
  std::vector<Image> images{random_image(24, 24, rng), random_image(24, 24, rng)};
  std::vector<std::vector<GazeCenter>> centers(3, {GazeCenter(0.3, 0.3), GazeCenter(0.7, 0.6)});
  const auto out = run_episode(m, images, centers);
  CHECK_FALSE(out[1].state.depends_on(out[0].state));
  CHECK_FALSE(out[2].state.depends_on(out[1].state));
  CHECK(out[0].state.depends_on(m.encoder.prompt));
  CHECK_FALSE(out[1].state.depends_on(m.encoder.prompt));
}

TEST_CASE("full-attention baseline sees every grid tile") {
  const EncoderConfig c = small_config();
  Model m(c, 10);
  std::mt19937_64 rng(10);
  std::vector<Image> images{random_image(32, 32, rng), random_image(32, 32, rng)};
  std::vector<std::vector<int>> tiles(2);
  for (int i = 0; i < 16; ++i) {
    tiles[0].push_back(i);
    tiles[1].push_back(i);
  }
  const Glimpse g = make_grid_glimpse(images, 8, tiles, grid_z_norm(32, 32, 8, c.max_zoom));
  CHECK(g.patches.shape() == Shape{2, 16, 192});
  const Tensor direct = m.head(m.encoder.step(m.encoder.initial_state(2), m.encoder.tokenize(g)));
  CHECK(max_diff(vit_baseline_forward(m, images).data(), direct.data()) == 0);
  CHECK(grid_z_norm(256, 256, 16, 4) == 1.0);
  CHECK(grid_z_norm(64, 64, 16, 4) == 0.5);
}

TEST_CASE("model construction is deterministic in the seed") {
  const auto a = Model(small_config(), 11).parameters();
  const auto b = Model(small_config(), 11).parameters();
  const auto d = Model(small_config(), 12).parameters();
  REQUIRE(a.size() == b.size());
  bool differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].name == b[i].name);
    CHECK(max_diff(a[i].tensor.data(), b[i].tensor.data()) == 0);
    differs = differs || max_diff(a[i].tensor.data(), d[i].tensor.data()) > 0;
  }
  CHECK(differs);
}

#include <doctest.h>

#include <cmath>
#include <fstream>
#include <iterator>
#include <set>

#include "fovea/checkpoint.hpp"
#include "fovea/error.hpp"
#include "fovea/pipeline.hpp"
#include "fovea/random.hpp"
#include "support/temp_dir.hpp"

using namespace fovea;
using fovea::testing::TempDir;

namespace {

RunConfig tiny_run(const std::filesystem::path& out) {
  RunConfig c;
  c.dataset.kind = "digits";
  c.dataset.images = FOVEA_SOURCE_DIR "/data/mnist5k-images-idx3-ubyte";
  c.dataset.labels = FOVEA_SOURCE_DIR "/data/mnist5k-labels-idx1-ubyte";
  c.dataset.val_count = 100;
  c.dataset.train_count = 64;
  c.model.layers = 1;
  c.model.dim = 16;
  c.model.heads = 2;
  c.model.state_size = 2;
  c.model.patch_size = 8;
  c.model.patches = 2;
  c.model.pos_hidden = 8;
  c.model.max_zoom = 1;
  c.policy.dim = 8;
  c.policy.heads = 2;
  c.train.episode_length = 3;
  c.train.epochs = 1;
  c.train.batch_size = 16;
  c.train.eval_batch_size = 50;
  c.grpo.group_size = 3;
  c.grpo.batch_size = 4;
  c.grpo.inner_epochs = 1;
  c.grpo.max_outer_steps = 1;
  c.seed = 11;
  c.output_dir = out.string();
  return c;
}

std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("gaze options") {
  CHECK(parse_gaze_mode("random") == GazeMode::Random);
  CHECK(parse_gaze_mode("learned") == GazeMode::Learned);
  CHECK(parse_gaze_mode("fixed") == GazeMode::Fixed);
  CHECK_THROWS_AS(parse_gaze_mode("greedy"), ConfigError);
  const auto centers = parse_centers("0.25,0.5; 0.75,0.1");
  REQUIRE(centers.size() == 2);
  CHECK(centers[1].x == 0.75);
  CHECK(centers[1].y == doctest::Approx(0.1));
  CHECK_THROWS_AS(parse_centers("0.2"), ConfigError);
  CHECK(eval_random_center(3, 7, 2).x == eval_random_center(3, 7, 2).x);
  CHECK(eval_random_center(3, 7, 2).x != eval_random_center(3, 7, 1).x);
}

TEST_CASE("shuffled groups partition the tiles") {
  auto rng = make_rng({1});
  for (int s = 0; s < 20; ++s) {
    const auto groups = shuffled_groups(16, 4, rng);
    REQUIRE(groups.size() == 4);
    std::multiset<int> all;
    for (const auto& g : groups) {
      CHECK(g.size() == 4);
      all.insert(g.begin(), g.end());
    }
    CHECK(all.size() == 16);
    for (int t = 0; t < 16; ++t) CHECK(all.count(t) == 1);
  }
  CHECK_THROWS_AS(shuffled_groups(15, 4, rng), ValidationError);
}

TEST_CASE("evaluation") {
  TempDir dir;
  const RunConfig c = tiny_run(dir.path());
  const DataSplits splits = make_splits(c);
  CHECK(splits.train->size() == 64);
  CHECK(splits.val->size() == 100);
  const Model model(c.model, 5);
  EvalOptions eo;
  eo.steps = 3;
  eo.seed = 2;
  eo.batch_size = 30;
  const StepMetrics a = evaluate(model, *splits.val, eo);
  const StepMetrics b = evaluate(model, *splits.val, eo);
  CHECK(a.top1 == b.top1);
  CHECK(a.loss == b.loss);
  CHECK(a.count == 100);
  for (int t = 0; t < 3; ++t) CHECK(a.top5[t] >= a.top1[t]);
  eo.threads = 3;
  eo.batch_size = 100;
  CHECK(evaluate(model, *splits.val, eo).top1 == a.top1);

  eo.mode = GazeMode::Fixed;
  eo.centers = {GazeCenter(0.5, 0.5)};
  const StepMetrics fixed = evaluate(model, *splits.val, eo);
  CHECK(fixed.top1.size() == 3);
  GazePolicy policy(c.policy, c.model.dim, 3);
  eo.mode = GazeMode::Learned;
  eo.policy = &policy;
  const StepMetrics learned = evaluate(model, *splits.val, eo);
  CHECK(learned.top1 == evaluate(model, *splits.val, eo).top1);
}

TEST_CASE("untrained model is at chance") {
  RunConfig c = tiny_run("unused");
  c.dataset.val_count = 1000;
  const DataSplits splits = make_splits(c);
  double total = 0;
  int n = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Model model(c.model, 100 + seed);
    EvalOptions eo;
    eo.steps = 1;
    eo.seed = seed;
    total += evaluate(model, *splits.val, eo).top1[0];
    ++n;
  }
  // Each model tends to favour one class, so average several before comparing.
  const double mean = total / n;
  CHECK(std::abs(mean - 0.1) <= 3 * std::sqrt(0.1 * 0.9 / 1000.0 / n) + 0.02);
}

TEST_CASE("stage 1 with zero epochs writes the initial model") {
  TempDir dir;
  RunConfig c = tiny_run(dir.path());
  c.train.epochs = 0;
  const DataSplits splits = make_splits(c);
  MetricsLog log;
  const TrainResult r = pretrain_stage1(c, *splits.train, *splits.val, log, dir / "init.fve");
  CHECK(r.steps == 0);
  CHECK(r.batch_losses.empty());
  const Checkpoint ck = load_checkpoint(dir / "init.fve");
  Model fresh(c.model, 999);
  ParameterList params = fresh.parameters();
  restore(ck, params);
  CHECK(snapshot(fresh.parameters()) == snapshot(r.model.parameters()));
  MetricsLog log2;
  const TrainResult again = pretrain_stage1(c, *splits.train, *splits.val, log2);
  CHECK(snapshot(again.model.parameters()) == snapshot(r.model.parameters()));
}

TEST_CASE("runs are reproducible and stage 2 keeps the encoder") {
  TempDir dir;
  RunConfig a = tiny_run(dir / "a");
  a.train.max_steps = 3;
  run_pretrain(a);
  const std::string metrics = read_text(dir / "a/metrics.jsonl"), weights = read_text(dir / "a/stage1.fve");
  run_pretrain(a);
  CHECK(read_text(dir / "a/metrics.jsonl") == metrics);
  CHECK(read_text(dir / "a/stage1.fve") == weights);
  CHECK(metrics.find("0.20000000000000001") == std::string::npos);
  CHECK(std::filesystem::exists(dir / "a/config.txt"));
  CHECK(std::filesystem::exists(dir / "a/summary.json"));
  CHECK(parse_config(dir / "a/config.txt").model.dim == 16);

  RunConfig p = tiny_run(dir / "p");
  p.checkpoint = (dir / "a/stage1.fve").string();
  const auto summary = run_train_policy(p);
  CHECK(summary["encoder_unchanged"] == true);
  CHECK(summary["outer_steps"] == 1);
  const Checkpoint stage1 = load_checkpoint(dir / "a/stage1.fve");
  const Checkpoint stage2 = load_checkpoint(dir / "p/policy.fve");
  for (const auto& e : stage1.entries) {
    const CheckpointEntry* f = stage2.find(e.name);
    REQUIRE(f != nullptr);
    CHECK(f->values == e.values);
  }

  RunConfig z = tiny_run(dir / "z");
  z.checkpoint = p.checkpoint;
  z.grpo.epochs = 0;
  run_train_policy(z);
  const GazePolicy loaded = load_policy(z, dir / "z/policy.fve");
  RunConfig z2 = z;
  z2.output_dir = (dir / "z2").string();
  run_train_policy(z2);
  CHECK(snapshot(load_policy(z2, dir / "z2/policy.fve").parameters()) == snapshot(loaded.parameters()));
}

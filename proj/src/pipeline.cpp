#include "fovea/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "fovea/checkpoint.hpp"
#include "fovea/error.hpp"
#include "fovea/random.hpp"

namespace fovea {
inline namespace FOVEA_PRECISION_NS {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kOrderTag = 0x6f72646572ULL;
constexpr std::uint64_t kBatchTag = 0x6261746368ULL;
constexpr std::uint64_t kEvalTag = 0x6576616cULL;
constexpr std::uint64_t kShuffleEvalTag = 0x7365766cULL;
constexpr std::uint64_t kModelTag = 0x6d6f64656cULL;
constexpr std::uint64_t kPolicyTag = 0x706f6c6379ULL;
constexpr std::uint64_t kGrpoTag = 0x6772706fULL;
constexpr std::uint64_t kValTag = 0x76616c6964ULL;

struct Batch {
  std::vector<Image> images;
  std::vector<int> labels;
};

Batch load_batch(const ImageSource& source, std::size_t begin, std::size_t end, std::uint64_t epoch,
                 const std::vector<std::size_t>* order = nullptr) {
  Batch b;
  for (std::size_t i = begin; i < end; ++i) {
    LabeledImage item = source.get(order ? (*order)[i] : i, epoch);
    b.images.push_back(std::move(item.image));
    b.labels.push_back(item.label);
  }
  return b;
}

// Accumulates per-step hits for a batch of [B,K] logits.
void score(const Tensor& logits, std::span<const int> labels, std::size_t step, StepMetrics& m) {
  const int k = logits.size(1);
  const auto v = logits.data();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto row = v.subspan(i * k, k);
    const real truth = row[labels[i]];
    const int best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    int above = 0;
    for (real x : row) above += x > truth ? 1 : 0;
    if (best == labels[i]) m.top1[step] += 1.0;
    if (above < 5) m.top5[step] += 1.0;
    double hi = row[0];
    for (real x : row) hi = std::max(hi, static_cast<double>(x));
    double z = 0.0;
    for (real x : row) z += std::exp(static_cast<double>(x) - hi);
    m.loss[step] += hi + std::log(z) - static_cast<double>(truth);
  }
}

StepMetrics empty_metrics(int steps) {
  StepMetrics m;
  m.top1.assign(steps, 0.0);
  m.top5.assign(steps, 0.0);
  m.loss.assign(steps, 0.0);
  return m;
}

void finish(StepMetrics& m) {
  if (m.count == 0) return;
  for (auto* v : {&m.top1, &m.top5, &m.loss}) {
    for (double& x : *v) x /= static_cast<double>(m.count);
  }
}

nlohmann::json config_json(const RunConfig& config) {
  nlohmann::json out = nlohmann::json::object();
  for (const auto& key : config_keys()) out[key.name] = get_config_value(config, key.name);
  return out;
}

void check_grid(const RunConfig& config) {
  const int s = config.dataset.image_size, p = config.model.patch_size;
  if (s <= 0 || s % p != 0) {
    throw ConfigError("grid experiments need dataset.image_size to be a positive multiple of model.patch_size (" +
                      std::to_string(s) + " vs " + std::to_string(p) + ")");
  }
  const int tiles = (s / p) * (s / p);
  if (tiles % config.shuffled.groups != 0) {
    throw ConfigError(std::to_string(tiles) + " grid tiles cannot be split into " +
                      std::to_string(config.shuffled.groups) + " equal groups");
  }
}

struct RunDir {
  fs::path dir;
  MetricsLog log;

  explicit RunDir(const RunConfig& config, const std::string& phase) : dir(config.output_dir) {
    fs::create_directories(dir);
    {
      std::ofstream out(dir / "config.txt", std::ios::trunc);
      out << to_text(config);
    }
    std::ofstream(dir / "metrics.jsonl", std::ios::trunc).flush();
    log = MetricsLog(dir / "metrics.jsonl");
    log.write({{"phase", "config"}, {"command", phase}, {"config", config_json(config)}});
  }

  void summary(const nlohmann::json& s) const {
    std::ofstream out(dir / "summary.json", std::ios::trunc);
    out << s.dump(2) << "\n";
  }
};

}  // namespace

MetricsLog::MetricsLog(const fs::path& path) : path_(path) {}

void MetricsLog::write(const nlohmann::json& record) {
  records_.push_back(record);
  if (path_.empty()) return;
  std::ofstream out(path_, std::ios::app);
  if (!out) throw ValidationError("cannot append metrics to '" + path_.string() + "'");
  out << record.dump() << "\n";
}

nlohmann::json StepMetrics::to_json() const {
  return {{"top1", top1}, {"top5", top5}, {"loss", loss}, {"count", count}};
}

DataSplits make_splits(const RunConfig& config) {
  const DatasetConfig& d = config.dataset;
  const int classes = config.model.classes;
  auto limit = [&](std::vector<std::size_t> idx) {
    if (d.train_count > 0 && idx.size() > static_cast<std::size_t>(d.train_count)) idx.resize(d.train_count);
    return idx;
  };
  if (d.kind == "cluttered" || d.kind == "digits") {
    auto ds = std::make_shared<const LabeledDataset>(load_idx(d.images, d.labels, classes));
    auto [train, val] = split_indices(ds->size(), static_cast<std::size_t>(d.val_count), config.seed);
    train = limit(std::move(train));
    if (d.kind == "digits") {
      return {std::make_shared<DatasetSource>(ds, std::move(train), d.image_size),
              std::make_shared<DatasetSource>(ds, std::move(val), d.image_size)};
    }
    ClutterOptions opts;
    opts.canvas = d.canvas;
    opts.distractors = d.distractors;
    opts.distractor_size = d.distractor_size;
    return {std::make_shared<ClutteredSource>(ds, std::move(train), opts, config.seed, true),
            std::make_shared<ClutteredSource>(ds, std::move(val), opts, derive_seed({config.seed, kValTag}), false)};
  }
  if (d.kind == "manifest") {
    auto ds = std::make_shared<const LabeledDataset>(load_manifest(d.manifest, classes));
    if (!d.val_manifest.empty()) {
      auto vs = std::make_shared<const LabeledDataset>(load_manifest(d.val_manifest, classes));
      std::vector<std::size_t> train(ds->size()), val(vs->size());
      for (std::size_t i = 0; i < train.size(); ++i) train[i] = i;
      for (std::size_t i = 0; i < val.size(); ++i) val[i] = i;
      return {std::make_shared<DatasetSource>(ds, limit(std::move(train)), d.image_size),
              std::make_shared<DatasetSource>(vs, std::move(val), d.image_size)};
    }
    auto [train, val] = split_indices(ds->size(), static_cast<std::size_t>(d.val_count), config.seed);
    return {std::make_shared<DatasetSource>(ds, limit(std::move(train)), d.image_size),
            std::make_shared<DatasetSource>(ds, std::move(val), d.image_size)};
  }
  throw ConfigError("unknown dataset.kind '" + d.kind + "'");
}

GazeMode parse_gaze_mode(const std::string& name) {
  if (name == "random") return GazeMode::Random;
  if (name == "learned") return GazeMode::Learned;
  if (name == "fixed") return GazeMode::Fixed;
  throw ConfigError("unknown gaze mode '" + name + "' (expected random|learned|fixed)");
}

std::vector<GazeCenter> parse_centers(const std::string& text) {
  std::vector<GazeCenter> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ';')) {
    if (item.find_first_not_of(" \t") == std::string::npos) continue;
    const auto comma = item.find(',');
    if (comma == std::string::npos) throw ConfigError("centre '" + item + "' is not x,y");
    try {
      const double x = std::stod(item.substr(0, comma));
      const double y = std::stod(item.substr(comma + 1));
      if (x < 0.0 || x > 1.0 || y < 0.0 || y > 1.0) throw ConfigError("centre '" + item + "' outside [0,1]^2");
      out.emplace_back(x, y);
    } catch (const std::logic_error&) {
      throw ConfigError("centre '" + item + "' is not numeric");
    }
  }
  if (out.empty()) throw ConfigError("no fixed centres given");
  return out;
}

GazeCenter eval_random_center(std::uint64_t seed, std::size_t index, int step) {
  auto rng = make_rng({seed, kEvalTag, index, static_cast<std::uint64_t>(step)});
  const double x = uniform01(rng);
  const double y = uniform01(rng);
  return GazeCenter(x, y);
}

std::vector<std::vector<GazeCenter>> policy_centers(const Model& model, const GazePolicy& policy,
                                                    std::span<const Image> images, int steps, int threads) {
  NoGradGuard no_grad;
  const EncoderConfig& c = model.config();
  const ZoomSchedule schedule = zoom_schedule(c.patches, c.max_zoom);
  std::vector<std::vector<GazeCenter>> centers;
  run_episode(model, static_cast<int>(images.size()), steps, [&](int, const Tensor& state) {
    const auto values = mixture_values(policy.forward(state), policy.sigma());
    std::vector<GazeCenter> step;
    for (const auto& v : values) step.push_back(deterministic_action(v));
    centers.push_back(step);
    return make_glimpse(extract_multizoom_batch(images, step, c.patch_size, schedule, threads));
  });
  return centers;
}

StepMetrics evaluate(const Model& model, const ImageSource& source, const EvalOptions& options) {
  if (options.mode == GazeMode::Learned && !options.policy) throw ValidationError("evaluate: learned mode needs a policy");
  if (options.mode == GazeMode::Fixed && options.centers.empty()) {
    throw ValidationError("evaluate: fixed mode needs centres");
  }
  NoGradGuard no_grad;
  const EncoderConfig& c = model.config();
  const ZoomSchedule schedule = zoom_schedule(c.patches, c.max_zoom);
  const std::size_t n = options.limit > 0 ? std::min(options.limit, source.size()) : source.size();
  StepMetrics m = empty_metrics(options.steps);
  for (std::size_t begin = 0; begin < n; begin += options.batch_size) {
    const std::size_t end = std::min(n, begin + static_cast<std::size_t>(options.batch_size));
    const Batch b = load_batch(source, begin, end, 0);
    const int bs = static_cast<int>(b.images.size());
    auto outputs = run_episode(model, bs, options.steps, [&](int t, const Tensor& state) {
      std::vector<GazeCenter> centers(bs);
      for (int i = 0; i < bs; ++i) {
        if (options.mode == GazeMode::Random) {
          centers[i] = eval_random_center(options.seed, begin + i, t);
        } else if (options.mode == GazeMode::Fixed) {
          centers[i] = options.centers[t % options.centers.size()];
        }
      }
      if (options.mode == GazeMode::Learned) {
        const auto values = mixture_values(options.policy->forward(state), options.policy->sigma());
        for (int i = 0; i < bs; ++i) centers[i] = deterministic_action(values[i]);
      }
      return make_glimpse(extract_multizoom_batch(b.images, centers, c.patch_size, schedule, options.threads));
    });
    for (int t = 0; t < options.steps; ++t) score(outputs[t].logits, b.labels, t, m);
    m.count += b.images.size();
  }
  finish(m);
  return m;
}

std::vector<std::vector<int>> shuffled_groups(int tiles, int groups, std::mt19937_64& rng) {
  if (groups < 1 || tiles % groups != 0) throw ValidationError("shuffled_groups: tiles must split evenly into groups");
  const auto perm = permutation(static_cast<std::size_t>(tiles), rng);
  const int per = tiles / groups;
  std::vector<std::vector<int>> out(groups);
  for (int g = 0; g < groups; ++g) {
    for (int j = 0; j < per; ++j) out[g].push_back(static_cast<int>(perm[g * per + j]));
  }
  return out;
}

namespace {

// One episode over grid groups; groups[b][t] lists image b's tiles for step t.
std::vector<StepOutput> run_grid_episode(const Model& model, std::span<const Image> images,
                                         const std::vector<std::vector<std::vector<int>>>& groups) {
  const EncoderConfig& c = model.config();
  const int steps = static_cast<int>(groups[0].size());
  const double z = grid_z_norm(images[0].height(), images[0].width(), c.patch_size, c.max_zoom);
  return run_episode(model, static_cast<int>(images.size()), steps, [&](int t, const Tensor&) {
    std::vector<std::vector<int>> tiles;
    for (const auto& g : groups) tiles.push_back(g[t]);
    return make_grid_glimpse(images, c.patch_size, tiles, z);
  });
}

int tile_count(const Image& image, int patch_size) {
  return (image.height() / patch_size) * (image.width() / patch_size);
}

}  // namespace

StepMetrics evaluate_shuffled(const Model& model, const ImageSource& source, int groups, std::uint64_t seed,
                              int batch_size) {
  NoGradGuard no_grad;
  StepMetrics m = empty_metrics(groups);
  for (std::size_t begin = 0; begin < source.size(); begin += batch_size) {
    const std::size_t end = std::min(source.size(), begin + static_cast<std::size_t>(batch_size));
    const Batch b = load_batch(source, begin, end, 0);
    std::vector<std::vector<std::vector<int>>> perms;
    for (std::size_t i = 0; i < b.images.size(); ++i) {
      auto rng = make_rng({seed, kShuffleEvalTag, begin + i});
      perms.push_back(shuffled_groups(tile_count(b.images[i], model.config().patch_size), groups, rng));
    }
    auto outputs = run_grid_episode(model, b.images, perms);
    for (int t = 0; t < groups; ++t) score(outputs[t].logits, b.labels, t, m);
    m.count += b.images.size();
  }
  finish(m);
  return m;
}

StepMetrics evaluate_baseline(const Model& model, const ImageSource& source, int batch_size) {
  NoGradGuard no_grad;
  StepMetrics m = empty_metrics(1);
  for (std::size_t begin = 0; begin < source.size(); begin += batch_size) {
    const std::size_t end = std::min(source.size(), begin + static_cast<std::size_t>(batch_size));
    const Batch b = load_batch(source, begin, end, 0);
    score(vit_baseline_forward(model, b.images), b.labels, 0, m);
    m.count += b.images.size();
  }
  finish(m);
  return m;
}

TrainResult train_model(const RunConfig& config, const ImageSource& train, const BatchLoss& loss_fn, MetricsLog& log,
                        const TrainHooks& hooks) {
  const TrainConfig& tc = config.train;
  TrainResult result;
  result.model = Model(config.model, derive_seed({config.seed, kModelTag}));
  ParameterList params = result.model.parameters();
  AdamWConfig adam{tc.beta1, tc.beta2, tc.eps, tc.weight_decay};
  AdamW opt(params, adam);

  const bool overfit = tc.overfit_batches > 0;
  const std::size_t bs = static_cast<std::size_t>(tc.batch_size);
  const std::int64_t per_epoch =
      overfit ? tc.overfit_batches : static_cast<std::int64_t>((train.size() + bs - 1) / bs);
  std::int64_t total = per_epoch * tc.epochs;
  if (tc.max_steps > 0) total = std::min<std::int64_t>(total, tc.max_steps);
  const auto warmup = static_cast<std::int64_t>(std::floor(tc.warmup_fraction * static_cast<double>(total)));

  std::int64_t step = 0;
  for (int epoch = 0; epoch < tc.epochs && step < total; ++epoch) {
    const std::uint64_t data_epoch = overfit ? 0 : static_cast<std::uint64_t>(epoch);
    auto order_rng = make_rng({config.seed, kOrderTag, data_epoch});
    const std::vector<std::size_t> order = permutation(train.size(), order_rng);
    double loss_sum = 0.0;
    int loss_count = 0;
    double lr = 0.0;
    for (std::int64_t bi = 0; bi < per_epoch && step < total; ++bi) {
      const std::size_t begin = static_cast<std::size_t>(bi) * bs;
      const std::size_t end = std::min(train.size(), begin + bs);
      Batch b = load_batch(train, begin, end, data_epoch, &order);
      auto rng = make_rng({config.seed, kBatchTag, data_epoch, static_cast<std::uint64_t>(bi)});
      std::vector<std::vector<double>> targets = one_hot(b.labels, config.model.classes);
      if (tc.mixup_alpha > 0.0 && !overfit && b.images.size() >= 2) {
        MixupBatch mixed = mixup(b.images, targets, tc.mixup_alpha, rng);
        b.images = std::move(mixed.images);
        targets = std::move(mixed.targets);
      }
      opt.zero_grad();
      Tensor loss = loss_fn(result.model, b.images, target_tensor(targets), rng);
      const double value = static_cast<double>(loss.item());
      if (!std::isfinite(value)) {
        throw NumericError(hooks.phase + ": non-finite loss at step " + std::to_string(step) +
                           (hooks.checkpoint.empty() ? std::string()
                                                     : "; last good checkpoint kept at " + hooks.checkpoint.string()));
      }
      loss.backward();
      if (tc.grad_clip > 0.0) clip_grad_norm(params, tc.grad_clip);
      lr = cosine_lr(step, warmup, total, tc.lr);
      opt.step(lr);
      result.batch_losses.push_back(value);
      loss_sum += value;
      ++loss_count;
      ++step;
    }
    nlohmann::json rec = {{"phase", hooks.phase},
                          {"epoch", epoch},
                          {"step", step},
                          {"lr", lr},
                          {"train_loss", loss_count ? loss_sum / loss_count : 0.0}};
    if (hooks.evaluate) {
      result.val = hooks.evaluate(result.model);
      rec["val"] = result.val.to_json();
    }
    log.write(rec);
    if (!hooks.checkpoint.empty()) save_checkpoint(params, hooks.checkpoint, "{\"phase\":\"" + hooks.phase + "\"}");
  }
  if (step == 0 && hooks.evaluate) result.val = hooks.evaluate(result.model);
  if (!hooks.checkpoint.empty() && step == 0) save_checkpoint(params, hooks.checkpoint, "{\"phase\":\"" + hooks.phase + "\"}");
  result.steps = static_cast<int>(step);
  return result;
}

Tensor stage1_loss(const Model& model, std::span<const Image> images, const Tensor& targets, std::mt19937_64& rng,
                   int steps, int threads) {
  std::vector<std::vector<GazeCenter>> centers(steps, std::vector<GazeCenter>(images.size()));
  for (auto& step : centers) {
    for (auto& g : step) {
      const double x = uniform01(rng);
      const double y = uniform01(rng);
      g = GazeCenter(x, y);
    }
  }
  const auto outputs = run_episode(model, images, centers, threads);
  Tensor total = classification_loss(outputs[0].logits, targets);
  for (std::size_t t = 1; t < outputs.size(); ++t) total = add(total, classification_loss(outputs[t].logits, targets));
  return mul_scalar(total, real(1) / static_cast<real>(outputs.size()));
}

TrainResult pretrain_stage1(const RunConfig& config, const ImageSource& train, const ImageSource& val,
                            MetricsLog& log, const fs::path& checkpoint) {
  const int steps = config.train.episode_length;
  TrainHooks hooks;
  hooks.phase = "stage1";
  hooks.checkpoint = checkpoint;
  hooks.evaluate = [&](const Model& m) {
    EvalOptions eo;
    eo.steps = steps;
    eo.seed = config.seed;
    eo.batch_size = config.train.eval_batch_size;
    eo.threads = config.threads;
    return evaluate(m, val, eo);
  };
  return train_model(
      config, train,
      [&](const Model& m, std::span<const Image> images, const Tensor& targets, std::mt19937_64& rng) {
        return stage1_loss(m, images, targets, rng, steps, config.threads);
      },
      log, hooks);
}

TrainResult train_shuffled(const RunConfig& config, const ImageSource& train, const ImageSource& val,
                           MetricsLog& log, const fs::path& checkpoint) {
  check_grid(config);
  const int groups = config.shuffled.groups;
  TrainHooks hooks;
  hooks.phase = "shuffled";
  hooks.checkpoint = checkpoint;
  hooks.evaluate = [&](const Model& m) {
    return evaluate_shuffled(m, val, groups, config.seed, config.train.eval_batch_size);
  };
  return train_model(
      config, train,
      [&](const Model& m, std::span<const Image> images, const Tensor& targets, std::mt19937_64& rng) {
        std::vector<std::vector<std::vector<int>>> perms;
        for (const Image& im : images) {
          perms.push_back(shuffled_groups(tile_count(im, config.model.patch_size), groups, rng));
        }
        const auto outputs = run_grid_episode(m, images, perms);
        Tensor total = classification_loss(outputs[0].logits, targets);
        for (std::size_t t = 1; t < outputs.size(); ++t) {
          total = add(total, classification_loss(outputs[t].logits, targets));
        }
        return mul_scalar(total, real(1) / static_cast<real>(outputs.size()));
      },
      log, hooks);
}

TrainResult train_vit_baseline(const RunConfig& config, const ImageSource& train, const ImageSource& val,
                               MetricsLog& log, const fs::path& checkpoint) {
  check_grid(config);
  TrainHooks hooks;
  hooks.phase = "baseline";
  hooks.checkpoint = checkpoint;
  hooks.evaluate = [&](const Model& m) { return evaluate_baseline(m, val, config.train.eval_batch_size); };
  return train_model(
      config, train,
      [](const Model& m, std::span<const Image> images, const Tensor& targets, std::mt19937_64&) {
        return classification_loss(vit_baseline_forward(m, images), targets);
      },
      log, hooks);
}

nlohmann::json step_table(const std::string& prefix, const StepMetrics& metrics) {
  nlohmann::json rows = nlohmann::json::object();
  for (std::size_t t = 0; t < metrics.top1.size(); ++t) {
    rows[prefix + " - Step " + std::to_string(t + 1)] = {{"top1", metrics.top1[t]}, {"top5", metrics.top5[t]}};
  }
  return rows;
}

ShuffledReport shuffled_vit_experiment(const RunConfig& config, const ImageSource& train, const ImageSource& val,
                                       MetricsLog& log, const fs::path& output_dir) {
  ShuffledReport report;
  const fs::path ck1 = output_dir.empty() ? fs::path() : output_dir / "shuffled.fve";
  const fs::path ck2 = output_dir.empty() ? fs::path() : output_dir / "baseline.fve";
  report.iterative = train_shuffled(config, train, val, log, ck1).val;
  report.baseline = train_vit_baseline(config, train, val, log, ck2).val;
  nlohmann::json top1 = nlohmann::json::object(), top5 = nlohmann::json::object();
  for (std::size_t t = 0; t < report.iterative.top1.size(); ++t) {
    top1["Step " + std::to_string(t + 1)] = report.iterative.top1[t];
    top5["Step " + std::to_string(t + 1)] = report.iterative.top5[t];
  }
  top1["ViT"] = report.baseline.top1[0];
  top5["ViT"] = report.baseline.top5[0];
  report.summary = {{"table", "shuffled-groups"}, {"Top-1", top1}, {"Top-5", top5}};
  log.write({{"phase", "summary"}, {"summary", report.summary}});
  return report;
}

Stage2Result train_stage2(const RunConfig& config, const Model& stage1, const ImageSource& train,
                          const ImageSource& val, MetricsLog& log) {
  Stage2Result result;
  result.policy = GazePolicy(config.policy, config.model.dim, derive_seed({config.seed, kPolicyTag}));
  const ParameterList model_params = stage1.parameters();
  const std::vector<float> before = snapshot(model_params);
  set_trainable(model_params, false);

  GrpoOptions go;
  go.grpo = config.grpo;
  go.steps = config.train.episode_length;
  go.seed = derive_seed({config.seed, kGrpoTag});
  go.threads = config.threads;
  result.outer_steps = grpo_train(stage1, result.policy, train, go, [&](const GrpoRecord& r) {
    log.write({{"phase", "grpo"},
               {"outer_step", r.outer_step},
               {"inner_epoch", r.inner_epoch},
               {"objective", r.stats.objective},
               {"mean_ratio", r.stats.mean_ratio},
               {"clip_fraction", r.stats.clip_fraction},
               {"per_step_accuracy", r.per_step_accuracy}});
  });
  result.encoder_unchanged = snapshot(model_params) == before;
  if (!result.encoder_unchanged) throw GraphError("stage 2 modified frozen encoder parameters");

  EvalOptions eo;
  eo.steps = config.train.episode_length;
  eo.seed = config.seed;
  eo.batch_size = config.train.eval_batch_size;
  eo.threads = config.threads;
  result.random = evaluate(stage1, val, eo);
  eo.mode = GazeMode::Learned;
  eo.policy = &result.policy;
  result.learned = evaluate(stage1, val, eo);
  result.summary = {{"table", "policy"},
                    {"rows", step_table("Pretrain Rand Policy", result.random)},
                    {"policy_rows", step_table("With Policy", result.learned)}};
  log.write({{"phase", "eval"}, {"random", result.random.to_json()}, {"learned", result.learned.to_json()}});
  return result;
}

Model load_model(const RunConfig& config, const fs::path& path) {
  Model model(config.model, derive_seed({config.seed, kModelTag}));
  ParameterList params = model.parameters();
  restore(load_checkpoint(path), params, {"encoder.", "head."});
  return model;
}

GazePolicy load_policy(const RunConfig& config, const fs::path& path) {
  GazePolicy policy(config.policy, config.model.dim, derive_seed({config.seed, kPolicyTag}));
  ParameterList params = policy.parameters();
  restore(load_checkpoint(path), params, {"policy."});
  return policy;
}

nlohmann::json run_pretrain(const RunConfig& config) {
  config.validate();
  RunDir run(config, "pretrain");
  const DataSplits splits = make_splits(config);
  const TrainResult r = pretrain_stage1(config, *splits.train, *splits.val, run.log, run.dir / "stage1.fve");
  nlohmann::json s = {{"table", "stage1"},
                      {"rows", step_table("Pretrain Rand Policy", r.val)},
                      {"optimizer_steps", r.steps},
                      {"final_batch_loss", r.batch_losses.empty() ? 0.0 : r.batch_losses.back()}};
  run.log.write({{"phase", "summary"}, {"summary", s}});
  run.summary(s);
  return s;
}

nlohmann::json run_shuffled(const RunConfig& config) {
  config.validate();
  RunDir run(config, "shuffled-vit");
  const DataSplits splits = make_splits(config);
  const ShuffledReport r = shuffled_vit_experiment(config, *splits.train, *splits.val, run.log, run.dir);
  run.summary(r.summary);
  return r.summary;
}

nlohmann::json run_baseline(const RunConfig& config) {
  config.validate();
  RunDir run(config, "baseline");
  const DataSplits splits = make_splits(config);
  const TrainResult r = train_vit_baseline(config, *splits.train, *splits.val, run.log, run.dir / "baseline.fve");
  nlohmann::json s = {{"table", "baseline"}, {"ViT", {{"top1", r.val.top1[0]}, {"top5", r.val.top5[0]}}}};
  run.log.write({{"phase", "summary"}, {"summary", s}});
  run.summary(s);
  return s;
}

nlohmann::json run_train_policy(const RunConfig& config) {
  config.validate();
  if (config.checkpoint.empty()) throw ConfigError("train-policy needs run.checkpoint (a stage-1 checkpoint)");
  RunDir run(config, "train-policy");
  const DataSplits splits = make_splits(config);
  const Model model = load_model(config, config.checkpoint);
  Stage2Result r = train_stage2(config, model, *splits.train, *splits.val, run.log);
  ParameterList all = model.parameters();
  for (const auto& p : r.policy.parameters()) all.push_back(p);
  save_checkpoint(all, run.dir / "policy.fve", "{\"phase\":\"stage2\"}");
  r.summary["outer_steps"] = r.outer_steps;
  r.summary["encoder_unchanged"] = r.encoder_unchanged;
  run.log.write({{"phase", "summary"}, {"summary", r.summary}});
  run.summary(r.summary);
  return r.summary;
}

nlohmann::json run_eval(const RunConfig& config) {
  config.validate();
  if (config.checkpoint.empty()) throw ConfigError("eval needs run.checkpoint");
  RunDir run(config, "eval");
  const DataSplits splits = make_splits(config);
  const Model model = load_model(config, config.checkpoint);
  EvalOptions eo;
  eo.steps = config.train.episode_length;
  eo.mode = parse_gaze_mode(config.eval.policy);
  eo.seed = config.seed;
  eo.batch_size = config.train.eval_batch_size;
  eo.threads = config.threads;
  std::optional<GazePolicy> policy;
  if (eo.mode == GazeMode::Learned) {
    const fs::path p = config.policy_checkpoint.empty() ? fs::path(config.checkpoint) : fs::path(config.policy_checkpoint);
    policy = load_policy(config, p);
    eo.policy = &*policy;
  }
  if (eo.mode == GazeMode::Fixed) eo.centers = parse_centers(config.eval.centers);
  const StepMetrics m = evaluate(model, *splits.val, eo);
  const std::string prefix = eo.mode == GazeMode::Learned ? "With Policy"
                             : eo.mode == GazeMode::Fixed ? "Fixed Centers"
                                                          : "Pretrain Rand Policy";
  nlohmann::json s = {{"table", "eval"}, {"policy", config.eval.policy}, {"rows", step_table(prefix, m)}};
  run.log.write({{"phase", "eval"}, {"metrics", m.to_json()}});
  run.summary(s);
  return s;
}

}  // namespace FOVEA_PRECISION_NS
}  // namespace fovea

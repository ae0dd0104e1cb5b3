#include "fovea/grpo.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include "fovea/error.hpp"
#include "fovea/random.hpp"

namespace fovea {
inline namespace FOVEA_PRECISION_NS {

namespace {

std::vector<double> to_doubles(std::span<const real> v) { return {v.begin(), v.end()}; }

int argmax(std::span<const double> v) {
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

std::vector<PatchSet> extract_rows(std::span<const Image> images, int group_size,
                                   const std::vector<GazeCenter>& centers, int patch_size,
                                   const ZoomSchedule& schedule, int threads) {
  std::vector<PatchSet> sets(centers.size());
  auto run = [&](std::size_t begin, std::size_t end) {
    for (std::size_t r = begin; r < end; ++r) {
      sets[r] = extract_multizoom(images[r / group_size], centers[r], patch_size, schedule);
    }
  };
  const std::size_t workers = std::min<std::size_t>(std::max(threads, 1), centers.size());
  if (workers <= 1) {
    run(0, centers.size());
    return sets;
  }
  {
    std::vector<std::jthread> pool;
    const std::size_t chunk = (centers.size() + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
      const std::size_t begin = w * chunk, end = std::min(centers.size(), begin + chunk);
      if (begin < end) pool.emplace_back(run, begin, end);
    }
  }
  return sets;
}

}  // namespace

std::vector<std::vector<Trace>> rollout_batch(const Model& model, const GazePolicy& policy,
                                              std::span<const Image> images, std::span<const int> labels, int steps,
                                              int group_size, std::uint64_t seed, int threads) {
  if (steps < 1) throw ValidationError("rollout: episode length must be >= 1");
  if (group_size < 1) throw ValidationError("rollout: group size must be >= 1");
  if (images.size() != labels.size() || images.empty()) throw ValidationError("rollout: images/labels mismatch");
  NoGradGuard no_grad;
  const EncoderConfig& cfg = model.config();
  const ZoomSchedule schedule = zoom_schedule(cfg.patches, cfg.max_zoom);
  const int b = static_cast<int>(images.size());
  const int rows = b * group_size;

  std::vector<std::mt19937_64> rngs;
  rngs.reserve(rows);
  std::vector<int> row_labels(rows);
  for (int i = 0; i < b; ++i) {
    for (int g = 0; g < group_size; ++g) {
      rngs.push_back(make_rng({seed, static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(g)}));
      row_labels[i * group_size + g] = labels[i];
    }
  }
  const Tensor targets = target_tensor(one_hot(row_labels, cfg.classes));
  std::vector<Trace> flat(rows);

  auto record = [&](const Tensor& state, const Tensor& logits) {
    const Tensor ce = cross_entropy(logits, targets);
    const int nd = cfg.state_size * cfg.dim;
    const auto sv = state.data();
    const auto lv = logits.data();
    for (int r = 0; r < rows; ++r) {
      flat[r].states.emplace_back(sv.begin() + static_cast<std::ptrdiff_t>(r) * nd,
                                  sv.begin() + static_cast<std::ptrdiff_t>(r + 1) * nd);
      flat[r].logits.push_back(to_doubles(lv.subspan(static_cast<std::size_t>(r) * cfg.classes, cfg.classes)));
      flat[r].losses.push_back(static_cast<double>(ce.data()[r]));
    }
  };

  Tensor state = model.encoder.initial_state(rows);
  record(state, model.head(state));
  for (int t = 0; t < steps; ++t) {
    const MixtureParams params = policy.forward(state);
    const std::vector<MixtureValues> values = mixture_values(params, policy.sigma());
    std::vector<GazeCenter> centers(rows);
    std::vector<real> action_values(static_cast<std::size_t>(rows) * 2);
    for (int r = 0; r < rows; ++r) {
      centers[r] = sample_action(values[r], rngs[r]);
      action_values[2 * r] = static_cast<real>(centers[r].x);
      action_values[2 * r + 1] = static_cast<real>(centers[r].y);
    }
    const Tensor lp = log_prob(params, Tensor::from({rows, 2}, std::move(action_values)), policy.sigma());
    for (int r = 0; r < rows; ++r) {
      flat[r].actions.push_back(centers[r]);
      flat[r].old_log_probs.push_back(static_cast<double>(lp.data()[r]));
    }
    const auto sets = extract_rows(images, group_size, centers, cfg.patch_size, schedule, threads);
    state = model.encoder.step(state, model.encoder.tokenize(make_glimpse(sets)));
    record(state, model.head(state));
  }

  std::vector<std::vector<Trace>> out(b);
  for (int i = 0; i < b; ++i) {
    out[i].assign(std::make_move_iterator(flat.begin() + i * group_size),
                  std::make_move_iterator(flat.begin() + (i + 1) * group_size));
  }
  return out;
}

std::vector<Trace> rollout_group(const Model& model, const GazePolicy& policy, const Image& image, int label,
                                 int steps, int group_size, std::uint64_t seed, int threads) {
  const int labels[1] = {label};
  return std::move(rollout_batch(model, policy, std::span<const Image>(&image, 1), labels, steps, group_size, seed,
                                 threads)[0]);
}

Matrix advantage_terminal(std::span<const Trace> traces) {
  Matrix out;
  for (const Trace& tr : traces) {
    if (tr.losses.size() != tr.actions.size() + 1) throw ValidationError("advantage: incomplete trace");
    out.emplace_back(tr.actions.size(), -tr.losses.back());
  }
  return out;
}

double improvement_ratio(double loss_before, double loss_after) {
  const double total = loss_before + loss_after;
  if (total <= 0.0) return 0.0;
  return (loss_before - loss_after) / total;
}

Matrix advantage_improvement(std::span<const Trace> traces) {
  Matrix out;
  for (const Trace& tr : traces) {
    if (tr.losses.size() != tr.actions.size() + 1) throw ValidationError("advantage: incomplete trace");
    std::vector<double> row(tr.actions.size());
    for (std::size_t t = 0; t < row.size(); ++t) row[t] = improvement_ratio(tr.losses[t], tr.losses[t + 1]);
    out.push_back(std::move(row));
  }
  return out;
}

Matrix group_normalize(const Matrix& alpha) {
  if (alpha.size() < 2) throw ValidationError("group_normalize: need at least 2 traces, got " +
                                              std::to_string(alpha.size()));
  const std::size_t g = alpha.size(), n = alpha[0].size();
  for (const auto& row : alpha) {
    if (row.size() != n) throw ShapeError("group_normalize: ragged advantage table");
  }
  Matrix out(g, std::vector<double>(n, 0.0));
  for (std::size_t t = 0; t < n; ++t) {
    double mu = 0.0;
    for (std::size_t i = 0; i < g; ++i) mu += alpha[i][t];
    mu /= static_cast<double>(g);
    double var = 0.0;
    for (std::size_t i = 0; i < g; ++i) var += (alpha[i][t] - mu) * (alpha[i][t] - mu);
    const double sd = std::sqrt(var / static_cast<double>(g));
    if (sd < 1e-8) continue;
    for (std::size_t i = 0; i < g; ++i) out[i][t] = (alpha[i][t] - mu) / sd;
  }
  return out;
}

Tensor grpo_objective(const Tensor& new_log_probs, const Tensor& old_log_probs, const Tensor& advantages,
                      double clip_eps, ObjectiveStats* stats) {
  if (new_log_probs.dim() != 2 || old_log_probs.shape() != new_log_probs.shape() ||
      advantages.shape() != new_log_probs.shape()) {
    throw ShapeError("grpo_objective: operands must share a [rows,steps] shape, got " +
                     shape_str(new_log_probs.shape()) + ", " + shape_str(old_log_probs.shape()) + ", " +
                     shape_str(advantages.shape()));
  }
  if (!(clip_eps > 0.0 && clip_eps < 1.0)) throw ValidationError("grpo_objective: clip epsilon must lie in (0,1)");
  const Tensor old_c = old_log_probs.detach();
  const Tensor adv = advantages.detach();
  const Tensor ratio = exp(sub(new_log_probs, old_c));
  const int steps = new_log_probs.size(1);
  const auto rv = ratio.data();
  for (std::size_t i = 0; i < rv.size(); ++i) {
    if (!std::isfinite(static_cast<double>(rv[i]))) {
      throw NumericError("grpo_objective: non-finite ratio at trace " + std::to_string(i / steps) + ", step " +
                         std::to_string(i % steps));
    }
  }
  const Tensor clipped = clamp(ratio, static_cast<real>(1.0 - clip_eps), static_cast<real>(1.0 + clip_eps));
  const Tensor unclipped_term = mul(ratio, adv);
  const Tensor clipped_term = mul(clipped, adv);
  const Tensor surrogate = mean(minimum(unclipped_term, clipped_term));
  if (stats) {
    const auto u = unclipped_term.data();
    const auto c = clipped_term.data();
    double ratio_sum = 0.0;
    std::size_t clipped_count = 0;
    for (std::size_t i = 0; i < rv.size(); ++i) {
      ratio_sum += rv[i];
      if (c[i] < u[i]) ++clipped_count;
    }
    stats->objective = static_cast<double>(surrogate.item());
    stats->mean_ratio = ratio_sum / static_cast<double>(rv.size());
    stats->clip_fraction = static_cast<double>(clipped_count) / static_cast<double>(rv.size());
  }
  return mul_scalar(surrogate, real(-1));
}

int grpo_train(const Model& model, GazePolicy& policy, const ImageSource& source, const GrpoOptions& options,
               const std::function<void(const GrpoRecord&)>& on_record) {
  const GrpoConfig& gc = options.grpo;
  const EncoderConfig& cfg = model.config();
  const int n = options.steps, g = gc.group_size;
  AdamWConfig adam;
  adam.weight_decay = gc.weight_decay;
  AdamW opt(policy.parameters(), adam);
  const int nd = cfg.state_size * cfg.dim;

  int outer = 0;
  for (int epoch = 0; epoch < gc.epochs; ++epoch) {
    auto order_rng = make_rng({options.seed, 0x67727030ULL, static_cast<std::uint64_t>(epoch)});
    const std::vector<std::size_t> order = permutation(source.size(), order_rng);
    for (std::size_t start = 0; start < order.size(); start += gc.batch_size) {
      if (gc.max_outer_steps > 0 && outer >= gc.max_outer_steps) return outer;
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(gc.batch_size));
      std::vector<Image> images;
      std::vector<int> labels;
      for (std::size_t j = start; j < end; ++j) {
        LabeledImage item = source.get(order[j], static_cast<std::uint64_t>(epoch));
        images.push_back(std::move(item.image));
        labels.push_back(item.label);
      }
      const auto groups = rollout_batch(model, policy, images, labels, n, g,
                                        derive_seed({options.seed, 0x726f6c6cULL, static_cast<std::uint64_t>(outer)}),
                                        options.threads);

      const int rows = static_cast<int>(images.size()) * g;
      std::vector<real> states, actions, old_lp, adv;
      states.reserve(static_cast<std::size_t>(rows) * n * nd);
      GrpoRecord record;
      record.outer_step = outer;
      record.per_step_accuracy.assign(n, 0.0);
      for (std::size_t i = 0; i < groups.size(); ++i) {
        const Matrix raw = gc.advantage == "terminal" ? advantage_terminal(groups[i]) : advantage_improvement(groups[i]);
        const Matrix norm = group_normalize(raw);
        for (int k = 0; k < g; ++k) {
          const Trace& tr = groups[i][k];
          for (int t = 0; t < n; ++t) {
            states.insert(states.end(), tr.states[t].begin(), tr.states[t].end());
            actions.push_back(static_cast<real>(tr.actions[t].x));
            actions.push_back(static_cast<real>(tr.actions[t].y));
            old_lp.push_back(static_cast<real>(tr.old_log_probs[t]));
            adv.push_back(static_cast<real>(norm[k][t]));
            if (argmax(tr.logits[t + 1]) == labels[i]) record.per_step_accuracy[t] += 1.0;
          }
        }
      }
      for (double& a : record.per_step_accuracy) a /= rows;

      const Tensor state_t = Tensor::from({rows * n, cfg.state_size, cfg.dim}, std::move(states));
      const Tensor action_t = Tensor::from({rows * n, 2}, std::move(actions));
      const Tensor old_t = Tensor::from({rows, n}, std::move(old_lp));
      const Tensor adv_t = Tensor::from({rows, n}, std::move(adv));
      if (gc.inner_epochs == 0 && on_record) on_record(record);
      for (int inner = 0; inner < gc.inner_epochs; ++inner) {
        opt.zero_grad();
        const MixtureParams params = policy.forward(state_t);
        const Tensor lp = reshape(log_prob(params, action_t, policy.sigma()), {rows, n});
        ObjectiveStats stats;
        const Tensor loss = grpo_objective(lp, old_t, adv_t, gc.clip_eps, &stats);
        if (!std::isfinite(static_cast<double>(loss.item()))) {
          throw NumericError("grpo: non-finite objective at outer step " + std::to_string(outer) + ", inner epoch " +
                             std::to_string(inner));
        }
        loss.backward();
        opt.step(gc.lr);
        record.inner_epoch = inner;
        record.stats = stats;
        if (on_record) on_record(record);
      }
      ++outer;
    }
  }
  return outer;
}

}  // namespace FOVEA_PRECISION_NS
}  // namespace fovea

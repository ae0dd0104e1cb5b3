#include "fovea/model.hpp"

#include <algorithm>
#include <cmath>

#include "fovea/error.hpp"
#include "fovea/random.hpp"

namespace fovea {
inline namespace FOVEA_PRECISION_NS {

Block::Block(int dim, int heads, int hidden, std::mt19937_64& rng)
    : norm1(dim), attn(dim, heads, rng), norm2(dim), mlp(dim, hidden, dim, rng) {}

Tensor Block::operator()(const Tensor& x, const Tensor& skip) const {
  Tensor h = norm1(add(x, skip));
  Tensor y = add(x, attn(h, h));
  return add(y, mlp(norm2(y)));
}

void Block::collect(const std::string& prefix, ParameterList& out) const {
  norm1.collect(prefix + ".norm1", out);
  attn.collect(prefix + ".attn", out);
  norm2.collect(prefix + ".norm2", out);
  mlp.collect(prefix + ".mlp", out);
}

Glimpse make_glimpse(std::span<const PatchSet> sets) {
  if (sets.empty()) throw ValidationError("make_glimpse: no patch sets");
  const int m = sets[0].count();
  const int p = sets[0].patch_size;
  const int f = p * p * 3;
  const int b = static_cast<int>(sets.size());
  std::vector<real> patches(static_cast<std::size_t>(b) * m * f);
  std::vector<real> coords(static_cast<std::size_t>(b) * m * 3);
  for (int i = 0; i < b; ++i) {
    const PatchSet& s = sets[i];
    if (s.count() != m || s.patch_size != p) throw ShapeError("make_glimpse: patch sets differ in shape");
    std::transform(s.patches.begin(), s.patches.end(), patches.begin() + static_cast<std::ptrdiff_t>(i) * m * f,
                   [](float v) { return static_cast<real>(v); });
    for (int j = 0; j < m; ++j) {
      real* c = &coords[(static_cast<std::size_t>(i) * m + j) * 3];
      c[0] = static_cast<real>(s.center.x);
      c[1] = static_cast<real>(s.center.y);
      c[2] = static_cast<real>(s.z_norm[j]);
    }
  }
  return {Tensor::from({b, m, f}, std::move(patches)), Tensor::from({b, m, 3}, std::move(coords))};
}

double grid_z_norm(int height, int width, int patch_size, double max_zoom) {
  if (max_zoom <= 0.0) return 0.0;
  const double z = std::log2(static_cast<double>(std::min(height, width)) / patch_size);
  return std::clamp(z / max_zoom, 0.0, 1.0);
}

Glimpse make_grid_glimpse(std::span<const Image> images, int patch_size, const std::vector<std::vector<int>>& tiles,
                          double z_norm) {
  if (images.empty() || tiles.size() != images.size()) throw ValidationError("make_grid_glimpse: bad batch");
  const int b = static_cast<int>(images.size());
  const int m = static_cast<int>(tiles[0].size());
  const int f = patch_size * patch_size * 3;
  std::vector<real> patches(static_cast<std::size_t>(b) * m * f);
  std::vector<real> coords(static_cast<std::size_t>(b) * m * 3);
  for (int i = 0; i < b; ++i) {
    if (static_cast<int>(tiles[i].size()) != m) throw ShapeError("make_grid_glimpse: ragged tile lists");
    const std::vector<GridPatch> grid = extract_vit_grid(images[i], patch_size);
    const int cols = images[i].width() / patch_size, rows = images[i].height() / patch_size;
    for (int j = 0; j < m; ++j) {
      const int t = tiles[i][j];
      if (t < 0 || t >= static_cast<int>(grid.size())) throw ValidationError("make_grid_glimpse: tile out of range");
      const GridPatch& g = grid[t];
      std::transform(g.pixels.begin(), g.pixels.end(),
                     patches.begin() + (static_cast<std::ptrdiff_t>(i) * m + j) * f,
                     [](float v) { return static_cast<real>(v); });
      real* c = &coords[(static_cast<std::size_t>(i) * m + j) * 3];
      c[0] = static_cast<real>((g.col + 0.5) / cols);
      c[1] = static_cast<real>((g.row + 0.5) / rows);
      c[2] = static_cast<real>(z_norm);
    }
  }
  return {Tensor::from({b, m, f}, std::move(patches)), Tensor::from({b, m, 3}, std::move(coords))};
}

GlimpseEncoder::GlimpseEncoder(const EncoderConfig& config, std::mt19937_64& rng) : config_(config) {
  config.validate();
  prompt = trunc_normal({config.state_size, config.dim}, 0.02, rng);
  patch_embed = Linear(config.patch_features(), config.dim, rng);
  pos_mlp = Mlp(3, config.pos_hidden, config.dim, rng);
  for (int l = 0; l < config.layers; ++l) {
    blocks.emplace_back(config.dim, config.heads, config.dim * config.mlp_ratio, rng);
  }
}

Tensor GlimpseEncoder::initial_state(int batch) const {
  return add(Tensor::zeros({batch, config_.state_size, config_.dim}), prompt);
}

Tensor GlimpseEncoder::pos_embed(const Tensor& coords) const {
  if (coords.shape().empty() || coords.shape().back() != 3) {
    throw ShapeError("pos_embed: expected [..,3] coordinates, got " + shape_str(coords.shape()));
  }
  for (real v : coords.data()) {
    if (!(v >= real(0) && v <= real(1))) {
      throw ValidationError("pos_embed: coordinate " + std::to_string(static_cast<double>(v)) + " outside [0,1]");
    }
  }
  return pos_mlp(coords);
}

Tensor GlimpseEncoder::tokenize(const Glimpse& glimpse) const {
  const Shape& ps = glimpse.patches.shape();
  if (ps.size() != 3 || ps[2] != config_.patch_features()) {
    throw ShapeError("tokenize: expected [B,M," + std::to_string(config_.patch_features()) + "] patches, got " +
                     shape_str(ps));
  }
  const Shape& cs = glimpse.coords.shape();
  if (cs.size() != 3 || cs[0] != ps[0] || cs[1] != ps[1]) {
    throw ShapeError("tokenize: coordinates " + shape_str(cs) + " do not match patches " + shape_str(ps));
  }
  return add(patch_embed(glimpse.patches), pos_embed(glimpse.coords));
}

Tensor GlimpseEncoder::step(const Tensor& state, const Tensor& tokens) const {
  const Shape& ss = state.shape();
  const Shape& ts = tokens.shape();
  if (ss.size() != 3 || ss[1] != config_.state_size || ss[2] != config_.dim) {
    throw ShapeError("encoder step: state must be [B," + std::to_string(config_.state_size) + "," +
                     std::to_string(config_.dim) + "], got " + shape_str(ss));
  }
  if (ts.size() != 3 || ts[0] != ss[0] || ts[2] != config_.dim) {
    throw ShapeError("encoder step: tokens " + shape_str(ts) + " do not match state " + shape_str(ss));
  }
  if (blocks.empty()) return state;
  Tensor skip = concat({state, Tensor::zeros({ts[0], ts[1], ts[2]})}, 1);
  Tensor x = concat({state, tokens}, 1);
  for (const Block& block : blocks) x = block(x, skip);
  return slice(x, 1, 0, config_.state_size);
}

void GlimpseEncoder::collect(const std::string& prefix, ParameterList& out) const {
  out.push_back({prefix + ".prompt", prompt});
  patch_embed.collect(prefix + ".patch_embed", out);
  pos_mlp.collect(prefix + ".pos", out);
  for (std::size_t l = 0; l < blocks.size(); ++l) blocks[l].collect(prefix + ".blocks." + std::to_string(l), out);
}

TaskHead::TaskHead(const EncoderConfig& config, std::mt19937_64& rng)
    : pool(Tensor::full({config.state_size}, real(1) / static_cast<real>(config.state_size), true)),
      norm(config.dim),
      mlp(config.dim, config.dim, config.classes, rng) {}

Tensor TaskHead::operator()(const Tensor& state) const {
  const int n = pool.size(0);
  if (state.dim() != 3 || state.size(1) != n) {
    throw ShapeError("task head: expected [B," + std::to_string(n) + ",D] state, got " + shape_str(state.shape()));
  }
  Tensor pooled = sum(mul(state, reshape(pool, {n, 1})), 1);
  return mlp(norm(pooled));
}

void TaskHead::collect(const std::string& prefix, ParameterList& out) const {
  out.push_back({prefix + ".pool", pool});
  norm.collect(prefix + ".norm", out);
  mlp.collect(prefix + ".mlp", out);
}

Model::Model(const EncoderConfig& config, std::uint64_t seed) {
  auto rng = make_rng({seed, 0x656e636f646572ULL});
  encoder = GlimpseEncoder(config, rng);
  head = TaskHead(config, rng);
}

ParameterList Model::parameters() const {
  ParameterList out;
  encoder.collect("encoder", out);
  head.collect("head", out);
  return out;
}

std::vector<StepOutput> run_episode(const Model& model, int batch, int steps, const GlimpseProvider& provider) {
  if (steps < 1) throw ValidationError("run_episode: need at least one step");
  std::vector<StepOutput> out;
  out.reserve(static_cast<std::size_t>(steps));
  Tensor state = model.encoder.initial_state(batch);
  for (int t = 0; t < steps; ++t) {
    // The prompt is a parameter, not an iteration output, so it stays attached.
    if (t > 0) state = state.detach();
    Tensor tokens = model.encoder.tokenize(provider(t, state));
    state = model.encoder.step(state, tokens);
    out.push_back({state, model.head(state)});
  }
  return out;
}

std::vector<StepOutput> run_episode(const Model& model, std::span<const Image> images,
                                    const std::vector<std::vector<GazeCenter>>& centers, int threads) {
  const EncoderConfig& c = model.config();
  const ZoomSchedule schedule = zoom_schedule(c.patches, c.max_zoom);
  for (const auto& step : centers) {
    if (step.size() != images.size()) throw ValidationError("run_episode: one centre per image per step required");
  }
  return run_episode(model, static_cast<int>(images.size()), static_cast<int>(centers.size()),
                     [&](int t, const Tensor&) {
                       auto sets = extract_multizoom_batch(images, centers[t], c.patch_size, schedule, threads);
                       return make_glimpse(sets);
                     });
}

Tensor vit_baseline_forward(const Model& model, std::span<const Image> images) {
  if (images.empty()) throw ValidationError("vit_baseline_forward: empty batch");
  const EncoderConfig& c = model.config();
  const int h = images[0].height(), w = images[0].width();
  for (const Image& im : images) {
    if (im.height() != h || im.width() != w) throw ValidationError("vit_baseline_forward: images differ in size");
  }
  const int count = (h / c.patch_size) * (w / c.patch_size);
  std::vector<int> all(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) all[i] = i;
  std::vector<std::vector<int>> tiles(images.size(), all);
  Glimpse g = make_grid_glimpse(images, c.patch_size, tiles, grid_z_norm(h, w, c.patch_size, c.max_zoom));
  Tensor state = model.encoder.step(model.encoder.initial_state(static_cast<int>(images.size())),
                                    model.encoder.tokenize(g));
  return model.head(state);
}

Tensor classification_loss(const Tensor& logits, const Tensor& targets) { return mean(cross_entropy(logits, targets)); }

Tensor target_tensor(std::span<const std::vector<double>> targets) {
  if (targets.empty()) throw ValidationError("target_tensor: empty batch");
  const int k = static_cast<int>(targets[0].size());
  std::vector<real> values;
  values.reserve(targets.size() * k);
  for (const auto& row : targets) {
    if (static_cast<int>(row.size()) != k) throw ShapeError("target_tensor: ragged targets");
    for (double v : row) values.push_back(static_cast<real>(v));
  }
  return Tensor::from({static_cast<int>(targets.size()), k}, std::move(values));
}

}  // namespace FOVEA_PRECISION_NS
}  // namespace fovea

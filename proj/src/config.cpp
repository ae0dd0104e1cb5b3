#include "fovea/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <sstream>

#include "fovea/error.hpp"

namespace fovea {

namespace fs = std::filesystem;

void EncoderConfig::validate() const {
  if (layers < 0) throw ConfigError("model.layers must be >= 0");
  if (dim < 1 || heads < 1 || dim % heads != 0) throw ConfigError("model.dim must be a positive multiple of model.heads");
  if (state_size < 1) throw ConfigError("model.state_size must be >= 1");
  if (patch_size < 1) throw ConfigError("model.patch_size must be >= 1");
  if (patches < 1) throw ConfigError("model.patches must be >= 1");
  if (classes < 2) throw ConfigError("model.classes must be >= 2");
  if (mlp_ratio < 1) throw ConfigError("model.mlp_ratio must be >= 1");
  if (pos_hidden < 1) throw ConfigError("model.pos_hidden must be >= 1");
  if (!(max_zoom >= 0.0)) throw ConfigError("model.max_zoom must be >= 0");
}

void PolicyConfig::validate() const {
  if (components < 1) throw ConfigError("policy.components must be >= 1");
  if (!(sigma > 0.0)) throw ConfigError("policy.sigma must be > 0");
  if (dim < 1 || heads < 1 || dim % heads != 0) throw ConfigError("policy.dim must be a positive multiple of policy.heads");
}

void RunConfig::validate() const {
  model.validate();
  policy.validate();
  auto need_file = [](const std::string& key, const std::string& p) {
    if (p.empty()) throw ConfigError(key + " must be set");
    if (!fs::exists(p)) throw ConfigError(key + ": file '" + p + "' does not exist");
  };
  if (dataset.kind == "cluttered" || dataset.kind == "digits") {
    need_file("dataset.images", dataset.images);
    need_file("dataset.labels", dataset.labels);
  } else if (dataset.kind == "manifest") {
    need_file("dataset.manifest", dataset.manifest);
    if (!dataset.val_manifest.empty()) need_file("dataset.val_manifest", dataset.val_manifest);
  } else {
    throw ConfigError("dataset.kind must be one of cluttered|digits|manifest, got '" + dataset.kind + "'");
  }
  if (dataset.val_count < 0 || dataset.train_count < 0) throw ConfigError("dataset counts must be >= 0");
  if (dataset.kind == "cluttered" && dataset.canvas < 1) throw ConfigError("dataset.canvas must be >= 1");
  if (train.episode_length < 1) throw ConfigError("train.episode_length must be >= 1");
  if (train.epochs < 0) throw ConfigError("train.epochs must be >= 0");
  if (train.batch_size < 1 || train.eval_batch_size < 1) throw ConfigError("batch sizes must be >= 1");
  if (!(train.lr >= 0.0)) throw ConfigError("train.lr must be >= 0");
  if (!(train.warmup_fraction >= 0.0 && train.warmup_fraction < 1.0)) {
    throw ConfigError("train.warmup_fraction must lie in [0,1)");
  }
  if (!(train.mixup_alpha >= 0.0)) throw ConfigError("train.mixup_alpha must be >= 0");
  if (grpo.group_size < 2) throw ConfigError("grpo.group_size must be >= 2");
  if (grpo.inner_epochs < 0 || grpo.epochs < 0 || grpo.batch_size < 1) throw ConfigError("invalid grpo schedule");
  if (!(grpo.clip_eps > 0.0 && grpo.clip_eps < 1.0)) throw ConfigError("grpo.clip_eps must lie in (0,1)");
  if (grpo.advantage != "improvement" && grpo.advantage != "terminal") {
    throw ConfigError("grpo.advantage must be improvement|terminal, got '" + grpo.advantage + "'");
  }
  if (shuffled.groups < 1) throw ConfigError("shuffled.groups must be >= 1");
  if (eval.policy != "random" && eval.policy != "learned" && eval.policy != "fixed") {
    throw ConfigError("eval.policy must be random|learned|fixed, got '" + eval.policy + "'");
  }
  if (threads < 1) throw ConfigError("threads must be >= 1");
}

namespace {

struct Binding {
  ConfigKey key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

long long parse_int(const std::string& key, const std::string& v) {
  long long out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError(key + ": expected an integer, got '" + v + "'");
  }
  return out;
}

double parse_real(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a real number, got '" + v + "'");
  }
}

// Shortest text that parses back to the same double.
std::string format_real(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

template <class T>
Binding int_key(std::string name, std::string help, T RunConfig::*section, int T::*field) {
  return {{name, "int", std::move(help)},
          [name, section, field](RunConfig& c, const std::string& v) {
            const long long x = parse_int(name, v);
            if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max()) {
              throw ConfigError(name + ": value out of range");
            }
            (c.*section).*field = static_cast<int>(x);
          },
          [section, field](const RunConfig& c) { return std::to_string((c.*section).*field); }};
}

template <class T>
Binding real_key(std::string name, std::string help, T RunConfig::*section, double T::*field) {
  return {{name, "real", std::move(help)},
          [name, section, field](RunConfig& c, const std::string& v) { (c.*section).*field = parse_real(name, v); },
          [section, field](const RunConfig& c) { return format_real((c.*section).*field); }};
}

template <class T>
Binding str_key(std::string name, std::string help, T RunConfig::*section, std::string T::*field) {
  return {{name, "string", std::move(help)},
          [section, field](RunConfig& c, const std::string& v) { (c.*section).*field = v; },
          [section, field](const RunConfig& c) { return (c.*section).*field; }};
}

const std::vector<Binding>& bindings() {
  static const std::vector<Binding> table = [] {
    using R = RunConfig;
    std::vector<Binding> b;
    b.push_back(str_key("dataset.kind", "cluttered | digits | manifest", &R::dataset, &DatasetConfig::kind));
    b.push_back(str_key("dataset.images", "IDX image file", &R::dataset, &DatasetConfig::images));
    b.push_back(str_key("dataset.labels", "IDX label file", &R::dataset, &DatasetConfig::labels));
    b.push_back(str_key("dataset.manifest", "PPM manifest (path label per line)", &R::dataset, &DatasetConfig::manifest));
    b.push_back(str_key("dataset.val_manifest", "optional validation manifest", &R::dataset,
                        &DatasetConfig::val_manifest));
    b.push_back(int_key("dataset.val_count", "validation items split off the source", &R::dataset,
                        &DatasetConfig::val_count));
    b.push_back(int_key("dataset.train_count", "training items (0 = all remaining)", &R::dataset,
                        &DatasetConfig::train_count));
    b.push_back(int_key("dataset.canvas", "cluttered canvas side in pixels", &R::dataset, &DatasetConfig::canvas));
    b.push_back(int_key("dataset.distractors", "distractor crops per canvas", &R::dataset,
                        &DatasetConfig::distractors));
    b.push_back(int_key("dataset.distractor_size", "distractor crop side", &R::dataset,
                        &DatasetConfig::distractor_size));
    b.push_back(int_key("dataset.image_size", "square resize for digits/manifest (0 = native)", &R::dataset,
                        &DatasetConfig::image_size));
    b.push_back(int_key("model.layers", "transformer blocks", &R::model, &EncoderConfig::layers));
    b.push_back(int_key("model.dim", "token width D", &R::model, &EncoderConfig::dim));
    b.push_back(int_key("model.heads", "attention heads", &R::model, &EncoderConfig::heads));
    b.push_back(int_key("model.state_size", "state vectors N", &R::model, &EncoderConfig::state_size));
    b.push_back(int_key("model.patch_size", "patch side P", &R::model, &EncoderConfig::patch_size));
    b.push_back(int_key("model.patches", "patches per glimpse M", &R::model, &EncoderConfig::patches));
    b.push_back(int_key("model.classes", "classes K", &R::model, &EncoderConfig::classes));
    b.push_back(int_key("model.mlp_ratio", "MLP hidden width / D", &R::model, &EncoderConfig::mlp_ratio));
    b.push_back(int_key("model.pos_hidden", "position-embedding MLP width", &R::model, &EncoderConfig::pos_hidden));
    b.push_back(real_key("model.max_zoom", "largest zoom level", &R::model, &EncoderConfig::max_zoom));
    b.push_back(int_key("policy.components", "Gaussian mixture components", &R::policy, &PolicyConfig::components));
    b.push_back(real_key("policy.sigma", "fixed standard deviation", &R::policy, &PolicyConfig::sigma));
    b.push_back(int_key("policy.dim", "policy transformer width", &R::policy, &PolicyConfig::dim));
    b.push_back(int_key("policy.heads", "policy attention heads", &R::policy, &PolicyConfig::heads));
    b.push_back(int_key("train.episode_length", "glimpses per episode", &R::train, &TrainConfig::episode_length));
    b.push_back(int_key("train.epochs", "training epochs", &R::train, &TrainConfig::epochs));
    b.push_back(int_key("train.batch_size", "images per step", &R::train, &TrainConfig::batch_size));
    b.push_back(int_key("train.eval_batch_size", "images per evaluation batch", &R::train,
                        &TrainConfig::eval_batch_size));
    b.push_back(int_key("train.max_steps", "optimizer step cap (0 = none)", &R::train, &TrainConfig::max_steps));
    b.push_back(real_key("train.lr", "peak learning rate", &R::train, &TrainConfig::lr));
    b.push_back(real_key("train.warmup_fraction", "fraction of steps in linear warmup", &R::train,
                         &TrainConfig::warmup_fraction));
    b.push_back(real_key("train.weight_decay", "decoupled weight decay", &R::train, &TrainConfig::weight_decay));
    b.push_back(real_key("train.beta1", "Adam beta1", &R::train, &TrainConfig::beta1));
    b.push_back(real_key("train.beta2", "Adam beta2", &R::train, &TrainConfig::beta2));
    b.push_back(real_key("train.eps", "Adam epsilon", &R::train, &TrainConfig::eps));
    b.push_back(real_key("train.mixup_alpha", "MixUp Beta(alpha, alpha); 0 disables", &R::train,
                         &TrainConfig::mixup_alpha));
    b.push_back(real_key("train.grad_clip", "global gradient-norm clip; 0 disables", &R::train,
                         &TrainConfig::grad_clip));
    b.push_back(int_key("train.overfit_batches", "train on this many fixed batches (0 = off)", &R::train,
                        &TrainConfig::overfit_batches));
    b.push_back(int_key("grpo.group_size", "traces per image G", &R::grpo, &GrpoConfig::group_size));
    b.push_back(int_key("grpo.inner_epochs", "optimisation passes per collected batch", &R::grpo,
                        &GrpoConfig::inner_epochs));
    b.push_back(real_key("grpo.clip_eps", "ratio clip epsilon", &R::grpo, &GrpoConfig::clip_eps));
    b.push_back(real_key("grpo.lr", "policy learning rate", &R::grpo, &GrpoConfig::lr));
    b.push_back(real_key("grpo.weight_decay", "policy weight decay", &R::grpo, &GrpoConfig::weight_decay));
    b.push_back(str_key("grpo.advantage", "improvement | terminal", &R::grpo, &GrpoConfig::advantage));
    b.push_back(int_key("grpo.epochs", "passes over the training images", &R::grpo, &GrpoConfig::epochs));
    b.push_back(int_key("grpo.batch_size", "images per outer step", &R::grpo, &GrpoConfig::batch_size));
    b.push_back(int_key("grpo.max_outer_steps", "outer step cap (0 = none)", &R::grpo, &GrpoConfig::max_outer_steps));
    b.push_back(int_key("shuffled.groups", "grid-patch groups (episode length)", &R::shuffled,
                        &ShuffledConfig::groups));
    b.push_back(str_key("eval.policy", "random | learned | fixed", &R::eval, &EvalConfig::policy));
    b.push_back(str_key("eval.centers", "fixed centres x,y;x,y;...", &R::eval, &EvalConfig::centers));
    b.push_back({{"run.seed", "uint", "global seed"},
                 [](RunConfig& c, const std::string& v) {
                   const long long x = parse_int("run.seed", v);
                   if (x < 0) throw ConfigError("run.seed must be >= 0");
                   c.seed = static_cast<std::uint64_t>(x);
                 },
                 [](const RunConfig& c) { return std::to_string(c.seed); }});
    b.push_back({{"run.output_dir", "string", "directory for config echo, metrics and checkpoints"},
                 [](RunConfig& c, const std::string& v) { c.output_dir = v; },
                 [](const RunConfig& c) { return c.output_dir; }});
    b.push_back({{"run.checkpoint", "string", "model checkpoint to load"},
                 [](RunConfig& c, const std::string& v) { c.checkpoint = v; },
                 [](const RunConfig& c) { return c.checkpoint; }});
    b.push_back({{"run.policy_checkpoint", "string", "policy checkpoint to load"},
                 [](RunConfig& c, const std::string& v) { c.policy_checkpoint = v; },
                 [](const RunConfig& c) { return c.policy_checkpoint; }});
    b.push_back({{"run.threads", "int", "worker threads for patch extraction"},
                 [](RunConfig& c, const std::string& v) { c.threads = static_cast<int>(parse_int("run.threads", v)); },
                 [](const RunConfig& c) { return std::to_string(c.threads); }});
    return b;
  }();
  return table;
}

std::size_t edit_distance(const std::string& a, const std::string& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

const Binding& find_binding(const std::string& key) {
  const auto& table = bindings();
  for (const auto& b : table) {
    if (b.key.name == key) return b;
  }
  const Binding* best = &table.front();
  std::size_t best_d = std::numeric_limits<std::size_t>::max();
  for (const auto& b : table) {
    const std::size_t d = edit_distance(key, b.key.name);
    if (d < best_d) {
      best_d = d;
      best = &b;
    }
  }
  throw ConfigError("unknown config key '" + key + "' (did you mean '" + best->key.name + "'?)");
}

void apply_line(RunConfig& config, const std::string& raw, const std::string& where) {
  std::string line = raw;
  const auto hash = line.find('#');
  if (hash != std::string::npos) line.erase(hash);
  line = trim(line);
  if (line.empty()) return;
  const auto eq = line.find('=');
  if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value', got '" + line + "'");
  const std::string key = trim(line.substr(0, eq));
  const std::string value = trim(line.substr(eq + 1));
  try {
    set_config_value(config, key, value);
  } catch (const ConfigError& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> out;
    for (const auto& b : bindings()) out.push_back(b.key);
    return out;
  }();
  return keys;
}

void set_config_value(RunConfig& config, const std::string& key, const std::string& value) {
  find_binding(key).set(config, value);
}

std::string get_config_value(const RunConfig& config, const std::string& key) { return find_binding(key).get(config); }

RunConfig parse_config_text(const std::string& text, const std::vector<std::string>& overrides,
                            const RunConfig& base) {
  RunConfig config = base;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) apply_line(config, line, "line " + std::to_string(++lineno));
  for (const auto& o : overrides) {
    if (o.find('=') == std::string::npos) throw ConfigError("override '" + o + "' is not key=value");
    apply_line(config, o, "override");
  }
  return config;
}

RunConfig parse_config(const fs::path& path, const std::vector<std::string>& overrides, const RunConfig& base) {
  if (path.empty()) return parse_config_text("", overrides, base);
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config_text(ss.str(), overrides, base);
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string to_text(const RunConfig& config) {
  std::ostringstream os;
  for (const auto& b : bindings()) os << b.key.name << " = " << b.get(config) << "\n";
  return os.str();
}

}  // namespace fovea

// foveate: command-line driver for the glimpse encoder experiments.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "fovea/checkpoint.hpp"
#include "fovea/config.hpp"
#include "fovea/data.hpp"
#include "fovea/error.hpp"
#include "fovea/patchify.hpp"
#include "fovea/pipeline.hpp"
#include "fovea/render.hpp"

namespace fs = std::filesystem;
using namespace fovea;

namespace {

struct RunArgs {
  std::string config;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string output;
  std::string checkpoint;
  std::string policy_checkpoint;
};

void add_run_options(CLI::App* cmd, RunArgs& args) {
  cmd->add_option("-c,--config", args.config, "config file of `key = value` lines");
  cmd->add_option("-s,--set", args.overrides, "override a config key (key=value), repeatable");
  cmd->add_option("--seed", args.seed, "run seed (default: run.seed, else FOVEATE_SEED)");
  cmd->add_option("-o,--out", args.output, "output directory (run.output_dir)");
  cmd->add_option("--checkpoint", args.checkpoint, "model checkpoint (run.checkpoint)");
  cmd->add_option("--policy-checkpoint", args.policy_checkpoint, "policy checkpoint (run.policy_checkpoint)");
}

RunConfig build_config(const RunArgs& args) {
  RunConfig base;
  if (const char* env = std::getenv("FOVEATE_SEED")) set_config_value(base, "run.seed", env);
  std::vector<std::string> overrides = args.overrides;
  if (args.seed) overrides.push_back("run.seed=" + std::to_string(*args.seed));
  if (!args.output.empty()) overrides.push_back("run.output_dir=" + args.output);
  if (!args.checkpoint.empty()) overrides.push_back("run.checkpoint=" + args.checkpoint);
  if (!args.policy_checkpoint.empty()) overrides.push_back("run.policy_checkpoint=" + args.policy_checkpoint);
  return parse_config(args.config, overrides, base);
}

Image load_input_image(const RunConfig& config, const std::string& image_path, int index) {
  if (!image_path.empty()) return load_ppm(image_path);
  const DataSplits splits = make_splits(config);
  if (index < 0 || static_cast<std::size_t>(index) >= splits.val->size()) {
    throw ValidationError("validation index " + std::to_string(index) + " out of range");
  }
  return splits.val->get(static_cast<std::size_t>(index), 0).image;
}

int fail(const std::string& kind, const std::string& message, int code) {
  nlohmann::json err = {{"error", kind}, {"message", message}};
  std::cerr << err.dump() << std::endl;
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Foveated glimpse encoder: training, evaluation and figures"};
  app.require_subcommand(1);

  RunArgs pretrain_args, shuffled_args, policy_args, eval_args, baseline_args, gaze_args;
  auto* pretrain = app.add_subcommand("pretrain", "stage 1: train encoder and head with random gaze");
  add_run_options(pretrain, pretrain_args);
  auto* shuffled = app.add_subcommand("shuffled-vit", "shuffled grid-group experiment with full-attention baseline");
  add_run_options(shuffled, shuffled_args);
  auto* train_policy = app.add_subcommand("train-policy", "stage 2: GRPO on the gaze policy, encoder frozen");
  add_run_options(train_policy, policy_args);
  auto* eval = app.add_subcommand("eval", "per-step accuracy with random, learned or fixed gaze");
  add_run_options(eval, eval_args);
  auto* baseline = app.add_subcommand("baseline", "train the single-pass full-attention baseline");
  add_run_options(baseline, baseline_args);

  std::string patch_image, patch_out;
  double patch_x = 0.5, patch_y = 0.5, patch_max_z = 4.0;
  int patch_count = 8, patch_size = 16, patch_scale = 4;
  auto* patchify = app.add_subcommand("patchify", "extract multi-zoom patches from a PPM image");
  patchify->add_option("--image", patch_image, "input P6 PPM")->required();
  patchify->add_option("-x", patch_x, "gaze x in [0,1]");
  patchify->add_option("-y", patch_y, "gaze y in [0,1]");
  patchify->add_option("-m,--patches", patch_count, "patches per glimpse");
  patchify->add_option("-z,--max-zoom", patch_max_z, "largest zoom level");
  patchify->add_option("-p,--patch-size", patch_size, "patch side");
  patchify->add_option("--scale", patch_scale, "upscale factor of the patch strip");
  patchify->add_option("-o,--out", patch_out, "output directory")->required();

  std::string gaze_image, gaze_svg, gaze_ppm;
  int gaze_index = 0, gaze_steps = 8;
  auto* viz_gaze = app.add_subcommand("viz-gaze", "render the learned policy's glimpse trajectory");
  add_run_options(viz_gaze, gaze_args);
  viz_gaze->add_option("--image", gaze_image, "input P6 PPM (default: a validation image)");
  viz_gaze->add_option("--index", gaze_index, "validation image index when --image is absent");
  viz_gaze->add_option("-n,--steps", gaze_steps, "glimpses to render");
  viz_gaze->add_option("--ppm", gaze_ppm, "output PPM overlay")->required();
  viz_gaze->add_option("--svg", gaze_svg, "optional SVG overlay");

  std::string shift_image, shift_out;
  int shift_patch = 32, shift_small = 288;
  auto* viz_shift = app.add_subcommand("viz-shift", "same grid cell from an image and its downscaled copy");
  viz_shift->add_option("--image", shift_image, "input P6 PPM")->required();
  viz_shift->add_option("-p,--patch-size", shift_patch, "grid patch side");
  viz_shift->add_option("--small", shift_small, "long side of the downscaled copy");
  viz_shift->add_option("-o,--out", shift_out, "output PPM")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    return fail("usage", e.what(), 2);
  }

  try {
    nlohmann::json result;
    if (*pretrain) {
      result = run_pretrain(build_config(pretrain_args));
    } else if (*shuffled) {
      result = run_shuffled(build_config(shuffled_args));
    } else if (*train_policy) {
      result = run_train_policy(build_config(policy_args));
    } else if (*eval) {
      result = run_eval(build_config(eval_args));
    } else if (*baseline) {
      result = run_baseline(build_config(baseline_args));
    } else if (*patchify) {
      const Image image = load_ppm(patch_image);
      const PatchSet set = extract_multizoom(image, GazeCenter(patch_x, patch_y), patch_size, patch_count, patch_max_z);
      fs::create_directories(patch_out);
      for (int i = 0; i < set.count(); ++i) {
        const auto px = set.patch(i);
        Image patch(patch_size, patch_size, std::vector<float>(px.begin(), px.end()));
        char name[32];
        std::snprintf(name, sizeof name, "patch_%02d.ppm", i);
        write_ppm(patch, fs::path(patch_out) / name);
      }
      write_ppm(upscale(render_patch_strip(set), patch_scale), fs::path(patch_out) / "strip.ppm");
      write_ppm(render_gaze(image, {set.center}, set.schedule), fs::path(patch_out) / "overlay.ppm");
      result = {{"patches", set.count()}, {"z", set.schedule.zs}, {"z_norm", set.z_norm}};
    } else if (*viz_gaze) {
      const RunConfig config = build_config(gaze_args);
      if (config.checkpoint.empty()) throw ConfigError("viz-gaze needs --checkpoint");
      const Model model = load_model(config, config.checkpoint);
      const GazePolicy policy = load_policy(
          config, config.policy_checkpoint.empty() ? config.checkpoint : config.policy_checkpoint);
      const Image image = load_input_image(config, gaze_image, gaze_index);
      const std::vector<Image> batch{image};
      const auto steps = policy_centers(model, policy, batch, gaze_steps, config.threads);
      std::vector<GazeCenter> centers;
      for (const auto& s : steps) centers.push_back(s[0]);
      const ZoomSchedule schedule = zoom_schedule(config.model.patches, config.model.max_zoom);
      write_ppm(render_gaze(image, centers, schedule), gaze_ppm);
      if (!gaze_svg.empty()) {
        const fs::path background = fs::path(gaze_svg).replace_extension(".input.ppm");
        write_ppm(image, background);
        std::ofstream(gaze_svg) << render_gaze_svg(image.height(), image.width(), centers, schedule,
                                                   background.filename().string());
      }
      nlohmann::json list = nlohmann::json::array();
      for (const auto& c : centers) list.push_back({c.x, c.y});
      result = {{"centers", list}};
    } else if (*viz_shift) {
      const Image image = load_ppm(shift_image);
      write_ppm(render_shift(image, shift_patch, shift_small), shift_out);
      result = {{"written", shift_out}};
    }
    std::cout << result.dump(2) << std::endl;
    return 0;
  } catch (const ConfigError& e) {
    return fail(e.kind(), e.what(), 2);
  } catch (const Error& e) {
    return fail(e.kind(), e.what(), 1);
  } catch (const std::exception& e) {
    return fail("internal", e.what(), 1);
  }
}

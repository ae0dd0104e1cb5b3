#include "fovea/patchify.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <thread>

#include "fovea/error.hpp"

namespace fovea {

Image::Image(int height, int width) : Image(height, width, std::vector<float>()) {}

Image::Image(int height, int width, std::vector<float> pixels)
    : height_(height), width_(width), pixels_(std::move(pixels)) {
  if (height < 1 || width < 1) {
    throw ValidationError("image dimensions must be positive, got " + std::to_string(height) + "x" +
                          std::to_string(width));
  }
  const std::size_t n = static_cast<std::size_t>(height) * width * 3;
  if (pixels_.empty()) pixels_.assign(n, 0.0f);
  if (pixels_.size() != n) {
    throw ValidationError("image buffer holds " + std::to_string(pixels_.size()) + " values, expected " +
                          std::to_string(n));
  }
}

GazeCenter::GazeCenter(double x_, double y_) : x(std::clamp(x_, 0.0, 1.0)), y(std::clamp(y_, 0.0, 1.0)) {}

std::vector<double> ZoomSchedule::normalized() const {
  std::vector<double> out(zs.size(), 0.0);
  if (max_z > 0.0) {
    for (std::size_t i = 0; i < zs.size(); ++i) out[i] = zs[i] / max_z;
  }
  return out;
}

std::span<const float> PatchSet::patch(int i) const {
  const std::size_t n = static_cast<std::size_t>(patch_size) * patch_size * 3;
  return std::span<const float>(patches).subspan(static_cast<std::size_t>(i) * n, n);
}

double crop_size(int height, int width, double z) {
  if (height < 1 || width < 1) throw ValidationError("crop_size: image dimensions must be positive");
  if (!(z >= 0.0)) throw ValidationError("crop_size: zoom level must be >= 0, got " + std::to_string(z));
  return static_cast<double>(std::min(height, width)) / std::exp2(z);
}

ZoomSchedule zoom_schedule(int count, double max_z) {
  if (count < 1) throw ValidationError("zoom_schedule: patch count must be >= 1");
  if (!(max_z >= 0.0)) throw ValidationError("zoom_schedule: max_z must be >= 0");
  ZoomSchedule s;
  s.count = count;
  s.max_z = max_z;
  s.zs.resize(static_cast<std::size_t>(count));
  if (count == 1) {
    s.zs[0] = 0.0;
    return s;
  }
  const double step = max_z / static_cast<double>(count - 1);
  for (int i = 0; i < count; ++i) s.zs[i] = step * i;
  s.zs.back() = max_z;
  return s;
}

namespace {

// Two taps per output coordinate along one axis; taps outside [0, size)
// keep index -1 and contribute nothing.
struct AxisTaps {
  std::vector<int> i0, i1;
  std::vector<double> w0, w1;
};

AxisTaps axis_taps(int out_size, int in_size, double scale, double translate) {
  AxisTaps t;
  t.i0.resize(out_size);
  t.i1.resize(out_size);
  t.w0.resize(out_size);
  t.w1.resize(out_size);
  for (int j = 0; j < out_size; ++j) {
    const double u = (j + 0.5 - translate) / scale - 0.5;
    const double f = std::floor(u);
    const double frac = u - f;
    const long long lo = static_cast<long long>(f);
    const long long hi = lo + 1;
    t.i0[j] = (lo >= 0 && lo < in_size) ? static_cast<int>(lo) : -1;
    t.i1[j] = (hi >= 0 && hi < in_size) ? static_cast<int>(hi) : -1;
    t.w0[j] = 1.0 - frac;
    t.w1[j] = frac;
  }
  return t;
}

void extract_patch_into(const Image& image, GazeCenter center, double z, int patch_size, float* out) {
  const int h = image.height(), w = image.width();
  const double crop = crop_size(h, w, z);
  const double scale = patch_size / crop;
  const double tx = patch_size / 2.0 - scale * (center.x * w);
  const double ty = patch_size / 2.0 - scale * (center.y * h);
  const AxisTaps xs = axis_taps(patch_size, w, scale, tx);
  const AxisTaps ys = axis_taps(patch_size, h, scale, ty);
  const float* px = image.pixels().data();
  for (int r = 0; r < patch_size; ++r) {
    const int rows[2] = {ys.i0[r], ys.i1[r]};
    const double rw[2] = {ys.w0[r], ys.w1[r]};
    for (int c = 0; c < patch_size; ++c) {
      const int cols[2] = {xs.i0[c], xs.i1[c]};
      const double cw[2] = {xs.w0[c], xs.w1[c]};
      double acc[3] = {0.0, 0.0, 0.0};
      for (int a = 0; a < 2; ++a) {
        if (rows[a] < 0) continue;
        for (int b = 0; b < 2; ++b) {
          if (cols[b] < 0) continue;
          const double wgt = rw[a] * cw[b];
          const float* src = px + (static_cast<std::size_t>(rows[a]) * w + cols[b]) * 3;
          acc[0] += wgt * src[0];
          acc[1] += wgt * src[1];
          acc[2] += wgt * src[2];
        }
      }
      float* dst = out + (static_cast<std::size_t>(r) * patch_size + c) * 3;
      for (int k = 0; k < 3; ++k) dst[k] = static_cast<float>(std::clamp(acc[k], 0.0, 1.0));
    }
  }
}

}  // namespace

std::vector<float> extract_patch(const Image& image, GazeCenter center, double z, int patch_size) {
  if (patch_size < 1) throw ValidationError("extract_patch: patch size must be >= 1");
  if (image.empty()) throw ValidationError("extract_patch: empty image");
  std::vector<float> out(static_cast<std::size_t>(patch_size) * patch_size * 3);
  extract_patch_into(image, center, z, patch_size, out.data());
  return out;
}

PatchSet extract_multizoom(const Image& image, GazeCenter center, int patch_size, const ZoomSchedule& schedule) {
  if (patch_size < 1) throw ValidationError("extract_multizoom: patch size must be >= 1");
  if (image.empty()) throw ValidationError("extract_multizoom: empty image");
  PatchSet set;
  set.patch_size = patch_size;
  set.center = center;
  set.schedule = schedule;
  set.z_norm = schedule.normalized();
  const std::size_t n = static_cast<std::size_t>(patch_size) * patch_size * 3;
  set.patches.resize(n * schedule.zs.size());
  for (std::size_t i = 0; i < schedule.zs.size(); ++i) {
    extract_patch_into(image, center, schedule.zs[i], patch_size, set.patches.data() + i * n);
  }
  return set;
}

PatchSet extract_multizoom(const Image& image, GazeCenter center, int patch_size, int count, double max_z) {
  return extract_multizoom(image, center, patch_size, zoom_schedule(count, max_z));
}

std::vector<PatchSet> extract_multizoom_batch(std::span<const Image> images, std::span<const GazeCenter> centers,
                                              int patch_size, const ZoomSchedule& schedule, int threads) {
  if (images.size() != centers.size()) throw ValidationError("extract_multizoom_batch: images/centers length mismatch");
  if (patch_size < 1) throw ValidationError("extract_multizoom_batch: patch size must be >= 1");
  const std::size_t n = static_cast<std::size_t>(patch_size) * patch_size * 3;
  std::vector<PatchSet> out(images.size());
  for (std::size_t b = 0; b < images.size(); ++b) {
    if (images[b].empty()) throw ValidationError("extract_multizoom_batch: empty image");
    out[b].patch_size = patch_size;
    out[b].center = centers[b];
    out[b].schedule = schedule;
    out[b].z_norm = schedule.normalized();
    out[b].patches.resize(n * schedule.zs.size());
  }
  const std::size_t jobs = images.size() * schedule.zs.size();
  auto run = [&](std::size_t begin, std::size_t end) {
    for (std::size_t j = begin; j < end; ++j) {
      const std::size_t b = j / schedule.zs.size();
      const std::size_t z = j % schedule.zs.size();
      extract_patch_into(images[b], centers[b], schedule.zs[z], patch_size, out[b].patches.data() + z * n);
    }
  };
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(std::max(threads, 1)), jobs);
  if (workers <= 1) {
    run(0, jobs);
    return out;
  }
  {
    std::vector<std::jthread> pool;
    const std::size_t chunk = (jobs + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
      const std::size_t begin = w * chunk, end = std::min(jobs, begin + chunk);
      if (begin < end) pool.emplace_back(run, begin, end);
    }
  }
  return out;
}

std::vector<GridPatch> extract_vit_grid(const Image& image, int patch_size) {
  if (patch_size < 1) throw ValidationError("extract_vit_grid: patch size must be >= 1");
  if (image.height() % patch_size != 0 || image.width() % patch_size != 0) {
    throw ValidationError("extract_vit_grid: image " + std::to_string(image.height()) + "x" +
                          std::to_string(image.width()) + " is not divisible by patch size " +
                          std::to_string(patch_size));
  }
  const int rows = image.height() / patch_size, cols = image.width() / patch_size;
  std::vector<GridPatch> out;
  out.reserve(static_cast<std::size_t>(rows) * cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      GridPatch g;
      g.row = r;
      g.col = c;
      g.pixels.resize(static_cast<std::size_t>(patch_size) * patch_size * 3);
      for (int y = 0; y < patch_size; ++y) {
        const float* src = &image.pixels()[(static_cast<std::size_t>(r * patch_size + y) * image.width() +
                                            static_cast<std::size_t>(c) * patch_size) * 3];
        std::copy(src, src + patch_size * 3, g.pixels.begin() + static_cast<std::ptrdiff_t>(y) * patch_size * 3);
      }
      out.push_back(std::move(g));
    }
  }
  return out;
}

Image resize_bilinear(const Image& image, int height, int width) {
  if (height < 1 || width < 1) throw ValidationError("resize_bilinear: target size must be positive");
  if (height == image.height() && width == image.width()) return image;
  Image out(height, width);
  const double sy = static_cast<double>(image.height()) / height;
  const double sx = static_cast<double>(image.width()) / width;
  for (int y = 0; y < height; ++y) {
    const double v = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(image.height() - 1));
    const int y0 = static_cast<int>(std::floor(v));
    const int y1 = std::min(y0 + 1, image.height() - 1);
    const double fy = v - y0;
    for (int x = 0; x < width; ++x) {
      const double u = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(image.width() - 1));
      const int x0 = static_cast<int>(std::floor(u));
      const int x1 = std::min(x0 + 1, image.width() - 1);
      const double fx = u - x0;
      for (int c = 0; c < 3; ++c) {
        const double top = (1 - fx) * image.at(y0, x0, c) + fx * image.at(y0, x1, c);
        const double bot = (1 - fx) * image.at(y1, x0, c) + fx * image.at(y1, x1, c);
        out.at(y, x, c) = static_cast<float>(std::clamp((1 - fy) * top + fy * bot, 0.0, 1.0));
      }
    }
  }
  return out;
}

void validate_image(const Image& image) {
  if (image.empty()) throw ValidationError("image is empty");
  for (float v : image.pixels()) {
    if (!std::isfinite(v) || v < 0.0f || v > 1.0f) throw ValidationError("image values must lie in [0,1]");
  }
}

}  // namespace fovea

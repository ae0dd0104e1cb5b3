#pragma once

// Top-down multi-zoom patch extraction.
//
// A patch is a square crop of side C = min(H, W) / 2^z centred at a relative
// location (x, y) in [0,1]^2, bilinearly resampled to P x P. Because the crop
// is defined relative to the image extent, the same (x, y, z) addresses the
// same part of the scene at any resolution.
//
// Sampling convention: pixel centres sit at integer coordinates. With
// scale s = P / C and translation t = P/2 - s * (x * W), output column j
// reads the source at u = (j + 0.5 - t) / s - 0.5 (rows analogously).
// Source pixels outside the image contribute 0. There is no anti-aliasing
// prefilter, so large crops alias.

#include <cstddef>
#include <span>
#include <vector>

namespace fovea {

/// H x W x 3 image, row-major HWC, values in [0,1].
class Image {
public:
  Image() = default;
  Image(int height, int width);
  Image(int height, int width, std::vector<float> pixels);

  int height() const { return height_; }
  int width() const { return width_; }
  bool empty() const { return pixels_.empty(); }

  float& at(int y, int x, int c) { return pixels_[(static_cast<std::size_t>(y) * width_ + x) * 3 + c]; }
  float at(int y, int x, int c) const { return pixels_[(static_cast<std::size_t>(y) * width_ + x) * 3 + c]; }

  std::span<float> pixels() { return pixels_; }
  std::span<const float> pixels() const { return pixels_; }

  friend bool operator==(const Image&, const Image&) = default;

private:
  int height_ = 0;
  int width_ = 0;
  std::vector<float> pixels_;
};

/// Relative gaze location; both coordinates are clamped into [0,1].
struct GazeCenter {
  double x = 0.5;
  double y = 0.5;

  GazeCenter() = default;
  GazeCenter(double x_, double y_);
};

struct ZoomSchedule {
  int count = 1;
  double max_z = 0.0;
  std::vector<double> zs;  // evenly spaced, zs.front() == 0, zs.back() == max_z

  /// z / max_z in [0,1]; all zeros when max_z == 0.
  std::vector<double> normalized() const;
};

/// M patches sharing one centre, stored as M x P x P x 3.
struct PatchSet {
  int patch_size = 0;
  GazeCenter center;
  ZoomSchedule schedule;
  std::vector<double> z_norm;
  std::vector<float> patches;

  int count() const { return schedule.count; }
  std::span<const float> patch(int i) const;
};

/// Crop side in pixels: min(H, W) / 2^z.
double crop_size(int height, int width, double z);

ZoomSchedule zoom_schedule(int count, double max_z);

/// One P x P x 3 patch at zoom `z` around `center`.
std::vector<float> extract_patch(const Image& image, GazeCenter center, double z, int patch_size);

PatchSet extract_multizoom(const Image& image, GazeCenter center, int patch_size, const ZoomSchedule& schedule);
PatchSet extract_multizoom(const Image& image, GazeCenter center, int patch_size, int count, double max_z);

/// Multi-zoom extraction for a batch. With `threads` > 1 the (image, zoom)
/// pairs are split across threads; the result is bit-identical to the
/// sequential loop.
std::vector<PatchSet> extract_multizoom_batch(std::span<const Image> images, std::span<const GazeCenter> centers,
                                              int patch_size, const ZoomSchedule& schedule, int threads = 1);

struct GridPatch {
  int row = 0;
  int col = 0;
  std::vector<float> pixels;  // P x P x 3
};

/// Non-overlapping P x P tiles in raster order. H and W must be multiples of P.
std::vector<GridPatch> extract_vit_grid(const Image& image, int patch_size);

/// Half-pixel-centre bilinear resize with edge clamping (a conventional image
/// resize, unlike the zero-padded patch sampler).
Image resize_bilinear(const Image& image, int height, int width);

/// Checks dimensions and that every value is finite and in [0,1].
void validate_image(const Image& image);

}  // namespace fovea

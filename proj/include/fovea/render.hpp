#pragma once

#include <array>
#include <string>
#include <vector>

#include "fovea/patchify.hpp"
#include "fovea/tensor.hpp"

namespace fovea {
inline namespace FOVEA_PRECISION_NS {

using Rgb = std::array<float, 3>;

/// Fractional square covered by the crop at zoom z around `center`:
/// side crop_size(H,W,z) / min(H,W) of the short side.
struct CropBox {
  double x0, y0, x1, y1;  // pixel coordinates, may extend past the image
};
CropBox crop_box(int height, int width, GazeCenter center, double z);

/// Nearest-neighbour upscale by an integer factor.
Image upscale(const Image& image, int factor);

void draw_rect(Image& image, const CropBox& box, const Rgb& color, int thickness = 1);
void draw_marker(Image& image, double x, double y, const Rgb& color, int radius = 2);
/// 3x5 pixel-font decimal number with its top-left corner at (x, y), scaled by `scale`.
void draw_number(Image& image, int value, int x, int y, const Rgb& color, int scale = 1);

/// Step colours cycle through a fixed palette.
Rgb step_color(int step);

/// Input image with, for every step, a numbered marker at the gaze centre and
/// one square per zoom level of the schedule. Upscaled so the short side is at
/// least `min_side` pixels.
Image render_gaze(const Image& image, const std::vector<GazeCenter>& centers, const ZoomSchedule& schedule,
                  int min_side = 256);

/// Same overlay as SVG; `image_href` is referenced as the background.
std::string render_gaze_svg(int height, int width, const std::vector<GazeCenter>& centers,
                            const ZoomSchedule& schedule, const std::string& image_href);

/// Multi-zoom patches laid out left to right with a 2-pixel white separator.
Image render_patch_strip(const PatchSet& set);

/// Grid cell containing the image centre, cut from the original and from a
/// copy resized so its long side is `small_size`, side by side (P x (2P + 2)).
Image render_shift(const Image& image, int patch_size, int small_size);

}  // namespace FOVEA_PRECISION_NS
}  // namespace fovea

#include "fovea/render.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "fovea/error.hpp"

namespace fovea {
inline namespace FOVEA_PRECISION_NS {

namespace {

// 3x5 glyphs, one row per 3-bit mask, top to bottom.
constexpr int kGlyphs[10][5] = {
    {7, 5, 5, 5, 7}, {2, 6, 2, 2, 7}, {7, 1, 7, 4, 7}, {7, 1, 7, 1, 7}, {5, 5, 7, 1, 1},
    {7, 4, 7, 1, 7}, {7, 4, 7, 5, 7}, {7, 1, 1, 1, 1}, {7, 5, 7, 5, 7}, {7, 5, 7, 1, 7},
};

constexpr Rgb kPalette[] = {
    {1.0f, 0.2f, 0.2f}, {0.2f, 1.0f, 0.2f}, {0.3f, 0.5f, 1.0f}, {1.0f, 1.0f, 0.2f},
    {1.0f, 0.3f, 1.0f}, {0.2f, 1.0f, 1.0f}, {1.0f, 0.6f, 0.1f}, {0.7f, 0.7f, 0.7f},
};

void put(Image& image, int x, int y, const Rgb& c) {
  if (x < 0 || y < 0 || x >= image.width() || y >= image.height()) return;
  for (int k = 0; k < 3; ++k) image.at(y, x, k) = c[k];
}

void copy_block(const Image& src, int y0, int x0, int size, Image& dst, int dy, int dx) {
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      for (int c = 0; c < 3; ++c) dst.at(dy + y, dx + x, c) = src.at(y0 + y, x0 + x, c);
}

// Top-left corner of the P x P grid cell holding the image centre.
std::pair<int, int> centre_cell(const Image& image, int p) {
  const int row = std::min(image.height() / 2 / p, image.height() / p - 1);
  const int col = std::min(image.width() / 2 / p, image.width() / p - 1);
  return {row * p, col * p};
}

}  // namespace

CropBox crop_box(int height, int width, GazeCenter center, double z) {
  const double c = crop_size(height, width, z);
  const double cx = center.x * width, cy = center.y * height;
  return {cx - c / 2, cy - c / 2, cx + c / 2, cy + c / 2};
}

Image upscale(const Image& image, int factor) {
  if (factor < 1) throw ValidationError("upscale: factor must be >= 1");
  if (factor == 1) return image;
  Image out(image.height() * factor, image.width() * factor);
  for (int y = 0; y < out.height(); ++y)
    for (int x = 0; x < out.width(); ++x)
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = image.at(y / factor, x / factor, c);
  return out;
}

void draw_rect(Image& image, const CropBox& box, const Rgb& color, int thickness) {
  const int x0 = static_cast<int>(std::lround(box.x0)), x1 = static_cast<int>(std::lround(box.x1)) - 1;
  const int y0 = static_cast<int>(std::lround(box.y0)), y1 = static_cast<int>(std::lround(box.y1)) - 1;
  for (int t = 0; t < thickness; ++t) {
    for (int x = x0; x <= x1; ++x) {
      put(image, x, y0 + t, color);
      put(image, x, y1 - t, color);
    }
    for (int y = y0; y <= y1; ++y) {
      put(image, x0 + t, y, color);
      put(image, x1 - t, y, color);
    }
  }
}

void draw_marker(Image& image, double x, double y, const Rgb& color, int radius) {
  const int cx = static_cast<int>(std::floor(x)), cy = static_cast<int>(std::floor(y));
  for (int d = -radius; d <= radius; ++d) {
    put(image, cx + d, cy, color);
    put(image, cx, cy + d, color);
  }
}

void draw_number(Image& image, int value, int x, int y, const Rgb& color, int scale) {
  const std::string digits = std::to_string(std::max(value, 0));
  for (std::size_t i = 0; i < digits.size(); ++i) {
    const int* glyph = kGlyphs[digits[i] - '0'];
    const int gx = x + static_cast<int>(i) * 4 * scale;
    for (int r = 0; r < 5; ++r)
      for (int c = 0; c < 3; ++c) {
        if (!(glyph[r] & (4 >> c))) continue;
        for (int sy = 0; sy < scale; ++sy)
          for (int sx = 0; sx < scale; ++sx) put(image, gx + c * scale + sx, y + r * scale + sy, color);
      }
  }
}

Rgb step_color(int step) { return kPalette[step % (sizeof(kPalette) / sizeof(kPalette[0]))]; }

Image render_gaze(const Image& image, const std::vector<GazeCenter>& centers, const ZoomSchedule& schedule,
                  int min_side) {
  validate_image(image);
  const int short_side = std::min(image.height(), image.width());
  const int factor = std::max(1, (min_side + short_side - 1) / short_side);
  Image out = upscale(image, factor);
  const int h = image.height(), w = image.width();
  for (std::size_t t = 0; t < centers.size(); ++t) {
    const Rgb color = step_color(static_cast<int>(t));
    for (double z : schedule.zs) {
      CropBox b = crop_box(h, w, centers[t], z);
      draw_rect(out, {b.x0 * factor, b.y0 * factor, b.x1 * factor, b.y1 * factor}, color);
    }
    const double px = centers[t].x * w * factor, py = centers[t].y * h * factor;
    draw_marker(out, px, py, color, 3);
    draw_number(out, static_cast<int>(t) + 1, static_cast<int>(px) + 4, static_cast<int>(py) + 4, color, 2);
  }
  return out;
}

std::string render_gaze_svg(int height, int width, const std::vector<GazeCenter>& centers,
                            const ZoomSchedule& schedule, const std::string& image_href) {
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
     << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
  if (!image_href.empty()) {
    os << "  <image href=\"" << image_href << "\" x=\"0\" y=\"0\" width=\"" << width << "\" height=\"" << height
       << "\"/>\n";
  }
  for (std::size_t t = 0; t < centers.size(); ++t) {
    const Rgb c = step_color(static_cast<int>(t));
    char color[8];
    std::snprintf(color, sizeof color, "#%02x%02x%02x", static_cast<int>(c[0] * 255), static_cast<int>(c[1] * 255),
                  static_cast<int>(c[2] * 255));
    for (double z : schedule.zs) {
      const CropBox b = crop_box(height, width, centers[t], z);
      os << "  <rect x=\"" << b.x0 << "\" y=\"" << b.y0 << "\" width=\"" << b.x1 - b.x0 << "\" height=\""
         << b.y1 - b.y0 << "\" fill=\"none\" stroke=\"" << color << "\" stroke-width=\"0.5\"/>\n";
    }
    const double x = centers[t].x * width, y = centers[t].y * height;
    os << "  <circle cx=\"" << x << "\" cy=\"" << y << "\" r=\"1.5\" fill=\"" << color << "\"/>\n";
    os << "  <text x=\"" << x + 2 << "\" y=\"" << y - 2 << "\" font-size=\"6\" fill=\"" << color << "\">" << t + 1
       << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

Image render_patch_strip(const PatchSet& set) {
  const int p = set.patch_size, m = set.count();
  Image out(p, m * p + (m - 1) * 2);
  std::fill(out.pixels().begin(), out.pixels().end(), 1.0f);
  for (int i = 0; i < m; ++i) {
    const auto patch = set.patch(i);
    for (int y = 0; y < p; ++y)
      for (int x = 0; x < p; ++x)
        for (int c = 0; c < 3; ++c) out.at(y, i * (p + 2) + x, c) = patch[(static_cast<std::size_t>(y) * p + x) * 3 + c];
  }
  return out;
}

Image render_shift(const Image& image, int patch_size, int small_size) {
  validate_image(image);
  const int p = patch_size;
  if (p < 1) throw ValidationError("render_shift: patch size must be >= 1");
  const int long_side = std::max(image.height(), image.width());
  if (small_size > long_side) {
    throw ValidationError("render_shift: small size " + std::to_string(small_size) + " exceeds image size " +
                          std::to_string(long_side));
  }
  const double s = static_cast<double>(small_size) / long_side;
  const int h = std::max(p, static_cast<int>(std::lround(image.height() * s)));
  const int w = std::max(p, static_cast<int>(std::lround(image.width() * s)));
  if (image.height() < p || image.width() < p) throw ValidationError("render_shift: image smaller than one patch");
  const Image small = resize_bilinear(image, h, w);
  Image out(p, 2 * p + 2);
  std::fill(out.pixels().begin(), out.pixels().end(), 1.0f);
  const auto [y0, x0] = centre_cell(image, p);
  const auto [y1, x1] = centre_cell(small, p);
  copy_block(image, y0, x0, p, out, 0, 0);
  copy_block(small, y1, x1, p, out, 0, p + 2);
  return out;
}

}  // namespace FOVEA_PRECISION_NS
}  // namespace fovea

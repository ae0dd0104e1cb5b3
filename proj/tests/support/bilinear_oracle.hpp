#pragma once

// Brute-force reference for multi-zoom patch sampling. For every output pixel
// the source position is computed directly from the crop geometry, and the
// four neighbouring source pixels are weighted by the bilinear tent
// max(0, 1 - |d|); pixels outside the image count as 0.

#include <cmath>
#include <vector>

#include "fovea/patchify.hpp"

namespace fovea::testing {

inline std::vector<float> bilinear_oracle(const Image& image, GazeCenter center, double z, int patch) {
  const int h = image.height(), w = image.width();
  const double crop = std::min(h, w) / std::pow(2.0, z);
  // Output pixel centre j + 0.5 spans the crop [cx - crop/2, cx + crop/2] in
  // continuous coordinates; integer source indices sit at pixel centres.
  const double left = center.x * w - crop / 2.0;
  const double top = center.y * h - crop / 2.0;
  const double step = crop / patch;
  std::vector<float> out(static_cast<std::size_t>(patch) * patch * 3, 0.0f);
  for (int r = 0; r < patch; ++r) {
    const double sy = top + (r + 0.5) * step - 0.5;
    for (int c = 0; c < patch; ++c) {
      const double sx = left + (c + 0.5) * step - 0.5;
      double acc[3] = {0, 0, 0};
      for (int yy = static_cast<int>(std::floor(sy)) - 1; yy <= static_cast<int>(std::floor(sy)) + 2; ++yy) {
        for (int xx = static_cast<int>(std::floor(sx)) - 1; xx <= static_cast<int>(std::floor(sx)) + 2; ++xx) {
          const double wy = std::max(0.0, 1.0 - std::abs(sy - yy));
          const double wx = std::max(0.0, 1.0 - std::abs(sx - xx));
          if (wy == 0.0 || wx == 0.0) continue;
          if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
          for (int k = 0; k < 3; ++k) acc[k] += wy * wx * image.at(yy, xx, k);
        }
      }
      for (int k = 0; k < 3; ++k) {
        out[(static_cast<std::size_t>(r) * patch + c) * 3 + k] = static_cast<float>(std::clamp(acc[k], 0.0, 1.0));
      }
    }
  }
  return out;
}

}  // namespace fovea::testing

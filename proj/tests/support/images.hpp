#pragma once

// Synthetic test images.

#include <cmath>
#include <random>

#include "fovea/patchify.hpp"

namespace fovea::testing {

inline Image random_image(int h, int w, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Image im(h, w);
  for (float& v : im.pixels()) v = u(rng);
  return im;
}

inline Image constant_image(int h, int w, float value) {
  Image im(h, w);
  for (float& v : im.pixels()) v = value;
  return im;
}

/// Smooth "natural-ish" image: a few soft blobs and low-frequency gradients per channel.
inline Image smooth_image(int h, int w, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  struct Blob {
    double cx, cy, r, amp[3];
  };
  std::vector<Blob> blobs(5);
  for (auto& b : blobs) {
    b.cx = u(rng);
    b.cy = u(rng);
    b.r = 0.1 + 0.25 * u(rng);
    for (double& a : b.amp) a = u(rng) - 0.3;
  }
  double fx[3], fy[3], ph[3];
  for (int c = 0; c < 3; ++c) {
    fx[c] = 1 + 2 * u(rng);
    fy[c] = 1 + 2 * u(rng);
    ph[c] = 6.28 * u(rng);
  }
  Image im(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double rx = (x + 0.5) / w, ry = (y + 0.5) / h;
      for (int c = 0; c < 3; ++c) {
        double v = 0.35 + 0.15 * std::sin(fx[c] * 3.14159 * rx + fy[c] * 3.14159 * ry + ph[c]);
        for (const auto& b : blobs) {
          const double d2 = (rx - b.cx) * (rx - b.cx) + (ry - b.cy) * (ry - b.cy);
          v += b.amp[c] * std::exp(-d2 / (b.r * b.r));
        }
        im.at(y, x, c) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return im;
}

}  // namespace fovea::testing

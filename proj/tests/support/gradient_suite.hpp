#pragma once

// Finite-difference gradient suite shared by the unit tests and the
// acceptance runner. Compiled in double precision; the interface carries no
// tensor types so callers of either precision can use it.

#include <functional>
#include <string>
#include <vector>

namespace fovea::testing {

struct GradCheck {
  std::string name;  // op or tensor checked
  double error = 0.0;
};

struct GradGroup {
  std::string name;
  std::function<std::vector<GradCheck>(int seed)> run;
};

inline constexpr double kGradTolerance = 1e-4;
inline constexpr int kGradSeeds = 20;

/// Every primitive op, attention, one full encoder step with the head, the
/// positional embedding and the policy log-probability.
std::vector<GradGroup> gradient_groups();

}  // namespace fovea::testing

#pragma once

#include <string>

namespace fovea::acceptance {

struct Outcome {
  bool pass = false;
  std::string detail;
};

// Double-precision criteria, compiled separately from the f32 runner.
Outcome gradient_suite();
Outcome detachment_contract();
Outcome grpo_battery();

}  // namespace fovea::acceptance

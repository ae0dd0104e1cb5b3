#pragma once

// FVE1 container: the 4 magic bytes "FVE1", a little-endian u32 header length,
// a UTF-8 JSON header listing each tensor's name, shape and dtype in order,
// then the raw little-endian f32 values concatenated in header order.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fovea/optim.hpp"

namespace fovea {
inline namespace FOVEA_PRECISION_NS {

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

struct Checkpoint {
  std::vector<CheckpointEntry> entries;
  std::string meta = "{}";  // free-form JSON object stored in the header

  const CheckpointEntry* find(const std::string& name) const;
};

std::vector<std::uint8_t> encode_checkpoint(const ParameterList& params, const std::string& meta = "{}");
/// Parses and validates the whole container before returning.
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const ParameterList& params, const std::filesystem::path& path, const std::string& meta = "{}");
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies checkpoint values into every parameter whose name starts with one of
/// `prefixes` (all parameters when empty). Missing entries, shape mismatches
/// and unexpected entries under the selected prefixes are all reported in one
/// CheckpointError, and nothing is written unless every check passes.
void restore(const Checkpoint& checkpoint, ParameterList& params, const std::vector<std::string>& prefixes = {});

/// Parameter values under `prefix` as f32, in list order (for byte comparisons).
std::vector<float> snapshot(const ParameterList& params, const std::string& prefix = "");

}  // namespace FOVEA_PRECISION_NS
}  // namespace fovea

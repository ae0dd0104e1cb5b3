#include "fovea/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <json.hpp>

#include "fovea/error.hpp"

namespace fovea {
inline namespace FOVEA_PRECISION_NS {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'F', 'V', 'E', '1'};

bool selected(const std::string& name, const std::vector<std::string>& prefixes) {
  if (prefixes.empty()) return true;
  for (const auto& p : prefixes) {
    if (name.rfind(p, 0) == 0) return true;
  }
  return false;
}

}  // namespace

const CheckpointEntry* Checkpoint::find(const std::string& name) const {
  for (const auto& e : entries) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

std::vector<std::uint8_t> encode_checkpoint(const ParameterList& params, const std::string& meta) {
  nlohmann::json header;
  header["dtype"] = "f32";
  header["tensors"] = nlohmann::json::array();
  for (const auto& p : params) header["tensors"].push_back({{"name", p.name}, {"shape", p.tensor.shape()}, {"dtype", "f32"}});
  header["meta"] = nlohmann::json::parse(meta);
  const std::string text = header.dump();

  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  const auto len = static_cast<std::uint32_t>(text.size());
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(len >> (8 * i)));
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& p : params) {
    for (real v : p.tensor.data()) {
      const float f = static_cast<float>(v);
      std::uint8_t b[4];
      std::memcpy(b, &f, 4);
      out.insert(out.end(), b, b + 4);
    }
  }
  return out;
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8) throw CheckpointError("checkpoint: file too short (" + std::to_string(bytes.size()) + " bytes)");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw CheckpointError("checkpoint: bad magic, expected FVE1");
  std::uint32_t len = 0;
  for (int i = 0; i < 4; ++i) len |= static_cast<std::uint32_t>(bytes[4 + i]) << (8 * i);
  if (len > bytes.size() - 8) {
    throw CheckpointError("checkpoint: header length " + std::to_string(len) + " exceeds file size " +
                          std::to_string(bytes.size()));
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 8, bytes.begin() + 8 + len);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint: malformed header: ") + e.what());
  }
  if (!header.is_object() || header.value("dtype", "") != "f32" || !header.contains("tensors") ||
      !header["tensors"].is_array()) {
    throw CheckpointError("checkpoint: header must be an object with dtype f32 and a tensors array");
  }
  Checkpoint ck;
  if (header.contains("meta")) ck.meta = header["meta"].dump();
  std::size_t offset = 8 + len;
  for (const auto& t : header["tensors"]) {
    CheckpointEntry e;
    try {
      e.name = t.at("name").get<std::string>();
      e.shape = t.at("shape").get<Shape>();
    } catch (const nlohmann::json::exception& ex) {
      throw CheckpointError(std::string("checkpoint: malformed tensor record: ") + ex.what());
    }
    for (int d : e.shape) {
      if (d < 1) throw CheckpointError("checkpoint: tensor '" + e.name + "' has a non-positive dimension");
    }
    const auto n = static_cast<std::size_t>(shape_numel(e.shape));
    if (bytes.size() - offset < n * 4) {
      throw CheckpointError("checkpoint: data for '" + e.name + "' truncated at byte " + std::to_string(offset));
    }
    e.values.resize(n);
    std::memcpy(e.values.data(), bytes.data() + offset, n * 4);
    offset += n * 4;
    ck.entries.push_back(std::move(e));
  }
  if (offset != bytes.size()) {
    throw CheckpointError("checkpoint: " + std::to_string(bytes.size() - offset) + " trailing bytes after data");
  }
  return ck;
}

void save_checkpoint(const ParameterList& params, const std::filesystem::path& path, const std::string& meta) {
  const auto bytes = encode_checkpoint(params, meta);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("checkpoint: cannot write '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("checkpoint: write to '" + path.string() + "' failed");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("checkpoint: cannot open '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

void restore(const Checkpoint& checkpoint, ParameterList& params, const std::vector<std::string>& prefixes) {
  std::vector<std::string> diffs;
  std::vector<std::pair<NamedParameter*, const CheckpointEntry*>> plan;
  for (auto& p : params) {
    if (!selected(p.name, prefixes)) continue;
    const CheckpointEntry* e = checkpoint.find(p.name);
    if (!e) {
      diffs.push_back("missing '" + p.name + "'");
    } else if (e->shape != p.tensor.shape()) {
      diffs.push_back("shape of '" + p.name + "': checkpoint " + shape_str(e->shape) + ", model " +
                      shape_str(p.tensor.shape()));
    } else {
      plan.emplace_back(&p, e);
    }
  }
  for (const auto& e : checkpoint.entries) {
    if (!selected(e.name, prefixes)) continue;
    bool known = false;
    for (const auto& p : params) known = known || p.name == e.name;
    if (!known) diffs.push_back("unexpected '" + e.name + "'");
  }
  if (!diffs.empty()) {
    std::string msg = "checkpoint does not match model:";
    for (const auto& d : diffs) msg += "\n  " + d;
    throw CheckpointError(msg);
  }
  for (auto& [p, e] : plan) {
    auto dst = p->tensor.mutable_data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<real>(e->values[i]);
  }
}

std::vector<float> snapshot(const ParameterList& params, const std::string& prefix) {
  std::vector<float> out;
  for (const auto& p : params) {
    if (p.name.rfind(prefix, 0) != 0) continue;
    for (real v : p.tensor.data()) out.push_back(static_cast<float>(v));
  }
  return out;
}

}  // namespace FOVEA_PRECISION_NS
}  // namespace fovea

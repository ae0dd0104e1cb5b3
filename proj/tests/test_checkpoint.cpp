#include <doctest.h>

#include <cstring>
#include <fstream>

#include "fovea/checkpoint.hpp"
#include "fovea/error.hpp"
#include "fovea/model.hpp"
#include "fovea/policy.hpp"
#include "support/temp_dir.hpp"

using namespace fovea;

namespace {

EncoderConfig small() {
  EncoderConfig c;
  c.layers = 1;
  c.dim = 8;
  c.heads = 2;
  c.state_size = 2;
  c.patch_size = 4;
  c.patches = 2;
  c.classes = 3;
  c.pos_hidden = 4;
  return c;
}

}  // namespace

TEST_CASE("container layout and round trip") {
  const Model m(small(), 1);
  const auto bytes = encode_checkpoint(m.parameters(), R"({"stage":1})");
  REQUIRE(bytes.size() > 8);
  CHECK(std::memcmp(bytes.data(), "FVE1", 4) == 0);
  const std::uint32_t header = bytes[4] | bytes[5] << 8 | bytes[6] << 16 | static_cast<std::uint32_t>(bytes[7]) << 24;
  std::size_t values = 0;
  for (const auto& p : m.parameters()) values += p.tensor.numel();
  CHECK(bytes.size() == 8 + header + 4 * values);

  const Checkpoint ck = decode_checkpoint(bytes);
  CHECK(ck.entries.size() == m.parameters().size());
  CHECK(ck.meta.find("stage") != std::string::npos);
  Model other(small(), 2);
  ParameterList params = other.parameters();
  restore(ck, params);
  CHECK(snapshot(other.parameters()) == snapshot(m.parameters()));
  CHECK(encode_checkpoint(other.parameters(), R"({"stage":1})") == bytes);

  fovea::testing::TempDir dir;
  save_checkpoint(m.parameters(), dir / "a.fve");
  const Checkpoint loaded = load_checkpoint(dir / "a.fve");
  Model third(small(), 3);
  ParameterList p3 = third.parameters();
  restore(loaded, p3);
  CHECK(snapshot(third.parameters()) == snapshot(m.parameters()));
}

TEST_CASE("corruption is rejected before anything is written") {
  const Model m(small(), 4);
  const auto good = encode_checkpoint(m.parameters());
  SUBCASE("header length past the end") {
    auto bad = good;
    bad[7] = 0x7f;
    CHECK_THROWS_AS(decode_checkpoint(bad), CheckpointError);
  }
  SUBCASE("wrong magic") {
    auto bad = good;
    bad[3] = '2';
    CHECK_THROWS_AS(decode_checkpoint(bad), CheckpointError);
  }
  SUBCASE("truncated payload") {
    auto bad = good;
    bad.resize(bad.size() - 4);
    CHECK_THROWS_AS(decode_checkpoint(bad), CheckpointError);
  }
  SUBCASE("shape mismatch leaves the target untouched") {
    EncoderConfig wide = small();
    wide.dim = 12;
    wide.heads = 3;
    Model target(wide, 5);
    const auto before = snapshot(target.parameters());
    ParameterList params = target.parameters();
    try {
      restore(decode_checkpoint(good), params);
      FAIL("expected a checkpoint error");
    } catch (const CheckpointError& e) {
      CHECK(std::string(e.what()).find("encoder.patch_embed.weight") != std::string::npos);
    }
    CHECK(snapshot(target.parameters()) == before);
  }
}

TEST_CASE("prefix restore touches exactly the selected tensors") {
  const Model m(small(), 6);
  const GazePolicy pol(PolicyConfig{2, 0.1, 8, 2}, 8, 6);
  ParameterList all = m.parameters();
  for (const auto& p : pol.parameters()) all.push_back(p);
  const Checkpoint ck = decode_checkpoint(encode_checkpoint(all));

  Model fresh(small(), 7);
  GazePolicy fresh_pol(PolicyConfig{2, 0.1, 8, 2}, 8, 7);
  const auto policy_before = snapshot(fresh_pol.parameters());
  ParameterList target = fresh.parameters();
  for (const auto& p : fresh_pol.parameters()) target.push_back(p);
  restore(ck, target, {"encoder.", "head."});
  CHECK(snapshot(fresh.parameters()) == snapshot(m.parameters()));
  CHECK(snapshot(fresh_pol.parameters()) == policy_before);
  restore(ck, target, {"policy."});
  CHECK(snapshot(fresh_pol.parameters()) == snapshot(pol.parameters()));
  CHECK(snapshot(fresh.parameters(), "head.") == snapshot(m.parameters(), "head."));
}

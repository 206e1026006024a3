#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "nca_arc/checkpoint.hpp"
#include "nca_arc/evaluator.hpp"
#include "nca_arc/state_codec.hpp"
#include "test_util.hpp"

using namespace nca_arc;
namespace fs = std::filesystem;

namespace {

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_bytes(const fs::path& p, const std::string& bytes) {
  std::ofstream(p, std::ios::binary | std::ios::trunc).write(bytes.data(), std::streamsize(bytes.size()));
}

CheckpointError::Kind load_error(const fs::path& p) {
  try {
    load_checkpoint(p);
  } catch (const CheckpointError& e) {
    return e.kind();
  }
  FAIL("checkpoint unexpectedly loaded");
  return CheckpointError::Kind::Io;
}

ModelParams<float> random_params(const ModelSpec& spec, std::uint64_t seed) {
  Rng rng(seed);
  auto p = init_params<float>(spec, rng);
  std::uniform_real_distribution<float> u(-1, 1);
  for (auto& b : p.blocks)
    for (auto& v : b) v += u(rng) * 1e-3f;
  return p;
}

struct TempFile {
  fs::path path;
  explicit TempFile(const std::string& name) : path(fs::temp_directory_path() / name) {}
  ~TempFile() { fs::remove(path); }
};

}  // namespace

TEST_SUITE("checkpoint") {

TEST_CASE("save then load is bitwise lossless") {
  TempFile f("nca_arc_roundtrip.ckpt");
  for (const ModelSpec spec : {ModelSpec{}, ModelSpec{0, 3, 4}, ModelSpec{7, 5, 9}}) {
    const auto params = random_params(spec, spec.parameter_count());
    save_checkpoint(f.path, params, "digest-xyz");
    const auto ck = load_checkpoint(f.path);
    CHECK(ck.spec == spec);
    CHECK(ck.format_version == kCheckpointVersion);
    CHECK(ck.train_config_digest == "digest-xyz");
    for (std::size_t b = 0; b < kNumBlocks; ++b) {
      REQUIRE(ck.params.blocks[b].size() == params.blocks[b].size());
      CHECK(std::memcmp(ck.params.blocks[b].data(), params.blocks[b].data(),
                        params.blocks[b].size() * sizeof(float)) == 0);
    }
  }
}

TEST_CASE("loaded checkpoint evaluates like the in-memory model") {
  TempFile f("nca_arc_eval.ckpt");
  const auto params = random_params(ModelSpec{}, 3);
  save_checkpoint(f.path, params);
  const auto ck = load_checkpoint(f.path);
  std::mt19937_64 g(4);
  const Grid input = test_util::random_grid(g, 7, 5);
  CHECK(run_synchronous<float>(ck.params, one_hot_encode<float>(input, 30), 10) ==
        run_synchronous<float>(params, one_hot_encode<float>(input, 30), 10));
  CHECK(infer(ck.params, input, 10) == infer(params, input, 10));
}

TEST_CASE("layout starts with magic, version and header length") {
  TempFile f("nca_arc_layout.ckpt");
  save_checkpoint(f.path, random_params(ModelSpec{}, 5));
  const auto bytes = read_bytes(f.path);
  CHECK(bytes.compare(0, 8, std::string("\x89NCAARC\n", 8)) == 0);
  std::uint32_t version;
  std::uint64_t header_len;
  std::memcpy(&version, bytes.data() + 8, 4);
  std::memcpy(&header_len, bytes.data() + 12, 8);
  CHECK(version == 1);
  CHECK(bytes.size() == 20 + header_len + 10102 * sizeof(float));
  CHECK(bytes[20] == '{');
}

TEST_CASE("each failure mode has its own error kind") {
  TempFile good("nca_arc_good.ckpt"), bad("nca_arc_bad.ckpt");
  save_checkpoint(good.path, random_params(ModelSpec{}, 6));
  const auto bytes = read_bytes(good.path);

  SUBCASE("truncated") {
    write_bytes(bad.path, bytes.substr(0, bytes.size() - 3));
    CHECK(load_error(bad.path) == CheckpointError::Kind::Truncated);
    write_bytes(bad.path, bytes.substr(0, 30));
    CHECK(load_error(bad.path) == CheckpointError::Kind::Truncated);
    write_bytes(bad.path, bytes.substr(0, 5));
    CHECK(load_error(bad.path) == CheckpointError::Kind::Truncated);
  }
  SUBCASE("bad magic") {
    auto b = bytes;
    b[1] = 'X';
    write_bytes(bad.path, b);
    CHECK(load_error(bad.path) == CheckpointError::Kind::BadMagic);
  }
  SUBCASE("future version names both versions") {
    auto b = bytes;
    const std::uint32_t v2 = kCheckpointVersion + 1;
    std::memcpy(b.data() + 8, &v2, 4);
    write_bytes(bad.path, b);
    try {
      load_checkpoint(bad.path);
      FAIL("expected a version error");
    } catch (const CheckpointError& e) {
      CHECK(e.kind() == CheckpointError::Kind::Version);
      const std::string what = e.what();
      CHECK(what.find(std::to_string(v2)) != std::string::npos);
      CHECK(what.find(std::to_string(kCheckpointVersion)) != std::string::npos);
    }
  }
  SUBCASE("declared shape disagrees") {
    auto b = bytes;
    const auto pos = b.find("[24,30,3,3]");
    REQUIRE(pos != std::string::npos);
    b.replace(pos, 11, "[24,30,3,4]");
    write_bytes(bad.path, b);
    CHECK(load_error(bad.path) == CheckpointError::Kind::Shape);
  }
  SUBCASE("trailing bytes") {
    write_bytes(bad.path, bytes + "xxxx");
    CHECK(load_error(bad.path) == CheckpointError::Kind::Shape);
  }
  SUBCASE("missing file") {
    CHECK(load_error(fs::temp_directory_path() / "nca_arc_no_such.ckpt") == CheckpointError::Kind::Io);
  }
}

}  // TEST_SUITE

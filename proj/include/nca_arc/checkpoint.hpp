#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include "nca_arc/model.hpp"

namespace nca_arc {

// Binary layout, little-endian:
//   8 bytes  magic "\x89NCAARC\n"
//   u32      format version
//   u64      header length N
//   N bytes  JSON header: spec, train_config_digest, blocks [{name, shape}]
//   blocks   float32 data in kBlockNames order
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[8] = {'\x89', 'N', 'C', 'A', 'A', 'R', 'C', '\n'};

class CheckpointError : public std::runtime_error {
 public:
  enum class Kind { Io, BadMagic, Version, Truncated, Shape };
  CheckpointError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

struct Checkpoint {
  std::uint32_t format_version = kCheckpointVersion;
  ModelSpec spec;
  std::string train_config_digest;
  ModelParams<float> params;
};

void save_checkpoint(const std::filesystem::path& path, const ModelParams<float>& params,
                     const std::string& train_config_digest = {});

/// Validates magic, version, declared shapes and lengths. Nothing partial is
/// returned on failure.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace nca_arc

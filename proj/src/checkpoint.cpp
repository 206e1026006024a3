#include "nca_arc/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <vector>

#include <nlohmann/json.hpp>

namespace nca_arc {

using nlohmann::json;

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

template <typename U>
void put(std::string& out, U v) {
  char buf[sizeof(U)];
  std::memcpy(buf, &v, sizeof(U));
  out.append(buf, sizeof(U));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  void read(void* dst, std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw CheckpointError(CheckpointError::Kind::Truncated,
                            std::string("checkpoint truncated while reading ") + what);
    }
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }
  template <typename U>
  U get(const char* what) {
    U v;
    read(&v, sizeof(U), what);
    return v;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelParams<float>& params,
                     const std::string& train_config_digest) {
  json blocks = json::array();
  for (std::size_t b = 0; b < kNumBlocks; ++b) {
    blocks.push_back({{"name", kBlockNames[b]}, {"shape", block_shape(params.spec, Block(b))}});
  }
  const json header = {{"format_version", kCheckpointVersion},
                       {"spec",
                        {{"hidden_channels", params.spec.hidden_channels},
                         {"perception_filters", params.spec.perception_filters},
                         {"dense_width", params.spec.dense_width}}},
                       {"train_config_digest", train_config_digest},
                       {"blocks", blocks}};
  const std::string text = header.dump();

  std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, text.size());
  out += text;
  for (const auto& block : params.blocks) {
    out.append(reinterpret_cast<const char*>(block.data()), block.size() * sizeof(float));
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw CheckpointError(CheckpointError::Kind::Io, "cannot write " + path.string());
  f.write(out.data(), std::streamsize(out.size()));
  if (!f) throw CheckpointError(CheckpointError::Kind::Io, "write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError(CheckpointError::Kind::Io, "cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  Reader in(bytes);

  char magic[8];
  in.read(magic, sizeof(magic), "magic");
  if (std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw CheckpointError(CheckpointError::Kind::BadMagic,
                          path.string() + " is not an nca-arc checkpoint (bad magic)");
  }
  const auto version = in.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw CheckpointError(CheckpointError::Kind::Version,
                          "checkpoint format version " + std::to_string(version) +
                              " is not supported (expected " +
                              std::to_string(kCheckpointVersion) + ")");
  }
  const auto header_len = in.get<std::uint64_t>("header length");
  if (header_len > in.remaining()) {
    throw CheckpointError(CheckpointError::Kind::Truncated, "checkpoint truncated in header");
  }
  std::string text(header_len, '\0');
  in.read(text.data(), header_len, "header");

  Checkpoint ck;
  json header;
  try {
    header = json::parse(text);
    const auto& s = header.at("spec");
    ck.spec.hidden_channels = s.at("hidden_channels").get<std::size_t>();
    ck.spec.perception_filters = s.at("perception_filters").get<std::size_t>();
    ck.spec.dense_width = s.at("dense_width").get<std::size_t>();
    ck.train_config_digest = header.value("train_config_digest", std::string());
  } catch (const json::exception& e) {
    throw CheckpointError(CheckpointError::Kind::Shape,
                          std::string("checkpoint header is malformed: ") + e.what());
  }
  try {
    ck.params = ModelParams<float>::zeros(ck.spec);
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(CheckpointError::Kind::Shape, e.what());
  }

  const auto& blocks = header.contains("blocks") ? header.at("blocks") : json();
  if (!blocks.is_array() || blocks.size() != kNumBlocks) {
    throw CheckpointError(CheckpointError::Kind::Shape, "checkpoint must declare 8 blocks");
  }
  for (std::size_t b = 0; b < kNumBlocks; ++b) {
    const auto& decl = blocks[b];
    const auto name = decl.value("name", std::string());
    if (name != kBlockNames[b]) {
      throw CheckpointError(CheckpointError::Kind::Shape,
                            "block " + std::to_string(b) + " is \"" + name + "\", expected \"" +
                                std::string(kBlockNames[b]) + "\"");
    }
    std::vector<std::size_t> shape;
    try {
      shape = decl.at("shape").get<std::vector<std::size_t>>();
    } catch (const json::exception&) {
      throw CheckpointError(CheckpointError::Kind::Shape, name + ": missing shape");
    }
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    if (shape != block_shape(ck.spec, Block(b)) || n != ck.params.blocks[b].size()) {
      throw CheckpointError(CheckpointError::Kind::Shape,
                            name + ": declared shape disagrees with the model spec");
    }
  }
  for (std::size_t b = 0; b < kNumBlocks; ++b) {
    auto& block = ck.params.blocks[b];
    in.read(block.data(), block.size() * sizeof(float), std::string(kBlockNames[b]).c_str());
  }
  if (in.remaining() != 0) {
    throw CheckpointError(CheckpointError::Kind::Shape,
                          std::to_string(in.remaining()) + " trailing bytes after the last block");
  }
  ck.format_version = version;
  return ck;
}

}  // namespace nca_arc

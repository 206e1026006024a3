#include "nca_arc/render.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>
#include <zlib.h>

namespace nca_arc {

Palette default_palette() {
  return {{{0x00, 0x00, 0x00},
           {0x00, 0x74, 0xD9},
           {0xFF, 0x41, 0x36},
           {0x2E, 0xCC, 0x40},
           {0xFF, 0xDC, 0x00},
           {0xAA, 0xAA, 0xAA},
           {0xF0, 0x12, 0xBE},
           {0xFF, 0x85, 0x1B},
           {0x7F, 0xDB, 0xFF},
           {0x87, 0x0C, 0x25}}};
}

Palette parse_palette(std::string_view json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(std::string("palette: ") + e.what());
  }
  if (!j.is_array() || j.size() != kNumColors) {
    throw DataError("palette: expected a list of 10 hex colors");
  }
  Palette p;
  std::set<std::uint32_t> seen;
  for (std::size_t i = 0; i < kNumColors; ++i) {
    const auto s = j[i].is_string() ? j[i].get<std::string>() : std::string();
    if (s.size() != 7 || s[0] != '#') throw DataError("palette: bad color entry " + std::to_string(i));
    std::uint32_t v = 0;
    try {
      std::size_t used = 0;
      v = std::uint32_t(std::stoul(s.substr(1), &used, 16));
      if (used != 6) throw std::invalid_argument(s);
    } catch (const std::exception&) {
      throw DataError("palette: bad color entry " + std::to_string(i) + " \"" + s + "\"");
    }
    if (!seen.insert(v).second) throw DataError("palette: duplicate color " + s);
    p[i] = {std::uint8_t(v >> 16), std::uint8_t(v >> 8), std::uint8_t(v)};
  }
  return p;
}

Palette load_palette(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open palette " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_palette(buf.str());
}

std::string render_ascii(const Grid& grid) {
  std::string out;
  out.reserve(grid.rows() * (grid.cols() + 1));
  for (std::size_t r = 0; r < grid.rows(); ++r) {
    for (std::size_t c = 0; c < grid.cols(); ++c) out += char('0' + grid.at(r, c));
    out += '\n';
  }
  return out;
}

Grid parse_ascii(std::string_view text) {
  std::vector<std::vector<int>> rows;
  std::vector<int> row;
  for (char ch : text) {
    if (ch == '\n') {
      rows.push_back(std::move(row));
      row.clear();
    } else if (ch >= '0' && ch <= '9') {
      row.push_back(ch - '0');
    } else if (ch != '\r') {
      throw DataError(std::string("ascii grid: unexpected character '") + ch + "'");
    }
  }
  if (!row.empty()) rows.push_back(std::move(row));
  return Grid::from_rows(rows);
}

Image compose_strip(const std::vector<Grid>& grids, std::size_t cell_px, const Palette& palette) {
  if (cell_px < 1) throw std::invalid_argument("cell_px must be >= 1");
  if (grids.empty()) throw std::invalid_argument("nothing to render");
  const std::size_t pitch = cell_px + 1;
  std::size_t width = 1, max_rows = 0;
  for (const auto& g : grids) {
    width += g.cols() * pitch;
    max_rows = std::max(max_rows, g.rows());
  }
  Image img;
  img.width = width;
  img.height = max_rows * pitch + 1;
  img.rgb.resize(img.width * img.height * 3);
  for (std::size_t i = 0; i < img.width * img.height; ++i) {
    img.rgb[i * 3 + 0] = kSeparatorColor.r;
    img.rgb[i * 3 + 1] = kSeparatorColor.g;
    img.rgb[i * 3 + 2] = kSeparatorColor.b;
  }
  std::size_t x0 = 1;
  for (const auto& g : grids) {
    for (std::size_t r = 0; r < g.rows(); ++r) {
      for (std::size_t c = 0; c < g.cols(); ++c) {
        const Rgb color = palette[g.at(r, c)];
        for (std::size_t dy = 0; dy < cell_px; ++dy) {
          for (std::size_t dx = 0; dx < cell_px; ++dx) {
            const std::size_t x = x0 + c * pitch + dx, y = 1 + r * pitch + dy;
            auto* p = &img.rgb[(y * img.width + x) * 3];
            p[0] = color.r;
            p[1] = color.g;
            p[2] = color.b;
          }
        }
      }
    }
    x0 += g.cols() * pitch;
  }
  return img;
}

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  out += char(v >> 24);
  out += char(v >> 16);
  out += char(v >> 8);
  out += char(v);
}

void put_chunk(std::string& out, const char type[4], const std::string& data) {
  put_u32(out, std::uint32_t(data.size()));
  std::string body(type, 4);
  body += data;
  out += body;
  put_u32(out, std::uint32_t(crc32(0L, reinterpret_cast<const Bytef*>(body.data()),
                                   uInt(body.size()))));
}

}  // namespace

std::string encode_png(const Image& image) {
  std::string raw;
  raw.reserve(image.height * (image.width * 3 + 1));
  for (std::size_t y = 0; y < image.height; ++y) {
    raw += '\0';  // filter: none
    raw.append(reinterpret_cast<const char*>(&image.rgb[y * image.width * 3]), image.width * 3);
  }
  uLongf packed_len = compressBound(uLong(raw.size()));
  std::string packed(packed_len, '\0');
  if (compress2(reinterpret_cast<Bytef*>(packed.data()), &packed_len,
                reinterpret_cast<const Bytef*>(raw.data()), uLong(raw.size()), 9) != Z_OK) {
    throw std::runtime_error("png: zlib compression failed");
  }
  packed.resize(packed_len);

  std::string out("\x89PNG\r\n\x1a\n", 8);
  std::string ihdr;
  put_u32(ihdr, std::uint32_t(image.width));
  put_u32(ihdr, std::uint32_t(image.height));
  ihdr += char(8);  // bit depth
  ihdr += char(2);  // truecolor
  ihdr += std::string(3, '\0');
  put_chunk(out, "IHDR", ihdr);
  put_chunk(out, "IDAT", packed);
  put_chunk(out, "IEND", {});
  return out;
}

void render_png(const std::vector<Grid>& grids, std::size_t cell_px,
                const std::filesystem::path& path, const Palette& palette) {
  const auto bytes = encode_png(compose_strip(grids, cell_px, palette));
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f.write(bytes.data(), std::streamsize(bytes.size()));
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace nca_arc

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "nca_arc/arc_data.hpp"

namespace nca_arc {

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
  friend bool operator==(const Rgb&, const Rgb&) = default;
};

using Palette = std::array<Rgb, kNumColors>;

/// The usual ARC viewer colors.
Palette default_palette();

/// JSON list of exactly 10 distinct "#RRGGBB" strings.
Palette load_palette(const std::filesystem::path& path);
Palette parse_palette(std::string_view json_text);

/// One line per row, digits 0-9, newline-terminated.
std::string render_ascii(const Grid& grid);
Grid parse_ascii(std::string_view text);

struct Image {
  std::size_t width = 0, height = 0;
  std::vector<std::uint8_t> rgb;  // row-major, 3 bytes per pixel
  Rgb at(std::size_t x, std::size_t y) const {
    const auto* p = &rgb[(y * width + x) * 3];
    return {p[0], p[1], p[2]};
  }
};

inline constexpr Rgb kSeparatorColor{0x55, 0x55, 0x55};

/// Grids side by side, cells `cell_px` square, 1-pixel separator lines
/// between cells and panels. Area below shorter panels is separator color.
Image compose_strip(const std::vector<Grid>& grids, std::size_t cell_px,
                    const Palette& palette = default_palette());

std::string encode_png(const Image& image);

void render_png(const std::vector<Grid>& grids, std::size_t cell_px,
                const std::filesystem::path& path, const Palette& palette = default_palette());

}  // namespace nca_arc

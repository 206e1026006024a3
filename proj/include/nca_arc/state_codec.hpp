#pragma once

#include <cstddef>

#include "nca_arc/arc_data.hpp"
#include "nca_arc/tensor.hpp"

namespace nca_arc {

/// One-hot color channels 0-9, hidden channels zero. `batch` copies of the
/// same grid are stacked when batch > 1.
template <typename T>
Tensor3<T> one_hot_encode(const Grid& grid, std::size_t total_channels, std::size_t batch = 1);

/// Per cell, the index of the largest of channels 0-9; ties go to the lowest
/// color. Decodes batch image `index`.
template <typename T>
Grid decode_argmax(const Tensor3<T>& state, std::size_t index = 0);

}  // namespace nca_arc

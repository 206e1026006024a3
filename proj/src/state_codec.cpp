#include "nca_arc/state_codec.hpp"

namespace nca_arc {

template <typename T>
Tensor3<T> one_hot_encode(const Grid& grid, std::size_t total_channels, std::size_t batch) {
  if (total_channels < std::size_t(kNumColors)) {
    throw ShapeError("one_hot_encode: need at least 10 channels, got " +
                     std::to_string(total_channels));
  }
  if (batch == 0) throw ShapeError("one_hot_encode: batch must be >= 1");
  Tensor3<T> state(total_channels, grid.rows(), grid.cols(), batch);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t r = 0; r < grid.rows(); ++r)
      for (std::size_t c = 0; c < grid.cols(); ++c) state(grid.at(r, c), r, c, b) = T(1);
  return state;
}

template <typename T>
Grid decode_argmax(const Tensor3<T>& state, std::size_t index) {
  if (state.channels() < std::size_t(kNumColors)) {
    throw ShapeError("decode_argmax: state has fewer than 10 channels");
  }
  if (index >= state.batch()) throw ShapeError("decode_argmax: batch index out of range");
  Grid out(state.rows(), state.cols());
  for (std::size_t r = 0; r < state.rows(); ++r) {
    for (std::size_t c = 0; c < state.cols(); ++c) {
      int best = 0;
      T best_v = state(0, r, c, index);
      for (int k = 1; k < kNumColors; ++k) {
        const T v = state(std::size_t(k), r, c, index);
        if (v > best_v) {
          best_v = v;
          best = k;
        }
      }
      out.set(r, c, std::uint8_t(best));
    }
  }
  return out;
}

template Tensor3<float> one_hot_encode<float>(const Grid&, std::size_t, std::size_t);
template Tensor3<double> one_hot_encode<double>(const Grid&, std::size_t, std::size_t);
template Grid decode_argmax<float>(const Tensor3<float>&, std::size_t);
template Grid decode_argmax<double>(const Tensor3<double>&, std::size_t);

}  // namespace nca_arc

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "nca_arc/tensor.hpp"

// Forward and adjoint kernels for the fixed step network. Backward functions
// accumulate into their gradient outputs (`+=`), they never overwrite.
// Gradient-input pointers may be null when that adjoint is not needed.

namespace nca_arc {

inline constexpr std::size_t kSoftmaxChannels = 10;

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// ---- 3x3 convolution, stride 1, zero padding ------------------------------

/// Patch matrix of shape (9*C) x cells; row index c*9 + ky*3 + kx.
template <typename T>
RowMatrix<T> im2col3x3(const Tensor3<T>& input);

/// Adds the patch-matrix gradient back onto image positions.
template <typename T>
void col2im3x3_add(const RowMatrix<T>& cols, Tensor3<T>& grad_input);

/// `kernel` is [F,C,3,3] flattened, `bias` is [F].
template <typename T>
Tensor3<T> conv3x3_forward(const Tensor3<T>& input, std::span<const T> kernel,
                           std::span<const T> bias);

template <typename T>
void conv3x3_backward(const Tensor3<T>& input, std::span<const T> kernel,
                      const Tensor3<T>& grad_out, std::span<T> grad_kernel,
                      std::span<T> grad_bias, Tensor3<T>* grad_input);

/// Same as above with a precomputed patch matrix of `input`.
template <typename T>
void conv3x3_backward_cols(const RowMatrix<T>& cols, const Tensor3<T>& input_shape,
                           std::span<const T> kernel, const Tensor3<T>& grad_out,
                           std::span<T> grad_kernel, std::span<T> grad_bias,
                           Tensor3<T>* grad_input);

// ---- per-cell layer normalization over channels ----------------------------

inline constexpr double kLayerNormEpsilon = 1e-5;

template <typename T>
struct LayerNormCache {
  Tensor3<T> normalized;   // (x - mean) * inv_std
  std::vector<T> inv_std;  // one per cell
};

template <typename T>
Tensor3<T> layernorm_forward(const Tensor3<T>& input, std::span<const T> gain,
                             std::span<const T> shift, T epsilon,
                             LayerNormCache<T>* cache = nullptr);

template <typename T>
void layernorm_backward(const LayerNormCache<T>& cache, std::span<const T> gain,
                        const Tensor3<T>& grad_out, std::span<T> grad_gain,
                        std::span<T> grad_shift, Tensor3<T>* grad_input);

// ---- per-cell dense layer (1x1 convolution) --------------------------------

/// `weight` is [B,A] row-major, `bias` is [B].
template <typename T>
Tensor3<T> dense_forward(const Tensor3<T>& input, std::span<const T> weight,
                         std::span<const T> bias);

template <typename T>
void dense_backward(const Tensor3<T>& input, std::span<const T> weight,
                    const Tensor3<T>& grad_out, std::span<T> grad_weight,
                    std::span<T> grad_bias, Tensor3<T>* grad_input);

// ---- activations -------------------------------------------------------------

template <typename T>
Tensor3<T> relu(const Tensor3<T>& input);

/// `activation` may be the relu input or its output: the gate is x > 0 for both.
template <typename T>
void relu_backward(const Tensor3<T>& activation, const Tensor3<T>& grad_out,
                   Tensor3<T>& grad_input);

/// Max-subtracted softmax over the channels of each cell. Requires 10 channels.
template <typename T>
Tensor3<T> softmax10(const Tensor3<T>& logits);

/// grad_logits += J^T grad_probs, with J the softmax Jacobian at `probs`.
template <typename T>
void softmax10_backward(const Tensor3<T>& probs, const Tensor3<T>& grad_probs,
                        Tensor3<T>& grad_logits);

// ---- loss ------------------------------------------------------------------

/// Mean over all cells of -log_softmax(logits)[target]. `target` holds one
/// color per image cell (rows*cols) and is shared by every batch image.
template <typename T>
T cross_entropy(const Tensor3<T>& logits, std::span<const std::uint8_t> target);

/// grad_logits += scale * d(cross_entropy)/d(logits).
template <typename T>
void cross_entropy_backward(const Tensor3<T>& logits, std::span<const std::uint8_t> target,
                            T scale, Tensor3<T>& grad_logits);

/// Same gradient computed from already-normalized probabilities.
template <typename T>
void cross_entropy_backward_from_probs(const Tensor3<T>& probs,
                                       std::span<const std::uint8_t> target, T scale,
                                       Tensor3<T>& grad_logits);

}  // namespace nca_arc

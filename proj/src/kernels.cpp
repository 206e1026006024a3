#include "nca_arc/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace nca_arc {

namespace {

template <typename T>
using ConstVecMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;
template <typename T>
using VecMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;
template <typename T>
using ConstWeightMap = Eigen::Map<const RowMatrix<T>>;
template <typename T>
using WeightMap = Eigen::Map<RowMatrix<T>>;

void require(bool ok, const char* what) {
  if (!ok) throw ShapeError(what);
}

// Sequential row sums. Eigen's vectorized reduction peels by address
// alignment, which would make results depend on where the heap put a buffer.
template <typename T>
void add_row_sums(const typename Tensor3<T>::ConstMatrixMap& g, std::span<T> out) {
  for (Eigen::Index r = 0; r < g.rows(); ++r) {
    const T* row = g.row(r).data();
    T s = 0;
    for (Eigen::Index i = 0; i < g.cols(); ++i) s += row[i];
    out[std::size_t(r)] += s;
  }
}

}  // namespace

template <typename T>
RowMatrix<T> im2col3x3(const Tensor3<T>& input) {
  const std::size_t C = input.channels(), B = input.batch(), H = input.rows(),
                    W = input.cols();
  RowMatrix<T> cols(Eigen::Index(9 * C), Eigen::Index(input.cells()));
  for (std::size_t c = 0; c < C; ++c) {
    const T* src = input.channel(c);
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        T* dst = cols.row(Eigen::Index(c * 9 + ky * 3 + kx)).data();
        const long dx = kx - 1;
        for (std::size_t b = 0; b < B; ++b) {
          for (std::size_t r = 0; r < H; ++r) {
            T* out = dst + (b * H + r) * W;
            const long sr = long(r) + ky - 1;
            if (sr < 0 || sr >= long(H)) {
              std::fill(out, out + W, T(0));
              continue;
            }
            const T* in = src + (b * H + std::size_t(sr)) * W;
            // out[x] = in[x + dx] where in range
            const long lo = std::max(0L, -dx);
            const long hi = std::min(long(W), long(W) - dx);
            for (long x = 0; x < lo; ++x) out[x] = T(0);
            for (long x = lo; x < hi; ++x) out[x] = in[x + dx];
            for (long x = std::max(hi, 0L); x < long(W); ++x) out[x] = T(0);
          }
        }
      }
    }
  }
  return cols;
}

template <typename T>
void col2im3x3_add(const RowMatrix<T>& cols, Tensor3<T>& grad_input) {
  const std::size_t C = grad_input.channels(), B = grad_input.batch(),
                    H = grad_input.rows(), W = grad_input.cols();
  require(cols.rows() == Eigen::Index(9 * C) && cols.cols() == Eigen::Index(grad_input.cells()),
          "col2im: patch matrix does not match input");
  for (std::size_t c = 0; c < C; ++c) {
    T* dst = grad_input.channel(c);
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const T* src = cols.row(Eigen::Index(c * 9 + ky * 3 + kx)).data();
        const long dx = kx - 1;
        for (std::size_t b = 0; b < B; ++b) {
          for (std::size_t r = 0; r < H; ++r) {
            const long sr = long(r) + ky - 1;
            if (sr < 0 || sr >= long(H)) continue;
            const T* g = src + (b * H + r) * W;
            T* out = dst + (b * H + std::size_t(sr)) * W;
            const long lo = std::max(0L, -dx);
            const long hi = std::min(long(W), long(W) - dx);
            for (long x = lo; x < hi; ++x) out[x + dx] += g[x];
          }
        }
      }
    }
  }
}

template <typename T>
Tensor3<T> conv3x3_forward(const Tensor3<T>& input, std::span<const T> kernel,
                           std::span<const T> bias) {
  const std::size_t F = bias.size(), C = input.channels();
  require(kernel.size() == F * C * 9, "conv3x3: kernel is not [F,C,3,3]");
  require(input.rows() >= 1 && input.cols() >= 1, "conv3x3: empty input");
  const auto cols = im2col3x3(input);
  Tensor3<T> out(F, input.rows(), input.cols(), input.batch());
  ConstWeightMap<T> K(kernel.data(), Eigen::Index(F), Eigen::Index(9 * C));
  auto o = out.matrix();
  o.noalias() = K * cols;
  o.colwise() += ConstVecMap<T>(bias.data(), Eigen::Index(F));
  return out;
}

template <typename T>
void conv3x3_backward_cols(const RowMatrix<T>& cols, const Tensor3<T>& input_shape,
                           std::span<const T> kernel, const Tensor3<T>& grad_out,
                           std::span<T> grad_kernel, std::span<T> grad_bias,
                           Tensor3<T>* grad_input) {
  const std::size_t F = grad_out.channels(), C = input_shape.channels();
  require(kernel.size() == F * C * 9 && grad_kernel.size() == kernel.size() &&
              grad_bias.size() == F,
          "conv3x3_backward: parameter shape mismatch");
  require(grad_out.same_geometry(input_shape), "conv3x3_backward: geometry mismatch");
  const auto g = grad_out.matrix();
  WeightMap<T>(grad_kernel.data(), Eigen::Index(F), Eigen::Index(9 * C)).noalias() +=
      g * cols.transpose();
  add_row_sums<T>(g, grad_bias);
  if (grad_input != nullptr) {
    require(grad_input->same_shape(input_shape), "conv3x3_backward: grad_input shape");
    ConstWeightMap<T> K(kernel.data(), Eigen::Index(F), Eigen::Index(9 * C));
    RowMatrix<T> dcols = K.transpose() * g;
    col2im3x3_add(dcols, *grad_input);
  }
}

template <typename T>
void conv3x3_backward(const Tensor3<T>& input, std::span<const T> kernel,
                      const Tensor3<T>& grad_out, std::span<T> grad_kernel,
                      std::span<T> grad_bias, Tensor3<T>* grad_input) {
  conv3x3_backward_cols(im2col3x3(input), input, kernel, grad_out, grad_kernel, grad_bias,
                        grad_input);
}

template <typename T>
Tensor3<T> layernorm_forward(const Tensor3<T>& input, std::span<const T> gain,
                             std::span<const T> shift, T epsilon, LayerNormCache<T>* cache) {
  const std::size_t F = input.channels(), N = input.cells();
  require(F >= 2, "layernorm: needs at least 2 channels");
  require(gain.size() == F && shift.size() == F, "layernorm: gain/shift size");
  std::vector<T> mean(N, T(0)), var(N, T(0));
  for (std::size_t f = 0; f < F; ++f) {
    const T* x = input.channel(f);
    for (std::size_t i = 0; i < N; ++i) mean[i] += x[i];
  }
  const T invF = T(1) / T(F);
  for (auto& m : mean) m *= invF;
  for (std::size_t f = 0; f < F; ++f) {
    const T* x = input.channel(f);
    for (std::size_t i = 0; i < N; ++i) {
      const T d = x[i] - mean[i];
      var[i] += d * d;
    }
  }
  std::vector<T> inv_std(N);
  for (std::size_t i = 0; i < N; ++i) inv_std[i] = T(1) / std::sqrt(var[i] * invF + epsilon);

  Tensor3<T> out(F, input.rows(), input.cols(), input.batch());
  Tensor3<T> normalized;
  if (cache != nullptr) normalized = Tensor3<T>(F, input.rows(), input.cols(), input.batch());
  for (std::size_t f = 0; f < F; ++f) {
    const T* x = input.channel(f);
    T* y = out.channel(f);
    T* xh = cache ? normalized.channel(f) : nullptr;
    for (std::size_t i = 0; i < N; ++i) {
      const T n = (x[i] - mean[i]) * inv_std[i];
      if (xh) xh[i] = n;
      y[i] = gain[f] * n + shift[f];
    }
  }
  if (cache != nullptr) {
    cache->normalized = std::move(normalized);
    cache->inv_std = std::move(inv_std);
  }
  return out;
}

template <typename T>
void layernorm_backward(const LayerNormCache<T>& cache, std::span<const T> gain,
                        const Tensor3<T>& grad_out, std::span<T> grad_gain,
                        std::span<T> grad_shift, Tensor3<T>* grad_input) {
  const auto& xhat = cache.normalized;
  const std::size_t F = xhat.channels(), N = xhat.cells();
  require(grad_out.same_shape(xhat), "layernorm_backward: grad shape");
  require(gain.size() == F && grad_gain.size() == F && grad_shift.size() == F,
          "layernorm_backward: parameter shape");
  std::vector<T> mean_g(N, T(0)), mean_gx(N, T(0));
  for (std::size_t f = 0; f < F; ++f) {
    const T* dy = grad_out.channel(f);
    const T* xh = xhat.channel(f);
    T sg = 0, ss = 0;
    for (std::size_t i = 0; i < N; ++i) {
      sg += dy[i] * xh[i];
      ss += dy[i];
      const T g = dy[i] * gain[f];
      mean_g[i] += g;
      mean_gx[i] += g * xh[i];
    }
    grad_gain[f] += sg;
    grad_shift[f] += ss;
  }
  if (grad_input == nullptr) return;
  require(grad_input->same_shape(xhat), "layernorm_backward: grad_input shape");
  const T invF = T(1) / T(F);
  for (std::size_t f = 0; f < F; ++f) {
    const T* dy = grad_out.channel(f);
    const T* xh = xhat.channel(f);
    T* dx = grad_input->channel(f);
    for (std::size_t i = 0; i < N; ++i) {
      dx[i] += cache.inv_std[i] *
               (dy[i] * gain[f] - mean_g[i] * invF - xh[i] * mean_gx[i] * invF);
    }
  }
}

template <typename T>
Tensor3<T> dense_forward(const Tensor3<T>& input, std::span<const T> weight,
                         std::span<const T> bias) {
  const std::size_t A = input.channels(), B = bias.size();
  require(weight.size() == A * B, "dense: weight is not [B,A]");
  Tensor3<T> out(B, input.rows(), input.cols(), input.batch());
  auto o = out.matrix();
  o.noalias() = ConstWeightMap<T>(weight.data(), Eigen::Index(B), Eigen::Index(A)) *
                input.matrix();
  o.colwise() += ConstVecMap<T>(bias.data(), Eigen::Index(B));
  return out;
}

template <typename T>
void dense_backward(const Tensor3<T>& input, std::span<const T> weight,
                    const Tensor3<T>& grad_out, std::span<T> grad_weight,
                    std::span<T> grad_bias, Tensor3<T>* grad_input) {
  const std::size_t A = input.channels(), B = grad_out.channels();
  require(weight.size() == A * B && grad_weight.size() == A * B && grad_bias.size() == B,
          "dense_backward: parameter shape");
  require(grad_out.same_geometry(input), "dense_backward: geometry mismatch");
  const auto g = grad_out.matrix();
  WeightMap<T>(grad_weight.data(), Eigen::Index(B), Eigen::Index(A)).noalias() +=
      g * input.matrix().transpose();
  add_row_sums<T>(g, grad_bias);
  if (grad_input != nullptr) {
    require(grad_input->same_shape(input), "dense_backward: grad_input shape");
    grad_input->matrix().noalias() +=
        ConstWeightMap<T>(weight.data(), Eigen::Index(B), Eigen::Index(A)).transpose() * g;
  }
}

template <typename T>
Tensor3<T> relu(const Tensor3<T>& input) {
  Tensor3<T> out = input;
  for (auto& v : out.data()) v = v > T(0) ? v : T(0);
  return out;
}

template <typename T>
void relu_backward(const Tensor3<T>& activation, const Tensor3<T>& grad_out,
                   Tensor3<T>& grad_input) {
  require(activation.same_shape(grad_out) && grad_input.same_shape(grad_out),
          "relu_backward: shape mismatch");
  const auto a = activation.data();
  const auto g = grad_out.data();
  auto d = grad_input.data();
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] > T(0)) d[i] += g[i];
  }
}

template <typename T>
Tensor3<T> softmax10(const Tensor3<T>& logits) {
  require(logits.channels() == kSoftmaxChannels, "softmax10: expects 10 channels");
  const std::size_t K = logits.channels(), N = logits.cells();
  Tensor3<T> out(K, logits.rows(), logits.cols(), logits.batch());
  std::vector<T> mx(N, -std::numeric_limits<T>::infinity()), sum(N, T(0));
  for (std::size_t k = 0; k < K; ++k) {
    const T* l = logits.channel(k);
    for (std::size_t i = 0; i < N; ++i) mx[i] = std::max(mx[i], l[i]);
  }
  for (std::size_t k = 0; k < K; ++k) {
    const T* l = logits.channel(k);
    T* p = out.channel(k);
    for (std::size_t i = 0; i < N; ++i) {
      p[i] = std::exp(l[i] - mx[i]);
      sum[i] += p[i];
    }
  }
  for (auto& s : sum) s = T(1) / s;
  for (std::size_t k = 0; k < K; ++k) {
    T* p = out.channel(k);
    for (std::size_t i = 0; i < N; ++i) p[i] *= sum[i];
  }
  return out;
}

template <typename T>
void softmax10_backward(const Tensor3<T>& probs, const Tensor3<T>& grad_probs,
                        Tensor3<T>& grad_logits) {
  require(probs.same_shape(grad_probs) && probs.same_shape(grad_logits),
          "softmax10_backward: shape mismatch");
  const std::size_t K = probs.channels(), N = probs.cells();
  std::vector<T> dot(N, T(0));
  for (std::size_t k = 0; k < K; ++k) {
    const T* p = probs.channel(k);
    const T* g = grad_probs.channel(k);
    for (std::size_t i = 0; i < N; ++i) dot[i] += p[i] * g[i];
  }
  for (std::size_t k = 0; k < K; ++k) {
    const T* p = probs.channel(k);
    const T* g = grad_probs.channel(k);
    T* d = grad_logits.channel(k);
    for (std::size_t i = 0; i < N; ++i) d[i] += p[i] * (g[i] - dot[i]);
  }
}

template <typename T>
T cross_entropy(const Tensor3<T>& logits, std::span<const std::uint8_t> target) {
  require(logits.channels() == kSoftmaxChannels, "cross_entropy: expects 10 channels");
  require(target.size() == logits.plane(), "cross_entropy: target shape mismatch");
  const std::size_t K = logits.channels(), N = logits.cells(), P = logits.plane();
  double total = 0.0;
  for (std::size_t i = 0; i < N; ++i) {
    T mx = logits.channel(0)[i];
    for (std::size_t k = 1; k < K; ++k) mx = std::max(mx, logits.channel(k)[i]);
    T s = 0;
    for (std::size_t k = 0; k < K; ++k) s += std::exp(logits.channel(k)[i] - mx);
    const T lse = mx + std::log(s);
    total += double(lse - logits.channel(target[i % P])[i]);
  }
  return T(total / double(N));
}

template <typename T>
void cross_entropy_backward_from_probs(const Tensor3<T>& probs,
                                       std::span<const std::uint8_t> target, T scale,
                                       Tensor3<T>& grad_logits) {
  require(probs.same_shape(grad_logits), "cross_entropy_backward: shape mismatch");
  require(target.size() == probs.plane(), "cross_entropy_backward: target shape mismatch");
  const std::size_t K = probs.channels(), N = probs.cells(), P = probs.plane();
  const T w = scale / T(N);
  for (std::size_t k = 0; k < K; ++k) {
    const T* p = probs.channel(k);
    T* d = grad_logits.channel(k);
    for (std::size_t i = 0; i < N; ++i) {
      d[i] += w * (p[i] - (target[i % P] == k ? T(1) : T(0)));
    }
  }
}

template <typename T>
void cross_entropy_backward(const Tensor3<T>& logits, std::span<const std::uint8_t> target,
                            T scale, Tensor3<T>& grad_logits) {
  cross_entropy_backward_from_probs(softmax10(logits), target, scale, grad_logits);
}

#define NCA_ARC_INSTANTIATE(T)                                                              \
  template RowMatrix<T> im2col3x3(const Tensor3<T>&);                                       \
  template void col2im3x3_add(const RowMatrix<T>&, Tensor3<T>&);                            \
  template Tensor3<T> conv3x3_forward(const Tensor3<T>&, std::span<const T>,                \
                                      std::span<const T>);                                  \
  template void conv3x3_backward(const Tensor3<T>&, std::span<const T>, const Tensor3<T>&,  \
                                 std::span<T>, std::span<T>, Tensor3<T>*);                  \
  template void conv3x3_backward_cols(const RowMatrix<T>&, const Tensor3<T>&,               \
                                      std::span<const T>, const Tensor3<T>&, std::span<T>,  \
                                      std::span<T>, Tensor3<T>*);                           \
  template Tensor3<T> layernorm_forward(const Tensor3<T>&, std::span<const T>,              \
                                        std::span<const T>, T, LayerNormCache<T>*);         \
  template void layernorm_backward(const LayerNormCache<T>&, std::span<const T>,            \
                                   const Tensor3<T>&, std::span<T>, std::span<T>,           \
                                   Tensor3<T>*);                                            \
  template Tensor3<T> dense_forward(const Tensor3<T>&, std::span<const T>,                  \
                                    std::span<const T>);                                    \
  template void dense_backward(const Tensor3<T>&, std::span<const T>, const Tensor3<T>&,    \
                               std::span<T>, std::span<T>, Tensor3<T>*);                    \
  template Tensor3<T> relu(const Tensor3<T>&);                                              \
  template void relu_backward(const Tensor3<T>&, const Tensor3<T>&, Tensor3<T>&);           \
  template Tensor3<T> softmax10(const Tensor3<T>&);                                         \
  template void softmax10_backward(const Tensor3<T>&, const Tensor3<T>&, Tensor3<T>&);      \
  template T cross_entropy(const Tensor3<T>&, std::span<const std::uint8_t>);               \
  template void cross_entropy_backward(const Tensor3<T>&, std::span<const std::uint8_t>, T, \
                                       Tensor3<T>&);                                        \
  template void cross_entropy_backward_from_probs(const Tensor3<T>&,                        \
                                                  std::span<const std::uint8_t>, T,         \
                                                  Tensor3<T>&);

NCA_ARC_INSTANTIATE(float)
NCA_ARC_INSTANTIATE(double)

#undef NCA_ARC_INSTANTIATE

}  // namespace nca_arc

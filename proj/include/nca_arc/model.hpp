#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include "nca_arc/kernels.hpp"
#include "nca_arc/tensor.hpp"

namespace nca_arc {

using Rng = std::mt19937_64;

/// Mixes a base seed with stream coordinates (epoch, example, trial, ...) into
/// an independent 64-bit seed.
std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> coords);

struct ModelSpec {
  std::size_t hidden_channels = 20;
  std::size_t perception_filters = 24;
  std::size_t dense_width = 64;

  std::size_t total_channels() const { return kNumColorChannels + hidden_channels; }
  std::size_t parameter_count() const;
  /// Throws std::invalid_argument when a width is unusable.
  void validate() const;

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;

  static constexpr std::size_t kNumColorChannels = 10;
};

/// Parameter blocks in their fixed storage and checkpoint order.
enum class Block : std::size_t {
  PerceptionKernel,
  PerceptionBias,
  LnGain,
  LnShift,
  Dense1Weight,
  Dense1Bias,
  Dense2Weight,
  Dense2Bias,
};
inline constexpr std::size_t kNumBlocks = 8;
inline constexpr std::array<std::string_view, kNumBlocks> kBlockNames = {
    "perception_kernel", "perception_bias", "ln_gain",      "ln_shift",
    "dense1_weight",     "dense1_bias",     "dense2_weight", "dense2_bias"};

std::vector<std::size_t> block_shape(const ModelSpec& spec, Block block);

/// Learnable weights of the step network. Also used as the gradient container.
template <typename T>
struct ModelParams {
  ModelSpec spec;
  std::array<std::vector<T>, kNumBlocks> blocks;

  static ModelParams zeros(const ModelSpec& spec);

  std::span<T> operator[](Block b) { return blocks[std::size_t(b)]; }
  std::span<const T> operator[](Block b) const { return blocks[std::size_t(b)]; }

  std::size_t size() const;
  void fill(T v);
  bool all_finite() const;

  template <typename U>
  ModelParams<U> cast() const {
    ModelParams<U> out;
    out.spec = spec;
    for (std::size_t i = 0; i < kNumBlocks; ++i)
      out.blocks[i].assign(blocks[i].begin(), blocks[i].end());
    return out;
  }

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

template <typename T>
using ParamGrads = ModelParams<T>;

/// Fan-in uniform weights in [-sqrt(1/fan_in), sqrt(1/fan_in)], zero biases,
/// unit layernorm gain, zero shift.
template <typename T>
ModelParams<T> init_params(const ModelSpec& spec, Rng& rng);

struct MaskConfig {
  double probability = 0.0;
  bool enabled = false;

  static MaskConfig off() { return {}; }
  static MaskConfig with(double p) { return {p, true}; }
  double effective() const { return enabled ? probability : 0.0; }
};

/// Per-cell interpolation strengths for one step over the whole batch.
/// 0 marks an unmasked cell (new = candidate).
template <typename T>
using StepMask = std::vector<T>;

/// Draws one step's mask: each cell is masked with its image's probability and
/// then gets alpha ~ U(0,1). Disabled configs draw nothing.
template <typename T>
StepMask<T> sample_step_mask(std::span<const MaskConfig> masks, std::span<Rng> rngs,
                             std::size_t plane);

template <typename T>
struct StepCache {
  LayerNormCache<T> ln;
  Tensor3<T> hidden1;  // relu(layernorm(conv)), F channels
  Tensor3<T> hidden2;  // relu(dense1), D channels
  Tensor3<T> probs;    // softmax of the color logits
  StepMask<T> alpha;
};

template <typename T>
struct StepResult {
  Tensor3<T> state;
  Tensor3<T> logits;  // 10 channels, pre-softmax
};

/// Applies one update with an explicit mask realization.
template <typename T>
StepResult<T> step_with_mask(const ModelParams<T>& params, const Tensor3<T>& state,
                             std::span<const T> alpha, StepCache<T>* cache = nullptr);

/// One update; samples the mask from `rng` (single image).
template <typename T>
StepResult<T> step(const ModelParams<T>& params, const Tensor3<T>& state,
                   const MaskConfig& mask, Rng& rng);

template <typename T>
struct Trajectory {
  std::vector<Tensor3<T>> states;  // states[0] is the initial state, T+1 entries
  std::vector<Tensor3<T>> logits;  // one per step
  std::vector<StepMask<T>> masks;  // realized masks, one per step
  std::vector<StepCache<T>> caches;
  bool retained = false;

  std::size_t steps() const { return logits.size(); }
  const Tensor3<T>& final_state() const { return states.back(); }
};

/// Runs `steps` updates. `masks` and `rngs` hold one entry per batch image.
template <typename T>
Trajectory<T> rollout(const ModelParams<T>& params, Tensor3<T> init, std::size_t steps,
                      std::span<const MaskConfig> masks, std::span<Rng> rngs,
                      bool retain = true);

/// Single-image convenience overload.
template <typename T>
Trajectory<T> rollout(const ModelParams<T>& params, Tensor3<T> init, std::size_t steps,
                      const MaskConfig& mask, Rng& rng, bool retain = true);

/// Replays a fixed mask realization (one StepMask per step).
template <typename T>
Trajectory<T> rollout_replay(const ModelParams<T>& params, Tensor3<T> init,
                             std::span<const StepMask<T>> masks, bool retain = true);

/// Synchronous rollout without retention; returns only the final state.
template <typename T>
Tensor3<T> run_synchronous(const ModelParams<T>& params, Tensor3<T> state, std::size_t steps);

/// Backpropagation through time. `logit_grads[t]` is dLoss/dlogits of step t.
/// Accumulates parameter gradients into `grads`; the initial state gets none.
template <typename T>
void backward_rollout(const ModelParams<T>& params, const Trajectory<T>& trajectory,
                      std::span<const Tensor3<T>> logit_grads, ParamGrads<T>& grads);

}  // namespace nca_arc

#include "nca_arc/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace nca_arc {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

constexpr std::size_t kColors = ModelSpec::kNumColorChannels;

template <typename T>
Tensor3<T> channel_slice(const Tensor3<T>& t, std::size_t first, std::size_t count) {
  Tensor3<T> out(count, t.rows(), t.cols(), t.batch());
  std::copy_n(t.channel(first), count * t.cells(), out.channel(0));
  return out;
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> coords) {
  std::uint64_t h = splitmix64(base);
  for (auto c : coords) h = splitmix64(h ^ splitmix64(c + 0x632BE59BD9B4E019ULL));
  return h;
}

std::size_t ModelSpec::parameter_count() const {
  const std::size_t C = total_channels(), F = perception_filters, D = dense_width;
  return 9 * C * F + F + 2 * F + F * D + D + D * C + C;
}

void ModelSpec::validate() const {
  if (perception_filters < 2) throw std::invalid_argument("perception_filters must be >= 2");
  if (dense_width < 1) throw std::invalid_argument("dense_width must be >= 1");
  if (hidden_channels > 1024) throw std::invalid_argument("hidden_channels is unreasonably large");
}

std::vector<std::size_t> block_shape(const ModelSpec& spec, Block block) {
  const std::size_t C = spec.total_channels(), F = spec.perception_filters,
                    D = spec.dense_width;
  switch (block) {
    case Block::PerceptionKernel:
      return {F, C, 3, 3};
    case Block::PerceptionBias:
    case Block::LnGain:
    case Block::LnShift:
      return {F};
    case Block::Dense1Weight:
      return {D, F};
    case Block::Dense1Bias:
      return {D};
    case Block::Dense2Weight:
      return {C, D};
    case Block::Dense2Bias:
      return {C};
  }
  return {};
}

template <typename T>
ModelParams<T> ModelParams<T>::zeros(const ModelSpec& spec) {
  spec.validate();
  ModelParams<T> p;
  p.spec = spec;
  for (std::size_t i = 0; i < kNumBlocks; ++i) {
    std::size_t n = 1;
    for (auto d : block_shape(spec, Block(i))) n *= d;
    p.blocks[i].assign(n, T(0));
  }
  return p;
}

template <typename T>
std::size_t ModelParams<T>::size() const {
  std::size_t n = 0;
  for (const auto& b : blocks) n += b.size();
  return n;
}

template <typename T>
void ModelParams<T>::fill(T v) {
  for (auto& b : blocks) std::fill(b.begin(), b.end(), v);
}

template <typename T>
bool ModelParams<T>::all_finite() const {
  for (const auto& b : blocks)
    for (T v : b)
      if (!std::isfinite(v)) return false;
  return true;
}

template <typename T>
ModelParams<T> init_params(const ModelSpec& spec, Rng& rng) {
  auto p = ModelParams<T>::zeros(spec);
  auto fill_uniform = [&rng](std::span<T> w, std::size_t fan_in) {
    const double a = std::sqrt(1.0 / double(fan_in));
    std::uniform_real_distribution<double> dist(-a, a);
    for (auto& v : w) v = T(dist(rng));
  };
  fill_uniform(p[Block::PerceptionKernel], 9 * spec.total_channels());
  fill_uniform(p[Block::Dense1Weight], spec.perception_filters);
  fill_uniform(p[Block::Dense2Weight], spec.dense_width);
  std::fill(p[Block::LnGain].begin(), p[Block::LnGain].end(), T(1));
  return p;
}

template <typename T>
StepMask<T> sample_step_mask(std::span<const MaskConfig> masks, std::span<Rng> rngs,
                             std::size_t plane) {
  if (masks.size() != rngs.size()) {
    throw std::invalid_argument("sample_step_mask: need one rng per mask config");
  }
  StepMask<T> alpha(masks.size() * plane, T(0));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t b = 0; b < masks.size(); ++b) {
    if (!masks[b].enabled) continue;
    const double p = masks[b].probability;
    if (p < 0.0 || p > 1.0) throw std::invalid_argument("mask probability outside [0,1]");
    for (std::size_t i = 0; i < plane; ++i) {
      if (unit(rngs[b]) < p) alpha[b * plane + i] = T(unit(rngs[b]));
    }
  }
  return alpha;
}

template <typename T>
StepResult<T> step_with_mask(const ModelParams<T>& params, const Tensor3<T>& state,
                             std::span<const T> alpha, StepCache<T>* cache) {
  const auto& spec = params.spec;
  const std::size_t C = spec.total_channels();
  if (state.channels() != C) {
    throw ShapeError("step: state has " + std::to_string(state.channels()) +
                     " channels, model expects " + std::to_string(C));
  }
  if (!alpha.empty() && alpha.size() != state.cells()) {
    throw ShapeError("step: mask size does not match the state");
  }

  auto conv = conv3x3_forward<T>(state, params[Block::PerceptionKernel],
                                 params[Block::PerceptionBias]);
  auto normed = layernorm_forward<T>(conv, params[Block::LnGain], params[Block::LnShift],
                                     T(kLayerNormEpsilon), cache ? &cache->ln : nullptr);
  auto h1 = relu(normed);
  auto h2 = relu(dense_forward<T>(h1, params[Block::Dense1Weight], params[Block::Dense1Bias]));
  auto out = dense_forward<T>(h2, params[Block::Dense2Weight], params[Block::Dense2Bias]);

  StepResult<T> result;
  result.logits = channel_slice(out, 0, kColors);
  auto probs = softmax10(result.logits);
  std::copy_n(probs.channel(0), kColors * out.cells(), out.channel(0));

  for (std::size_t i = 0; i < alpha.size(); ++i) {
    const T a = alpha[i];
    if (a <= T(0)) continue;
    for (std::size_t c = 0; c < C; ++c) {
      T& v = out.channel(c)[i];
      v = a * state.channel(c)[i] + (T(1) - a) * v;
    }
  }
  result.state = std::move(out);

  if (cache != nullptr) {
    cache->hidden1 = std::move(h1);
    cache->hidden2 = std::move(h2);
    cache->probs = std::move(probs);
    cache->alpha.assign(alpha.begin(), alpha.end());
  }
  return result;
}

template <typename T>
StepResult<T> step(const ModelParams<T>& params, const Tensor3<T>& state,
                   const MaskConfig& mask, Rng& rng) {
  if (state.batch() != 1) throw ShapeError("step: single-image overload needs batch 1");
  const auto alpha = sample_step_mask<T>(std::span(&mask, 1), std::span(&rng, 1), state.plane());
  return step_with_mask<T>(params, state, alpha, nullptr);
}

template <typename T>
Trajectory<T> rollout(const ModelParams<T>& params, Tensor3<T> init, std::size_t steps,
                      std::span<const MaskConfig> masks, std::span<Rng> rngs, bool retain) {
  if (steps == 0) throw std::invalid_argument("rollout: steps must be >= 1");
  if (masks.size() != init.batch() || rngs.size() != init.batch()) {
    throw std::invalid_argument("rollout: need one mask config and rng per batch image");
  }
  Trajectory<T> traj;
  traj.retained = retain;
  traj.states.reserve(steps + 1);
  traj.states.push_back(std::move(init));
  for (std::size_t t = 0; t < steps; ++t) {
    auto alpha = sample_step_mask<T>(masks, rngs, traj.states.back().plane());
    StepCache<T> cache;
    auto res = step_with_mask<T>(params, traj.states.back(), alpha, retain ? &cache : nullptr);
    traj.states.push_back(std::move(res.state));
    traj.logits.push_back(std::move(res.logits));
    traj.masks.push_back(std::move(alpha));
    if (retain) traj.caches.push_back(std::move(cache));
  }
  return traj;
}

template <typename T>
Trajectory<T> rollout(const ModelParams<T>& params, Tensor3<T> init, std::size_t steps,
                      const MaskConfig& mask, Rng& rng, bool retain) {
  return rollout<T>(params, std::move(init), steps, std::span(&mask, 1), std::span(&rng, 1),
                    retain);
}

template <typename T>
Trajectory<T> rollout_replay(const ModelParams<T>& params, Tensor3<T> init,
                             std::span<const StepMask<T>> masks, bool retain) {
  if (masks.empty()) throw std::invalid_argument("rollout: steps must be >= 1");
  Trajectory<T> traj;
  traj.retained = retain;
  traj.states.push_back(std::move(init));
  for (const auto& alpha : masks) {
    StepCache<T> cache;
    auto res = step_with_mask<T>(params, traj.states.back(), alpha, retain ? &cache : nullptr);
    traj.states.push_back(std::move(res.state));
    traj.logits.push_back(std::move(res.logits));
    traj.masks.push_back(alpha);
    if (retain) traj.caches.push_back(std::move(cache));
  }
  return traj;
}

template <typename T>
Tensor3<T> run_synchronous(const ModelParams<T>& params, Tensor3<T> state, std::size_t steps) {
  for (std::size_t t = 0; t < steps; ++t) {
    state = step_with_mask<T>(params, state, {}, nullptr).state;
  }
  return state;
}

template <typename T>
void backward_rollout(const ModelParams<T>& params, const Trajectory<T>& trajectory,
                      std::span<const Tensor3<T>> logit_grads, ParamGrads<T>& grads) {
  if (!trajectory.retained || trajectory.caches.size() != trajectory.steps()) {
    throw std::logic_error("backward_rollout: trajectory was built without retention");
  }
  if (logit_grads.size() != trajectory.steps()) {
    throw std::invalid_argument("backward_rollout: need one logit gradient per step");
  }
  if (grads.spec != params.spec || grads.size() != params.size()) {
    throw std::invalid_argument("backward_rollout: gradient container shape mismatch");
  }
  const std::size_t C = params.spec.total_channels();
  const auto& s0 = trajectory.states.front();
  const std::size_t N = s0.cells();

  // Gradient of the loss w.r.t. the state produced by the current step.
  Tensor3<T> d_state(C, s0.rows(), s0.cols(), s0.batch());

  for (std::size_t t = trajectory.steps(); t-- > 0;) {
    const auto& cache = trajectory.caches[t];
    const auto& input = trajectory.states[t];
    if (!logit_grads[t].same_shape(cache.probs)) {
      throw ShapeError("backward_rollout: logit gradient shape mismatch at step " +
                       std::to_string(t));
    }

    // Interpolation: new = a*old + (1-a)*cand on masked cells.
    Tensor3<T> d_prev(C, s0.rows(), s0.cols(), s0.batch());
    if (!cache.alpha.empty()) {
      for (std::size_t i = 0; i < N; ++i) {
        const T a = cache.alpha[i];
        if (a <= T(0)) continue;
        for (std::size_t c = 0; c < C; ++c) {
          T& g = d_state.channel(c)[i];
          d_prev.channel(c)[i] = a * g;
          g *= (T(1) - a);
        }
      }
    }

    // d_state now holds dLoss/dcandidate. Colors pass through softmax, hidden
    // channels are the raw network outputs.
    Tensor3<T> d_out(C, s0.rows(), s0.cols(), s0.batch());
    std::copy_n(logit_grads[t].channel(0), kColors * N, d_out.channel(0));
    if (C > kColors) {
      std::copy_n(d_state.channel(kColors), (C - kColors) * N, d_out.channel(kColors));
    }
    {
      Tensor3<T> d_logits(kColors, s0.rows(), s0.cols(), s0.batch());
      auto d_probs = channel_slice(d_state, 0, kColors);
      softmax10_backward(cache.probs, d_probs, d_logits);
      d_out.channel_block(0, kColors) += d_logits.matrix();
    }

    Tensor3<T> d_h2(params.spec.dense_width, s0.rows(), s0.cols(), s0.batch());
    dense_backward<T>(cache.hidden2, params[Block::Dense2Weight], d_out,
                      grads[Block::Dense2Weight], grads[Block::Dense2Bias], &d_h2);
    Tensor3<T> d_pre2(params.spec.dense_width, s0.rows(), s0.cols(), s0.batch());
    relu_backward(cache.hidden2, d_h2, d_pre2);

    Tensor3<T> d_h1(params.spec.perception_filters, s0.rows(), s0.cols(), s0.batch());
    dense_backward<T>(cache.hidden1, params[Block::Dense1Weight], d_pre2,
                      grads[Block::Dense1Weight], grads[Block::Dense1Bias], &d_h1);
    Tensor3<T> d_normed(params.spec.perception_filters, s0.rows(), s0.cols(), s0.batch());
    relu_backward(cache.hidden1, d_h1, d_normed);

    Tensor3<T> d_conv(params.spec.perception_filters, s0.rows(), s0.cols(), s0.batch());
    layernorm_backward<T>(cache.ln, params[Block::LnGain], d_normed, grads[Block::LnGain],
                          grads[Block::LnShift], &d_conv);

    conv3x3_backward<T>(input, params[Block::PerceptionKernel], d_conv,
                        grads[Block::PerceptionKernel], grads[Block::PerceptionBias],
                        t > 0 ? &d_prev : nullptr);
    d_state = std::move(d_prev);
  }
}

#define NCA_ARC_INSTANTIATE(T)                                                                \
  template struct ModelParams<T>;                                                             \
  template ModelParams<T> init_params<T>(const ModelSpec&, Rng&);                             \
  template StepMask<T> sample_step_mask<T>(std::span<const MaskConfig>, std::span<Rng>,       \
                                           std::size_t);                                      \
  template StepResult<T> step_with_mask<T>(const ModelParams<T>&, const Tensor3<T>&,          \
                                           std::span<const T>, StepCache<T>*);                \
  template StepResult<T> step<T>(const ModelParams<T>&, const Tensor3<T>&, const MaskConfig&, \
                                 Rng&);                                                       \
  template Trajectory<T> rollout<T>(const ModelParams<T>&, Tensor3<T>, std::size_t,           \
                                    std::span<const MaskConfig>, std::span<Rng>, bool);       \
  template Trajectory<T> rollout<T>(const ModelParams<T>&, Tensor3<T>, std::size_t,           \
                                    const MaskConfig&, Rng&, bool);                           \
  template Trajectory<T> rollout_replay<T>(const ModelParams<T>&, Tensor3<T>,                 \
                                           std::span<const StepMask<T>>, bool);               \
  template Tensor3<T> run_synchronous<T>(const ModelParams<T>&, Tensor3<T>, std::size_t);     \
  template void backward_rollout<T>(const ModelParams<T>&, const Trajectory<T>&,              \
                                    std::span<const Tensor3<T>>, ParamGrads<T>&);

NCA_ARC_INSTANTIATE(float)
NCA_ARC_INSTANTIATE(double)

#undef NCA_ARC_INSTANTIATE

}  // namespace nca_arc

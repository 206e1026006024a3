#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "nca_arc/arc_data.hpp"
#include "nca_arc/model.hpp"

namespace nca_arc {

struct TrainConfig {
  std::size_t epochs = 800;
  std::size_t steps = 10;
  std::size_t trials_per_example = 128;
  double mask_lo = 0.0;
  double mask_hi = 0.75;
  double lr_start = 0.002;
  double lr_end = 0.0001;
  double weight_decay = 0.01;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  /// Global gradient-norm ceiling; inert unless BPTT spikes.
  double max_grad_norm = 100.0;
  std::uint64_t seed = 0;
  /// Rollouts batched together per job. Part of the reduction order, so it
  /// affects results bitwise; the worker count does not.
  std::size_t trials_per_job = 32;
  std::size_t workers = 1;

  void validate() const;
  /// Short stable fingerprint of every field that influences training.
  std::string digest() const;
};

/// Thrown by adamw_step when a gradient block holds NaN or infinity.
class NonFiniteGradient : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename T>
struct OptState {
  ModelParams<T> first_moment;
  ModelParams<T> second_moment;
  std::uint64_t step = 0;

  static OptState zeros(const ModelSpec& spec) {
    return {ModelParams<T>::zeros(spec), ModelParams<T>::zeros(spec), 0};
  }
};

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double mean_loss = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  double final_loss = 0.0;
  double wall_time = 0.0;
};

struct TrainResult {
  ModelParams<float> params;
  OptState<float> opt;
  TrainHistory history;
};

struct TrainHooks {
  /// Called after every epoch; return false to stop early.
  std::function<bool(const EpochRecord&)> on_epoch;
  /// When set, one JSON line per epoch: {"epoch","lr","mean_loss"}.
  std::optional<std::filesystem::path> log_path;
};

/// Linear decay from lr_start at epoch 0 to lr_end at epoch == epochs.
double lr_at(std::size_t epoch, const TrainConfig& config);

/// Mean over steps of the per-step mean cross-entropy against `target`.
template <typename T>
T rollout_loss(const Trajectory<T>& trajectory, const Grid& target);

/// Logit gradients of `scale * rollout_loss` for backward_rollout.
template <typename T>
std::vector<Tensor3<T>> rollout_loss_gradients(const Trajectory<T>& trajectory,
                                               const Grid& target, T scale);

/// Decoupled-weight-decay Adam with bias correction. Throws NonFiniteGradient
/// (naming the block) before touching any state.
template <typename T>
void adamw_step(ModelParams<T>& params, const ParamGrads<T>& grads, OptState<T>& opt,
                double lr, const TrainConfig& config);

/// Scales `grads` so its global L2 norm is at most `max_norm`; returns the
/// norm before scaling.
template <typename T>
double clip_grad_norm(ParamGrads<T>& grads, double max_norm);

/// Loss and accumulated gradient of one epoch at fixed parameters, without
/// an optimizer step.
struct EpochGradient {
  double mean_loss = 0.0;
  ParamGrads<float> grads;
};
EpochGradient epoch_gradient(const ModelParams<float>& params, const Task& task,
                             const TrainConfig& config, std::size_t epoch);

TrainResult train_task(const Task& task, const ModelSpec& spec, const TrainConfig& config,
                       const TrainHooks& hooks = {});

struct GradCheckInstance {
  std::size_t rows = 0, cols = 0, channels = 0, steps = 0;
  double mask_probability = 0.0;
  double max_rel_error = 0.0;
  std::string worst_block;
};

struct GradCheckReport {
  std::vector<GradCheckInstance> instances;
  double max_rel_error = 0.0;
  std::size_t parameters_checked = 0;
};

/// Relative error used by grad_check: |a - n| / max(|a|, |n|, floor).
double grad_rel_error(double analytic, double numeric);
inline constexpr double kGradCheckFloor = 1e-3;
inline constexpr double kGradCheckStep = 1e-5;

/// Compares BPTT gradients with central finite differences on `trials` random
/// tiny instances (grids <= 4x4, C <= 12, T <= 3, p in {0, 0.5} with the mask
/// realization frozen). Runs in double precision.
GradCheckReport grad_check(std::size_t trials, std::uint64_t seed = 0,
                           std::optional<std::size_t> fixed_steps = std::nullopt,
                           std::optional<double> fixed_mask = std::nullopt);

}  // namespace nca_arc

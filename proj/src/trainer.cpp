#include "nca_arc/trainer.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "nca_arc/state_codec.hpp"

namespace nca_arc {

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("TrainConfig: " + m); };
  if (!(0.0 <= mask_lo && mask_lo <= mask_hi && mask_hi <= 1.0))
    fail("mask range must satisfy 0 <= lo <= hi <= 1");
  if (epochs < 1) fail("epochs must be >= 1");
  if (steps < 1) fail("steps must be >= 1");
  if (trials_per_example < 1) fail("trials must be >= 1");
  if (!(lr_start >= lr_end && lr_end > 0.0)) fail("need lr_start >= lr_end > 0");
  if (trials_per_job < 1) fail("trials_per_job must be >= 1");
  if (weight_decay < 0.0) fail("weight_decay must be >= 0");
}

std::string TrainConfig::digest() const {
  nlohmann::json j = {{"epochs", epochs},
                      {"steps", steps},
                      {"trials", trials_per_example},
                      {"mask", {mask_lo, mask_hi}},
                      {"lr", {lr_start, lr_end}},
                      {"wd", weight_decay},
                      {"adam", {adam_beta1, adam_beta2, adam_epsilon}},
                      {"clip", max_grad_norm},
                      {"seed", seed},
                      {"job", trials_per_job}};
  const std::string text = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream out;
  out << std::hex;
  out.width(16);
  out.fill('0');
  out << h;
  return out.str();
}

double lr_at(std::size_t epoch, const TrainConfig& config) {
  const double frac = double(epoch) / double(config.epochs);
  return config.lr_start + (config.lr_end - config.lr_start) * frac;
}

template <typename T>
T rollout_loss(const Trajectory<T>& trajectory, const Grid& target) {
  if (trajectory.steps() == 0) throw std::invalid_argument("rollout_loss: empty trajectory");
  const auto& l0 = trajectory.logits.front();
  if (l0.rows() != target.rows() || l0.cols() != target.cols()) {
    throw ShapeError("rollout_loss: trajectory grid does not match the target shape");
  }
  double total = 0.0;
  for (const auto& logits : trajectory.logits) {
    total += double(cross_entropy<T>(logits, target.cells()));
  }
  return T(total / double(trajectory.steps()));
}

template <typename T>
std::vector<Tensor3<T>> rollout_loss_gradients(const Trajectory<T>& trajectory,
                                               const Grid& target, T scale) {
  if (!trajectory.retained) {
    throw std::logic_error("rollout_loss_gradients: trajectory was built without retention");
  }
  const T per_step = scale / T(trajectory.steps());
  std::vector<Tensor3<T>> out;
  out.reserve(trajectory.steps());
  for (const auto& cache : trajectory.caches) {
    Tensor3<T> g(cache.probs.channels(), cache.probs.rows(), cache.probs.cols(),
                 cache.probs.batch());
    cross_entropy_backward_from_probs<T>(cache.probs, target.cells(), per_step, g);
    out.push_back(std::move(g));
  }
  return out;
}

template <typename T>
void adamw_step(ModelParams<T>& params, const ParamGrads<T>& grads, OptState<T>& opt,
                double lr, const TrainConfig& config) {
  if (!(lr > 0.0)) throw std::invalid_argument("adamw_step: lr must be > 0");
  if (grads.spec != params.spec || opt.first_moment.spec != params.spec) {
    throw std::invalid_argument("adamw_step: shape mismatch");
  }
  for (std::size_t b = 0; b < kNumBlocks; ++b) {
    for (T g : grads.blocks[b]) {
      if (!std::isfinite(g)) {
        throw NonFiniteGradient("non-finite gradient in block " + std::string(kBlockNames[b]));
      }
    }
  }
  opt.step += 1;
  const double b1 = config.adam_beta1, b2 = config.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, double(opt.step));
  const double c2 = 1.0 - std::pow(b2, double(opt.step));
  const double decay = 1.0 - lr * config.weight_decay;
  for (std::size_t b = 0; b < kNumBlocks; ++b) {
    auto& w = params.blocks[b];
    const auto& g = grads.blocks[b];
    auto& m = opt.first_moment.blocks[b];
    auto& v = opt.second_moment.blocks[b];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = T(b1 * m[i] + (1.0 - b1) * g[i]);
      v[i] = T(b2 * v[i] + (1.0 - b2) * double(g[i]) * double(g[i]));
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      double x = double(w[i]) * decay;
      x -= lr * m_hat / (std::sqrt(v_hat) + config.adam_epsilon);
      w[i] = T(x);
    }
  }
}

template <typename T>
double clip_grad_norm(ParamGrads<T>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& b : grads.blocks)
    for (T g : b) sq += double(g) * double(g);
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (auto& b : grads.blocks)
      for (auto& g : b) g = T(g * s);
  }
  return norm;
}

namespace {

struct RolloutJob {
  std::size_t example = 0;
  std::size_t first_trial = 0;
  std::size_t count = 0;
};

std::vector<RolloutJob> plan_jobs(const Task& task, const TrainConfig& config) {
  std::vector<RolloutJob> jobs;
  for (std::size_t e = 0; e < task.train.size(); ++e) {
    for (std::size_t t = 0; t < config.trials_per_example; t += config.trials_per_job) {
      jobs.push_back({e, t, std::min(config.trials_per_job, config.trials_per_example - t)});
    }
  }
  return jobs;
}

// Runs `fn(i)` for i in [0, n) on up to `workers` threads.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mu);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

void check_trainable(const Task& task) {
  if (task.train.empty()) throw DataError(task.id + ": no training examples");
  for (std::size_t i = 0; i < task.train.size(); ++i) {
    if (!task.train[i].input.same_shape(task.train[i].output)) {
      throw DataError(task.id + ": train[" + std::to_string(i) +
                      "] input and output shapes differ");
    }
  }
}

}  // namespace

EpochGradient epoch_gradient(const ModelParams<float>& params, const Task& task,
                             const TrainConfig& config, std::size_t epoch) {
  check_trainable(task);
  const auto jobs = plan_jobs(task, config);
  const double total_rollouts = double(task.train.size() * config.trials_per_example);
  const std::size_t C = params.spec.total_channels();

  std::vector<ParamGrads<float>> job_grads(jobs.size());
  std::vector<double> job_loss(jobs.size(), 0.0);

  parallel_for(jobs.size(), config.workers, [&](std::size_t j) {
    const auto& job = jobs[j];
    const auto& example = task.train[job.example];
    std::vector<MaskConfig> masks(job.count);
    std::vector<Rng> rngs;
    rngs.reserve(job.count);
    for (std::size_t k = 0; k < job.count; ++k) {
      rngs.emplace_back(derive_seed(config.seed, {epoch, job.example, job.first_trial + k}));
      std::uniform_real_distribution<double> range(config.mask_lo, config.mask_hi);
      masks[k] = MaskConfig::with(config.mask_hi > config.mask_lo ? range(rngs.back())
                                                                  : config.mask_lo);
    }
    auto traj = rollout<float>(params, one_hot_encode<float>(example.input, C, job.count),
                               config.steps, masks, rngs, true);
    const double weight = double(job.count) / total_rollouts;
    job_loss[j] = double(rollout_loss(traj, example.output)) * weight;
    const auto logit_grads = rollout_loss_gradients(traj, example.output, float(weight));
    job_grads[j] = ParamGrads<float>::zeros(params.spec);
    backward_rollout<float>(params, traj, logit_grads, job_grads[j]);
  });

  EpochGradient out{0.0, ParamGrads<float>::zeros(params.spec)};
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    out.mean_loss += job_loss[j];
    for (std::size_t b = 0; b < kNumBlocks; ++b) {
      auto& dst = out.grads.blocks[b];
      const auto& src = job_grads[j].blocks[b];
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
  }
  return out;
}

TrainResult train_task(const Task& task, const ModelSpec& spec, const TrainConfig& config,
                       const TrainHooks& hooks) {
  config.validate();
  spec.validate();
  check_trainable(task);
  const auto start = std::chrono::steady_clock::now();

  std::optional<std::ofstream> log;
  if (hooks.log_path) {
    log.emplace(*hooks.log_path);
    if (!*log) throw std::runtime_error("cannot write " + hooks.log_path->string());
  }

  Rng init_rng(derive_seed(config.seed, {0x1A17ULL}));
  TrainResult result{init_params<float>(spec, init_rng), OptState<float>::zeros(spec), {}};

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    auto eg = epoch_gradient(result.params, task, config, epoch);
    clip_grad_norm(eg.grads, config.max_grad_norm);
    const double lr = lr_at(epoch, config);
    adamw_step(result.params, eg.grads, result.opt, lr, config);

    EpochRecord rec{epoch, lr, eg.mean_loss};
    result.history.epochs.push_back(rec);
    if (log) {
      *log << nlohmann::json{{"epoch", epoch}, {"lr", lr}, {"mean_loss", eg.mean_loss}}.dump()
           << '\n';
    }
    if (hooks.on_epoch && !hooks.on_epoch(rec)) break;
  }
  result.history.final_loss =
      result.history.epochs.empty() ? 0.0 : result.history.epochs.back().mean_loss;
  result.history.wall_time =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

double grad_rel_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), kGradCheckFloor});
  return std::abs(analytic - numeric) / denom;
}

namespace {

// Smallest |pre-activation| seen by any relu along the trajectory.
double min_relu_margin(const ModelParams<double>& params, const Trajectory<double>& traj) {
  double margin = std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < traj.steps(); ++t) {
    const auto& input = traj.states[t];
    auto conv = conv3x3_forward<double>(input, params[Block::PerceptionKernel],
                                        params[Block::PerceptionBias]);
    auto normed = layernorm_forward<double>(conv, params[Block::LnGain], params[Block::LnShift],
                                            kLayerNormEpsilon);
    for (double v : normed.data()) margin = std::min(margin, std::abs(v));
    auto pre2 = dense_forward<double>(relu(normed), params[Block::Dense1Weight],
                                      params[Block::Dense1Bias]);
    for (double v : pre2.data()) margin = std::min(margin, std::abs(v));
  }
  return margin;
}

}  // namespace

GradCheckReport grad_check(std::size_t trials, std::uint64_t seed,
                           std::optional<std::size_t> fixed_steps,
                           std::optional<double> fixed_mask) {
  GradCheckReport report;
  Rng rng(derive_seed(seed, {0x6C4ECULL}));
  auto pick = [&rng](std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  };
  std::uniform_real_distribution<double> unit(-1.0, 1.0);

  for (std::size_t trial = 0; trial < trials; ++trial) {
    GradCheckInstance inst;
    ModelSpec spec{pick(0, 2), pick(3, 5), pick(4, 7)};
    inst.rows = pick(1, 4);
    inst.cols = pick(1, 4);
    inst.channels = spec.total_channels();
    inst.steps = fixed_steps.value_or(pick(1, 3));
    inst.mask_probability = fixed_mask.value_or(trial % 2 == 0 ? 0.0 : 0.5);

    // Resample until no relu input sits within reach of the finite-difference
    // step; the kink makes the numeric derivative meaningless there.
    ModelParams<double> params;
    Grid input, target;
    std::vector<StepMask<double>> masks;
    for (;;) {
      params = init_params<double>(spec, rng);
      for (auto b : {Block::PerceptionBias, Block::LnShift, Block::Dense1Bias, Block::Dense2Bias})
        for (auto& v : params[b]) v = 0.3 * unit(rng);
      for (auto& v : params[Block::LnGain]) v = 1.0 + 0.3 * unit(rng);
      input = Grid(inst.rows, inst.cols);
      target = Grid(inst.rows, inst.cols);
      std::uniform_int_distribution<int> color(0, kNumColors - 1);
      for (std::size_t r = 0; r < inst.rows; ++r)
        for (std::size_t c = 0; c < inst.cols; ++c) {
          input.set(r, c, std::uint8_t(color(rng)));
          target.set(r, c, std::uint8_t(color(rng)));
        }
      const auto mask = MaskConfig::with(inst.mask_probability);
      auto traj = rollout<double>(params, one_hot_encode<double>(input, inst.channels),
                                  inst.steps, mask, rng, false);
      if (min_relu_margin(params, traj) > 1e-3) {
        masks = traj.masks;
        break;
      }
    }

    const auto init = one_hot_encode<double>(input, inst.channels);
    auto total_loss = [&](const ModelParams<double>& p) {
      return rollout_loss(rollout_replay<double>(p, init, masks, false), target);
    };

    auto traj = rollout_replay<double>(params, init, masks, true);
    auto grads = ParamGrads<double>::zeros(spec);
    backward_rollout<double>(params, traj, rollout_loss_gradients(traj, target, 1.0), grads);

    auto probe = params;
    for (std::size_t b = 0; b < kNumBlocks; ++b) {
      for (std::size_t i = 0; i < probe.blocks[b].size(); ++i) {
        const double orig = probe.blocks[b][i];
        probe.blocks[b][i] = orig + kGradCheckStep;
        const double up = total_loss(probe);
        probe.blocks[b][i] = orig - kGradCheckStep;
        const double down = total_loss(probe);
        probe.blocks[b][i] = orig;
        const double numeric = (up - down) / (2.0 * kGradCheckStep);
        const double err = grad_rel_error(grads.blocks[b][i], numeric);
        if (err > inst.max_rel_error) {
          inst.max_rel_error = err;
          inst.worst_block = std::string(kBlockNames[b]);
        }
        ++report.parameters_checked;
      }
    }
    report.max_rel_error = std::max(report.max_rel_error, inst.max_rel_error);
    report.instances.push_back(std::move(inst));
  }
  return report;
}

#define NCA_ARC_INSTANTIATE(T)                                                               \
  template T rollout_loss<T>(const Trajectory<T>&, const Grid&);                             \
  template std::vector<Tensor3<T>> rollout_loss_gradients<T>(const Trajectory<T>&,           \
                                                             const Grid&, T);                \
  template void adamw_step<T>(ModelParams<T>&, const ParamGrads<T>&, OptState<T>&, double,   \
                              const TrainConfig&);                                           \
  template double clip_grad_norm<T>(ParamGrads<T>&, double);

NCA_ARC_INSTANTIATE(float)
NCA_ARC_INSTANTIATE(double)

#undef NCA_ARC_INSTANTIATE

}  // namespace nca_arc

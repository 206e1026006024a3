#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include <nlohmann/json.hpp>

#include "nca_arc/state_codec.hpp"
#include "nca_arc/trainer.hpp"
#include "test_util.hpp"

using namespace nca_arc;
using namespace test_util;

namespace {

Task identity_task() {
  std::mt19937_64 rng(2024);
  Task t;
  t.id = "identity";
  for (int i = 0; i < 3; ++i) {
    const Grid g = random_grid(rng, 4, 4);
    t.train.push_back({g, g});
  }
  const Grid g = random_grid(rng, 4, 4);
  t.test.push_back({g, g});
  return t;
}

TrainConfig small_config() {
  TrainConfig c;
  c.epochs = 200;
  c.trials_per_example = 16;
  c.trials_per_job = 16;
  return c;
}

// Trajectory whose single-cell logits give exactly `loss` against color 0.
Trajectory<double> trajectory_with_losses(const std::vector<double>& losses) {
  Trajectory<double> traj;
  for (double l : losses) {
    Tensor3<double> logits(10, 1, 1);
    logits(0, 0, 0) = -std::log((std::exp(l) - 1.0) / 9.0);
    traj.logits.push_back(logits);
  }
  return traj;
}

}  // namespace

TEST_SUITE("trainer") {

TEST_CASE("learning-rate schedule") {
  const TrainConfig c;
  CHECK(lr_at(0, c) == doctest::Approx(0.002).epsilon(1e-15));
  CHECK(lr_at(800, c) == doctest::Approx(0.0001).epsilon(1e-12));
  CHECK(lr_at(400, c) == doctest::Approx(0.00105).epsilon(1e-12));
}

TEST_CASE("config validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.mask_lo = 0.8;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.lr_end = 0.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.epochs = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  CHECK(TrainConfig{}.digest() == TrainConfig{}.digest());
  c = TrainConfig{};
  c.seed = 1;
  CHECK(c.digest() != TrainConfig{}.digest());
}

TEST_CASE("rollout loss examples") {
  const Grid zero_target(1, 1);
  CHECK(rollout_loss(trajectory_with_losses({1.0, 3.0}), zero_target) == doctest::Approx(2.0).epsilon(1e-12));

  Trajectory<double> flat;
  for (int t = 0; t < 4; ++t) flat.logits.emplace_back(10, 2, 3);
  CHECK(std::abs(rollout_loss(flat, Grid(2, 3, 7)) - std::log(10.0)) <= 1e-9);

  Trajectory<double> sure;
  for (int t = 0; t < 3; ++t) {
    Tensor3<double> l(10, 2, 3);
    for (std::size_t r = 0; r < 2; ++r)
      for (std::size_t c = 0; c < 3; ++c) l(7, r, c) = 40.0;
    sure.logits.push_back(l);
  }
  const double near_zero = rollout_loss(sure, Grid(2, 3, 7));
  CHECK(near_zero >= 0.0);
  CHECK(near_zero < 1e-4);

  CHECK_THROWS_AS(rollout_loss(flat, Grid(3, 3)), ShapeError);
}

TEST_CASE("AdamW examples") {
  const ModelSpec spec{0, 2, 2};
  TrainConfig c;
  Rng rng(1);
  const auto start = init_params<double>(spec, rng);
  const auto zero_grad = ParamGrads<double>::zeros(spec);

  SUBCASE("zero gradient without decay") {
    auto p = start;
    auto opt = OptState<double>::zeros(spec);
    c.weight_decay = 0.0;
    adamw_step(p, zero_grad, opt, 0.002, c);
    CHECK(p == start);
    CHECK(opt.step == 1);
  }
  SUBCASE("zero gradient with decay") {
    auto p = start;
    auto opt = OptState<double>::zeros(spec);
    adamw_step(p, zero_grad, opt, 0.002, c);
    for (std::size_t b = 0; b < kNumBlocks; ++b)
      for (std::size_t i = 0; i < p.blocks[b].size(); ++i)
        CHECK(p.blocks[b][i] == doctest::Approx(start.blocks[b][i] * (1 - 2e-5)).epsilon(1e-14));
  }
  SUBCASE("first step moves by lr against the gradient sign") {
    auto p = start;
    auto opt = OptState<double>::zeros(spec);
    c.weight_decay = 0.0;
    auto g = zero_grad;
    g[Block::Dense1Bias][0] = 0.37;
    g[Block::Dense1Bias][1] = -5.0;
    adamw_step(p, g, opt, 0.002, c);
    CHECK(p[Block::Dense1Bias][0] - start[Block::Dense1Bias][0] ==
          doctest::Approx(-0.002 * 0.37 / (0.37 + 1e-8)).epsilon(1e-9));
    CHECK(p[Block::Dense1Bias][1] - start[Block::Dense1Bias][1] == doctest::Approx(0.002).epsilon(1e-9));
  }
  SUBCASE("non-finite gradients are rejected before any update") {
    auto p = start;
    auto opt = OptState<double>::zeros(spec);
    auto g = zero_grad;
    g[Block::LnShift][1] = std::nan("");
    try {
      adamw_step(p, g, opt, 0.002, c);
      FAIL("expected NonFiniteGradient");
    } catch (const NonFiniteGradient& e) {
      CHECK(std::string(e.what()).find("ln_shift") != std::string::npos);
    }
    CHECK(p == start);
    CHECK(opt.step == 0);
  }
}

TEST_CASE("gradient norm clipping") {
  const ModelSpec spec{0, 2, 2};
  auto g = ParamGrads<double>::zeros(spec);
  g[Block::Dense2Bias][0] = 120.0;
  g[Block::Dense2Bias][1] = 160.0;
  CHECK(clip_grad_norm(g, 100.0) == doctest::Approx(200.0));
  CHECK(g[Block::Dense2Bias][0] == doctest::Approx(60.0));
  CHECK(g[Block::Dense2Bias][1] == doctest::Approx(80.0));
  const auto before = g;
  CHECK(clip_grad_norm(g, 100.0) == doctest::Approx(100.0));
  CHECK(g == before);
}

TEST_CASE("identity task converges and training is reproducible") {
  const Task task = identity_task();
  const Task pristine = task;
  const auto config = small_config();
  const auto a = train_task(task, ModelSpec{}, config);
  CHECK(a.history.epochs.size() == 200);
  CHECK(a.opt.step == 200);
  CHECK(a.history.final_loss < 0.01);
  CHECK(task.train.size() == pristine.train.size());
  for (std::size_t i = 0; i < task.train.size(); ++i) CHECK(task.train[i].input == pristine.train[i].input);

  // Loss trend: means of consecutive 50-epoch windows never go up.
  double previous = std::numeric_limits<double>::infinity();
  for (std::size_t w = 0; w + 50 <= a.history.epochs.size(); w += 50) {
    double mean = 0;
    for (std::size_t e = w; e < w + 50; ++e) mean += a.history.epochs[e].mean_loss;
    mean /= 50;
    CHECK(mean <= previous);
    previous = mean;
  }

  auto threaded = config;
  threaded.workers = 3;
  threaded.trials_per_job = 16;
  const auto b = train_task(task, ModelSpec{}, threaded);
  CHECK(b.params == a.params);
  for (std::size_t e = 0; e < a.history.epochs.size(); ++e)
    CHECK(b.history.epochs[e].mean_loss == a.history.epochs[e].mean_loss);
}

TEST_CASE("epoch gradient does not depend on the worker count") {
  const Task task = identity_task();
  TrainConfig c;
  c.trials_per_example = 20;
  c.trials_per_job = 6;
  Rng rng(3);
  const auto params = init_params<float>(ModelSpec{}, rng);
  const auto one = epoch_gradient(params, task, c, 5);
  c.workers = 4;
  const auto four = epoch_gradient(params, task, c, 5);
  CHECK(one.mean_loss == four.mean_loss);
  CHECK(one.grads == four.grads);
  CHECK(one.mean_loss > 0.0);
}

TEST_CASE("epoch log and early stop hook") {
  const auto path = std::filesystem::temp_directory_path() / "nca_arc_epoch_log.jsonl";
  auto c = small_config();
  c.epochs = 10;
  c.trials_per_example = 2;
  TrainHooks hooks;
  hooks.log_path = path;
  hooks.on_epoch = [](const EpochRecord& r) { return r.epoch < 3; };
  const auto res = train_task(identity_task(), ModelSpec{}, c, hooks);
  CHECK(res.history.epochs.size() == 4);
  std::ifstream in(path);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j["epoch"] == n);
    CHECK(j.contains("lr"));
    CHECK(j.contains("mean_loss"));
    ++n;
  }
  CHECK(n == 4);
  std::filesystem::remove(path);
}

TEST_CASE("training rejects shape-changing tasks") {
  Task t = identity_task();
  t.train[1].output = Grid(5, 4);
  CHECK_THROWS_AS(train_task(t, ModelSpec{}, small_config()), DataError);
}

TEST_CASE("grad_check stays within tolerance") {
  const auto all = grad_check(20, 0);
  CHECK(all.instances.size() == 20);
  CHECK(all.max_rel_error < 1e-6);
  for (const auto& inst : all.instances) {
    CHECK(inst.rows <= 4);
    CHECK(inst.cols <= 4);
    CHECK(inst.channels <= 12);
    CHECK(inst.steps <= 3);
  }

  const auto single_step = grad_check(8, 1, 1);
  CHECK(single_step.max_rel_error < 1e-6);

  const auto frozen = grad_check(8, 2, std::nullopt, 0.5);
  CHECK(frozen.max_rel_error < 1e-6);
}

TEST_CASE("small gradient entries agree with a higher-order difference") {
  // The relative-error floor only hides central-difference noise on tiny
  // entries; a fourth-order stencil resolves them in absolute terms.
  const ModelSpec spec{2, 4, 5};
  Rng rng(21);
  auto params = init_params<double>(spec, rng);
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  for (auto b : {Block::PerceptionBias, Block::LnShift, Block::Dense1Bias, Block::Dense2Bias})
    for (auto& v : params[b]) v = u(rng);
  std::mt19937_64 g(22);
  const Grid input = random_grid(g, 3, 3), target = random_grid(g, 3, 3);
  const auto init = one_hot_encode<double>(input, spec.total_channels());
  const auto masks = rollout(params, init, 3, MaskConfig::with(0.5), rng).masks;

  const auto traj = rollout_replay<double>(params, init, masks);
  auto grads = ParamGrads<double>::zeros(spec);
  backward_rollout<double>(params, traj, rollout_loss_gradients(traj, target, 1.0), grads);

  const double h = 1e-4;
  std::size_t small_entries = 0;
  double worst_abs = 0;
  for (std::size_t b = 0; b < kNumBlocks; ++b) {
    for (std::size_t i = 0; i < params.blocks[b].size(); ++i) {
      auto at = [&](double delta) {
        auto p = params;
        p.blocks[b][i] += delta;
        return rollout_loss(rollout_replay<double>(p, init, masks, false), target);
      };
      const double numeric = (8 * (at(h) - at(-h)) - (at(2 * h) - at(-2 * h))) / (12 * h);
      const double analytic = grads.blocks[b][i];
      if (std::abs(analytic) < kGradCheckFloor) ++small_entries;
      worst_abs = std::max(worst_abs, std::abs(analytic - numeric));
    }
  }
  CHECK(small_entries > 0);
  CHECK(worst_abs < 1e-10);
}

}  // TEST_SUITE

#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "nca_arc/evaluator.hpp"
#include "test_util.hpp"

using namespace nca_arc;
using namespace test_util;
namespace fs = std::filesystem;

namespace {

const fs::path kDataDir = NCA_ARC_TEST_DATA;

Task identity_task() {
  std::mt19937_64 rng(2024);
  Task t;
  t.id = "identity";
  for (int i = 0; i < 3; ++i) {
    const Grid g = random_grid(rng, 4, 4);
    t.train.push_back({g, g});
  }
  // Memorization check: the test pair repeats a training grid.
  t.test.push_back(t.train[1]);
  return t;
}

TrainConfig small_config() {
  TrainConfig c;
  c.epochs = 200;
  c.trials_per_example = 16;
  c.trials_per_job = 16;
  return c;
}

std::string task_file_json(const Task& t) {
  auto pairs = [](const std::vector<TaskExample>& v) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& ex : v) a.push_back({{"input", ex.input.to_rows()}, {"output", ex.output.to_rows()}});
    return a;
  };
  return nlohmann::json{{"train", pairs(t.train)}, {"test", pairs(t.test)}}.dump();
}

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

const TrainResult& trained_identity() {
  static const TrainResult r = train_task(identity_task(), ModelSpec{}, small_config());
  return r;
}

}  // namespace

TEST_SUITE("evaluator") {

TEST_CASE("pixel accuracy") {
  const auto a = Grid::from_rows({{1, 2, 3}, {4, 5, 6}});
  auto b = a;
  CHECK(pixel_accuracy(a, b) == 1.0);
  b.set(1, 2, 0);
  CHECK(pixel_accuracy(b, a) == doctest::Approx(5.0 / 6.0));
  CHECK(pixel_accuracy(Grid(2, 2), a) == 0.0);
}

TEST_CASE("untrained inference is deterministic and keeps the shape") {
  Rng rng(1);
  const auto params = init_params<float>(ModelSpec{}, rng);
  std::mt19937_64 g(2);
  const Grid input = random_grid(g, 6, 9);
  const auto out = infer(params, input, 10);
  CHECK(out.same_shape(input));
  CHECK(infer(params, input, 10) == out);

  // Zero dense2 output: every logit is 0 and argmax ties to color 0.
  auto flat = params;
  std::fill(flat[Block::Dense2Weight].begin(), flat[Block::Dense2Weight].end(), 0.0f);
  CHECK(infer(flat, input, 3) == Grid(6, 9, 0));
}

TEST_CASE("evaluate_task on a reproduced and a perturbed task") {
  const auto& trained = trained_identity();
  Task task = identity_task();
  const auto exact = evaluate_task(trained.params, task, 10);
  CHECK(exact.solved);
  CHECK(exact.pixel_accuracy == std::vector<double>{1.0});

  task.test[0].output.set(2, 1, std::uint8_t((task.test[0].output.at(2, 1) + 1) % 10));
  const auto off_by_one = evaluate_task(trained.params, task, 10);
  CHECK_FALSE(off_by_one.solved);
  CHECK(off_by_one.pixel_accuracy[0] == doctest::Approx(15.0 / 16.0));

  const auto before = trained.params;
  CHECK(task_result_json(evaluate_task(trained.params, task, 10), false) ==
        task_result_json(off_by_one, false));
  CHECK(trained.params == before);
}

TEST_CASE("summary counts come from the per-task list") {
  BenchmarkSummary s;
  s.results = {
      {"a", true, {1.0, 1.0}, 0.001, 1.0, 1},
      {"b", false, {0.95, 0.5}, 0.005, 1.0, 2},
      {"c", false, {0.95}, 0.02, 1.0, 3},
      {"d", false, {0.9}, 0.0099, 1.0, 4},
  };
  CHECK(s.attempted() == 4);
  CHECK(s.solved() == 1);
  CHECK(s.loss_below_001() == 3);
  CHECK(s.pixel_above_90() == 2);
  for (const auto& r : s.results)
    if (r.solved) CHECK(r.min_pixel_accuracy() == 1.0);

  const auto j = nlohmann::json::parse(summary_json(s));
  CHECK(j["attempted"] == 4);
  CHECK(j["pixel_above_90"] == 2);
  CHECK_FALSE(nlohmann::json::parse(summary_json(s, false)).contains("total_seconds"));

  const auto csv = results_csv(s);
  CHECK(csv.rfind("id,solved,min_pixel_acc,final_loss,seconds\n", 0) == 0);
  CHECK(csv.find("\nb,0,0.5,") != std::string::npos);

  const auto back = task_result_from_json(task_result_json(s.results[1]));
  CHECK(back.task_id == "b");
  CHECK(back.pixel_accuracy == s.results[1].pixel_accuracy);
  CHECK(back.seed == 2);
}

TEST_CASE("task seeds depend on the id and global seed only") {
  CHECK(task_seed(0, "abc") == task_seed(0, "abc"));
  CHECK(task_seed(0, "abc") != task_seed(0, "abd"));
  CHECK(task_seed(0, "abc") != task_seed(1, "abc"));
}

TEST_CASE("benchmark on an empty directory") {
  BenchmarkOptions opts;
  opts.dataset_dir = fresh_dir("nca_arc_bench_empty");
  const auto s = run_benchmark(opts);
  CHECK(s.attempted() == 0);
  CHECK(s.solved() == 0);
  CHECK(s.loss_below_001() == 0);
  CHECK(s.pixel_above_90() == 0);
  CHECK(s.filter.total() == 0);
}

TEST_CASE("benchmark run, persistence, worker independence and resume") {
  const auto dir = fresh_dir("nca_arc_bench_small");
  { std::ofstream(dir / "identity.json") << task_file_json(identity_task()); }
  { std::ofstream(dir / "zz_broken.json") << "[1,2"; }
  fs::copy_file(kDataDir / "007bbfb7.json", dir / "007bbfb7.json");  // 3x3 -> 9x9

  const auto out = fresh_dir("nca_arc_bench_out");
  BenchmarkOptions opts;
  opts.dataset_dir = dir;
  opts.config = small_config();
  opts.results_jsonl = out / "one.jsonl";
  const auto s1 = run_benchmark(opts);
  CHECK(s1.attempted() == 1);
  CHECK(s1.solved() == 1);
  CHECK(s1.unreadable_files == 1);
  CHECK(s1.filter.size_mismatch == 1);
  CHECK(s1.results[0].seed == task_seed(0, "identity"));

  opts.workers = 2;
  opts.results_jsonl = out / "two.jsonl";
  const auto s2 = run_benchmark(opts);
  CHECK(summary_json(s1, false) == summary_json(s2, false));
  CHECK(task_result_json(s1.results[0], false) == task_result_json(s2.results[0], false));

  std::size_t calls = 0;
  opts.resume = true;
  opts.on_result = [&calls](const TaskResult&) { ++calls; };
  const auto s3 = run_benchmark(opts);
  CHECK(calls == 0);
  CHECK(task_result_json(s3.results[0], false) == task_result_json(s2.results[0], false));
  const auto lines = slurp(out / "two.jsonl");
  CHECK(std::count(lines.begin(), lines.end(), '\n') == 1);

  fs::remove_all(dir);
  fs::remove_all(out);
}

TEST_CASE("spiral generator reproduces the spiral task") {
  const auto task = load_task_file(kDataDir / "28e73c20.json");
  CHECK(spiral_oracle_matches(task));

  // A task it does not describe.
  CHECK_FALSE(spiral_oracle_matches(load_task_file(kDataDir / "3aa6fb7a.json")));

  const auto big = spiral_output(100, 100);
  CHECK(big.at(0, 0) == 3);
  CHECK(big.at(0, 99) == 3);
  CHECK(big.at(99, 99) == 3);
  CHECK(big.at(1, 0) == 0);
  CHECK(spiral_input(100) == Grid(100, 100, 0));
}

TEST_CASE("scaled spiral check on untrained parameters") {
  Rng rng(5);
  const auto params = init_params<float>(ModelSpec{}, rng);
  const double acc = scaled_spiral_check(params, 30, 20);
  CHECK(acc >= 0.0);
  CHECK(acc < 0.9);
}

}  // TEST_SUITE

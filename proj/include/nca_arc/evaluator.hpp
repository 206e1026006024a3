#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "nca_arc/arc_data.hpp"
#include "nca_arc/model.hpp"
#include "nca_arc/trainer.hpp"

namespace nca_arc {

/// One-hot encode, run `steps` synchronous updates, decode by argmax.
Grid infer(const ModelParams<float>& params, const Grid& input, std::size_t steps);

/// Fraction of cells equal between two same-shaped grids (0 if shapes differ).
double pixel_accuracy(const Grid& predicted, const Grid& truth);

struct TaskResult {
  std::string task_id;
  bool solved = false;
  std::vector<double> pixel_accuracy;
  double final_train_loss = 0.0;
  double wall_time = 0.0;
  std::uint64_t seed = 0;

  double min_pixel_accuracy() const;
};

TaskResult evaluate_task(const ModelParams<float>& params, const Task& task, std::size_t steps);

inline constexpr double kLossBucket = 0.01;
inline constexpr double kPixelBucket = 0.9;

struct BenchmarkSummary {
  FilterCounts filter;
  std::size_t unreadable_files = 0;
  std::vector<TaskResult> results;

  std::size_t attempted() const { return results.size(); }
  std::size_t solved() const;
  std::size_t loss_below_001() const;
  std::size_t pixel_above_90() const;
};

struct BenchmarkOptions {
  std::filesystem::path dataset_dir;
  ModelSpec spec;
  TrainConfig config;
  /// Test-time steps; defaults to config.steps.
  std::optional<std::size_t> steps;
  std::size_t workers = 1;
  /// When set, TaskResults are appended here as they finish, in task order.
  std::optional<std::filesystem::path> results_jsonl;
  /// Keep results already present in `results_jsonl` and skip those tasks.
  bool resume = false;
  /// Only run these task ids (empty: all feasible tasks).
  std::vector<std::string> only;
  std::size_t limit = 0;
  std::function<void(const TaskResult&)> on_result;
};

/// Per-task training seed: stable in the task id, independent of dataset order.
std::uint64_t task_seed(std::uint64_t global_seed, const std::string& task_id);

BenchmarkSummary run_benchmark(const BenchmarkOptions& options);

// ---- serialization ----------------------------------------------------------

std::string task_result_json(const TaskResult& result, bool include_timing = true);
TaskResult task_result_from_json(const std::string& line);
std::string summary_json(const BenchmarkSummary& summary, bool include_timing = true);
/// Columns: id, solved, min_pixel_acc, final_loss, seconds.
std::string results_csv(const BenchmarkSummary& summary);

// ---- spiral scaling experiment -------------------------------------------------

/// Input recipe of the spiral task: an all-background square.
Grid spiral_input(std::size_t size);

/// Procedural single-arm rectangular spiral in color 3, starting at the
/// top-left corner and winding clockwise with a one-cell gap.
Grid spiral_output(std::size_t rows, std::size_t cols);

/// True when the generator reproduces every pair of a spiral-style task.
bool spiral_oracle_matches(const Task& task);

double scaled_spiral_check(const ModelParams<float>& params, std::size_t size, std::size_t steps);

}  // namespace nca_arc

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace nca_arc {

inline constexpr int kNumColors = 10;
inline constexpr std::size_t kMaxGridSide = 128;

/// Raised for malformed task files and invalid grids. The message carries the
/// offending pair index and key path where one exists.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Rectangular grid of ARC color indices, row-major.
class Grid {
 public:
  Grid() = default;
  Grid(std::size_t rows, std::size_t cols, std::uint8_t fill = 0);
  Grid(std::size_t rows, std::size_t cols, std::vector<std::uint8_t> cells);

  static Grid from_rows(const std::vector<std::vector<int>>& rows);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return cells_.size(); }
  bool empty() const { return cells_.empty(); }

  std::uint8_t at(std::size_t r, std::size_t c) const { return cells_[r * cols_ + c]; }
  void set(std::size_t r, std::size_t c, std::uint8_t color);

  const std::vector<std::uint8_t>& cells() const { return cells_; }
  std::vector<std::vector<int>> to_rows() const;

  bool same_shape(const Grid& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }
  friend bool operator==(const Grid&, const Grid&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<std::uint8_t> cells_;
};

struct TaskExample {
  Grid input;
  Grid output;
};

struct Task {
  std::string id;
  std::vector<TaskExample> train;
  std::vector<TaskExample> test;
};

enum class Feasibility { Feasible, SizeMismatch, ColorNovel };

std::string_view to_string(Feasibility status);

struct FeasibilityReport {
  Feasibility status = Feasibility::Feasible;
  std::set<int> novel_colors;
  std::size_t mismatched_pairs = 0;
};

struct FilterCounts {
  std::size_t size_mismatch = 0;
  std::size_t color_novel = 0;
  std::size_t feasible = 0;

  std::size_t total() const { return size_mismatch + color_novel + feasible; }
};

struct FilterResult {
  FilterCounts counts;
  std::vector<Task> feasible;
  /// Report per task id, in input order.
  std::vector<std::pair<std::string, FeasibilityReport>> reports;
};

/// Parses ARC's public JSON task layout. `id` is usually the file stem.
Task parse_task(std::string_view json_text, std::string id = {});
Task load_task_file(const std::filesystem::path& path);

/// A bare 2D integer array, e.g. [[0,1],[2,3]].
Grid parse_grid_json(std::string_view json_text);

struct DirectoryLoad {
  std::vector<Task> tasks;
  /// (file, reason) for every file that could not be read or parsed.
  std::vector<std::pair<std::string, std::string>> failures;
};

/// Loads every *.json file in `dir`, sorted by filename. Bad files are
/// collected in `failures` rather than thrown.
DirectoryLoad load_task_directory(const std::filesystem::path& dir);

FeasibilityReport classify_feasibility(const Task& task);

/// Partitions tasks by feasibility. Throws DataError on a duplicate id.
FilterResult filter_dataset(const std::vector<Task>& tasks);

/// One JSON object per line: {"id","status","novel_colors"}.
std::string feasibility_jsonl(const FilterResult& result);

}  // namespace nca_arc

#include "nca_arc/arc_data.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include <nlohmann/json.hpp>

namespace nca_arc {

using nlohmann::json;

Grid::Grid(std::size_t rows, std::size_t cols, std::uint8_t fill)
    : Grid(rows, cols, std::vector<std::uint8_t>(rows * cols, fill)) {}

Grid::Grid(std::size_t rows, std::size_t cols, std::vector<std::uint8_t> cells)
    : rows_(rows), cols_(cols), cells_(std::move(cells)) {
  if (rows == 0 || cols == 0 || rows > kMaxGridSide || cols > kMaxGridSide) {
    throw DataError("grid shape " + std::to_string(rows) + "x" + std::to_string(cols) +
                    " outside 1.." + std::to_string(kMaxGridSide));
  }
  if (cells_.size() != rows * cols) {
    throw DataError("grid has " + std::to_string(cells_.size()) + " cells, expected " +
                    std::to_string(rows * cols));
  }
  for (auto v : cells_) {
    if (v >= kNumColors) {
      throw DataError("cell value " + std::to_string(int(v)) + " outside 0..9");
    }
  }
}

Grid Grid::from_rows(const std::vector<std::vector<int>>& rows) {
  if (rows.empty()) throw DataError("grid has no rows");
  const std::size_t cols = rows.front().size();
  std::vector<std::uint8_t> cells;
  cells.reserve(rows.size() * cols);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != cols) {
      throw DataError("ragged grid: row " + std::to_string(r) + " has " +
                      std::to_string(rows[r].size()) + " cells, row 0 has " +
                      std::to_string(cols));
    }
    for (int v : rows[r]) {
      if (v < 0 || v >= kNumColors) {
        throw DataError("cell value " + std::to_string(v) + " outside 0..9 in row " +
                        std::to_string(r));
      }
      cells.push_back(static_cast<std::uint8_t>(v));
    }
  }
  return Grid(rows.size(), cols, std::move(cells));
}

void Grid::set(std::size_t r, std::size_t c, std::uint8_t color) {
  if (color >= kNumColors) throw DataError("cell value outside 0..9");
  cells_[r * cols_ + c] = color;
}

std::vector<std::vector<int>> Grid::to_rows() const {
  std::vector<std::vector<int>> out(rows_, std::vector<int>(cols_));
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) out[r][c] = at(r, c);
  return out;
}

std::string_view to_string(Feasibility status) {
  switch (status) {
    case Feasibility::Feasible:
      return "feasible";
    case Feasibility::SizeMismatch:
      return "size_mismatch";
    case Feasibility::ColorNovel:
      return "color_novel";
  }
  return "unknown";
}

namespace {

Grid parse_grid(const json& node, const std::string& where) {
  if (!node.is_array() || node.empty()) {
    throw DataError(where + ": expected a non-empty 2D integer array");
  }
  std::vector<std::vector<int>> rows;
  rows.reserve(node.size());
  for (std::size_t r = 0; r < node.size(); ++r) {
    const auto& row = node[r];
    if (!row.is_array() || row.empty()) {
      throw DataError(where + "[" + std::to_string(r) + "]: expected a non-empty row");
    }
    std::vector<int> values;
    values.reserve(row.size());
    for (std::size_t c = 0; c < row.size(); ++c) {
      const auto& cell = row[c];
      if (!cell.is_number_integer()) {
        throw DataError(where + "[" + std::to_string(r) + "][" + std::to_string(c) +
                        "]: expected an integer");
      }
      const auto v = cell.get<std::int64_t>();
      if (v < 0 || v >= kNumColors) {
        throw DataError(where + "[" + std::to_string(r) + "][" + std::to_string(c) +
                        "]: cell value " + std::to_string(v) + " outside 0..9");
      }
      values.push_back(static_cast<int>(v));
    }
    rows.push_back(std::move(values));
  }
  try {
    return Grid::from_rows(rows);
  } catch (const DataError& e) {
    throw DataError(where + ": " + e.what());
  }
}

std::vector<TaskExample> parse_pairs(const json& root, const char* key) {
  if (!root.contains(key)) throw DataError(std::string("missing key \"") + key + "\"");
  const auto& list = root.at(key);
  if (!list.is_array()) throw DataError(std::string(key) + ": expected a list");
  if (list.empty()) throw DataError(std::string(key) + ": list is empty");
  std::vector<TaskExample> out;
  for (std::size_t i = 0; i < list.size(); ++i) {
    const std::string where = std::string(key) + "[" + std::to_string(i) + "]";
    const auto& pair = list[i];
    if (!pair.is_object()) throw DataError(where + ": expected an object");
    for (const char* side : {"input", "output"}) {
      if (!pair.contains(side)) {
        throw DataError(where + ": missing key \"" + side + "\"");
      }
    }
    out.push_back({parse_grid(pair.at("input"), where + ".input"),
                   parse_grid(pair.at("output"), where + ".output")});
  }
  return out;
}

}  // namespace

Task parse_task(std::string_view json_text, std::string id) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw DataError(std::string("malformed JSON: ") + e.what());
  }
  if (!root.is_object()) throw DataError("task root must be a JSON object");
  Task task;
  task.id = id.empty() ? std::string("task") : std::move(id);
  task.train = parse_pairs(root, "train");
  task.test = parse_pairs(root, "test");
  return task;
}

Grid parse_grid_json(std::string_view json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw DataError(std::string("malformed JSON: ") + e.what());
  }
  return parse_grid(root, "grid");
}

Task load_task_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return parse_task(buf.str(), path.stem().string());
  } catch (const DataError& e) {
    throw DataError(path.filename().string() + ": " + e.what());
  }
}

DirectoryLoad load_task_directory(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".json") {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  DirectoryLoad out;
  for (const auto& f : files) {
    try {
      out.tasks.push_back(load_task_file(f));
    } catch (const DataError& e) {
      out.failures.emplace_back(f.filename().string(), e.what());
    }
  }
  return out;
}

FeasibilityReport classify_feasibility(const Task& task) {
  FeasibilityReport report;
  for (const auto* pairs : {&task.train, &task.test}) {
    for (const auto& ex : *pairs) {
      if (!ex.input.same_shape(ex.output)) ++report.mismatched_pairs;
    }
  }
  if (report.mismatched_pairs > 0) {
    report.status = Feasibility::SizeMismatch;
    return report;
  }

  std::array<bool, kNumColors> seen{};
  for (const auto& ex : task.train) {
    for (auto v : ex.input.cells()) seen[v] = true;
    for (auto v : ex.output.cells()) seen[v] = true;
  }
  for (const auto& ex : task.test) {
    for (auto v : ex.input.cells()) {
      if (!seen[v]) report.novel_colors.insert(v);
    }
  }
  report.status =
      report.novel_colors.empty() ? Feasibility::Feasible : Feasibility::ColorNovel;
  return report;
}

FilterResult filter_dataset(const std::vector<Task>& tasks) {
  std::unordered_set<std::string> ids;
  for (const auto& t : tasks) {
    if (!ids.insert(t.id).second) throw DataError("duplicate task id: " + t.id);
  }
  FilterResult result;
  for (const auto& t : tasks) {
    auto report = classify_feasibility(t);
    switch (report.status) {
      case Feasibility::SizeMismatch:
        ++result.counts.size_mismatch;
        break;
      case Feasibility::ColorNovel:
        ++result.counts.color_novel;
        break;
      case Feasibility::Feasible:
        ++result.counts.feasible;
        result.feasible.push_back(t);
        break;
    }
    result.reports.emplace_back(t.id, std::move(report));
  }
  return result;
}

std::string feasibility_jsonl(const FilterResult& result) {
  std::string out;
  for (const auto& [id, report] : result.reports) {
    json line = {{"id", id},
                 {"status", std::string(to_string(report.status))},
                 {"novel_colors", std::vector<int>(report.novel_colors.begin(),
                                                   report.novel_colors.end())}};
    out += line.dump();
    out += '\n';
  }
  return out;
}

}  // namespace nca_arc

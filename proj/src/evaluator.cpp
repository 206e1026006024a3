#include "nca_arc/evaluator.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "nca_arc/state_codec.hpp"

namespace nca_arc {

using nlohmann::json;

Grid infer(const ModelParams<float>& params, const Grid& input, std::size_t steps) {
  auto state = one_hot_encode<float>(input, params.spec.total_channels());
  return decode_argmax(run_synchronous<float>(params, std::move(state), steps));
}

double pixel_accuracy(const Grid& predicted, const Grid& truth) {
  if (!predicted.same_shape(truth) || truth.empty()) return 0.0;
  std::size_t same = 0;
  for (std::size_t i = 0; i < truth.size(); ++i)
    same += predicted.cells()[i] == truth.cells()[i] ? 1 : 0;
  return double(same) / double(truth.size());
}

double TaskResult::min_pixel_accuracy() const {
  if (pixel_accuracy.empty()) return 0.0;
  return *std::min_element(pixel_accuracy.begin(), pixel_accuracy.end());
}

TaskResult evaluate_task(const ModelParams<float>& params, const Task& task, std::size_t steps) {
  TaskResult result;
  result.task_id = task.id;
  result.solved = !task.test.empty();
  for (const auto& pair : task.test) {
    const auto predicted = infer(params, pair.input, steps);
    result.pixel_accuracy.push_back(nca_arc::pixel_accuracy(predicted, pair.output));
    if (predicted != pair.output) result.solved = false;
  }
  return result;
}

std::size_t BenchmarkSummary::solved() const {
  return std::size_t(
      std::count_if(results.begin(), results.end(), [](const auto& r) { return r.solved; }));
}

std::size_t BenchmarkSummary::loss_below_001() const {
  return std::size_t(std::count_if(results.begin(), results.end(), [](const auto& r) {
    return r.final_train_loss < kLossBucket;
  }));
}

std::size_t BenchmarkSummary::pixel_above_90() const {
  return std::size_t(std::count_if(results.begin(), results.end(), [](const auto& r) {
    return r.min_pixel_accuracy() > kPixelBucket;
  }));
}

std::uint64_t task_seed(std::uint64_t global_seed, const std::string& task_id) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : task_id) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return derive_seed(global_seed, {h});
}

std::string task_result_json(const TaskResult& r, bool include_timing) {
  json j = {{"task_id", r.task_id},
            {"solved", r.solved},
            {"pixel_accuracy", r.pixel_accuracy},
            {"final_train_loss", r.final_train_loss},
            {"seed", r.seed}};
  if (include_timing) j["wall_time"] = r.wall_time;
  return j.dump();
}

TaskResult task_result_from_json(const std::string& line) {
  const auto j = json::parse(line);
  TaskResult r;
  r.task_id = j.at("task_id").get<std::string>();
  r.solved = j.at("solved").get<bool>();
  r.pixel_accuracy = j.at("pixel_accuracy").get<std::vector<double>>();
  r.final_train_loss = j.at("final_train_loss").get<double>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.wall_time = j.value("wall_time", 0.0);
  return r;
}

std::string summary_json(const BenchmarkSummary& s, bool include_timing) {
  double seconds = 0.0;
  for (const auto& r : s.results) seconds += r.wall_time;
  json j = {{"attempted", s.attempted()},
            {"solved", s.solved()},
            {"loss_below_001", s.loss_below_001()},
            {"pixel_above_90", s.pixel_above_90()},
            {"size_mismatch", s.filter.size_mismatch},
            {"color_novel", s.filter.color_novel},
            {"feasible", s.filter.feasible},
            {"unreadable_files", s.unreadable_files}};
  if (include_timing) j["total_seconds"] = seconds;
  return j.dump();
}

std::string results_csv(const BenchmarkSummary& s) {
  std::ostringstream out;
  out << "id,solved,min_pixel_acc,final_loss,seconds\n";
  out.precision(9);
  for (const auto& r : s.results) {
    out << r.task_id << ',' << (r.solved ? 1 : 0) << ',' << r.min_pixel_accuracy() << ','
        << r.final_train_loss << ',' << r.wall_time << '\n';
  }
  return out.str();
}

namespace {

std::map<std::string, TaskResult> read_existing(const std::filesystem::path& path) {
  std::map<std::string, TaskResult> out;
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      auto r = task_result_from_json(line);
      out.emplace(r.task_id, std::move(r));
    } catch (const std::exception&) {
      // A torn last line from an interrupted run; that task is redone.
    }
  }
  return out;
}

// Appends results in task order as soon as the completed prefix grows, so the
// file is identical for any worker count and survives a crash up to the last
// flushed line.
class OrderedAppender {
 public:
  OrderedAppender(std::optional<std::filesystem::path> path, std::size_t total, bool append)
      : slots_(total) {
    if (path) {
      out_.open(*path, append ? std::ios::app : std::ios::trunc);
      if (!out_) throw std::runtime_error("cannot write " + path->string());
    }
  }

  void put(std::size_t index, std::string line) {
    std::lock_guard lock(mu_);
    slots_[index] = std::move(line);
    while (next_ < slots_.size() && slots_[next_]) {
      if (out_.is_open()) {
        out_ << *slots_[next_] << '\n';
        out_.flush();
      }
      ++next_;
    }
  }

 private:
  std::mutex mu_;
  std::ofstream out_;
  std::vector<std::optional<std::string>> slots_;
  std::size_t next_ = 0;
};

}  // namespace

BenchmarkSummary run_benchmark(const BenchmarkOptions& options) {
  BenchmarkSummary summary;
  const auto loaded = load_task_directory(options.dataset_dir);
  summary.unreadable_files = loaded.failures.size();
  auto filtered = filter_dataset(loaded.tasks);
  summary.filter = filtered.counts;

  std::vector<Task> todo;
  const std::set<std::string> only(options.only.begin(), options.only.end());
  for (auto& t : filtered.feasible) {
    if (!only.empty() && !only.count(t.id)) continue;
    todo.push_back(std::move(t));
    if (options.limit > 0 && todo.size() >= options.limit) break;
  }

  std::map<std::string, TaskResult> done;
  if (options.resume && options.results_jsonl && std::filesystem::exists(*options.results_jsonl)) {
    done = read_existing(*options.results_jsonl);
  }
  std::vector<std::size_t> pending;
  for (std::size_t i = 0; i < todo.size(); ++i)
    if (!done.count(todo[i].id)) pending.push_back(i);

  std::vector<TaskResult> results(todo.size());
  for (std::size_t i = 0; i < todo.size(); ++i) {
    if (auto it = done.find(todo[i].id); it != done.end()) results[i] = it->second;
  }

  OrderedAppender appender(options.results_jsonl, pending.size(),
                           options.resume && !done.empty());
  const std::size_t steps = options.steps.value_or(options.config.steps);
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;

  auto worker = [&] {
    for (std::size_t k = next++; k < pending.size(); k = next++) {
      try {
        const auto& task = todo[pending[k]];
        const auto start = std::chrono::steady_clock::now();
        TrainConfig cfg = options.config;
        cfg.seed = task_seed(options.config.seed, task.id);
        cfg.workers = 1;
        auto trained = train_task(task, options.spec, cfg);
        auto r = evaluate_task(trained.params, task, steps);
        r.final_train_loss = trained.history.final_loss;
        r.seed = cfg.seed;
        r.wall_time =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        appender.put(k, task_result_json(r));
        if (options.on_result) {
          std::lock_guard lock(error_mu);
          options.on_result(r);
        }
        results[pending[k]] = std::move(r);
      } catch (...) {
        std::lock_guard lock(error_mu);
        if (!error) error = std::current_exception();
        return;
      }
    }
  };

  const std::size_t workers = std::max<std::size_t>(1, std::min(options.workers, pending.size()));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);
  summary.results = std::move(results);
  return summary;
}

Grid spiral_output(std::size_t rows, std::size_t cols) {
  constexpr std::uint8_t kWall = 3;
  Grid g(rows, cols);
  const int dr[4] = {0, 1, 0, -1};
  const int dc[4] = {1, 0, -1, 0};
  auto inside = [&](long r, long c) { return r >= 0 && c >= 0 && r < long(rows) && c < long(cols); };
  auto can_advance = [&](long r, long c, int d) {
    const long nr = r + dr[d], nc = c + dc[d];
    if (!inside(nr, nc) || g.at(std::size_t(nr), std::size_t(nc)) == kWall) return false;
    const long ar = nr + dr[d], ac = nc + dc[d];
    return !(inside(ar, ac) && g.at(std::size_t(ar), std::size_t(ac)) == kWall);
  };
  long r = 0, c = 0;
  int d = 0, turns = 0;
  g.set(0, 0, kWall);
  while (turns < 2) {
    if (can_advance(r, c, d)) {
      r += dr[d];
      c += dc[d];
      g.set(std::size_t(r), std::size_t(c), kWall);
      turns = 0;
    } else {
      d = (d + 1) % 4;
      ++turns;
    }
  }
  return g;
}

Grid spiral_input(std::size_t size) { return Grid(size, size, 0); }

bool spiral_oracle_matches(const Task& task) {
  for (const auto* pairs : {&task.train, &task.test}) {
    for (const auto& ex : *pairs) {
      if (ex.input != Grid(ex.input.rows(), ex.input.cols(), 0)) return false;
      if (ex.output != spiral_output(ex.input.rows(), ex.input.cols())) return false;
    }
  }
  return true;
}

double scaled_spiral_check(const ModelParams<float>& params, std::size_t size, std::size_t steps) {
  const auto predicted = infer(params, spiral_input(size), steps);
  return pixel_accuracy(predicted, spiral_output(size, size));
}

}  // namespace nca_arc

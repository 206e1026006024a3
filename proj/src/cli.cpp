#include "nca_arc/cli.hpp"

#include <cctype>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "nca_arc/arc_data.hpp"
#include "nca_arc/checkpoint.hpp"
#include "nca_arc/evaluator.hpp"
#include "nca_arc/render.hpp"
#include "nca_arc/state_codec.hpp"
#include "nca_arc/trainer.hpp"

namespace nca_arc {

namespace fs = std::filesystem;

namespace {

struct ModelFlags {
  ModelSpec spec;
  TrainConfig config;
  std::size_t workers = 0;

  void attach(CLI::App* cmd) {
    cmd->add_option("--epochs", config.epochs, "Training epochs")->capture_default_str();
    cmd->add_option("--steps", config.steps, "Update steps per rollout")->capture_default_str();
    cmd->add_option("--trials", config.trials_per_example, "Rollouts per example per epoch")
        ->capture_default_str();
    cmd->add_option("--mask-lo", config.mask_lo, "Lower bound of the mask probability range")
        ->capture_default_str();
    cmd->add_option("--mask-hi", config.mask_hi, "Upper bound of the mask probability range")
        ->capture_default_str();
    cmd->add_option("--lr-start", config.lr_start)->capture_default_str();
    cmd->add_option("--lr-end", config.lr_end)->capture_default_str();
    cmd->add_option("--weight-decay", config.weight_decay)->capture_default_str();
    cmd->add_option("--seed", config.seed)->capture_default_str();
    cmd->add_option("--hidden", spec.hidden_channels, "Hidden channels")->capture_default_str();
    cmd->add_option("--filters", spec.perception_filters, "Perception filters")
        ->capture_default_str();
    cmd->add_option("--dense-width", spec.dense_width)->capture_default_str();
    cmd->add_option("--workers", workers, "Worker threads (default: $NCA_ARC_THREADS or 1)");
  }

  std::size_t resolved_workers() const {
    if (workers > 0) return workers;
    if (const char* env = std::getenv("NCA_ARC_THREADS")) {
      try {
        const long v = std::stol(env);
        if (v > 0) return std::size_t(v);
      } catch (const std::exception&) {
      }
    }
    return 1;
  }
};

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

// A task file, or a bare grid file treated as a one-pair task input.
bool looks_like_grid(const std::string& text) {
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) continue;
    return c == '[';
  }
  return false;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write " + path.string());
  f << text;
}

}  // namespace

int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Neural cellular automata for ARC grid tasks", "nca-arc"};
  app.require_subcommand(1);

  // filter
  std::string filter_dir, filter_out;
  auto* filter = app.add_subcommand("filter", "Classify task feasibility for a directory");
  filter->add_option("dir", filter_dir)->required();
  filter->add_option("--out", filter_out, "Feasibility JSONL output");

  // train
  ModelFlags train_flags;
  std::string train_task_path, train_out, train_log;
  auto* train = app.add_subcommand("train", "Train one task and write a checkpoint");
  train->add_option("task", train_task_path)->required();
  train->add_option("--out", train_out, "Checkpoint path (default: <id>.ckpt)");
  train->add_option("--log", train_log, "Epoch log JSONL (default: <out>.history.jsonl)");
  train_flags.attach(train);

  // eval
  std::string eval_ckpt, eval_input, eval_png, eval_out;
  std::size_t eval_steps = TrainConfig{}.steps, eval_spiral = 0;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a task or grid");
  eval->add_option("checkpoint", eval_ckpt)->required();
  eval->add_option("input", eval_input, "Task JSON or bare grid JSON");
  eval->add_option("--steps", eval_steps)->capture_default_str();
  eval->add_option("--spiral", eval_spiral, "Score on a generated NxN spiral instead");
  eval->add_option("--png", eval_png, "Write the predicted grid(s) as PNG");
  eval->add_option("--out", eval_out, "Write the result JSON here as well");

  // bench
  ModelFlags bench_flags;
  std::string bench_dir, bench_out = "bench_out";
  std::size_t bench_limit = 0;
  std::vector<std::string> bench_only;
  bool bench_resume = false;
  auto* bench = app.add_subcommand("bench", "Train and evaluate every feasible task");
  bench->add_option("dir", bench_dir)->required();
  bench->add_option("--out", bench_out, "Output directory")->capture_default_str();
  bench->add_option("--limit", bench_limit, "Stop after this many feasible tasks");
  bench->add_option("--only", bench_only, "Restrict to these task ids")->delimiter(',');
  bench->add_flag("--resume", bench_resume, "Skip tasks already present in results.jsonl");
  bench_flags.attach(bench);

  // render
  std::vector<std::string> render_inputs;
  std::string render_png_path, render_palette;
  std::size_t render_cell_px = 16, render_steps = TrainConfig{}.steps;
  auto* render = app.add_subcommand("render", "Render a task, or a checkpoint rollout on an input");
  render->add_option("inputs", render_inputs, "<task.json> | <checkpoint> <input.json>")
      ->required()
      ->expected(1, 2);
  render->add_option("--png", render_png_path);
  render->add_option("--cell-px", render_cell_px)->capture_default_str();
  render->add_option("--steps", render_steps)->capture_default_str();
  render->add_option("--palette", render_palette, "JSON list of 10 hex colors");

  // gradcheck
  std::size_t gc_trials = 20;
  std::uint64_t gc_seed = 0;
  auto* gradcheck = app.add_subcommand("gradcheck", "Check BPTT gradients by finite differences");
  gradcheck->add_option("--trials", gc_trials)->capture_default_str();
  gradcheck->add_option("--seed", gc_seed)->capture_default_str();

  std::vector<std::string> argv_rev(args.rbegin(), args.rend());
  try {
    app.parse(argv_rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return kExitUsage;
  }

  try {
    if (filter->parsed()) {
      const auto loaded = load_task_directory(filter_dir);
      const auto result = filter_dataset(loaded.tasks);
      if (!filter_out.empty()) write_text(filter_out, feasibility_jsonl(result));
      out << "size_mismatch=" << result.counts.size_mismatch
          << " color_novel=" << result.counts.color_novel
          << " feasible=" << result.counts.feasible << "\n";
      for (const auto& [file, why] : loaded.failures) err << "skipped " << file << ": " << why << "\n";
      return kExitOk;
    }

    if (train->parsed()) {
      train_flags.config.workers = train_flags.resolved_workers();
      const auto task = load_task_file(train_task_path);
      const fs::path ckpt = train_out.empty() ? fs::path(task.id + ".ckpt") : fs::path(train_out);
      const fs::path log = train_log.empty() ? fs::path(ckpt.string() + ".history.jsonl")
                                             : fs::path(train_log);
      TrainHooks hooks;
      hooks.log_path = log;
      auto trained = train_task(task, train_flags.spec, train_flags.config, hooks);
      save_checkpoint(ckpt, trained.params, train_flags.config.digest());
      auto result = evaluate_task(trained.params, task, train_flags.config.steps);
      result.final_train_loss = trained.history.final_loss;
      result.seed = train_flags.config.seed;
      result.wall_time = trained.history.wall_time;
      out << task_result_json(result) << "\n";
      return kExitOk;
    }

    if (eval->parsed()) {
      const auto ck = load_checkpoint(eval_ckpt);
      nlohmann::json report;
      std::vector<Grid> panels;
      if (eval_spiral > 0) {
        const auto predicted = infer(ck.params, spiral_input(eval_spiral), eval_steps);
        report = {{"spiral_size", eval_spiral},
                  {"steps", eval_steps},
                  {"pixel_accuracy", pixel_accuracy(predicted, spiral_output(eval_spiral, eval_spiral))}};
        panels.push_back(predicted);
      } else {
        if (eval_input.empty()) throw CLI::RequiredError("input");
        const auto text = slurp(eval_input);
        if (looks_like_grid(text)) {
          const auto predicted = infer(ck.params, parse_grid_json(text), eval_steps);
          out << render_ascii(predicted);
          report = {{"prediction", predicted.to_rows()}};
          panels.push_back(predicted);
        } else {
          const auto task = parse_task(text, fs::path(eval_input).stem().string());
          const auto start = std::chrono::steady_clock::now();
          auto result = evaluate_task(ck.params, task, eval_steps);
          result.wall_time =
              std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
          report = nlohmann::json::parse(task_result_json(result));
          for (const auto& pair : task.test) panels.push_back(infer(ck.params, pair.input, eval_steps));
        }
      }
      out << report.dump() << "\n";
      if (!eval_out.empty()) write_text(eval_out, report.dump() + "\n");
      if (!eval_png.empty()) render_png(panels, render_cell_px, eval_png);
      return kExitOk;
    }

    if (bench->parsed()) {
      fs::create_directories(bench_out);
      BenchmarkOptions opts;
      opts.dataset_dir = bench_dir;
      opts.spec = bench_flags.spec;
      opts.config = bench_flags.config;
      opts.workers = bench_flags.resolved_workers();
      opts.results_jsonl = fs::path(bench_out) / "results.jsonl";
      opts.resume = bench_resume;
      opts.only = bench_only;
      opts.limit = bench_limit;
      opts.on_result = [&out](const TaskResult& r) {
        out << r.task_id << (r.solved ? " solved" : " failed")
            << " min_pixel_acc=" << r.min_pixel_accuracy() << " loss=" << r.final_train_loss
            << " seconds=" << r.wall_time << std::endl;
      };
      const auto summary = run_benchmark(opts);
      write_text(fs::path(bench_out) / "results.csv", results_csv(summary));
      write_text(fs::path(bench_out) / "summary.json", summary_json(summary) + "\n");
      out << summary_json(summary) << "\n";
      return kExitOk;
    }

    if (render->parsed()) {
      const Palette palette =
          render_palette.empty() ? default_palette() : load_palette(render_palette);
      std::vector<Grid> panels;
      if (render_inputs.size() == 1) {
        const auto task = load_task_file(render_inputs[0]);
        auto show = [&](const char* kind, std::size_t i, const TaskExample& ex) {
          out << kind << "[" << i << "] input\n" << render_ascii(ex.input);
          out << kind << "[" << i << "] output\n" << render_ascii(ex.output);
          panels.push_back(ex.input);
          panels.push_back(ex.output);
        };
        for (std::size_t i = 0; i < task.train.size(); ++i) show("train", i, task.train[i]);
        for (std::size_t i = 0; i < task.test.size(); ++i) show("test", i, task.test[i]);
      } else {
        const auto ck = load_checkpoint(render_inputs[0]);
        const auto text = slurp(render_inputs[1]);
        const Grid input = looks_like_grid(text) ? parse_grid_json(text)
                                                 : parse_task(text).test.front().input;
        auto state = one_hot_encode<float>(input, ck.spec.total_channels());
        panels.push_back(input);
        out << "t=0\n" << render_ascii(input);
        for (std::size_t t = 1; t <= render_steps; ++t) {
          state = step_with_mask<float>(ck.params, state, {}).state;
          panels.push_back(decode_argmax(state));
          out << "t=" << t << "\n" << render_ascii(panels.back());
        }
      }
      if (!render_png_path.empty()) render_png(panels, render_cell_px, render_png_path, palette);
      return kExitOk;
    }

    if (gradcheck->parsed()) {
      const auto report = grad_check(gc_trials, gc_seed);
      out << "instances=" << report.instances.size()
          << " parameters=" << report.parameters_checked
          << " max_rel_error=" << report.max_rel_error << "\n";
      return report.max_rel_error < 1e-6 ? kExitOk : kExitCheckFailed;
    }
  } catch (const CLI::Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const CheckpointError& e) {
    err << "checkpoint error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace nca_arc

#include <cstdio>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "msd/error.hpp"
#include "msd/harness.hpp"

namespace fs = std::filesystem;

namespace msd::harness {

namespace {

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> output_dir;
  std::optional<std::size_t> workers;
  std::optional<std::size_t> tasks;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "JSON run configuration (defaults when omitted)");
  cmd->add_option("--seed", c.seed, "Override the run seed");
  cmd->add_option("--output-dir", c.output_dir, "Override the output directory");
  cmd->add_option("--workers", c.workers, "Parallel task-evaluation workers")->check(CLI::PositiveNumber);
}

RunConfig resolve(const Common& c) {
  RunConfig cfg = c.config_path.empty() ? default_config() : load_config(c.config_path);
  if (c.seed) cfg.seed = *c.seed;
  if (c.output_dir) cfg.output_dir = *c.output_dir;
  if (c.workers) cfg.workers = *c.workers;
  if (c.tasks) cfg.eval.tasks = *c.tasks;
  validate(cfg);
  return cfg;
}

EvalMode mode_of(const std::string& mode, const RunConfig& cfg) {
  if (mode == "standard") return EvalMode::standard;
  if (mode == "augmented") return EvalMode::augmented;
  return cfg.test_aug.kind == episodes::AugKind::none ? EvalMode::standard : EvalMode::augmented;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string summary(const metrics::MetricsRecord& r) {
  std::string s = r.label + ": accuracy " + fmt("%.2f", r.accuracy_mean) + " ± " + fmt("%.2f", r.accuracy_ci95) +
                  " % (over " + std::to_string(r.task_count) + " tasks)";
  if (r.inner_steps) s += ", inner steps " + std::to_string(*r.inner_steps);
  s += ", consistency " + fmt("%.2f", 100.0 * r.consistency_mean) + " %";
  if (r.noise_sensitivity) s += ", noise sensitivity " + fmt("%.6f", *r.noise_sensitivity);
  return s;
}

std::vector<std::size_t> parse_steps(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      std::size_t used = 0;
      const unsigned long v = std::stoul(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
      out.push_back(v);
    } catch (const std::exception&) {
      throw ConfigError("--steps: '" + item + "' is not a nonnegative integer");
    }
  }
  if (out.empty()) {
    throw ConfigError("--steps: empty list");
  }
  return out;
}

}  // namespace

int cli_main(int argc, char** argv) {
  CLI::App app{"Meta self-distillation and MAML on a few-shot benchmark"};
  app.require_subcommand(1);

  Common train_c, eval_c, sweep_c, ablate_c, show_c;
  auto* train = app.add_subcommand("train", "Meta-train; writes checkpoints and a metrics log");
  add_common(train, train_c);

  auto* eval = app.add_subcommand("eval", "Meta-test a checkpoint on the held-out classes");
  add_common(eval, eval_c);
  std::string eval_ckpt, eval_mode = "auto", eval_label;
  eval->add_option("--checkpoint", eval_ckpt, "Parameters to evaluate (default <output-dir>/final.msdckpt)");
  eval->add_option("--tasks", eval_c.tasks, "Number of meta-test tasks")->check(CLI::PositiveNumber);
  eval->add_option("--mode", eval_mode, "standard | augmented | auto")
      ->check(CLI::IsMember({"standard", "augmented", "auto"}));
  eval->add_option("--label", eval_label, "Row label (default eval/<mode>)");

  auto* sweep = app.add_subcommand("sweep-inner-steps", "Accuracy and consistency versus meta-test inner steps");
  add_common(sweep, sweep_c);
  std::string sweep_ckpt, sweep_mode = "auto", steps_text = "1,5,10,20";
  sweep->add_option("--checkpoint", sweep_ckpt, "Parameters to evaluate (default <output-dir>/final.msdckpt)");
  sweep->add_option("--steps", steps_text, "Comma-separated inner step counts");
  sweep->add_option("--tasks", sweep_c.tasks, "Number of meta-test tasks per step count")
      ->check(CLI::PositiveNumber);
  sweep->add_option("--mode", sweep_mode, "standard | augmented | auto")
      ->check(CLI::IsMember({"standard", "augmented", "auto"}));

  auto* ablate = app.add_subcommand("ablate", "Second-order x augmentation x kc-loss grid (4 rows)");
  add_common(ablate, ablate_c);
  ablate->add_option("--tasks", ablate_c.tasks, "Number of meta-test tasks per row")->check(CLI::PositiveNumber);

  auto* selfcheck = app.add_subcommand("selfcheck", "Run the built-in oracle and property checks");

  auto* show = app.add_subcommand("show-config", "Print the resolved configuration");
  add_common(show, show_c);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error[usage]: " << e.what() << "\n";
    return exit_code_for("usage");
  }

  try {
    if (*train) {
      const RunConfig cfg = resolve(train_c);
      run_train(cfg, std::cout);
    } else if (*eval) {
      const RunConfig cfg = resolve(eval_c);
      const fs::path ckpt = eval_ckpt.empty() ? fs::path(cfg.output_dir) / "final.msdckpt" : fs::path(eval_ckpt);
      const EvalMode mode = mode_of(eval_mode, cfg);
      const std::string label =
          eval_label.empty() ? std::string("eval/") + (mode == EvalMode::standard ? "standard" : "augmented")
                             : eval_label;
      const auto row = run_eval(cfg, restore_checkpoint(ckpt), mode, label);
      fs::create_directories(cfg.output_dir);
      const std::vector<metrics::MetricsRecord> rows{row};
      write_records(fs::path(cfg.output_dir) / "eval.jsonl", fs::path(cfg.output_dir) / "eval.csv", rows);
      std::cout << summary(row) << "\n";
    } else if (*sweep) {
      const RunConfig cfg = resolve(sweep_c);
      const fs::path ckpt = sweep_ckpt.empty() ? fs::path(cfg.output_dir) / "final.msdckpt" : fs::path(sweep_ckpt);
      const auto steps = parse_steps(steps_text);
      const auto rows = run_sweep(cfg, restore_checkpoint(ckpt), mode_of(sweep_mode, cfg), steps);
      fs::create_directories(cfg.output_dir);
      write_records(fs::path(cfg.output_dir) / "sweep.jsonl", fs::path(cfg.output_dir) / "sweep.csv", rows);
      for (const auto& r : rows) {
        std::cout << summary(r) << "\n";
      }
    } else if (*ablate) {
      const RunConfig cfg = resolve(ablate_c);
      const auto rows = run_ablate(cfg, std::cout);
      std::vector<metrics::MetricsRecord> records;
      for (const auto& r : rows) {
        records.push_back(r.record);
      }
      write_records(fs::path(cfg.output_dir) / "ablate.jsonl", fs::path(cfg.output_dir) / "ablate.csv", records);
      std::cout << "second_order augmentation kc_loss accuracy\n";
      for (const auto& r : rows) {
        std::cout << (r.second_order ? "on " : "off") << "          " << (r.augmentation ? "on " : "off")
                  << "          " << (r.kc_loss ? "on " : "off") << "     " << fmt("%.2f", r.record.accuracy_mean)
                  << " ± " << fmt("%.2f", r.record.accuracy_ci95) << "\n";
      }
    } else if (*selfcheck) {
      const int failures = run_selfcheck(std::cout);
      if (failures > 0) {
        std::cerr << "error[selfcheck]: " << failures << " check(s) failed\n";
        return exit_code_for("selfcheck");
      }
    } else if (*show) {
      const RunConfig cfg = resolve(show_c);
      for (const auto& w : config_warnings(cfg)) {
        std::cerr << "warning: " << w << "\n";
      }
      std::cout << dump_config(cfg);
    }
  } catch (const Error& e) {
    std::cerr << "error[" << e.category() << "]: " << e.what() << "\n";
    return exit_code_for(e.category());
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error[io]: " << e.what() << "\n";
    return exit_code_for("io");
  } catch (const std::exception& e) {
    std::cerr << "error[internal]: " << e.what() << "\n";
    return exit_code_for("internal");
  }
  return 0;
}

}  // namespace msd::harness

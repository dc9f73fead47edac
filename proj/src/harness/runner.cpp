#include <cstdio>
#include <fstream>
#include <ostream>

#include "msd/error.hpp"
#include "msd/harness.hpp"

namespace fs = std::filesystem;

namespace msd::harness {

namespace {

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string epoch_name(std::size_t epoch) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "epoch-%04zu.msdckpt", epoch);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw IoError("cannot write " + path.string());
  }
  out << text;
}

meta::TrainSetup setup_of(const RunConfig& cfg) {
  meta::TrainSetup s;
  s.algo = cfg.algo;
  s.meta = cfg.meta;
  s.inner = cfg.inner;
  s.shape = cfg.task;
  s.train_aug = cfg.train_aug;
  return s;
}

}  // namespace

void write_records(const fs::path& jsonl, const fs::path& csv, std::span<const metrics::MetricsRecord> rows) {
  std::string j, c = metrics::csv_header() + "\n";
  for (const auto& r : rows) {
    j += metrics::to_json_line(r) + "\n";
    c += metrics::to_csv_row(r) + "\n";
  }
  write_text(jsonl, j);
  write_text(csv, c);
}

TrainOutcome run_train(const RunConfig& cfg, std::ostream& log) {
  validate(cfg);
  for (const auto& w : config_warnings(cfg)) {
    log << "warning: " << w << "\n";
  }
  const Splits splits = load_splits(cfg);
  const fs::path out = cfg.output_dir;
  fs::create_directories(out / "checkpoints");
  write_text(out / "config.json", dump_config(cfg));
  {
    std::ofstream manifest(out / "manifest.tsv", std::ios::trunc);
    episodes::write_manifest(splits.all, manifest);
  }

  const std::string fp = fingerprint(cfg);
  const ParamSet init = initial_params(cfg);
  fs::path last_good = out / "checkpoints" / epoch_name(0);
  save_checkpoint(init, last_good);

  log << "train " << meta::to_string(cfg.algo) << " seed " << cfg.seed << " fingerprint " << fp << ": "
      << cfg.meta.epochs << " epochs x " << cfg.meta.tasks_per_epoch << " outer steps\n";

  TrainOutcome outcome;
  auto on_epoch = [&](const meta::EpochReport& report, const ParamSet& theta, bool is_best) {
    metrics::MetricsRecord row = report.validation;
    row.label = "val/" + meta::to_string(cfg.algo);
    row.fingerprint = fp;
    row.seed = cfg.seed;
    outcome.rows.push_back(row);
    last_good = out / "checkpoints" / epoch_name(report.epoch);
    save_checkpoint(theta, last_good);
    if (is_best) {
      save_checkpoint(theta, out / "best.msdckpt");
    }
    log << "epoch " << report.epoch << "/" << cfg.meta.epochs << " outer_lr " << report.outer_lr
        << " train_loss " << fixed(report.train_loss, 6) << " val_acc " << fixed(row.accuracy_mean, 2) << " +- "
        << fixed(row.accuracy_ci95, 2) << (is_best ? " (best)" : "") << "\n";
  };

  try {
    outcome.result = meta::meta_train(init, cfg.model, splits.train, setup_of(cfg), cfg.seed, on_epoch);
  } catch (const DivergenceError& e) {
    write_records(out / "metrics.jsonl", out / "metrics.csv", outcome.rows);
    throw DivergenceError(std::string(e.what()) + " [" + last_good.string() + "]", e.step());
  }
  if (outcome.result.best_epoch == 0) {
    save_checkpoint(outcome.result.best_params, out / "best.msdckpt");
  }
  save_checkpoint(outcome.result.final_params, out / "final.msdckpt");
  write_records(out / "metrics.jsonl", out / "metrics.csv", outcome.rows);
  log << "wrote " << (out / "final.msdckpt").string() << " (best epoch " << outcome.result.best_epoch << ")\n";
  return outcome;
}

metrics::MetricsRecord run_eval(const RunConfig& cfg, const ParamSet& theta, EvalMode mode,
                                const std::string& label) {
  validate(cfg);
  const Splits splits = load_splits(cfg);
  meta::EvalOptions opts;
  opts.num_tasks = cfg.eval.tasks;
  opts.shape = cfg.task;
  opts.inner = cfg.inner;
  if (mode == EvalMode::augmented) {
    opts.aug = cfg.test_aug;
    opts.views = cfg.eval.views;
  }
  opts.noise_sensitivity = cfg.eval.noise_sensitivity && splits.test.noise_layout.has_value();
  opts.probe_noise_scale = cfg.eval.probe_noise_scale;
  opts.norm = cfg.eval.norm;
  opts.workers = cfg.workers;
  metrics::MetricsRecord r = meta::meta_test(theta, cfg.model, splits.test, opts, cfg.seed);
  r.label = label;
  r.fingerprint = fingerprint(cfg);
  r.seed = cfg.seed;
  return r;
}

std::vector<metrics::MetricsRecord> run_sweep(const RunConfig& cfg, const ParamSet& theta, EvalMode mode,
                                              std::span<const std::size_t> steps) {
  std::vector<metrics::MetricsRecord> rows;
  for (std::size_t k : steps) {
    RunConfig c = cfg;
    c.inner.steps = k;
    rows.push_back(run_eval(c, theta, mode, "sweep"));
  }
  return rows;
}

std::vector<AblationRow> run_ablate(const RunConfig& cfg, std::ostream& log) {
  validate(cfg);
  const Splits splits = load_splits(cfg);
  const ParamSet init = initial_params(cfg);
  const EvalMode mode =
      cfg.test_aug.kind == episodes::AugKind::none ? EvalMode::standard : EvalMode::augmented;
  const fs::path dir = fs::path(cfg.output_dir) / "ablate";
  fs::create_directories(dir);

  std::vector<AblationRow> rows = {
      {false, true, true, "fo-aug-kc", {}, {}},
      {true, false, false, "so-noaug-nokc", {}, {}},
      {true, true, false, "so-aug-nokc", {}, {}},
      {true, true, true, "so-aug-kc", {}, {}},
  };
  for (auto& row : rows) {
    RunConfig c = cfg;
    c.inner.first_order = !row.second_order;
    c.meta.kc_loss = row.kc_loss;
    if (row.augmentation) {
      c.algo = meta::Algo::msd;
    } else {
      c.algo = meta::Algo::maml;
      c.train_aug = episodes::AugmentationSpec::none();
    }
    c.meta.val_tasks = 0;
    const auto result = meta::meta_train(init, c.model, splits.train, setup_of(c), c.seed);
    row.params = result.final_params;
    save_checkpoint(row.params, dir / (row.name + ".msdckpt"));
    row.record = run_eval(c, row.params, mode, "ablate/" + row.name);
    log << row.name << ": accuracy " << fixed(row.record.accuracy_mean, 2) << " +- "
        << fixed(row.record.accuracy_ci95, 2) << " consistency " << fixed(row.record.consistency_mean, 4) << "\n";
  }
  return rows;
}

int exit_code_for(const std::string& category) {
  if (category == "usage") return 2;
  if (category == "config") return 3;
  if (category == "io") return 4;
  if (category == "parse") return 5;
  if (category == "corrupt-checkpoint") return 6;
  if (category == "invalid-shape") return 7;
  if (category == "contract") return 8;
  if (category == "capacity") return 9;
  if (category == "modality") return 10;
  if (category == "numeric-divergence") return 11;
  if (category == "selfcheck") return 12;
  return 70;
}

}  // namespace msd::harness

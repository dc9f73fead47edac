#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "msd/episodes.hpp"
#include "msd/meta.hpp"
#include "msd/metrics.hpp"
#include "msd/nn.hpp"
#include "msd/param_set.hpp"

namespace msd::harness {

inline constexpr int kConfigVersion = 1;

struct DatasetConfig {
  std::string source = "synthetic";  // synthetic | image-folder
  episodes::SyntheticSpec synthetic;
  std::uint64_t data_seed = 1000;
  std::string image_folder;
  /// Classes [0, train_classes) train; the next test_classes are held out.
  std::size_t train_classes = 20;
  std::size_t test_classes = 5;
};

struct EvalConfig {
  std::size_t tasks = 2000;
  std::size_t views = 2;
  bool noise_sensitivity = true;
  double probe_noise_scale = 1.0;
  metrics::NormKind norm = metrics::NormKind::l1;
};

/// Everything a run depends on. A run is a pure function of this value.
struct RunConfig {
  int version = kConfigVersion;
  meta::Algo algo = meta::Algo::msd;
  nn::ModelSpec model;
  DatasetConfig dataset;
  meta::TaskShape task;
  meta::InnerLoopConfig inner;
  meta::MetaConfig meta;
  episodes::AugmentationSpec train_aug = episodes::AugmentationSpec::noise_channel(3.0);
  episodes::AugmentationSpec test_aug = episodes::AugmentationSpec::noise_channel(3.0);
  EvalConfig eval;
  std::uint64_t seed = 0;
  std::string output_dir = "runs/default";
  std::size_t workers = 1;
};

/// Experimental-setup defaults on the synthetic benchmark.
RunConfig default_config();

std::string dump_config(const RunConfig& cfg);
/// Strict parse: the "version" field is required and unknown keys are errors.
/// Missing keys keep their defaults.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);
void validate(const RunConfig& cfg);
/// Non-fatal notes about questionable combinations.
std::vector<std::string> config_warnings(const RunConfig& cfg);
/// 16 hex digits of FNV-1a over the canonical config, ignoring seed,
/// output_dir and workers.
std::string fingerprint(const RunConfig& cfg);

struct Splits {
  episodes::Dataset all;
  episodes::Dataset train;
  episodes::Dataset test;
};
Splits load_splits(const RunConfig& cfg);

void save_checkpoint(const ParamSet& params, const std::filesystem::path& path);
ParamSet restore_checkpoint(const std::filesystem::path& path);

/// Initial parameters of a run.
ParamSet initial_params(const RunConfig& cfg);

struct TrainOutcome {
  meta::TrainResult result;
  std::vector<metrics::MetricsRecord> rows;
};

/// Meta-trains and writes config.json, manifest.tsv, metrics.jsonl,
/// metrics.csv and checkpoints (per epoch, best, final) under output_dir.
TrainOutcome run_train(const RunConfig& cfg, std::ostream& log);

enum class EvalMode { standard, augmented };

/// Meta-test on the held-out classes.
metrics::MetricsRecord run_eval(const RunConfig& cfg, const ParamSet& theta, EvalMode mode,
                                const std::string& label);

/// One record per meta-test inner step count.
std::vector<metrics::MetricsRecord> run_sweep(const RunConfig& cfg, const ParamSet& theta, EvalMode mode,
                                              std::span<const std::size_t> steps);

struct AblationRow {
  bool second_order = true;
  bool augmentation = true;
  bool kc_loss = true;
  std::string name;
  metrics::MetricsRecord record;
  ParamSet params;
};

/// The four rows (second order, augmentation, kc loss):
/// (off,on,on), (on,off,off), (on,on,off), (on,on,on).
std::vector<AblationRow> run_ablate(const RunConfig& cfg, std::ostream& log);

void write_records(const std::filesystem::path& jsonl, const std::filesystem::path& csv,
                   std::span<const metrics::MetricsRecord> rows);

/// Compact in-process oracle/property checks; one PASS/FAIL line each.
/// Returns the number of failures.
int run_selfcheck(std::ostream& out);

/// Exit code for an error category.
int exit_code_for(const std::string& category);

/// Command-line entry point.
int cli_main(int argc, char** argv);

}  // namespace msd::harness

#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "msd/nn.hpp"
#include "msd/param_set.hpp"
#include "msd/tensor.hpp"

namespace msd::meta {
struct InnerLoopConfig;
}

namespace msd::metrics {

/// Outcome of one evaluated task.
struct TaskRecord {
  double accuracy = 0.0;  // percent
  double consistency = 1.0;
  double consistency_softmax = 1.0;
  double kc_loss = 0.0;
  double cls_loss = 0.0;
  std::size_t degenerate = 0;
  std::optional<double> noise_sensitivity;
};

/// Aggregate over tasks plus the run metadata every emitted row carries.
struct MetricsRecord {
  std::string label;
  std::optional<std::size_t> epoch;
  std::optional<std::size_t> inner_steps;
  std::size_t task_count = 0;
  double accuracy_mean = 0.0;  // percent
  double accuracy_ci95 = 0.0;  // percent
  double consistency_mean = 1.0;
  double consistency_softmax_mean = 1.0;
  double kc_loss_mean = 0.0;
  double cls_loss_mean = 0.0;
  std::size_t degeneracy_count = 0;
  std::optional<double> noise_sensitivity;
  std::string fingerprint;
  std::uint64_t seed = 0;
};

/// Means over tasks; ci95 = 1.96 * population stddev / sqrt(T), 0 for T = 1.
MetricsRecord aggregate(std::span<const TaskRecord> tasks);

/// Half-width of the 95% interval of `values`.
double ci95(std::span<const double> values);

/// Mean cosine between each model's output row and the across-model mean row.
struct Consistency {
  double score = 1.0;
  std::size_t degenerate = 0;
};
Consistency consistency_score(std::span<const Tensor> query_logits);

/// Output change f_theta2(x) - f_theta1(x) on a probe batch.
Tensor knowledge_change(const ParamSet& theta1, const ParamSet& theta2, const nn::ModelSpec& spec,
                        const Tensor& probes);

enum class NormKind { l1, l2 };

/// Adapts theta on the support set, then averages over probe pairs
/// |dk(x) - dk(x_perturbed)| where dk is the knowledge change caused by the
/// adaptation. Each pair must differ only in noise channels.
double noise_sensitivity(const ParamSet& theta, const Tensor& support_x, std::span<const int> support_y,
                         const nn::ModelSpec& spec, const meta::InnerLoopConfig& inner,
                         const Tensor& probes, const Tensor& perturbed, NormKind norm = NormKind::l1);

/// Copies `x` with every noise channel (index >= target_dim) shifted by
/// scale * N(0,1). Target channels are left bitwise unchanged.
Tensor perturb_noise_channels(const Tensor& x, std::size_t target_dim, double scale,
                              std::uint64_t seed);

/// JSONL row (one object, no trailing newline).
std::string to_json_line(const MetricsRecord& r);
MetricsRecord from_json_line(const std::string& line);

std::string csv_header();
std::string to_csv_row(const MetricsRecord& r);

}  // namespace msd::metrics

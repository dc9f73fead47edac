#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "msd/param_set.hpp"
#include "msd/tensor.hpp"

namespace msd::nn {

enum class ModelKind { mlp, conv4_mini };

std::string to_string(ModelKind kind);
ModelKind model_kind_from_string(const std::string& s);

/// Architecture of f_theta. For mlp, `hidden_widths` are hidden layer sizes
/// and `input_shape` is [features]; for conv4_mini they are the channel
/// widths of the 3x3 conv blocks (each followed by relu and 2x2 mean pool)
/// and `input_shape` is [C, H, W].
struct ModelSpec {
  ModelKind kind = ModelKind::mlp;
  Shape input_shape{40};
  std::vector<std::size_t> hidden_widths{32};
  std::size_t num_classes = 5;
  /// Single learned head vector shared by every class;
  /// it is replicated into a full head at the start of each inner loop.
  bool shared_head = false;

  void validate() const;
  std::size_t feature_dim() const;
};

/// Fan-in scaled uniform weights U(-1/sqrt(fan_in), 1/sqrt(fan_in)), zero
/// biases. Deterministic in (spec, seed).
ParamSet init_params(const ModelSpec& spec, std::uint64_t seed);

/// Replaces a shared head vector by its per-class replication (tracked when
/// the input is). Parameters already holding a full head pass through.
ParamSet expand_head(const ParamSet& params, const ModelSpec& spec);

/// Logits [B, num_classes] for a batch shaped [B, input_shape...].
Tensor predict(const ParamSet& params, const ModelSpec& spec, const Tensor& x);

/// Mean negative log-likelihood of `labels` under row-wise softmax(logits).
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

/// One-hot matrix [labels.size(), classes].
Tensor one_hot(std::span<const int> labels, std::size_t classes);

/// Fraction of rows whose argmax equals the label (ties resolve to the
/// lowest index).
double accuracy(const Tensor& logits, std::span<const int> labels);

}  // namespace msd::nn

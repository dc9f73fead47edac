#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "msd/episodes.hpp"
#include "msd/metrics.hpp"
#include "msd/nn.hpp"
#include "msd/param_set.hpp"

namespace msd::meta {

struct InnerLoopConfig {
  std::size_t steps = 20;
  double lr = 0.05;
  bool first_order = false;

  void validate() const;
};

enum class Algo { maml, fomaml, msd };
enum class OuterOptimizer { sgd, adam };
enum class ConsistencySpace { logits, softmax };

std::string to_string(Algo a);
Algo algo_from_string(const std::string& s);
std::string to_string(OuterOptimizer o);
OuterOptimizer optimizer_from_string(const std::string& s);
std::string to_string(ConsistencySpace s);
ConsistencySpace consistency_space_from_string(const std::string& s);

struct MetaConfig {
  double outer_lr = 0.001;
  double alpha = 1.0;
  std::size_t task_batch = 2;
  std::size_t views = 2;
  double lr_decay = 0.1;
  std::size_t lr_decay_every = 10;  // epochs
  std::size_t epochs = 10;
  std::size_t tasks_per_epoch = 100;  // outer steps per epoch
  OuterOptimizer optimizer = OuterOptimizer::sgd;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  bool kc_loss = true;
  ConsistencySpace consistency_space = ConsistencySpace::logits;
  std::size_t val_tasks = 20;

  void validate() const;
  /// Outer learning rate in effect during `epoch` (0-based).
  double lr_at(std::size_t epoch) const;
};

struct TaskShape {
  std::size_t way = 5;
  std::size_t shot = 1;
  std::size_t query = 15;
};

/// k steps of gradient descent on `loss`, starting at theta.
///  - tracked (theta must live on a graph): the result stays differentiable
///    w.r.t. theta. Second order keeps every step's gradient on the graph;
///    first order treats each step's gradient as a constant.
///  - untracked: plain numeric descent, result untracked.
/// A non-finite loss raises DivergenceError carrying the step index.
ParamSet gradient_descent(const ParamSet& theta, const std::function<Tensor(const ParamSet&)>& loss,
                          const InnerLoopConfig& cfg, bool tracked);

/// Inner update U(theta, S): gradient_descent on the support cross-entropy.
/// A shared head is expanded to a full head before the first step.
ParamSet inner_update(const ParamSet& theta, const Tensor& support_x, std::span<const int> support_y,
                      const nn::ModelSpec& spec, const InnerLoopConfig& cfg, bool tracked);

/// Mean over tasks of d/dtheta CE(f_{U(theta,S)}(Q)). Untracked result.
ParamSet maml_meta_gradient(const ParamSet& theta, std::span<const episodes::Task> tasks,
                            const nn::ModelSpec& spec, const InnerLoopConfig& cfg);

/// One adapted parameter set per view, each differentiable back to theta
/// when theta is tracked.
std::vector<ParamSet> msd_inner(const ParamSet& theta, const episodes::AugmentedTaskSet& views,
                                const nn::ModelSpec& spec, const InnerLoopConfig& cfg);

struct ConsistencyLoss {
  Tensor loss;               // 1 - c, differentiable
  double consistency = 1.0;  // c
  std::size_t degenerate = 0;
};

/// c = mean over samples and models of cos(f_i(x), mean_j f_j(x)). A
/// (sample, model) term whose vector has (near) zero norm contributes 0 and
/// is counted as degenerate.
ConsistencyLoss knowledge_consistency_loss(std::span<const Tensor> query_outputs,
                                           ConsistencySpace space = ConsistencySpace::logits);

struct MsdLoss {
  Tensor total;
  Tensor kc;
  Tensor cls;
  double consistency = 1.0;
  std::size_t degenerate = 0;
  double accuracy = 0.0;  // mean query accuracy over views, fraction
};

/// total = kc + alpha * cls with cls the mean query cross-entropy over the
/// adapted views. kc is omitted (0) when `use_kc` is false or there is a
/// single view.
MsdLoss msd_total_loss(const ParamSet& theta, const episodes::AugmentedTaskSet& views,
                       const nn::ModelSpec& spec, const InnerLoopConfig& cfg, double alpha,
                       bool use_kc = true, ConsistencySpace space = ConsistencySpace::logits);

/// theta - beta * grad.
ParamSet outer_step(const ParamSet& theta, const ParamSet& grad, double beta);

/// Bias-corrected Adam state.
struct AdamState {
  ParamSet m, v;
  std::size_t t = 0;
};
ParamSet adam_step(const ParamSet& theta, const ParamSet& grad, double lr, AdamState& state,
                   double beta1, double beta2, double eps);

/// What one outer step is built from.
struct OuterStepResult {
  ParamSet grad;
  double loss = 0.0;
  double kc = 0.0;
  double cls = 0.0;
  double consistency = 1.0;
  double accuracy = 0.0;  // fraction
  std::size_t degenerate = 0;
};

/// Averages the algorithm's objective gradient over a batch of tasks.
/// maml/fomaml use the single unaugmented support; msd adapts on
/// `views.size()` augmented views of each task.
OuterStepResult outer_gradient(const ParamSet& theta, Algo algo,
                               std::span<const episodes::AugmentedTaskSet> tasks,
                               const nn::ModelSpec& spec, const InnerLoopConfig& inner,
                               const MetaConfig& meta);

struct TrainSetup {
  Algo algo = Algo::msd;
  MetaConfig meta;
  InnerLoopConfig inner;
  TaskShape shape;
  episodes::AugmentationSpec train_aug;
};

struct EpochReport {
  std::size_t epoch = 0;  // 1-based
  double outer_lr = 0.0;
  double train_loss = 0.0;
  metrics::MetricsRecord validation;
};

struct TrainResult {
  ParamSet final_params;
  ParamSet best_params;
  std::size_t best_epoch = 0;  // 0 = initial parameters
  std::vector<EpochReport> epochs;
};

using EpochCallback = std::function<void(const EpochReport&, const ParamSet& theta, bool is_best)>;

/// Runs epochs * tasks_per_epoch outer steps. Training tasks, views and
/// validation tasks draw from streams derived from `seed`, so the result is
/// a pure function of the arguments. Validation uses `val_tasks` tasks from
/// the training classes after each epoch.
TrainResult meta_train(const ParamSet& init, const nn::ModelSpec& spec, const episodes::Dataset& data,
                       const TrainSetup& setup, std::uint64_t seed, const EpochCallback& on_epoch = {});

struct EvalOptions {
  std::size_t num_tasks = 2000;
  TaskShape shape;
  InnerLoopConfig inner;
  /// Augmented mode when set: one fine-tuned copy per augmented view.
  std::optional<episodes::AugmentationSpec> aug;
  std::size_t views = 2;
  /// Also measure noise sensitivity (vector data with a noise layout only).
  bool noise_sensitivity = false;
  double probe_noise_scale = 1.0;
  metrics::NormKind norm = metrics::NormKind::l1;
  std::size_t workers = 1;
  std::uint64_t task_stream = tag(StreamTag::eval_task);
  std::uint64_t view_stream = tag(StreamTag::eval_view);
};

/// Per-task evaluation records in task order.
std::vector<metrics::TaskRecord> meta_test_tasks(const ParamSet& theta, const nn::ModelSpec& spec,
                                                 const episodes::Dataset& data, const EvalOptions& opts,
                                                 std::uint64_t seed);

metrics::MetricsRecord meta_test(const ParamSet& theta, const nn::ModelSpec& spec,
                                 const episodes::Dataset& data, const EvalOptions& opts,
                                 std::uint64_t seed);

}  // namespace msd::meta

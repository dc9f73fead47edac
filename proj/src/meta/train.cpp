#include <cmath>
#include <exception>
#include <limits>
#include <thread>

#include "msd/error.hpp"
#include "msd/meta.hpp"
#include "msd/ops.hpp"

namespace msd::meta {

std::string to_string(Algo a) {
  switch (a) {
    case Algo::maml:
      return "maml";
    case Algo::fomaml:
      return "fomaml";
    case Algo::msd:
      return "msd";
  }
  return "msd";
}

Algo algo_from_string(const std::string& s) {
  if (s == "maml") return Algo::maml;
  if (s == "fomaml") return Algo::fomaml;
  if (s == "msd") return Algo::msd;
  throw ConfigError("unknown algo '" + s + "' (expected maml|fomaml|msd)");
}

std::string to_string(OuterOptimizer o) { return o == OuterOptimizer::sgd ? "sgd" : "adam"; }

OuterOptimizer optimizer_from_string(const std::string& s) {
  if (s == "sgd") return OuterOptimizer::sgd;
  if (s == "adam") return OuterOptimizer::adam;
  throw ConfigError("unknown optimizer '" + s + "' (expected sgd|adam)");
}

std::string to_string(ConsistencySpace s) { return s == ConsistencySpace::logits ? "logits" : "softmax"; }

ConsistencySpace consistency_space_from_string(const std::string& s) {
  if (s == "logits") return ConsistencySpace::logits;
  if (s == "softmax") return ConsistencySpace::softmax;
  throw ConfigError("unknown consistency space '" + s + "' (expected logits|softmax)");
}

void MetaConfig::validate() const {
  if (!(outer_lr > 0.0) || !std::isfinite(outer_lr)) {
    throw ConfigError("meta: outer_lr must be finite and > 0");
  }
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) {
    throw ConfigError("meta: alpha must be finite and >= 0");
  }
  if (task_batch < 1) {
    throw ConfigError("meta: task_batch must be >= 1");
  }
  if (views < 1 || views > 8) {
    throw ConfigError("meta: views must be in [1, 8]");
  }
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) {
    throw ConfigError("meta: lr_decay must be in (0, 1]");
  }
  if (lr_decay_every < 1) {
    throw ConfigError("meta: lr_decay_every must be >= 1");
  }
}

double MetaConfig::lr_at(std::size_t epoch) const {
  return outer_lr * std::pow(lr_decay, static_cast<double>(epoch / lr_decay_every));
}

TrainResult meta_train(const ParamSet& init, const nn::ModelSpec& spec, const episodes::Dataset& data,
                       const TrainSetup& setup, std::uint64_t seed, const EpochCallback& on_epoch) {
  const MetaConfig& meta = setup.meta;
  meta.validate();
  setup.inner.validate();
  setup.train_aug.validate();

  TrainResult result;
  ParamSet theta = init.snapshot();
  result.final_params = theta;
  result.best_params = theta;
  double best_acc = -std::numeric_limits<double>::infinity();
  AdamState adam;

  const bool uses_views = setup.algo == Algo::msd;
  for (std::size_t epoch = 0; epoch < meta.epochs; ++epoch) {
    const double lr = meta.lr_at(epoch);
    double loss_sum = 0.0;
    for (std::size_t s = 0; s < meta.tasks_per_epoch; ++s) {
      const std::size_t step = epoch * meta.tasks_per_epoch + s;
      std::vector<episodes::AugmentedTaskSet> batch;
      batch.reserve(meta.task_batch);
      for (std::size_t b = 0; b < meta.task_batch; ++b) {
        RngStream rng = make_stream(seed, {tag(StreamTag::train_task), step, b});
        const episodes::Task task =
            episodes::sample_task(data, setup.shape.way, setup.shape.shot, setup.shape.query, rng);
        if (uses_views) {
          batch.push_back(episodes::augment_views(task, setup.train_aug, meta.views,
                                                  derive_seed(seed, {tag(StreamTag::train_view), step, b})));
        } else {
          batch.push_back(episodes::identity_views(task, 1));
        }
      }
      OuterStepResult r;
      try {
        r = outer_gradient(theta, setup.algo, batch, spec, setup.inner, meta);
      } catch (const DivergenceError& e) {
        const std::string last = epoch == 0 ? "initial parameters" : "epoch " + std::to_string(epoch);
        throw DivergenceError("outer step " + std::to_string(step) + " (epoch " + std::to_string(epoch + 1) +
                                  "): " + e.what() + "; last good checkpoint: " + last,
                              e.step());
      }
      for (double g : r.grad.flatten()) {
        if (!std::isfinite(g)) {
          const std::string last = epoch == 0 ? "initial parameters" : "epoch " + std::to_string(epoch);
          throw DivergenceError("outer step " + std::to_string(step) +
                                    ": non-finite meta-gradient; last good checkpoint: " + last,
                                setup.inner.steps);
        }
      }
      theta = meta.optimizer == OuterOptimizer::sgd
                  ? outer_step(theta, r.grad, lr)
                  : adam_step(theta, r.grad, lr, adam, meta.adam_beta1, meta.adam_beta2, meta.adam_eps);
      loss_sum += r.loss;
    }

    EpochReport report;
    report.epoch = epoch + 1;
    report.outer_lr = lr;
    report.train_loss = meta.tasks_per_epoch > 0 ? loss_sum / static_cast<double>(meta.tasks_per_epoch) : 0.0;
    if (meta.val_tasks > 0) {
      EvalOptions val;
      val.num_tasks = meta.val_tasks;
      val.shape = setup.shape;
      val.inner = setup.inner;
      val.task_stream = tag(StreamTag::val_task);
      val.view_stream = tag(StreamTag::val_view);
      report.validation = meta_test(theta, spec, data, val, seed);
    }
    report.validation.label = "val";
    report.validation.epoch = epoch + 1;
    report.validation.seed = seed;
    const bool is_best = report.validation.accuracy_mean > best_acc;
    if (is_best) {
      best_acc = report.validation.accuracy_mean;
      result.best_params = theta;
      result.best_epoch = epoch + 1;
    }
    result.epochs.push_back(report);
    if (on_epoch) {
      on_epoch(report, theta, is_best);
    }
  }
  result.final_params = theta;
  return result;
}

namespace {

metrics::TaskRecord evaluate_task(const ParamSet& theta, const nn::ModelSpec& spec,
                                  const episodes::Dataset& data, const EvalOptions& opts, std::uint64_t seed,
                                  std::size_t t) {
  RngStream rng = make_stream(seed, {opts.task_stream, t});
  const episodes::Task task = episodes::sample_task(data, opts.shape.way, opts.shape.shot, opts.shape.query, rng);
  metrics::TaskRecord rec;
  if (!opts.aug) {
    const ParamSet adapted = inner_update(theta, task.support_x, task.support_y, spec, opts.inner, false);
    const Tensor logits = nn::predict(adapted, spec, task.query_x);
    rec.accuracy = 100.0 * nn::accuracy(logits, task.query_y);
    rec.cls_loss = nn::cross_entropy(logits, task.query_y).item();
  } else {
    const auto views = episodes::augment_views(task, *opts.aug, opts.views,
                                               derive_seed(seed, {opts.view_stream, t}));
    std::vector<Tensor> logits;
    for (const Tensor& view : views.views) {
      const ParamSet adapted = inner_update(theta, view, views.support_y, spec, opts.inner, false);
      logits.push_back(nn::predict(adapted, spec, views.query_x));
      rec.accuracy += nn::accuracy(logits.back(), views.query_y);
      rec.cls_loss += nn::cross_entropy(logits.back(), views.query_y).item();
    }
    const double n = static_cast<double>(logits.size());
    rec.accuracy = 100.0 * rec.accuracy / n;
    rec.cls_loss /= n;
    const ConsistencyLoss c = knowledge_consistency_loss(logits, ConsistencySpace::logits);
    rec.consistency = c.consistency;
    rec.kc_loss = c.loss.item();
    rec.degenerate = c.degenerate;
    rec.consistency_softmax = knowledge_consistency_loss(logits, ConsistencySpace::softmax).consistency;
  }
  if (opts.noise_sensitivity) {
    if (!task.noise_layout) {
      throw ModalityError("noise sensitivity needs synthetic data with a target/noise layout");
    }
    const Tensor perturbed = metrics::perturb_noise_channels(
        task.query_x, task.noise_layout->target_dim, opts.probe_noise_scale,
        derive_seed(seed, {tag(StreamTag::probe), t}));
    rec.noise_sensitivity = metrics::noise_sensitivity(theta, task.support_x, task.support_y, spec, opts.inner,
                                                       task.query_x, perturbed, opts.norm);
  }
  return rec;
}

}  // namespace

std::vector<metrics::TaskRecord> meta_test_tasks(const ParamSet& theta, const nn::ModelSpec& spec,
                                                 const episodes::Dataset& data, const EvalOptions& opts,
                                                 std::uint64_t seed) {
  if (opts.num_tasks < 1) {
    throw ContractError("meta_test: num_tasks must be >= 1");
  }
  opts.inner.validate();
  if (opts.aug) {
    opts.aug->validate();
  }
  const ParamSet snap = theta.snapshot();
  std::vector<metrics::TaskRecord> records(opts.num_tasks);
  const std::size_t workers = std::max<std::size_t>(1, std::min(opts.workers, opts.num_tasks));
  if (workers == 1) {
    for (std::size_t t = 0; t < opts.num_tasks; ++t) {
      records[t] = evaluate_task(snap, spec, data, opts, seed, t);
    }
    return records;
  }
  // Tasks are independent; each worker fills its own slots so the result
  // does not depend on scheduling.
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t t = w; t < opts.num_tasks; t += workers) {
          records[t] = evaluate_task(snap, spec, data, opts, seed, t);
        }
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) {
    th.join();
  }
  for (const auto& e : errors) {
    if (e) {
      std::rethrow_exception(e);
    }
  }
  return records;
}

metrics::MetricsRecord meta_test(const ParamSet& theta, const nn::ModelSpec& spec, const episodes::Dataset& data,
                                 const EvalOptions& opts, std::uint64_t seed) {
  const auto records = meta_test_tasks(theta, spec, data, opts, seed);
  metrics::MetricsRecord out = metrics::aggregate(records);
  out.seed = seed;
  out.inner_steps = opts.inner.steps;
  return out;
}

}  // namespace msd::meta

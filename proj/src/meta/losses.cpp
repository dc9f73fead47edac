#include <algorithm>
#include <cmath>

#include "msd/error.hpp"
#include "msd/meta.hpp"
#include "msd/ops.hpp"

namespace msd::meta {

namespace {

// Squared norms at or below this are treated as zero vectors.
constexpr double kDegenerateNorm2 = 1e-24;

}  // namespace

ConsistencyLoss knowledge_consistency_loss(std::span<const Tensor> query_outputs, ConsistencySpace space) {
  if (query_outputs.empty()) {
    throw ContractError("knowledge_consistency_loss: need at least one output");
  }
  const Shape& shape = query_outputs[0].shape();
  if (shape.size() != 2 || shape[0] == 0) {
    throw ShapeError("knowledge_consistency_loss: outputs must be [B,N] with B > 0, got " + shape_str(shape));
  }
  for (const Tensor& t : query_outputs) {
    if (t.shape() != shape) {
      throw ShapeError("knowledge_consistency_loss: output shapes differ: " + shape_str(shape) + " vs " +
                       shape_str(t.shape()));
    }
  }
  const std::size_t n = query_outputs.size();
  const std::size_t rows = shape[0];

  std::vector<Tensor> o;
  o.reserve(n);
  for (const Tensor& t : query_outputs) {
    o.push_back(space == ConsistencySpace::softmax ? ops::exp(ops::log_softmax(t)) : t);
  }
  // mean = o_0 + mean_i (o_i - o_0), which is exactly o_0 when all agree.
  Tensor mean = o[0];
  if (n > 1) {
    Tensor dev = ops::sub(o[1], o[0]);
    for (std::size_t i = 2; i < n; ++i) {
      dev = ops::add(dev, ops::sub(o[i], o[0]));
    }
    mean = ops::add(o[0], ops::scale(dev, 1.0 / static_cast<double>(n)));
  }
  const Tensor mean_norm2 = ops::row_sum(ops::mul(mean, mean));

  ConsistencyLoss out;
  Tensor total;
  for (std::size_t i = 0; i < n; ++i) {
    const Tensor num = ops::row_sum(ops::mul(o[i], mean));
    const Tensor own_norm2 = ops::row_sum(ops::mul(o[i], o[i]));
    std::vector<double> keep(rows), fill(rows);
    for (std::size_t b = 0; b < rows; ++b) {
      const bool ok = own_norm2[b] > kDegenerateNorm2 && mean_norm2[b] > kDegenerateNorm2;
      keep[b] = ok ? 1.0 : 0.0;
      fill[b] = ok ? 0.0 : 1.0;
      out.degenerate += ok ? 0 : 1;
    }
    const Tensor keep_t({rows}, keep);
    const Tensor denom2 = ops::add(ops::mul(ops::mul(own_norm2, mean_norm2), keep_t), Tensor({rows}, fill));
    const Tensor cosine = ops::div(ops::mul(num, keep_t), ops::sqrt(denom2));
    total = i == 0 ? ops::sum(cosine) : ops::add(total, ops::sum(cosine));
  }
  const Tensor c = ops::div(total, Tensor::scalar(static_cast<double>(n * rows)));
  out.loss = ops::sub(Tensor::scalar(1.0), c);
  out.consistency = std::clamp(c.item(), -1.0, 1.0);
  return out;
}

MsdLoss msd_total_loss(const ParamSet& theta, const episodes::AugmentedTaskSet& views,
                       const nn::ModelSpec& spec, const InnerLoopConfig& cfg, double alpha, bool use_kc,
                       ConsistencySpace space) {
  const std::vector<ParamSet> adapted = msd_inner(theta, views, spec, cfg);
  const std::size_t n = adapted.size();
  std::vector<Tensor> logits;
  logits.reserve(n);
  MsdLoss out;
  Tensor cls_sum;
  for (std::size_t i = 0; i < n; ++i) {
    logits.push_back(nn::predict(adapted[i], spec, views.query_x));
    const Tensor ce = nn::cross_entropy(logits.back(), views.query_y);
    cls_sum = i == 0 ? ce : ops::add(cls_sum, ce);
    out.accuracy += nn::accuracy(logits.back(), views.query_y);
  }
  out.accuracy /= static_cast<double>(n);
  out.cls = ops::div(cls_sum, Tensor::scalar(static_cast<double>(n)));

  if (use_kc && n > 1) {
    const ConsistencyLoss kc = knowledge_consistency_loss(logits, space);
    out.kc = kc.loss;
    out.consistency = kc.consistency;
    out.degenerate = kc.degenerate;
  } else {
    std::vector<Tensor> detached;
    for (const Tensor& t : logits) {
      detached.push_back(t.detach());
    }
    const ConsistencyLoss kc = knowledge_consistency_loss(detached, space);
    out.kc = Tensor::scalar(0.0);
    out.consistency = kc.consistency;
    out.degenerate = kc.degenerate;
  }
  out.total = ops::add(out.kc, ops::scale(out.cls, alpha));
  return out;
}

OuterStepResult outer_gradient(const ParamSet& theta, Algo algo,
                               std::span<const episodes::AugmentedTaskSet> tasks,
                               const nn::ModelSpec& spec, const InnerLoopConfig& inner,
                               const MetaConfig& meta) {
  if (tasks.empty()) {
    throw ContractError("outer_gradient: no tasks");
  }
  InnerLoopConfig cfg = inner;
  if (algo == Algo::fomaml) {
    cfg.first_order = true;
  }
  OuterStepResult out;
  out.consistency = 0.0;
  std::vector<double> total(theta.total_dim(), 0.0);
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    Graph graph;
    const ParamSet p = theta.snapshot().track(graph);
    Tensor objective;
    if (algo == Algo::msd) {
      const MsdLoss l = msd_total_loss(p, tasks[t], spec, cfg, meta.alpha, meta.kc_loss, meta.consistency_space);
      objective = l.total;
      out.kc += l.kc.item();
      out.cls += l.cls.item();
      out.consistency += l.consistency;
      out.accuracy += l.accuracy;
      out.degenerate += l.degenerate;
    } else {
      const auto& set = tasks[t];
      const ParamSet adapted = inner_update(p, set.views.at(0), set.support_y, spec, cfg, true);
      const Tensor logits = nn::predict(adapted, spec, set.query_x);
      objective = nn::cross_entropy(logits, set.query_y);
      out.cls += objective.item();
      out.consistency += 1.0;
      out.accuracy += nn::accuracy(logits, set.query_y);
    }
    const double value = objective.item();
    if (!std::isfinite(value)) {
      throw DivergenceError("outer objective is not finite for task " + std::to_string(t), cfg.steps);
    }
    out.loss += value;
    const auto g = p.with_values(gradients(objective, p.tensors(), false)).flatten();
    for (std::size_t k = 0; k < total.size(); ++k) {
      total[k] += g[k];
    }
  }
  const double count = static_cast<double>(tasks.size());
  for (double& v : total) {
    v /= count;
  }
  out.grad = ParamSet::unflatten(total, theta.snapshot());
  out.loss /= count;
  out.kc /= count;
  out.cls /= count;
  out.consistency /= count;
  out.accuracy /= count;
  return out;
}

}  // namespace msd::meta

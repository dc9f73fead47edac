#include <cmath>

#include "msd/error.hpp"
#include "msd/meta.hpp"
#include "msd/ops.hpp"

namespace msd::meta {

void InnerLoopConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) {
    throw ConfigError("inner loop: lr must be finite and > 0");
  }
}

namespace {

std::vector<Tensor> side_gradients(const ParamSet& p, const std::function<Tensor(const ParamSet&)>& loss,
                                   std::size_t step, double* value) {
  Graph side;
  const ParamSet q = p.snapshot().track(side);
  const Tensor l = loss(q);
  *value = l.item();
  if (!std::isfinite(*value)) {
    throw DivergenceError("inner loop loss is not finite at step " + std::to_string(step), step);
  }
  return gradients(l, q.tensors(), false);
}

}  // namespace

ParamSet gradient_descent(const ParamSet& theta, const std::function<Tensor(const ParamSet&)>& loss,
                          const InnerLoopConfig& cfg, bool tracked) {
  cfg.validate();
  if (tracked && !theta.tracked()) {
    throw ContractError("gradient_descent: tracked update needs theta registered on a graph");
  }
  ParamSet p = tracked ? theta : theta.snapshot();
  for (std::size_t t = 0; t < cfg.steps; ++t) {
    double value = 0.0;
    if (!tracked) {
      const auto g = side_gradients(p, loss, t, &value);
      p = linear_combination(1.0, p, -cfg.lr, p.with_values(g));
      continue;
    }
    std::vector<Tensor> g;
    if (cfg.first_order) {
      g = side_gradients(p, loss, t, &value);
    } else {
      const Tensor l = loss(p);
      value = l.item();
      if (!std::isfinite(value)) {
        throw DivergenceError("inner loop loss is not finite at step " + std::to_string(t), t);
      }
      g = gradients(l, p.tensors(), true);
    }
    std::vector<Tensor> next;
    next.reserve(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
      next.push_back(ops::sub(p[i].second, ops::scale(g[i], cfg.lr)));
    }
    p = p.with_values(std::move(next));
  }
  return p;
}

ParamSet inner_update(const ParamSet& theta, const Tensor& support_x, std::span<const int> support_y,
                      const nn::ModelSpec& spec, const InnerLoopConfig& cfg, bool tracked) {
  const ParamSet start = nn::expand_head(tracked ? theta : theta.snapshot(), spec);
  const std::vector<int> labels(support_y.begin(), support_y.end());
  return gradient_descent(
      start, [&](const ParamSet& p) { return nn::cross_entropy(nn::predict(p, spec, support_x), labels); },
      cfg, tracked);
}

ParamSet maml_meta_gradient(const ParamSet& theta, std::span<const episodes::Task> tasks,
                            const nn::ModelSpec& spec, const InnerLoopConfig& cfg) {
  if (tasks.empty()) {
    throw ContractError("maml_meta_gradient: no tasks");
  }
  std::vector<double> total(theta.total_dim(), 0.0);
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const auto& task = tasks[i];
    Graph graph;
    const ParamSet p = theta.snapshot().track(graph);
    const ParamSet adapted = inner_update(p, task.support_x, task.support_y, spec, cfg, true);
    const Tensor loss = nn::cross_entropy(nn::predict(adapted, spec, task.query_x), task.query_y);
    if (!std::isfinite(loss.item())) {
      throw DivergenceError("query loss is not finite for task " + std::to_string(i), cfg.steps);
    }
    const auto g = p.with_values(gradients(loss, p.tensors(), false)).flatten();
    for (std::size_t k = 0; k < total.size(); ++k) {
      total[k] += g[k];
    }
  }
  for (double& v : total) {
    v /= static_cast<double>(tasks.size());
  }
  return ParamSet::unflatten(total, theta.snapshot());
}

std::vector<ParamSet> msd_inner(const ParamSet& theta, const episodes::AugmentedTaskSet& views,
                                const nn::ModelSpec& spec, const InnerLoopConfig& cfg) {
  if (views.views.empty()) {
    throw ContractError("msd_inner: need at least one view");
  }
  std::vector<ParamSet> out;
  out.reserve(views.views.size());
  for (const Tensor& view : views.views) {
    out.push_back(inner_update(theta, view, views.support_y, spec, cfg, theta.tracked()));
  }
  return out;
}

ParamSet outer_step(const ParamSet& theta, const ParamSet& grad, double beta) {
  if (!theta.same_layout(grad)) {
    throw ContractError("outer_step: gradient layout does not match parameters");
  }
  return linear_combination(1.0, theta, -beta, grad);
}

ParamSet adam_step(const ParamSet& theta, const ParamSet& grad, double lr, AdamState& state,
                   double beta1, double beta2, double eps) {
  if (!theta.same_layout(grad)) {
    throw ContractError("adam_step: gradient layout does not match parameters");
  }
  if (state.m.empty()) {
    state.m = zeros_like(theta);
    state.v = zeros_like(theta);
    state.t = 0;
  }
  ++state.t;
  auto th = theta.flatten();
  const auto g = grad.flatten();
  auto m = state.m.flatten();
  auto v = state.v.flatten();
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < th.size(); ++i) {
    m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
    v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
    th[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
  }
  state.m = ParamSet::unflatten(m, theta);
  state.v = ParamSet::unflatten(v, theta);
  return ParamSet::unflatten(th, theta);
}

}  // namespace msd::meta

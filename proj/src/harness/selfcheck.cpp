#include <cmath>
#include <cstdio>
#include <ostream>
#include <sstream>

#include "msd/error.hpp"
#include "msd/harness.hpp"
#include "msd/ops.hpp"

namespace msd::harness {

namespace {

struct Checker {
  std::ostream& out;
  int failures = 0;

  void operator()(const std::string& name, bool ok, const std::string& detail) {
    out << (ok ? "PASS " : "FAIL ") << name << " (" << detail << ")\n";
    failures += ok ? 0 : 1;
  }
};

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3e", v);
  return buf;
}

double rel_err(const ParamSet& a, const ParamSet& b) {
  const auto x = a.flatten(), y = b.flatten();
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    num += (x[i] - y[i]) * (x[i] - y[i]);
    den += y[i] * y[i];
  }
  return std::sqrt(num) / std::max(std::sqrt(den), 1e-8);
}

ParamSet analytic(const ParamSet& p, const std::function<Tensor(const ParamSet&)>& f) {
  Graph g;
  const ParamSet q = p.track(g);
  return p.with_values(gradients(f(q), q.tensors(), false));
}

// First-order and Hessian-vector checks of f at p against central differences.
void gradient_checks(Checker& check, const std::string& name, const ParamSet& p,
                     const std::function<Tensor(const ParamSet&)>& f) {
  const ParamSet fd = finite_diff_gradient([&](const ParamSet& x) { return f(x).item(); }, p, 1e-5);
  const double e1 = rel_err(analytic(p, f), fd);
  check(name + " gradient vs finite differences", e1 < 1e-4, "rel err " + sci(e1));

  std::vector<double> dir(p.total_dim());
  for (std::size_t i = 0; i < dir.size(); ++i) {
    dir[i] = std::sin(1.0 + static_cast<double>(i));
  }
  const ParamSet v = ParamSet::unflatten(dir, p);
  auto directional = [&](const ParamSet& x) {
    const auto g = analytic(x, f).flatten();
    double s = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) s += g[i] * dir[i];
    return s;
  };
  Graph graph;
  const ParamSet q = p.track(graph);
  const auto g = gradients(f(q), q.tensors(), true);
  Tensor s = ops::dot(ops::reshape(g[0], {g[0].size()}), ops::reshape(v[0].second, {g[0].size()}));
  for (std::size_t i = 1; i < g.size(); ++i) {
    s = ops::add(s, ops::dot(ops::reshape(g[i], {g[i].size()}), ops::reshape(v[i].second, {g[i].size()})));
  }
  const ParamSet hv = p.with_values(gradients(s, q.tensors(), false));
  const double e2 = rel_err(hv, finite_diff_gradient(directional, p, 1e-5));
  check(name + " second order vs finite differences", e2 < 1e-3, "rel err " + sci(e2));
}

Tensor rand_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  std::vector<double> v(numel(shape));
  for (double& x : v) x = n(rng);
  return Tensor(std::move(shape), std::move(v));
}

}  // namespace

int run_selfcheck(std::ostream& out) {
  Checker check{out};
  std::mt19937_64 rng(12345);

  {
    nn::ModelSpec spec;
    spec.input_shape = {6};
    spec.hidden_widths = {5};
    spec.num_classes = 3;
    const ParamSet p = nn::init_params(spec, 3);
    const Tensor x = rand_tensor({4, 6}, rng);
    const std::vector<int> y{0, 2, 1, 2};
    gradient_checks(check, "mlp", p, [&](const ParamSet& q) { return nn::cross_entropy(nn::predict(q, spec, x), y); });
  }
  {
    nn::ModelSpec spec;
    spec.kind = nn::ModelKind::conv4_mini;
    spec.input_shape = {2, 4, 4};
    spec.hidden_widths = {3, 2};
    spec.num_classes = 3;
    const ParamSet p = nn::init_params(spec, 5);
    const Tensor x = rand_tensor({2, 2, 4, 4}, rng);
    const std::vector<int> y{1, 0};
    gradient_checks(check, "conv4-mini", p,
                    [&](const ParamSet& q) { return nn::cross_entropy(nn::predict(q, spec, x), y); });
  }

  {
    ParamSet theta;
    theta.add("theta", Tensor::scalar(1.0));
    auto square = [](const ParamSet& p) { return ops::mul(p[0].second, p[0].second); };
    for (bool first_order : {false, true}) {
      meta::InnerLoopConfig cfg{1, 0.05, first_order};
      Graph g;
      const ParamSet q = theta.track(g);
      const ParamSet adapted = meta::gradient_descent(q, square, cfg, true);
      const double grad = gradients(square(adapted), q.tensors(), false)[0].item();
      const double expected = first_order ? 1.8 : 1.62;
      check(std::string("quadratic meta-gradient ") + (first_order ? "first order" : "second order"),
            std::abs(grad - expected) < 1e-9, "got " + std::to_string(grad));
    }
  }

  {
    const Tensor a({1, 2}, {1.0, 0.0}), b({1, 2}, {0.0, 1.0});
    const std::vector<Tensor> pair{a, b};
    const auto c = metrics::consistency_score(pair);
    check("consistency of orthogonal pair", std::abs(c.score - std::sqrt(0.5)) < 1e-9, "score " + std::to_string(c.score));
    const Tensor o = rand_tensor({5, 4}, rng);
    const std::vector<Tensor> same{o, o};
    const auto l = meta::knowledge_consistency_loss(same);
    check("identical outputs give consistency 1", l.consistency == 1.0 && l.loss.item() == 0.0,
          "loss " + sci(l.loss.item()));
    const std::vector<Tensor> opposite{Tensor({1, 2}, {1.0, 0.0}), Tensor({1, 2}, {-1.0, 0.0})};
    const auto d = meta::knowledge_consistency_loss(opposite);
    check("zero mean vector counted as degenerate", d.degenerate == 2 && d.loss.item() == 1.0,
          std::to_string(d.degenerate) + " degenerate");
  }

  {
    RunConfig cfg = default_config();
    cfg.dataset.synthetic.samples_per_class = 20;
    cfg.inner.steps = 3;
    const Splits s = load_splits(cfg);
    const ParamSet theta = initial_params(cfg);
    RngStream r1(7);
    const episodes::Task task = episodes::sample_task(s.train, 5, 1, 5, r1);
    const std::vector<episodes::Task> tasks{task};
    const ParamSet g_maml = meta::maml_meta_gradient(theta, tasks, cfg.model, cfg.inner);
    const std::vector<episodes::AugmentedTaskSet> sets{episodes::identity_views(task, 1)};
    const auto g_msd = meta::outer_gradient(theta, meta::Algo::msd, sets, cfg.model, cfg.inner, cfg.meta);
    const double diff = max_abs_diff(g_maml, g_msd.grad);
    check("single-view msd gradient equals maml", diff <= 1e-10, "max abs diff " + sci(diff));
  }

  {
    const ParamSet p = nn::init_params(default_config().model, 9);
    const auto bytes = encode_params(p);
    check("checkpoint round trip", decode_params(bytes).bitwise_equal(p), std::to_string(bytes.size()) + " bytes");
    bool truncated_rejected = false;
    try {
      decode_params(std::span<const std::uint8_t>(bytes.data(), bytes.size() - 3));
    } catch (const CorruptCheckpointError&) {
      truncated_rejected = true;
    }
    check("truncated checkpoint rejected", truncated_rejected, "corrupt-checkpoint error");
  }

  {
    std::vector<metrics::TaskRecord> recs(2);
    recs[0].accuracy = 40.0;
    recs[1].accuracy = 60.0;
    const auto agg = metrics::aggregate(recs);
    const double expected = 1.96 * 10.0 / std::sqrt(2.0);
    check("aggregate mean and interval", agg.accuracy_mean == 50.0 && std::abs(agg.accuracy_ci95 - expected) < 1e-12,
          "ci95 " + std::to_string(agg.accuracy_ci95));
  }

  out << (check.failures == 0 ? "selfcheck: all checks passed\n"
                              : "selfcheck: " + std::to_string(check.failures) + " failed\n");
  return check.failures;
}

}  // namespace msd::harness

#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "msd/episodes.hpp"
#include "msd/error.hpp"
#include "msd/meta.hpp"
#include "msd/nn.hpp"
#include "msd/ops.hpp"
#include "test_util.hpp"

using namespace msd;
using namespace msd::meta;
using msd::testing::random_tensor;
using msd::testing::rel_error;

namespace {

nn::ModelSpec tiny_spec() {
  nn::ModelSpec s;
  s.input_shape = {4};
  s.hidden_widths = {3};
  s.num_classes = 3;
  return s;
}

episodes::Task tiny_task(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  episodes::Task t;
  t.support_x = random_tensor({3, 4}, rng, -2.0, 2.0);
  t.support_y = {0, 1, 2};
  t.query_x = random_tensor({6, 4}, rng, -2.0, 2.0);
  t.query_y = {0, 1, 2, 2, 1, 0};
  t.way = 3;
  t.shot = 1;
  t.query_per_class = 2;
  return t;
}

episodes::AugmentedTaskSet two_views(const episodes::Task& t, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  episodes::AugmentedTaskSet s;
  s.views = {t.support_x, ops::add(t.support_x, random_tensor(t.support_x.shape(), rng, -0.5, 0.5))};
  s.support_y = t.support_y;
  s.query_x = t.query_x;
  s.query_y = t.query_y;
  return s;
}

ParamSet scalar_param(double v) {
  ParamSet p;
  p.add("theta", Tensor::scalar(v));
  return p;
}

Tensor square(const ParamSet& p) { return ops::mul(p[0].second, p[0].second); }

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return ab / std::sqrt(aa * bb);
}

// Mean cosine to the across-model mean, from plain arrays.
double reference_consistency(const std::vector<Tensor>& outs) {
  const std::size_t rows = outs[0].dim(0), cols = outs[0].dim(1), n = outs.size();
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    std::vector<double> mean(cols, 0.0);
    for (const auto& o : outs) {
      for (std::size_t c = 0; c < cols; ++c) mean[c] += o[r * cols + c] / static_cast<double>(n);
    }
    for (const auto& o : outs) {
      std::vector<double> row(o.values().begin() + static_cast<std::ptrdiff_t>(r * cols),
                              o.values().begin() + static_cast<std::ptrdiff_t>((r + 1) * cols));
      total += cosine(row, mean);
    }
  }
  return total / static_cast<double>(rows * n);
}

episodes::Dataset small_synthetic() {
  episodes::SyntheticSpec spec;
  spec.num_classes_total = 10;
  spec.samples_per_class = 30;
  return episodes::generate_synthetic(spec, 1000);
}

}  // namespace

TEST_CASE("gradient descent on the quadratic") {
  const ParamSet theta = scalar_param(1.0);
  CHECK(gradient_descent(theta, square, {0, 0.05, false}, false).bitwise_equal(theta));
  CHECK(gradient_descent(theta, square, {1, 0.05, false}, false)[0].second.item() == doctest::Approx(0.9).epsilon(1e-15));
  const ParamSet two = gradient_descent(theta, square, {2, 0.05, false}, false);
  const ParamSet once_twice =
      gradient_descent(gradient_descent(theta, square, {1, 0.05, false}, false), square, {1, 0.05, false}, false);
  CHECK(two.bitwise_equal(once_twice));
  CHECK_THROWS_AS(gradient_descent(theta, square, {1, 0.05, false}, true), ContractError);
}

TEST_CASE("inner_update: k=0 identity and composition on a real support set") {
  const auto spec = tiny_spec();
  const ParamSet theta = nn::init_params(spec, 3);
  const auto task = tiny_task(1);
  CHECK(inner_update(theta, task.support_x, task.support_y, spec, {0, 0.05, false}, false).bitwise_equal(theta));
  const ParamSet a = inner_update(theta, task.support_x, task.support_y, spec, {2, 0.1, false}, false);
  const ParamSet b = inner_update(inner_update(theta, task.support_x, task.support_y, spec, {1, 0.1, false}, false),
                                  task.support_x, task.support_y, spec, {1, 0.1, false}, false);
  CHECK(a.bitwise_equal(b));
}

TEST_CASE("divergent inner loss reports the step") {
  const ParamSet theta = scalar_param(1.0);
  auto blowup = [](const ParamSet& p) { return ops::exp(ops::scale(ops::mul(p[0].second, p[0].second), 100.0)); };
  try {
    gradient_descent(theta, blowup, {5, 1.0, false}, false);
    FAIL("expected divergence");
  } catch (const DivergenceError& e) {
    CHECK(e.step() <= 5);
  }
}

TEST_CASE("quadratic meta-gradient: second order 1.62, first order 1.8") {
  for (bool fo : {false, true}) {
    Graph g;
    const ParamSet q = scalar_param(1.0).track(g);
    const ParamSet adapted = gradient_descent(q, square, {1, 0.05, fo}, true);
    const double grad = gradients(square(adapted), q.tensors(), false)[0].item();
    // Closed forms 2(1-2a)^2 theta and 2(1-2a) theta at a = 0.05, theta = 1.
    const double a = 0.05;
    const double expected = fo ? 2.0 * (1.0 - 2.0 * a) : 2.0 * (1.0 - 2.0 * a) * (1.0 - 2.0 * a);
    CHECK(std::abs(grad - expected) < 1e-9);
  }
  // k = 0: both equal the plain gradient 2 theta.
  for (bool fo : {false, true}) {
    Graph g;
    const ParamSet q = scalar_param(1.0).track(g);
    const ParamSet adapted = gradient_descent(q, square, {0, 0.05, fo}, true);
    CHECK(gradients(square(adapted), q.tensors(), false)[0].item() == 2.0);
  }
}

TEST_CASE("maml meta-gradient matches finite differences of the meta-objective") {
  const auto spec = tiny_spec();
  const ParamSet theta = nn::init_params(spec, 5);
  const std::vector<episodes::Task> tasks{tiny_task(2), tiny_task(3)};
  const InnerLoopConfig cfg{3, 0.2, false};
  auto objective = [&](const ParamSet& p) {
    double s = 0.0;
    for (const auto& t : tasks) {
      const ParamSet a = inner_update(p, t.support_x, t.support_y, spec, cfg, false);
      s += nn::cross_entropy(nn::predict(a, spec, t.query_x), t.query_y).item();
    }
    return s / static_cast<double>(tasks.size());
  };
  const ParamSet fd = finite_diff_gradient(objective, theta, 1e-5);
  CHECK(rel_error(maml_meta_gradient(theta, tasks, spec, cfg), fd) < 1e-3);

  // First order differs from the true gradient once k >= 1 and agrees at k = 0.
  const ParamSet fo = maml_meta_gradient(theta, tasks, spec, {3, 0.2, true});
  CHECK(rel_error(fo, fd) > 1e-3);
  const ParamSet g0 = maml_meta_gradient(theta, tasks, spec, {0, 0.2, false});
  const ParamSet g0fo = maml_meta_gradient(theta, tasks, spec, {0, 0.2, true});
  CHECK(g0.bitwise_equal(g0fo));
}

TEST_CASE("msd_inner: identical views, single view, distinct views") {
  const auto spec = tiny_spec();
  const ParamSet theta = nn::init_params(spec, 7);
  const auto task = tiny_task(4);
  const InnerLoopConfig cfg{2, 0.1, false};
  const auto same = msd_inner(theta, episodes::identity_views(task, 3), spec, cfg);
  REQUIRE(same.size() == 3);
  CHECK(same[0].bitwise_equal(same[1]));
  CHECK(same[0].bitwise_equal(same[2]));
  const auto single = msd_inner(theta, episodes::identity_views(task, 1), spec, cfg);
  CHECK(single.size() == 1);
  CHECK(single[0].bitwise_equal(inner_update(theta, task.support_x, task.support_y, spec, cfg, false)));

  const auto data = small_synthetic();
  RngStream rng(3);
  const auto t = episodes::sample_task(data, 5, 1, 5, rng);
  const auto views = episodes::augment_views(t, episodes::AugmentationSpec::noise_channel(1.0), 2, 11);
  nn::ModelSpec big;
  const ParamSet p = nn::init_params(big, 1);
  const auto adapted = msd_inner(p, views, big, cfg);
  CHECK(max_abs_diff(adapted[0], adapted[1]) > 0.0);
}

TEST_CASE("knowledge_consistency_loss examples") {
  const std::vector<Tensor> orth{Tensor({1, 2}, {1.0, 0.0}), Tensor({1, 2}, {0.0, 1.0})};
  const auto l = knowledge_consistency_loss(orth);
  CHECK(std::abs(l.consistency - std::sqrt(2.0) / 2.0) < 1e-12);
  CHECK(std::abs(l.loss.item() - (1.0 - std::sqrt(2.0) / 2.0)) < 1e-12);
  CHECK(l.degenerate == 0);

  const std::vector<Tensor> opposite{Tensor({1, 2}, {1.0, 0.0}), Tensor({1, 2}, {-1.0, 0.0})};
  const auto d = knowledge_consistency_loss(opposite);
  CHECK(d.loss.item() == 1.0);
  CHECK(d.degenerate == 2);

  std::mt19937_64 rng(8);
  const Tensor o = random_tensor({4, 5}, rng);
  const std::vector<Tensor> ident{o, o, o};
  const auto id = knowledge_consistency_loss(ident);
  CHECK(id.consistency == 1.0);
  CHECK(id.loss.item() == 0.0);

  std::vector<Tensor> outs{random_tensor({6, 5}, rng), random_tensor({6, 5}, rng), random_tensor({6, 5}, rng)};
  const auto base = knowledge_consistency_loss(outs);
  CHECK(std::abs(base.consistency - reference_consistency(outs)) < 1e-12);
  CHECK(base.loss.item() >= 0.0);
  CHECK(base.loss.item() <= 2.0);
  for (double s : {1e-3, 0.5, 7.0, 1e4}) {
    std::vector<Tensor> scaled;
    for (const auto& t : outs) scaled.push_back(ops::scale(t, s));
    CHECK(std::abs(knowledge_consistency_loss(scaled).consistency - base.consistency) < 1e-12);
  }

  const auto soft = knowledge_consistency_loss(outs, ConsistencySpace::softmax);
  std::vector<Tensor> probs;
  for (const auto& t : outs) probs.push_back(ops::exp(ops::log_softmax(t)));
  CHECK(std::abs(soft.consistency - reference_consistency(probs)) < 1e-12);

  const std::vector<Tensor> ragged{Tensor::zeros({2, 3}), Tensor::zeros({3, 3})};
  CHECK_THROWS_AS(knowledge_consistency_loss(ragged), ShapeError);
}

TEST_CASE("kc loss gradient matches finite differences") {
  std::mt19937_64 rng(12);
  const std::vector<Tensor> xs{random_tensor({3, 4}, rng), random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)};
  auto f = [](const std::vector<Tensor>& in) { return knowledge_consistency_loss(in).loss.item(); };
  const auto fd = msd::testing::numeric_gradients(f, xs);
  Graph g;
  std::vector<Tensor> tracked;
  for (const auto& x : xs) tracked.push_back(g.leaf(x));
  const auto an = gradients(knowledge_consistency_loss(tracked).loss, tracked, false);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    CHECK(rel_error(an[i].values(), fd[i]) < 1e-6);
  }
}

TEST_CASE("msd_total_loss equals a recomputation from raw pieces") {
  const auto spec = tiny_spec();
  const ParamSet theta = nn::init_params(spec, 9);
  const auto task = tiny_task(6);
  const auto views = two_views(task, 3);
  const InnerLoopConfig cfg{3, 0.2, false};
  const double alpha = 0.7;
  const MsdLoss l = msd_total_loss(theta, views, spec, cfg, alpha);

  std::vector<Tensor> outs;
  double ce = 0.0;
  for (const auto& v : views.views) {
    const ParamSet a = inner_update(theta, v, views.support_y, spec, cfg, false);
    outs.push_back(nn::predict(a, spec, views.query_x));
    // Cross-entropy by hand.
    const std::size_t rows = outs.back().dim(0), cols = outs.back().dim(1);
    double s = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
      double m = -INFINITY;
      for (std::size_t c = 0; c < cols; ++c) m = std::max(m, outs.back()[r * cols + c]);
      double z = 0.0;
      for (std::size_t c = 0; c < cols; ++c) z += std::exp(outs.back()[r * cols + c] - m);
      s += m + std::log(z) - outs.back()[r * cols + static_cast<std::size_t>(views.query_y[r])];
    }
    ce += s / static_cast<double>(rows);
  }
  ce /= 2.0;
  const double kc = 1.0 - reference_consistency(outs);
  CHECK(std::abs(l.cls.item() - ce) < 1e-12);
  CHECK(std::abs(l.kc.item() - kc) < 1e-12);
  CHECK(std::abs(l.total.item() - (kc + alpha * ce)) < 1e-12);

  // alpha = 0 with identical views: exactly zero.
  CHECK(msd_total_loss(theta, episodes::identity_views(task, 2), spec, cfg, 0.0).total.item() == 0.0);
  // Single view: kc is 0 and total = alpha * cls.
  const MsdLoss one = msd_total_loss(theta, episodes::identity_views(task, 1), spec, cfg, alpha);
  CHECK(one.kc.item() == 0.0);
  CHECK(one.total.item() == doctest::Approx(alpha * one.cls.item()).epsilon(1e-15));
}

TEST_CASE("msd meta-gradient matches finite differences") {
  const auto spec = tiny_spec();
  const ParamSet theta = nn::init_params(spec, 10);
  const std::vector<episodes::AugmentedTaskSet> sets{two_views(tiny_task(7), 1), two_views(tiny_task(8), 2)};
  const InnerLoopConfig inner{2, 0.2, false};
  MetaConfig meta;
  meta.alpha = 0.5;
  auto objective = [&](const ParamSet& p) {
    double s = 0.0;
    for (const auto& v : sets) s += msd_total_loss(p, v, spec, inner, meta.alpha).total.item();
    return s / 2.0;
  };
  const auto r = outer_gradient(theta, Algo::msd, sets, spec, inner, meta);
  CHECK(rel_error(r.grad, finite_diff_gradient(objective, theta, 1e-5)) < 1e-3);
  CHECK(r.loss == doctest::Approx(objective(theta)).epsilon(1e-12));
}

TEST_CASE("single-view msd gradient equals maml over 10 outer steps") {
  const auto data = small_synthetic();
  nn::ModelSpec spec;
  ParamSet a = nn::init_params(spec, 2), b = a;
  const InnerLoopConfig inner{3, 0.05, false};
  MetaConfig meta;
  for (std::size_t step = 0; step < 10; ++step) {
    RngStream rng = make_stream(5, {step});
    std::vector<episodes::Task> tasks{episodes::sample_task(data, 5, 1, 5, rng), episodes::sample_task(data, 5, 1, 5, rng)};
    std::vector<episodes::AugmentedTaskSet> sets;
    for (const auto& t : tasks) sets.push_back(episodes::identity_views(t, 1));
    const ParamSet gm = maml_meta_gradient(a, tasks, spec, inner);
    const ParamSet gs = outer_gradient(b, Algo::msd, sets, spec, inner, meta).grad;
    CHECK(max_abs_diff(gm, gs) <= 1e-10);
    a = outer_step(a, gm, 0.01);
    b = outer_step(b, gs, 0.01);
  }
}

TEST_CASE("outer_step and adam_step") {
  const auto spec = tiny_spec();
  const ParamSet theta = nn::init_params(spec, 1);
  CHECK(outer_step(theta, theta, 0.0).bitwise_equal(theta));
  for (double v : outer_step(theta, theta, 1.0).flatten()) CHECK(v == 0.0);

  const ParamSet g1 = nn::init_params(spec, 2), g2 = nn::init_params(spec, 3);
  const ParamSet seq = outer_step(outer_step(theta, g1, 0.1), g2, 0.1);
  const ParamSet once = outer_step(theta, linear_combination(1.0, g1, 1.0, g2), 0.1);
  CHECK(max_abs_diff(seq, once) < 1e-15);

  ParamSet other;
  other.add("x", Tensor::scalar(1.0));
  CHECK_THROWS_AS(outer_step(theta, other, 0.1), ContractError);

  // First Adam step moves every coordinate by lr * sign(g) (up to eps).
  AdamState state;
  const ParamSet moved = adam_step(theta, g1, 0.01, state, 0.9, 0.999, 1e-8);
  const auto t0 = theta.flatten(), t1 = moved.flatten(), gg = g1.flatten();
  for (std::size_t i = 0; i < t0.size(); ++i) {
    if (gg[i] != 0.0) CHECK(std::abs((t0[i] - t1[i]) - 0.01 * (gg[i] > 0 ? 1.0 : -1.0)) < 1e-8);
  }
  CHECK(state.t == 1);
}

TEST_CASE("ten msd outer steps reduce the total loss on a fixed task set") {
  const auto data = small_synthetic();
  nn::ModelSpec spec;
  ParamSet theta = nn::init_params(spec, 4);
  const InnerLoopConfig inner{3, 0.05, false};
  MetaConfig meta;
  std::vector<episodes::AugmentedTaskSet> sets;
  for (std::uint64_t t = 0; t < 4; ++t) {
    RngStream rng = make_stream(99, {t});
    sets.push_back(episodes::augment_views(episodes::sample_task(data, 5, 1, 5, rng),
                                           episodes::AugmentationSpec::noise_channel(1.0), 2, t));
  }
  std::vector<double> losses;
  for (int step = 0; step <= 10; ++step) {
    const auto r = outer_gradient(theta, Algo::msd, sets, spec, inner, meta);
    losses.push_back(r.loss);
    theta = outer_step(theta, r.grad, 0.05);
  }
  const double after = std::accumulate(losses.begin() + 1, losses.end(), 0.0) / 10.0;
  CHECK(after < losses[0]);
  CHECK(losses.back() < losses.front());
}

TEST_CASE("meta_train: zero epochs, determinism, lr schedule, config defaults") {
  const auto data = small_synthetic();
  nn::ModelSpec spec;
  const ParamSet init = nn::init_params(spec, 1);
  TrainSetup setup;
  setup.inner.steps = 2;
  setup.shape.query = 5;
  setup.meta.epochs = 0;
  setup.train_aug = episodes::AugmentationSpec::noise_channel(1.0);
  CHECK(meta_train(init, spec, data, setup, 3).final_params.bitwise_equal(init));

  setup.meta.epochs = 2;
  setup.meta.tasks_per_epoch = 3;
  setup.meta.val_tasks = 4;
  std::size_t calls = 0;
  const auto a = meta_train(init, spec, data, setup, 3, [&](const EpochReport&, const ParamSet&, bool) { ++calls; });
  const auto b = meta_train(init, spec, data, setup, 3);
  CHECK(calls == 2);
  CHECK(a.final_params.bitwise_equal(b.final_params));
  CHECK_FALSE(a.final_params.bitwise_equal(init));
  CHECK(a.epochs.size() == 2);
  CHECK_FALSE(meta_train(init, spec, data, setup, 4).final_params.bitwise_equal(a.final_params));

  MetaConfig m;
  CHECK(m.task_batch == 2);
  CHECK(m.outer_lr == 0.001);
  CHECK(m.alpha == 1.0);
  CHECK(m.lr_at(0) == 0.001);
  CHECK(m.lr_at(9) == 0.001);
  CHECK(m.lr_at(10) == doctest::Approx(0.0001).epsilon(1e-12));
  InnerLoopConfig in;
  CHECK(in.steps == 20);
  CHECK(in.lr == 0.05);
  CHECK(TaskShape{}.query == 15);
}

TEST_CASE("meta_test: chance level at k = 0 and unit consistency for identical views") {
  episodes::SyntheticSpec s;
  s.num_classes_total = 5;
  s.samples_per_class = 20;
  const auto data = episodes::generate_synthetic(s, 2000);
  nn::ModelSpec spec;
  const ParamSet theta = nn::init_params(spec, 6);
  EvalOptions opts;
  opts.num_tasks = 2000;
  opts.inner.steps = 0;
  const auto r = meta_test(theta, spec, data, opts, 1);
  CHECK(r.task_count == 2000);
  CHECK(std::abs(r.accuracy_mean - 20.0) <= 3.0);
  CHECK(r.inner_steps == std::optional<std::size_t>(0));

  EvalOptions aug;
  aug.num_tasks = 20;
  aug.inner.steps = 3;
  aug.aug = episodes::AugmentationSpec::noise_channel(0.0);
  aug.views = 2;
  CHECK(meta_test(theta, spec, data, aug, 1).consistency_mean == 1.0);
  aug.aug = episodes::AugmentationSpec::noise_channel(1.0);
  CHECK(meta_test(theta, spec, data, aug, 1).consistency_mean < 1.0);

  // Parallel workers give the same records.
  EvalOptions par = aug;
  par.workers = 3;
  par.noise_sensitivity = aug.noise_sensitivity = true;
  const auto x = meta_test_tasks(theta, spec, data, aug, 1);
  const auto y = meta_test_tasks(theta, spec, data, par, 1);
  REQUIRE(x.size() == y.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    CHECK(x[i].accuracy == y[i].accuracy);
    CHECK(x[i].consistency == y[i].consistency);
    CHECK(x[i].noise_sensitivity == y[i].noise_sensitivity);
  }
}

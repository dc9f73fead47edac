#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>
#include <sstream>
#include <string>

#include "msd/error.hpp"
#include "msd/ops.hpp"
#include "msd/param_set.hpp"
#include "test_util.hpp"

using namespace msd;
using msd::testing::numeric_gradients;
using msd::testing::random_away_from_zero;
using msd::testing::random_tensor;
using msd::testing::rel_error;

namespace {

struct OpCase {
  std::string name;
  std::function<std::vector<Tensor>(std::mt19937_64&)> make_inputs;
  std::function<Tensor(const std::vector<Tensor>&)> apply;
};

std::vector<OpCase> operator_cases() {
  using R = std::mt19937_64;
  auto rnd = [](Shape s) { return [s](R& r) { return std::vector<Tensor>{random_tensor(s, r)}; }; };
  auto rnd2 = [](Shape a, Shape b) {
    return [a, b](R& r) { return std::vector<Tensor>{random_tensor(a, r), random_tensor(b, r)}; };
  };
  return {
      {"matmul", rnd2({3, 4}, {4, 2}), [](auto& x) { return ops::matmul(x[0], x[1]); }},
      {"transpose", rnd({3, 4}), [](auto& x) { return ops::transpose(x[0]); }},
      {"add", rnd2({3, 4}, {3, 4}), [](auto& x) { return ops::add(x[0], x[1]); }},
      {"sub", rnd2({3, 4}, {3, 4}), [](auto& x) { return ops::sub(x[0], x[1]); }},
      {"scale", rnd({5}), [](auto& x) { return ops::scale(x[0], 2.5); }},
      {"elementwise-mul", rnd2({3, 4}, {3, 4}), [](auto& x) { return ops::mul(x[0], x[1]); }},
      {"div",
       [](R& r) {
         return std::vector<Tensor>{random_tensor({2, 3}, r),
                                    random_away_from_zero({2, 3}, r, 0.5, 2.0, true)};
       },
       [](auto& x) { return ops::div(x[0], x[1]); }},
      {"relu", [](R& r) { return std::vector<Tensor>{random_away_from_zero({4, 3}, r, 0.05, 1.0, true)}; },
       [](auto& x) { return ops::relu(x[0]); }},
      {"exp", rnd({2, 3}), [](auto& x) { return ops::exp(x[0]); }},
      {"sqrt", [](R& r) { return std::vector<Tensor>{random_away_from_zero({2, 3}, r, 0.5, 2.0, false)}; },
       [](auto& x) { return ops::sqrt(x[0]); }},
      {"reshape", rnd({2, 6}), [](auto& x) { return ops::reshape(x[0], {3, 4}); }},
      {"bias-add", rnd2({3, 4}, {4}), [](auto& x) { return ops::add_bias(x[0], x[1]); }},
      {"bias-add-4d", rnd2({2, 3, 2, 2}, {3}), [](auto& x) { return ops::add_bias(x[0], x[1]); }},
      {"bias-reduce", rnd({2, 3, 2, 2}), [](auto& x) { return ops::bias_reduce(x[0]); }},
      {"log-softmax", rnd({3, 5}), [](auto& x) { return ops::log_softmax(x[0]); }},
      {"sum", rnd({3, 4}), [](auto& x) { return ops::sum(x[0]); }},
      {"mean", rnd({3, 4}), [](auto& x) { return ops::mean(x[0]); }},
      {"dot", rnd2({6}, {6}), [](auto& x) { return ops::dot(x[0], x[1]); }},
      {"l2-norm", rnd({6}), [](auto& x) { return ops::l2_norm(x[0]); }},
      {"row-sum", rnd({3, 4}), [](auto& x) { return ops::row_sum(x[0]); }},
      {"broadcast-cols", rnd({3}), [](auto& x) { return ops::broadcast_cols(x[0], 4); }},
      {"expand", rnd({}), [](auto& x) { return ops::expand(x[0], {2, 3}); }},
      {"conv2d-3x3", rnd2({2, 2, 4, 4}, {3, 2, 3, 3}), [](auto& x) { return ops::conv2d_3x3(x[0], x[1]); }},
      {"conv2d-3x3-input-adjoint", rnd2({2, 3, 4, 4}, {3, 2, 3, 3}),
       [](auto& x) { return ops::conv2d_3x3_input_grad(x[0], x[1]); }},
      {"conv2d-3x3-weight-adjoint", rnd2({2, 2, 4, 4}, {2, 3, 4, 4}),
       [](auto& x) { return ops::conv2d_3x3_weight_grad(x[0], x[1]); }},
      {"mean-pool", rnd({2, 2, 4, 4}), [](auto& x) { return ops::mean_pool2x2(x[0]); }},
      {"mean-pool-adjoint", rnd({2, 2, 2, 2}), [](auto& x) { return ops::mean_pool2x2_adjoint(x[0]); }},
  };
}

// Scalarizes an operator output with a fixed random weighting so every
// output coordinate contributes to the checked gradient.
Tensor weighted(const Tensor& y, const Tensor& weights) { return ops::sum(ops::mul(y, weights)); }

std::vector<Tensor> track_all(Graph& g, const std::vector<Tensor>& xs) {
  std::vector<Tensor> out;
  for (const auto& x : xs) {
    out.push_back(g.leaf(x));
  }
  return out;
}

}  // namespace

TEST_CASE("relu, log-softmax and conv identity examples") {
  const Tensor r = ops::relu(Tensor({3}, {-1.0, 0.0, 2.0}));
  CHECK(r[0] == 0.0);
  CHECK(r[1] == 0.0);
  CHECK(r[2] == 2.0);

  const Tensor ls = ops::log_softmax(Tensor::full({1, 5}, 0.3));
  for (double v : ls.values()) {
    CHECK(v == doctest::Approx(-std::log(5.0)).epsilon(1e-14));
  }
  CHECK(ls[0] == doctest::Approx(-1.60944).epsilon(1e-5));

  std::mt19937_64 rng(3);
  const Tensor img = random_tensor({2, 3, 5, 6}, rng);
  std::vector<double> k(3 * 3 * 9, 0.0);
  for (std::size_t c = 0; c < 3; ++c) {
    k[(c * 3 + c) * 9 + 4] = 1.0;
  }
  const Tensor same = ops::conv2d_3x3(img, Tensor({3, 3, 3, 3}, k));
  CHECK(same.shape() == img.shape());
  for (std::size_t i = 0; i < img.size(); ++i) {
    CHECK(same[i] == img[i]);
  }
}

TEST_CASE("first and second derivative of x*x") {
  Graph g;
  const Tensor x = g.leaf(Tensor::scalar(3.0));
  const Tensor y = ops::mul(x, x);
  const Tensor dx = gradients(y, std::vector<Tensor>{x}, true)[0];
  CHECK(dx.item() == 6.0);
  CHECK(dx.tracked());
  const Tensor ddx = gradients(dx, std::vector<Tensor>{x}, false)[0];
  CHECK(ddx.item() == 2.0);
  CHECK_FALSE(ddx.tracked());
}

TEST_CASE("every operator: analytic gradient matches central differences") {
  std::mt19937_64 rng(11);
  for (const auto& op : operator_cases()) {
    CAPTURE(op.name);
    const auto inputs = op.make_inputs(rng);
    const Tensor out0 = op.apply(inputs);
    const Tensor w = random_tensor(out0.shape(), rng);

    Graph g;
    const auto tracked = track_all(g, inputs);
    const auto grads = gradients(weighted(op.apply(tracked), w), tracked, false);

    const auto numeric = numeric_gradients(
        [&](const std::vector<Tensor>& xs) { return weighted(op.apply(xs), w).item(); }, inputs);
    for (std::size_t k = 0; k < inputs.size(); ++k) {
      CAPTURE(k);
      CHECK(rel_error(grads[k].values(), numeric[k]) < 1e-4);
    }
  }
}

TEST_CASE("every operator: grad-of-grad matches differences of the analytic gradient") {
  std::mt19937_64 rng(12);
  for (const auto& op : operator_cases()) {
    CAPTURE(op.name);
    const auto inputs = op.make_inputs(rng);
    const Tensor w = random_tensor(op.apply(inputs).shape(), rng);
    std::vector<Tensor> dirs;
    for (const auto& x : inputs) {
      dirs.push_back(random_tensor(x.shape(), rng));
    }
    // h(x) = sum_k <grad_k f(x), v_k>
    auto directional = [&](const std::vector<Tensor>& grads) {
      Tensor h = ops::dot(grads[0], dirs[0]);
      for (std::size_t k = 1; k < grads.size(); ++k) {
        h = ops::add(h, ops::dot(grads[k], dirs[k]));
      }
      return h;
    };

    Graph g;
    const auto tracked = track_all(g, inputs);
    const auto first = gradients(weighted(op.apply(tracked), w), tracked, true);
    const auto second = gradients(directional(first), tracked, false);

    const auto numeric = numeric_gradients(
        [&](const std::vector<Tensor>& xs) {
          Graph inner;
          const auto t = track_all(inner, xs);
          return directional(gradients(weighted(op.apply(t), w), t, false)).item();
        },
        inputs);
    for (std::size_t k = 0; k < inputs.size(); ++k) {
      CAPTURE(k);
      CHECK(rel_error(second[k].values(), numeric[k], 1e-6) < 1e-3);
    }
  }
}

TEST_CASE("random two-layer network gradient matches finite differences") {
  std::mt19937_64 rng(5);
  ParamSet p;
  p.add("w1", random_tensor({6, 8}, rng));
  p.add("b1", random_tensor({8}, rng));
  p.add("w2", random_tensor({8, 4}, rng));
  p.add("b2", random_tensor({4}, rng));
  const Tensor x = random_tensor({5, 6}, rng);
  const Tensor onehot({5, 4}, {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 1, 0, 0, 0});
  auto loss = [&](const ParamSet& q) {
    const Tensor h = ops::relu(ops::add_bias(ops::matmul(x, q.at("w1")), q.at("b1")));
    const Tensor z = ops::add_bias(ops::matmul(h, q.at("w2")), q.at("b2"));
    return ops::scale(ops::sum(ops::mul(ops::log_softmax(z), onehot)), -1.0 / 5.0);
  };
  Graph g;
  const ParamSet tp = p.track(g);
  const ParamSet analytic = p.with_values(gradients(loss(tp), tp.tensors(), false));
  const ParamSet numeric = finite_diff_gradient([&](const ParamSet& q) { return loss(q).item(); }, p, 1e-5);
  CHECK(rel_error(analytic, numeric) < 1e-4);
}

TEST_CASE("finite_diff_gradient examples") {
  ParamSet p;
  p.add("x", Tensor({2}, {1.0, 2.0}));
  auto sq = [](const ParamSet& q) { return ops::dot(q.at("x"), q.at("x")).item(); };
  const ParamSet g = finite_diff_gradient(sq, p, 1e-5);
  CHECK(g.at("x")[0] == doctest::Approx(2.0).epsilon(1e-8));
  CHECK(g.at("x")[1] == doctest::Approx(4.0).epsilon(1e-8));

  const ParamSet z = finite_diff_gradient([](const ParamSet&) { return 7.0; }, p, 1e-5);
  CHECK(z.at("x")[0] == 0.0);
  CHECK(z.at("x")[1] == 0.0);

  CHECK_THROWS_AS(finite_diff_gradient(sq, p, 0.0), ContractError);
  CHECK_THROWS_AS(finite_diff_gradient([](const ParamSet&) { return NAN; }, p, 1e-5), DivergenceError);
}

TEST_CASE("linearity of backward") {
  std::mt19937_64 rng(8);
  const Tensor x0 = random_tensor({4, 3}, rng);
  const Tensor w = random_tensor({3, 2}, rng);
  auto f = [&](const Tensor& x) { return ops::sum(ops::exp(ops::matmul(x, w))); };
  auto h = [&](const Tensor& x) { return ops::l2_norm(ops::relu(x)); };
  const double a = 0.7, b = -1.3;

  Graph g;
  const Tensor x = g.leaf(x0);
  const Tensor combined = gradients(ops::add(ops::scale(f(x), a), ops::scale(h(x), b)),
                                    std::vector<Tensor>{x}, false)[0];
  const Tensor gf = gradients(f(x), std::vector<Tensor>{x}, false)[0];
  const Tensor gh = gradients(h(x), std::vector<Tensor>{x}, false)[0];
  for (std::size_t i = 0; i < combined.size(); ++i) {
    CHECK(std::abs(combined[i] - (a * gf[i] + b * gh[i])) < 1e-12);
  }
}

TEST_CASE("identical graph construction is bitwise deterministic") {
  auto run = [] {
    std::mt19937_64 rng(21);
    const Tensor x0 = random_tensor({3, 4}, rng);
    const Tensor w0 = random_tensor({4, 5}, rng);
    Graph g;
    const Tensor x = g.leaf(x0);
    const Tensor w = g.leaf(w0);
    const Tensor loss = ops::sum(ops::log_softmax(ops::matmul(x, w)));
    auto grads = gradients(loss, std::vector<Tensor>{x, w}, false);
    grads.push_back(loss);
    return grads;
  };
  const auto a = run();
  const auto b = run();
  for (std::size_t k = 0; k < a.size(); ++k) {
    CHECK(std::equal(a[k].values().begin(), a[k].values().end(), b[k].values().begin()));
  }
}

TEST_CASE("contract errors: non-scalar root, stale graph, shape mismatch") {
  Graph g;
  const Tensor x = g.leaf(Tensor({2}, {1.0, 2.0}));
  CHECK_THROWS_AS(gradients(ops::scale(x, 2.0), std::vector<Tensor>{x}, false), ContractError);

  const Tensor y = ops::sum(x);
  g.reset();
  CHECK_THROWS_AS(gradients(y, std::vector<Tensor>{x}, false), ContractError);
  CHECK_THROWS_AS(ops::add(x, x), ContractError);

  Graph other;
  const Tensor a = other.leaf(Tensor({2}, {1.0, 2.0}));
  Graph third;
  const Tensor b = third.leaf(Tensor({2}, {1.0, 2.0}));
  CHECK_THROWS_AS(ops::add(a, b), ContractError);

  try {
    ops::matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
    FAIL("expected a shape error");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("matmul") != std::string::npos);
    CHECK(msg.find("[2,3]") != std::string::npos);
  }
}

TEST_CASE("unreachable and untracked wrt entries get zero gradients") {
  Graph g;
  const Tensor x = g.leaf(Tensor::scalar(2.0));
  const Tensor unused = g.leaf(Tensor({3}, {1, 2, 3}));
  const auto grads = gradients(ops::mul(x, x), std::vector<Tensor>{unused, Tensor({2}, {1, 1})}, false);
  CHECK(grads[0].shape() == Shape{3});
  CHECK(grads[0][0] == 0.0);
  CHECK(grads[1][1] == 0.0);
}

TEST_CASE("ParamSet flatten/unflatten is the identity on random layouts") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    ParamSet p;
    const int entries = 1 + static_cast<int>(rng() % 5);
    for (int e = 0; e < entries; ++e) {
      Shape s;
      const int rank = static_cast<int>(rng() % 4);
      for (int r = 0; r < rank; ++r) {
        s.push_back(1 + rng() % 4);
      }
      p.add("p" + std::to_string(e), random_tensor(s, rng));
    }
    const auto flat = p.flatten();
    CHECK(flat.size() == p.total_dim());
    CHECK(ParamSet::unflatten(flat, p).bitwise_equal(p));
  }
  ParamSet p;
  p.add("a", Tensor::zeros({2}));
  CHECK_THROWS_AS(p.add("a", Tensor::zeros({1})), ContractError);
}

TEST_CASE("MSDCKPT1 container round-trips byte-exactly and rejects corruption") {
  std::mt19937_64 rng(9);
  ParamSet p;
  p.add("layer.weight", random_tensor({3, 2}, rng));
  p.add("layer.bias", Tensor({2}, {-0.0, 1e-310}));
  p.add("scalar", Tensor::scalar(NAN));

  const auto bytes = encode_params(p);
  CHECK(std::string(bytes.begin(), bytes.begin() + 8) == "MSDCKPT1");
  // magic + count + 3 * (u32 len + name + u32 rank + extents + values)
  CHECK(bytes.size() == 8 + 8 + (4 + 12 + 4 + 16 + 48) + (4 + 10 + 4 + 8 + 16) + (4 + 6 + 4 + 0 + 8));
  const ParamSet back = decode_params(bytes);
  CHECK(back.bitwise_equal(p));
  CHECK(encode_params(back) == bytes);

  std::stringstream ss;
  write_params(ss, p);
  CHECK(read_params(ss).bitwise_equal(p));

  for (std::size_t cut : {std::size_t{3}, std::size_t{12}, bytes.size() - 1}) {
    CAPTURE(cut);
    std::vector<std::uint8_t> truncated(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
    CHECK_THROWS_AS(decode_params(truncated), CorruptCheckpointError);
  }
  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_params(bad), CorruptCheckpointError);
}

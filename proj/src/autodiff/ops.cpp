#include "msd/ops.hpp"

#include <algorithm>
#include <cmath>

#include "autodiff/tape.hpp"
#include "msd/error.hpp"

namespace msd::ops {

using detail::OpKind;

namespace {

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

void require_rank(const char* op, const Tensor& a, std::size_t rank) {
  if (a.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(a.shape()));
  }
}

template <class F>
Tensor unary(OpKind kind, const Tensor& a, F f, double scalar = 0.0) {
  std::vector<double> out(a.size());
  const auto in = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = f(in[i]);
  }
  return TensorAccess::record(kind, a.shape(), std::move(out), {&a}, scalar);
}

template <class F>
Tensor binary(OpKind kind, const char* name, const Tensor& a, const Tensor& b, F f) {
  require_same_shape(name, a, b);
  std::vector<double> out(a.size());
  const auto x = a.values();
  const auto y = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = f(x[i], y[i]);
  }
  return TensorAccess::record(kind, a.shape(), std::move(out), {&a, &b});
}

struct ConvDims {
  std::size_t batch, cin, cout, h, w;
};

ConvDims conv_dims(const Shape& x, const Shape& w, const char* op) {
  if (x.size() != 4 || w.size() != 4 || w[2] != 3 || w[3] != 3 || x[1] != w[1]) {
    throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(x) + " and " +
                     shape_str(w));
  }
  return {x[0], x[1], w[0], x[2], x[3]};
}

// y[b,o,i,j] += sum_{c,di,dj} x[b,c,i+di-1,j+dj-1] * w[o,c,di,dj]
void conv_forward(const ConvDims& d, std::span<const double> x, std::span<const double> w,
                  std::vector<double>& y) {
  const std::size_t hw = d.h * d.w;
  for (std::size_t b = 0; b < d.batch; ++b) {
    for (std::size_t o = 0; o < d.cout; ++o) {
      double* yo = y.data() + (b * d.cout + o) * hw;
      for (std::size_t c = 0; c < d.cin; ++c) {
        const double* xc = x.data() + (b * d.cin + c) * hw;
        const double* wk = w.data() + (o * d.cin + c) * 9;
        for (std::size_t di = 0; di < 3; ++di) {
          for (std::size_t dj = 0; dj < 3; ++dj) {
            const double k = wk[di * 3 + dj];
            const std::ptrdiff_t oi = static_cast<std::ptrdiff_t>(di) - 1;
            const std::ptrdiff_t oj = static_cast<std::ptrdiff_t>(dj) - 1;
            const std::size_t i0 = oi < 0 ? 1 : 0;
            const std::size_t i1 = oi > 0 ? d.h - 1 : d.h;
            const std::size_t j0 = oj < 0 ? 1 : 0;
            const std::size_t j1 = oj > 0 ? d.w - 1 : d.w;
            for (std::size_t i = i0; i < i1; ++i) {
              const double* xr = xc + (i + oi) * d.w + oj;
              double* yr = yo + i * d.w;
              for (std::size_t j = j0; j < j1; ++j) {
                yr[j] += k * xr[j];
              }
            }
          }
        }
      }
    }
  }
}

// gx[b,c,i+di-1,j+dj-1] += g[b,o,i,j] * w[o,c,di,dj]
void conv_input_adjoint(const ConvDims& d, std::span<const double> g, std::span<const double> w,
                        std::vector<double>& gx) {
  const std::size_t hw = d.h * d.w;
  for (std::size_t b = 0; b < d.batch; ++b) {
    for (std::size_t o = 0; o < d.cout; ++o) {
      const double* go = g.data() + (b * d.cout + o) * hw;
      for (std::size_t c = 0; c < d.cin; ++c) {
        double* xc = gx.data() + (b * d.cin + c) * hw;
        const double* wk = w.data() + (o * d.cin + c) * 9;
        for (std::size_t di = 0; di < 3; ++di) {
          for (std::size_t dj = 0; dj < 3; ++dj) {
            const double k = wk[di * 3 + dj];
            const std::ptrdiff_t oi = static_cast<std::ptrdiff_t>(di) - 1;
            const std::ptrdiff_t oj = static_cast<std::ptrdiff_t>(dj) - 1;
            const std::size_t i0 = oi < 0 ? 1 : 0;
            const std::size_t i1 = oi > 0 ? d.h - 1 : d.h;
            const std::size_t j0 = oj < 0 ? 1 : 0;
            const std::size_t j1 = oj > 0 ? d.w - 1 : d.w;
            for (std::size_t i = i0; i < i1; ++i) {
              double* xr = xc + (i + oi) * d.w + oj;
              const double* gr = go + i * d.w;
              for (std::size_t j = j0; j < j1; ++j) {
                xr[j] += k * gr[j];
              }
            }
          }
        }
      }
    }
  }
}

// gw[o,c,di,dj] += sum_{b,i,j} g[b,o,i,j] * x[b,c,i+di-1,j+dj-1]
void conv_weight_adjoint(const ConvDims& d, std::span<const double> x, std::span<const double> g,
                         std::vector<double>& gw) {
  const std::size_t hw = d.h * d.w;
  for (std::size_t b = 0; b < d.batch; ++b) {
    for (std::size_t o = 0; o < d.cout; ++o) {
      const double* go = g.data() + (b * d.cout + o) * hw;
      for (std::size_t c = 0; c < d.cin; ++c) {
        const double* xc = x.data() + (b * d.cin + c) * hw;
        double* wk = gw.data() + (o * d.cin + c) * 9;
        for (std::size_t di = 0; di < 3; ++di) {
          for (std::size_t dj = 0; dj < 3; ++dj) {
            const std::ptrdiff_t oi = static_cast<std::ptrdiff_t>(di) - 1;
            const std::ptrdiff_t oj = static_cast<std::ptrdiff_t>(dj) - 1;
            const std::size_t i0 = oi < 0 ? 1 : 0;
            const std::size_t i1 = oi > 0 ? d.h - 1 : d.h;
            const std::size_t j0 = oj < 0 ? 1 : 0;
            const std::size_t j1 = oj > 0 ? d.w - 1 : d.w;
            double acc = 0.0;
            for (std::size_t i = i0; i < i1; ++i) {
              const double* xr = xc + (i + oi) * d.w + oj;
              const double* gr = go + i * d.w;
              for (std::size_t j = j0; j < j1; ++j) {
                acc += gr[j] * xr[j];
              }
            }
            wk[di * 3 + dj] += acc;
          }
        }
      }
    }
  }
}

// Splits a [B, C, ...] shape into (outer=B, channels=C, inner=prod(rest)).
struct BiasDims {
  std::size_t outer, channels, inner;
};

BiasDims bias_dims(const Shape& x, const char* op) {
  if (x.size() < 2) {
    throw ShapeError(std::string(op) + ": expected rank >= 2, got " + shape_str(x));
  }
  std::size_t inner = 1;
  for (std::size_t i = 2; i < x.size(); ++i) {
    inner *= x[i];
  }
  return {x[0], x[1], inner};
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n, 0.0);
  const auto x = a.values();
  const auto y = b.values();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double s = x[i * k + p];
      if (s == 0.0) {
        continue;
      }
      const double* brow = y.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) {
        row[j] += s * brow[j];
      }
    }
  }
  return TensorAccess::record(OpKind::matmul, {m, n}, std::move(out), {&a, &b});
}

Tensor transpose(const Tensor& a) {
  require_rank("transpose", a, 2);
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(m * n);
  const auto x = a.values();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      out[j * m + i] = x[i * n + j];
    }
  }
  return TensorAccess::record(OpKind::transpose, {n, m}, std::move(out), {&a});
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(OpKind::add, "add", a, b, [](double x, double y) { return x + y; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(OpKind::sub, "sub", a, b, [](double x, double y) { return x - y; });
}

Tensor scale(const Tensor& a, double factor) {
  return unary(OpKind::scale, a, [factor](double x) { return factor * x; }, factor);
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(OpKind::mul, "mul", a, b, [](double x, double y) { return x * y; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(OpKind::div, "div", a, b, [](double x, double y) { return x / y; });
}

Tensor relu(const Tensor& a) {
  return unary(OpKind::relu, a, [](double x) { return x > 0.0 ? x : 0.0; });
}

Tensor exp(const Tensor& a) {
  return unary(OpKind::exp, a, [](double x) { return std::exp(x); });
}

Tensor sqrt(const Tensor& a) {
  return unary(OpKind::sqrt, a, [](double x) { return std::sqrt(x); });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.size()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  std::vector<double> out(a.values().begin(), a.values().end());
  return TensorAccess::record(OpKind::reshape, std::move(shape), std::move(out), {&a});
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  const BiasDims d = bias_dims(x.shape(), "add_bias");
  if (bias.rank() != 1 || bias.dim(0) != d.channels) {
    throw ShapeError("add_bias: shape mismatch " + shape_str(x.shape()) + " vs " +
                     shape_str(bias.shape()));
  }
  std::vector<double> out(x.values().begin(), x.values().end());
  const auto b = bias.values();
  for (std::size_t o = 0; o < d.outer; ++o) {
    for (std::size_t c = 0; c < d.channels; ++c) {
      double* p = out.data() + (o * d.channels + c) * d.inner;
      for (std::size_t i = 0; i < d.inner; ++i) {
        p[i] += b[c];
      }
    }
  }
  return TensorAccess::record(OpKind::add_bias, x.shape(), std::move(out), {&x, &bias});
}

Tensor bias_reduce(const Tensor& x) {
  const BiasDims d = bias_dims(x.shape(), "bias_reduce");
  std::vector<double> out(d.channels, 0.0);
  const auto v = x.values();
  for (std::size_t o = 0; o < d.outer; ++o) {
    for (std::size_t c = 0; c < d.channels; ++c) {
      const double* p = v.data() + (o * d.channels + c) * d.inner;
      for (std::size_t i = 0; i < d.inner; ++i) {
        out[c] += p[i];
      }
    }
  }
  return TensorAccess::record(OpKind::bias_reduce, {d.channels}, std::move(out), {&x});
}

Tensor log_softmax(const Tensor& logits) {
  require_rank("log_softmax", logits, 2);
  const std::size_t m = logits.dim(0), n = logits.dim(1);
  std::vector<double> out(m * n);
  const auto x = logits.values();
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = x.data() + i * n;
    const double mx = *std::max_element(row, row + n);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      s += std::exp(row[j] - mx);
    }
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < n; ++j) {
      out[i * n + j] = row[j] - lse;
    }
  }
  return TensorAccess::record(OpKind::log_softmax, logits.shape(), std::move(out), {&logits});
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) {
    s += v;
  }
  return TensorAccess::record(OpKind::sum, {}, {s}, {&a});
}

Tensor mean(const Tensor& a) {
  if (a.size() == 0) {
    throw ShapeError("mean: empty tensor");
  }
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Tensor dot(const Tensor& a, const Tensor& b) { return sum(mul(a, b)); }

Tensor l2_norm(const Tensor& a) { return sqrt(dot(a, a)); }

Tensor row_sum(const Tensor& a) {
  require_rank("row_sum", a, 2);
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(m, 0.0);
  const auto x = a.values();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      out[i] += x[i * n + j];
    }
  }
  return TensorAccess::record(OpKind::row_sum, {m}, std::move(out), {&a});
}

Tensor broadcast_cols(const Tensor& v, std::size_t n) {
  require_rank("broadcast_cols", v, 1);
  const std::size_t m = v.dim(0);
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    std::fill_n(out.begin() + static_cast<std::ptrdiff_t>(i * n), n, v[i]);
  }
  return TensorAccess::record(OpKind::broadcast_cols, {m, n}, std::move(out), {&v},
                              static_cast<double>(n));
}

Tensor expand(const Tensor& s, Shape shape) {
  if (s.size() != 1) {
    throw ShapeError("expand: expected a single-element tensor, got " + shape_str(s.shape()));
  }
  const std::size_t n = numel(shape);
  return TensorAccess::record(OpKind::expand, std::move(shape), std::vector<double>(n, s[0]), {&s});
}

Tensor conv2d_3x3(const Tensor& x, const Tensor& w) {
  const ConvDims d = conv_dims(x.shape(), w.shape(), "conv2d_3x3");
  std::vector<double> out(d.batch * d.cout * d.h * d.w, 0.0);
  conv_forward(d, x.values(), w.values(), out);
  return TensorAccess::record(OpKind::conv, {d.batch, d.cout, d.h, d.w}, std::move(out), {&x, &w});
}

Tensor conv2d_3x3_input_grad(const Tensor& g, const Tensor& w) {
  if (g.rank() != 4 || w.rank() != 4 || g.dim(1) != w.dim(0) || w.dim(2) != 3 || w.dim(3) != 3) {
    throw ShapeError("conv2d_3x3_input_grad: incompatible shapes " + shape_str(g.shape()) +
                     " and " + shape_str(w.shape()));
  }
  const ConvDims d{g.dim(0), w.dim(1), w.dim(0), g.dim(2), g.dim(3)};
  std::vector<double> out(d.batch * d.cin * d.h * d.w, 0.0);
  conv_input_adjoint(d, g.values(), w.values(), out);
  return TensorAccess::record(OpKind::conv_input_grad, {d.batch, d.cin, d.h, d.w}, std::move(out),
                              {&g, &w});
}

Tensor conv2d_3x3_weight_grad(const Tensor& x, const Tensor& g) {
  if (x.rank() != 4 || g.rank() != 4 || x.dim(0) != g.dim(0) || x.dim(2) != g.dim(2) ||
      x.dim(3) != g.dim(3)) {
    throw ShapeError("conv2d_3x3_weight_grad: incompatible shapes " + shape_str(x.shape()) +
                     " and " + shape_str(g.shape()));
  }
  const ConvDims d{x.dim(0), x.dim(1), g.dim(1), x.dim(2), x.dim(3)};
  std::vector<double> out(d.cout * d.cin * 9, 0.0);
  conv_weight_adjoint(d, x.values(), g.values(), out);
  return TensorAccess::record(OpKind::conv_weight_grad, {d.cout, d.cin, 3, 3}, std::move(out),
                              {&x, &g});
}

Tensor mean_pool2x2(const Tensor& x) {
  if (x.rank() != 4 || x.dim(2) % 2 != 0 || x.dim(3) % 2 != 0) {
    throw ShapeError("mean_pool2x2: expected [B,C,H,W] with even H,W, got " + shape_str(x.shape()));
  }
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t ho = h / 2, wo = w / 2;
  std::vector<double> out(planes * ho * wo);
  const auto v = x.values();
  for (std::size_t p = 0; p < planes; ++p) {
    const double* src = v.data() + p * h * w;
    for (std::size_t i = 0; i < ho; ++i) {
      for (std::size_t j = 0; j < wo; ++j) {
        const double* a = src + 2 * i * w + 2 * j;
        out[(p * ho + i) * wo + j] = 0.25 * (a[0] + a[1] + a[w] + a[w + 1]);
      }
    }
  }
  return TensorAccess::record(OpKind::pool, {x.dim(0), x.dim(1), ho, wo}, std::move(out), {&x});
}

Tensor mean_pool2x2_adjoint(const Tensor& g) {
  require_rank("mean_pool2x2_adjoint", g, 4);
  const std::size_t planes = g.dim(0) * g.dim(1), ho = g.dim(2), wo = g.dim(3);
  const std::size_t h = 2 * ho, w = 2 * wo;
  std::vector<double> out(planes * h * w);
  const auto v = g.values();
  for (std::size_t p = 0; p < planes; ++p) {
    double* dst = out.data() + p * h * w;
    for (std::size_t i = 0; i < ho; ++i) {
      for (std::size_t j = 0; j < wo; ++j) {
        const double q = 0.25 * v[(p * ho + i) * wo + j];
        double* a = dst + 2 * i * w + 2 * j;
        a[0] = q;
        a[1] = q;
        a[w] = q;
        a[w + 1] = q;
      }
    }
  }
  return TensorAccess::record(OpKind::pool_adjoint, {g.dim(0), g.dim(1), h, w}, std::move(out),
                              {&g});
}

}  // namespace msd::ops

namespace msd::detail {

std::vector<Tensor> backward_rule(const Node& node, const Tensor& grad, bool create_graph) {
  using namespace msd::ops;
  auto in = [&](std::size_t k) {
    return create_graph ? node.inputs[k] : node.inputs[k].detach();
  };
  const Tensor out = create_graph ? node.output : node.output.detach();
  const Tensor& g = grad;

  switch (node.op) {
    case OpKind::leaf:
      return {};
    case OpKind::matmul:
      return {matmul(g, transpose(in(1))), matmul(transpose(in(0)), g)};
    case OpKind::transpose:
      return {transpose(g)};
    case OpKind::add:
      return {g, g};
    case OpKind::sub:
      return {g, scale(g, -1.0)};
    case OpKind::scale:
      return {scale(g, node.scalar)};
    case OpKind::mul:
      return {mul(g, in(1)), mul(g, in(0))};
    case OpKind::div: {
      const Tensor b = in(1);
      return {div(g, b), scale(mul(g, div(out, b)), -1.0)};
    }
    case OpKind::relu: {
      const auto x = node.inputs[0].values();
      std::vector<double> mask(x.size());
      for (std::size_t i = 0; i < x.size(); ++i) {
        mask[i] = x[i] > 0.0 ? 1.0 : 0.0;
      }
      return {mul(g, Tensor(node.inputs[0].shape(), std::move(mask)))};
    }
    case OpKind::exp:
      return {mul(g, out)};
    case OpKind::sqrt:
      return {div(scale(g, 0.5), out)};
    case OpKind::reshape:
      return {reshape(g, node.inputs[0].shape())};
    case OpKind::add_bias:
      return {g, bias_reduce(g)};
    case OpKind::bias_reduce:
      return {add_bias(Tensor::zeros(node.inputs[0].shape()), g)};
    case OpKind::log_softmax: {
      const std::size_t n = out.dim(1);
      const Tensor softmax = exp(out);
      return {sub(g, mul(softmax, broadcast_cols(row_sum(g), n)))};
    }
    case OpKind::sum:
      return {expand(g, node.inputs[0].shape())};
    case OpKind::row_sum:
      return {broadcast_cols(g, node.inputs[0].dim(1))};
    case OpKind::broadcast_cols:
      return {row_sum(g)};
    case OpKind::expand: {
      Tensor s = sum(g);
      if (s.shape() != node.inputs[0].shape()) {
        s = reshape(s, node.inputs[0].shape());
      }
      return {s};
    }
    case OpKind::conv:
      return {conv2d_3x3_input_grad(g, in(1)), conv2d_3x3_weight_grad(in(0), g)};
    case OpKind::conv_input_grad:
      // inputs (g0, w): <G, Cx(g0, w)> = <g0, C(G, w)>
      return {conv2d_3x3(g, in(1)), conv2d_3x3_weight_grad(g, in(0))};
    case OpKind::conv_weight_grad:
      // inputs (x, g0): <G, Cw(x, g0)> = <g0, C(x, G)>
      return {conv2d_3x3_input_grad(in(1), g), conv2d_3x3(in(0), g)};
    case OpKind::pool:
      return {mean_pool2x2_adjoint(g)};
    case OpKind::pool_adjoint:
      return {mean_pool2x2(g)};
  }
  throw ContractError("backward: unknown operator");
}

}  // namespace msd::detail

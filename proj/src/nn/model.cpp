#include "msd/nn.hpp"

#include <cmath>
#include <random>

#include "msd/error.hpp"
#include "msd/ops.hpp"

namespace msd::nn {

std::string to_string(ModelKind kind) { return kind == ModelKind::mlp ? "mlp" : "conv4-mini"; }

ModelKind model_kind_from_string(const std::string& s) {
  if (s == "mlp") {
    return ModelKind::mlp;
  }
  if (s == "conv4-mini") {
    return ModelKind::conv4_mini;
  }
  throw ConfigError("unknown model kind '" + s + "' (expected mlp or conv4-mini)");
}

void ModelSpec::validate() const {
  if (num_classes < 2) {
    throw ContractError("ModelSpec: num_classes must be >= 2");
  }
  for (std::size_t w : hidden_widths) {
    if (w == 0) {
      throw ContractError("ModelSpec: widths must be positive");
    }
  }
  if (kind == ModelKind::mlp) {
    if (input_shape.size() != 1 || input_shape[0] == 0) {
      throw ShapeError("ModelSpec: mlp input_shape must be [features], got " + shape_str(input_shape));
    }
  } else {
    if (input_shape.size() != 3 || hidden_widths.empty()) {
      throw ShapeError("ModelSpec: conv4-mini needs input_shape [C,H,W] and at least one block, got " +
                       shape_str(input_shape));
    }
    const std::size_t div = std::size_t{1} << hidden_widths.size();
    if (input_shape[1] % div != 0 || input_shape[2] % div != 0) {
      throw ShapeError("ModelSpec: conv4-mini spatial extents " + shape_str(input_shape) +
                       " must be divisible by " + std::to_string(div));
    }
  }
}

std::size_t ModelSpec::feature_dim() const {
  if (kind == ModelKind::mlp) {
    return hidden_widths.empty() ? input_shape[0] : hidden_widths.back();
  }
  const std::size_t div = std::size_t{1} << hidden_widths.size();
  return hidden_widths.back() * (input_shape[1] / div) * (input_shape[2] / div);
}

namespace {

Tensor uniform(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> u(-bound, bound);
  std::vector<double> v(numel(shape));
  for (auto& x : v) {
    x = u(rng);
  }
  return Tensor(std::move(shape), std::move(v));
}

}  // namespace

ParamSet init_params(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  ParamSet p;
  if (spec.kind == ModelKind::mlp) {
    std::size_t in = spec.input_shape[0];
    for (std::size_t i = 0; i < spec.hidden_widths.size(); ++i) {
      const std::size_t out = spec.hidden_widths[i];
      p.add("fc" + std::to_string(i) + ".weight", uniform({in, out}, in, rng));
      p.add("fc" + std::to_string(i) + ".bias", Tensor::zeros({out}));
      in = out;
    }
  } else {
    std::size_t in = spec.input_shape[0];
    for (std::size_t i = 0; i < spec.hidden_widths.size(); ++i) {
      const std::size_t out = spec.hidden_widths[i];
      p.add("conv" + std::to_string(i) + ".weight", uniform({out, in, 3, 3}, in * 9, rng));
      p.add("conv" + std::to_string(i) + ".bias", Tensor::zeros({out}));
      in = out;
    }
  }
  const std::size_t features = spec.feature_dim();
  const std::size_t head_out = spec.shared_head ? 1 : spec.num_classes;
  p.add("head.weight", uniform({features, head_out}, features, rng));
  p.add("head.bias", Tensor::zeros({head_out}));
  return p;
}

ParamSet expand_head(const ParamSet& params, const ModelSpec& spec) {
  const Tensor& w = params.at("head.weight");
  if (!spec.shared_head || w.dim(1) == spec.num_classes) {
    return params;
  }
  if (w.dim(1) != 1) {
    throw ShapeError("expand_head: shared head weight must be [features,1], got " + shape_str(w.shape()));
  }
  ParamSet out;
  for (const auto& [name, t] : params) {
    if (name == "head.weight") {
      out.add(name, ops::matmul(t, Tensor::full({1, spec.num_classes}, 1.0)));
    } else if (name == "head.bias") {
      out.add(name, ops::expand(t, {spec.num_classes}));
    } else {
      out.add(name, t);
    }
  }
  return out;
}

Tensor predict(const ParamSet& raw_params, const ModelSpec& spec, const Tensor& x) {
  Shape expected{x.rank() > 0 ? x.dim(0) : 0};
  expected.insert(expected.end(), spec.input_shape.begin(), spec.input_shape.end());
  if (x.shape() != expected || x.rank() == 0) {
    throw ShapeError("predict: input " + shape_str(x.shape()) + " does not match [B]+" +
                     shape_str(spec.input_shape));
  }
  const ParamSet params = expand_head(raw_params, spec);
  Tensor h = x;
  if (spec.kind == ModelKind::mlp) {
    for (std::size_t i = 0; i < spec.hidden_widths.size(); ++i) {
      const std::string p = "fc" + std::to_string(i);
      h = ops::relu(ops::add_bias(ops::matmul(h, params.at(p + ".weight")), params.at(p + ".bias")));
    }
  } else {
    for (std::size_t i = 0; i < spec.hidden_widths.size(); ++i) {
      const std::string p = "conv" + std::to_string(i);
      h = ops::conv2d_3x3(h, params.at(p + ".weight"));
      h = ops::mean_pool2x2(ops::relu(ops::add_bias(h, params.at(p + ".bias"))));
    }
    h = ops::reshape(h, {x.dim(0), spec.feature_dim()});
  }
  return ops::add_bias(ops::matmul(h, params.at("head.weight")), params.at("head.bias"));
}

Tensor one_hot(std::span<const int> labels, std::size_t classes) {
  std::vector<double> v(labels.size() * classes, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw ContractError("label " + std::to_string(labels[i]) + " outside [0, " +
                          std::to_string(classes) + ")");
    }
    v[i * classes + static_cast<std::size_t>(labels[i])] = 1.0;
  }
  return Tensor({labels.size(), classes}, std::move(v));
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size() || labels.empty()) {
    throw ShapeError("cross_entropy: logits " + shape_str(logits.shape()) + " vs " +
                     std::to_string(labels.size()) + " labels");
  }
  const Tensor picked = ops::mul(ops::log_softmax(logits), one_hot(labels, logits.dim(1)));
  return ops::scale(ops::sum(picked), -1.0 / static_cast<double>(labels.size()));
}

double accuracy(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size() || labels.empty()) {
    throw ShapeError("accuracy: logits " + shape_str(logits.shape()) + " vs " +
                     std::to_string(labels.size()) + " labels");
  }
  const std::size_t n = logits.dim(1);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < n; ++j) {
      if (logits[i * n + j] > logits[i * n + best]) {
        best = j;
      }
    }
    correct += static_cast<int>(best) == labels[i] ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

}  // namespace msd::nn

#include "msd/tensor.hpp"

#include <algorithm>
#include <functional>
#include <numeric>
#include <sstream>

#include "autodiff/tape.hpp"
#include "msd/error.hpp"
#include "msd/ops.hpp"

namespace msd {

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    os << (i ? "," : "") << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor() : data_(std::make_shared<const std::vector<double>>(1, 0.0)) {}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)) {
  if (numel(shape_) != values.size()) {
    throw ShapeError("tensor: shape " + shape_str(shape_) + " holds " +
                     std::to_string(numel(shape_)) + " values, got " +
                     std::to_string(values.size()));
  }
  data_ = std::make_shared<const std::vector<double>>(std::move(values));
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  const std::size_t n = numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor({}, {value}); }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw ShapeError("tensor: axis " + std::to_string(axis) + " out of range for shape " +
                     shape_str(shape_));
  }
  return shape_[axis];
}

double Tensor::item() const {
  if (data_->size() != 1) {
    throw ContractError("tensor: item() on shape " + shape_str(shape_));
  }
  return (*data_)[0];
}

Tensor Tensor::detach() const {
  Tensor out;
  out.shape_ = shape_;
  out.data_ = data_;
  return out;
}

Graph::Graph() : tape_(std::make_shared<detail::Tape>()) {}

Tensor Graph::leaf(const Tensor& value) {
  Tensor out = value.detach();
  tape_->nodes.push_back(detail::Node{detail::OpKind::leaf, {}, out, 0.0});
  out.tape_ = tape_;
  out.node_ = static_cast<std::uint32_t>(tape_->nodes.size() - 1);
  out.generation_ = tape_->generation;
  tape_->nodes.back().output = out;
  return out;
}

void Graph::reset() {
  tape_->nodes.clear();
  ++tape_->generation;
}

std::size_t Graph::size() const { return tape_->nodes.size(); }

std::uint64_t Graph::generation() const { return tape_->generation; }

std::shared_ptr<detail::Tape> TensorAccess::tape_of(const Tensor& t) {
  if (!t.tracked()) {
    return nullptr;
  }
  auto tape = t.tape_.lock();
  if (!tape) {
    throw ContractError("tracked tensor used after its graph was destroyed");
  }
  if (tape->generation != t.generation_ || t.node_ >= tape->nodes.size()) {
    throw ContractError("tracked tensor from stale graph generation " +
                        std::to_string(t.generation_) + " (graph is at " +
                        std::to_string(tape->generation) + ")");
  }
  return tape;
}

Tensor TensorAccess::record(detail::OpKind op, Shape shape, std::vector<double> values,
                            std::initializer_list<const Tensor*> inputs, double scalar) {
  Tensor out(std::move(shape), std::move(values));
  std::shared_ptr<detail::Tape> tape;
  for (const Tensor* in : inputs) {
    auto t = tape_of(*in);
    if (!t) {
      continue;
    }
    if (tape && tape != t) {
      throw ContractError("operator inputs are tracked on different graphs");
    }
    tape = std::move(t);
  }
  if (!tape) {
    return out;
  }
  detail::Node node;
  node.op = op;
  node.scalar = scalar;
  node.inputs.reserve(inputs.size());
  for (const Tensor* in : inputs) {
    node.inputs.push_back(*in);
  }
  out.tape_ = tape;
  out.node_ = static_cast<std::uint32_t>(tape->nodes.size());
  out.generation_ = tape->generation;
  node.output = out;
  tape->nodes.push_back(std::move(node));
  return out;
}

std::vector<Tensor> gradients(const Tensor& root, std::span<const Tensor> wrt, bool create_graph) {
  if (root.size() != 1) {
    throw ContractError("backward: root must be scalar-shaped, got " + shape_str(root.shape()));
  }
  std::vector<Tensor> result;
  result.reserve(wrt.size());
  auto tape = TensorAccess::tape_of(root);
  if (!tape) {
    for (const Tensor& w : wrt) {
      result.push_back(Tensor::zeros(w.shape()));
    }
    return result;
  }

  const std::uint32_t root_id = TensorAccess::node_of(root);
  std::uint32_t lowest = root_id;
  for (const Tensor& w : wrt) {
    auto wt = TensorAccess::tape_of(w);
    if (wt && wt != tape) {
      throw ContractError("backward: wrt tensor belongs to a different graph");
    }
    if (wt) {
      lowest = std::min(lowest, TensorAccess::node_of(w));
    }
  }

  // Nodes below the lowest wrt index cannot lie on a path to any wrt entry.
  std::vector<Tensor> grads(root_id + 1 - lowest);
  std::vector<char> has(grads.size(), 0);
  auto slot = [&](std::uint32_t id) { return id - lowest; };
  grads[slot(root_id)] = Tensor::full(root.shape(), 1.0);
  has[slot(root_id)] = 1;

  for (std::uint32_t id = root_id + 1; id-- > lowest;) {
    if (!has[slot(id)]) {
      continue;
    }
    const detail::Node& node = tape->nodes[id];
    if (node.op == detail::OpKind::leaf) {
      continue;
    }
    std::vector<Tensor> in_grads = detail::backward_rule(node, grads[slot(id)], create_graph);
    for (std::size_t k = 0; k < node.inputs.size(); ++k) {
      const Tensor& input = node.inputs[k];
      if (!input.tracked()) {
        continue;
      }
      const std::uint32_t pid = TensorAccess::node_of(input);
      if (pid < lowest) {
        continue;
      }
      if (has[slot(pid)]) {
        grads[slot(pid)] = ops::add(grads[slot(pid)], in_grads[k]);
      } else {
        grads[slot(pid)] = std::move(in_grads[k]);
        has[slot(pid)] = 1;
      }
    }
  }

  for (const Tensor& w : wrt) {
    if (w.tracked() && has[slot(TensorAccess::node_of(w))]) {
      const Tensor& g = grads[slot(TensorAccess::node_of(w))];
      result.push_back(create_graph ? g : g.detach());
    } else {
      result.push_back(Tensor::zeros(w.shape()));
    }
  }
  return result;
}

}  // namespace msd

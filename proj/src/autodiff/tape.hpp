#pragma once

// Internal tape representation shared by tensor.cpp and ops.cpp.

#include <cstdint>
#include <deque>
#include <initializer_list>
#include <memory>
#include <vector>

#include "msd/tensor.hpp"

namespace msd::detail {

enum class OpKind : std::uint8_t {
  leaf,
  matmul,
  transpose,
  add,
  sub,
  scale,
  mul,
  div,
  relu,
  exp,
  sqrt,
  reshape,
  add_bias,
  bias_reduce,
  log_softmax,
  sum,
  row_sum,
  broadcast_cols,
  expand,
  conv,
  conv_input_grad,
  conv_weight_grad,
  pool,
  pool_adjoint,
};

struct Node {
  OpKind op = OpKind::leaf;
  std::vector<Tensor> inputs;
  Tensor output;
  double scalar = 0.0;
};

struct Tape {
  // deque: references to existing nodes survive appends made while a
  // create_graph backward pass walks the tape.
  std::deque<Node> nodes;
  std::uint64_t generation = 1;
};

}  // namespace msd::detail

namespace msd {

struct TensorAccess {
  /// Tape of a tracked tensor, null for untracked ones. Throws ContractError
  /// when the tensor outlived its graph or the graph was reset.
  static std::shared_ptr<detail::Tape> tape_of(const Tensor& t);
  static std::uint32_t node_of(const Tensor& t) { return t.node_; }

  /// Builds the result of an operator, recording a node when any input is
  /// tracked. All tracked inputs must share one tape.
  static Tensor record(detail::OpKind op, Shape shape, std::vector<double> values,
                       std::initializer_list<const Tensor*> inputs, double scalar = 0.0);
};

namespace detail {
/// One gradient per node input (empty default Tensor for untracked inputs).
std::vector<Tensor> backward_rule(const Node& node, const Tensor& grad, bool create_graph);
}  // namespace detail

}  // namespace msd

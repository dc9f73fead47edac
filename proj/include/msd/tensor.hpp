#pragma once

// Dense row-major tensors of doubles with an optional node on a reverse-mode
// tape. Backward rules are written in terms of the same tracked operators, so
// a backward pass run with create_graph=true is itself differentiable.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace msd {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct Tape;
}

class Graph;

class Tensor {
 public:
  /// An empty rank-0 placeholder holding 0.0.
  Tensor();
  Tensor(Shape shape, std::vector<double> values);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_->size(); }
  std::size_t dim(std::size_t axis) const;
  std::span<const double> values() const noexcept { return *data_; }
  double operator[](std::size_t i) const { return (*data_)[i]; }
  /// Value of a single-element tensor.
  double item() const;

  bool tracked() const noexcept { return node_ != kUntracked; }
  /// Untracked copy sharing the same (immutable) value buffer.
  Tensor detach() const;

 private:
  static constexpr std::uint32_t kUntracked = UINT32_MAX;

  Shape shape_;
  std::shared_ptr<const std::vector<double>> data_;
  std::weak_ptr<detail::Tape> tape_;
  std::uint32_t node_ = kUntracked;
  std::uint64_t generation_ = 0;

  friend class Graph;
  friend struct detail::Tape;
  friend struct TensorAccess;
};

/// Owner of one append-only tape. Tracked tensors refer back to it weakly;
/// `reset()` frees every node and invalidates all outstanding tracked
/// tensors (using one afterwards raises ContractError).
class Graph {
 public:
  Graph();

  /// Registers `value` as a differentiable leaf on this graph.
  Tensor leaf(const Tensor& value);
  void reset();
  std::size_t size() const;
  std::uint64_t generation() const;

 private:
  std::shared_ptr<detail::Tape> tape_;
};

/// Gradients of scalar `root` with respect to each tensor in `wrt`. Entries
/// of `wrt` that are untracked or unreachable get zero gradients. With
/// `create_graph`, the returned gradients are tracked on root's graph.
std::vector<Tensor> gradients(const Tensor& root, std::span<const Tensor> wrt, bool create_graph);

}  // namespace msd

#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "msd/tensor.hpp"

namespace msd {

/// Ordered, uniquely named collection of tensors: model parameters and
/// anything shaped like them (gradients, optimizer moments).
class ParamSet {
 public:
  using Entry = std::pair<std::string, Tensor>;

  ParamSet() = default;

  /// Appends an entry; throws ContractError on a duplicate name.
  void add(std::string name, Tensor value);

  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  std::size_t total_dim() const noexcept;

  const Entry& operator[](std::size_t i) const { return entries_[i]; }
  const Tensor& at(std::string_view name) const;
  bool contains(std::string_view name) const;
  /// Replaces the value of an existing entry, keeping its position.
  void set(std::string_view name, Tensor value);

  auto begin() const noexcept { return entries_.begin(); }
  auto end() const noexcept { return entries_.end(); }

  std::vector<Tensor> tensors() const;
  /// Same names and order, new values (shapes must match).
  ParamSet with_values(std::vector<Tensor> values) const;

  /// Untracked value copy, safe to share across threads.
  ParamSet snapshot() const;
  /// Every entry registered as a leaf of `graph`.
  ParamSet track(Graph& graph) const;
  bool tracked() const;

  std::vector<double> flatten() const;
  /// Inverse of flatten() using `layout` for names and shapes.
  static ParamSet unflatten(std::span<const double> flat, const ParamSet& layout);

  bool same_layout(const ParamSet& other) const;
  /// Bitwise equality of names, shapes and values.
  bool bitwise_equal(const ParamSet& other) const;

 private:
  std::vector<Entry> entries_;
};

/// a*x + b*y entrywise on untracked values.
ParamSet linear_combination(double a, const ParamSet& x, double b, const ParamSet& y);
ParamSet zeros_like(const ParamSet& p);
double max_abs_diff(const ParamSet& a, const ParamSet& b);

/// Central differences (f(p + h e_i) - f(p - h e_i)) / 2h for every coordinate.
ParamSet finite_diff_gradient(const std::function<double(const ParamSet&)>& f, const ParamSet& p,
                              double step);

// MSDCKPT1 container, all integers little-endian:
//   magic "MSDCKPT1" | u64 entry count | per entry:
//   u32 name length | name bytes | u32 rank | u64 extent * rank | f64 value * numel
void write_params(std::ostream& out, const ParamSet& params);
ParamSet read_params(std::istream& in);
std::vector<std::uint8_t> encode_params(const ParamSet& params);
ParamSet decode_params(std::span<const std::uint8_t> bytes);

}  // namespace msd

#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace msd {

using RngStream = std::mt19937_64;

/// Purpose tags mixed into derived seeds so that, e.g., training tasks and
/// evaluation tasks never share a stream.
enum class StreamTag : std::uint64_t {
  train_task = 1,
  train_view = 2,
  val_task = 3,
  val_view = 4,
  eval_task = 5,
  eval_view = 6,
  probe = 7,
  dataset = 8,
  init = 9,
};

std::uint64_t splitmix64(std::uint64_t x);

/// Order-sensitive hash of (seed, path...) used to give every task and view
/// its own reproducible stream, independent of evaluation order.
std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> path);

inline RngStream make_stream(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
  return RngStream(derive_seed(seed, path));
}

inline std::uint64_t tag(StreamTag t) { return static_cast<std::uint64_t>(t); }

}  // namespace msd

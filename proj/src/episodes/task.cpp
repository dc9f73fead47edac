#include <algorithm>
#include <numeric>

#include "msd/episodes.hpp"
#include "msd/error.hpp"

namespace msd::episodes {

namespace {

// Partial Fisher-Yates: the first k entries of `v` become a uniform sample
// without replacement.
void partial_shuffle(std::vector<std::size_t>& v, std::size_t k, RngStream& rng) {
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, v.size() - 1);
    std::swap(v[i], v[pick(rng)]);
  }
}

}  // namespace

Task sample_task(const Dataset& data, std::size_t way, std::size_t shot, std::size_t queries,
                 RngStream& rng) {
  if (way < 1 || shot < 1) {
    throw ContractError("sample_task: way and shot must be positive");
  }
  const auto by_class = data.indices_by_class();
  if (by_class.size() < way) {
    throw CapacityError("sample_task: " + std::to_string(way) + "-way task needs " +
                        std::to_string(way) + " classes, dataset has " +
                        std::to_string(by_class.size()));
  }
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    if (by_class[c].size() < shot + queries) {
      const std::string name = c < data.class_names.size() ? data.class_names[c] : std::to_string(c);
      throw CapacityError("sample_task: class '" + name + "' has " +
                          std::to_string(by_class[c].size()) + " samples, needs " +
                          std::to_string(shot + queries));
    }
  }

  std::vector<std::size_t> classes(by_class.size());
  std::iota(classes.begin(), classes.end(), 0);
  partial_shuffle(classes, way, rng);

  Task task;
  task.way = way;
  task.shot = shot;
  task.query_per_class = queries;
  task.modality = data.modality;
  task.noise_layout = data.noise_layout;
  for (std::size_t label = 0; label < way; ++label) {
    std::vector<std::size_t> members = by_class[classes[label]];
    partial_shuffle(members, shot + queries, rng);
    for (std::size_t i = 0; i < shot; ++i) {
      task.support_ids.push_back(members[i]);
      task.support_y.push_back(static_cast<int>(label));
    }
    for (std::size_t i = shot; i < shot + queries; ++i) {
      task.query_ids.push_back(members[i]);
      task.query_y.push_back(static_cast<int>(label));
    }
  }
  task.support_x = data.gather(task.support_ids);
  if (queries > 0) {
    task.query_x = data.gather(task.query_ids);
  } else {
    Shape s{0};
    s.insert(s.end(), data.sample_shape.begin(), data.sample_shape.end());
    task.query_x = Tensor(std::move(s), {});
  }
  return task;
}

}  // namespace msd::episodes

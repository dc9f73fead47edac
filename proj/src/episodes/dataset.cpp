#include <algorithm>
#include <ostream>

#include "msd/episodes.hpp"
#include "msd/error.hpp"

namespace msd::episodes {

std::vector<std::vector<std::size_t>> Dataset::indices_by_class() const {
  std::vector<std::vector<std::size_t>> out(num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    out.at(static_cast<std::size_t>(labels[i])).push_back(i);
  }
  return out;
}

Tensor Dataset::gather(std::span<const std::size_t> ids) const {
  const std::size_t d = sample_dim();
  std::vector<double> v;
  v.reserve(ids.size() * d);
  for (std::size_t id : ids) {
    if (id >= size()) {
      throw ContractError("Dataset::gather: index " + std::to_string(id) + " out of range");
    }
    v.insert(v.end(), values.begin() + static_cast<std::ptrdiff_t>(id * d),
             values.begin() + static_cast<std::ptrdiff_t>((id + 1) * d));
  }
  Shape s{ids.size()};
  s.insert(s.end(), sample_shape.begin(), sample_shape.end());
  return Tensor(std::move(s), std::move(v));
}

Dataset select_classes(const Dataset& data, std::size_t first, std::size_t count) {
  if (first + count > data.num_classes) {
    throw CapacityError("select_classes: requested classes [" + std::to_string(first) + ", " +
                        std::to_string(first + count) + ") but dataset has " +
                        std::to_string(data.num_classes));
  }
  Dataset out;
  out.sample_shape = data.sample_shape;
  out.num_classes = count;
  out.modality = data.modality;
  out.noise_layout = data.noise_layout;
  const std::size_t d = data.sample_dim();
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto c = static_cast<std::size_t>(data.labels[i]);
    if (c < first || c >= first + count) {
      continue;
    }
    out.values.insert(out.values.end(), data.values.begin() + static_cast<std::ptrdiff_t>(i * d),
                      data.values.begin() + static_cast<std::ptrdiff_t>((i + 1) * d));
    out.labels.push_back(static_cast<int>(c - first));
    if (!data.sources.empty()) {
      out.sources.push_back(data.sources[i]);
    }
  }
  if (!data.class_names.empty()) {
    out.class_names.assign(data.class_names.begin() + static_cast<std::ptrdiff_t>(first),
                           data.class_names.begin() + static_cast<std::ptrdiff_t>(first + count));
  }
  return out;
}

void write_manifest(const Dataset& data, std::ostream& out) {
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::string src = i < data.sources.size() ? data.sources[i] : "#" + std::to_string(i);
    out << src << '\t' << data.labels[i] << '\n';
  }
}

}  // namespace msd::episodes

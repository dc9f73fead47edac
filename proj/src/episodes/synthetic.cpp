#include <algorithm>
#include <cmath>
#include <limits>

#include "msd/episodes.hpp"
#include "msd/error.hpp"

namespace msd::episodes {

void SyntheticSpec::validate() const {
  if (num_classes_total < 2 || dim_target == 0 || dim_noise == 0 || samples_per_class == 0) {
    throw ConfigError("SyntheticSpec: classes >= 2 and positive dims/sample counts required");
  }
  if (!(class_margin > 0.0) || !(noise_scale >= 0.0)) {
    throw ConfigError("SyntheticSpec: class_margin must be > 0 and noise_scale >= 0");
  }
}

namespace {

void normalize(std::vector<double>& v) {
  double n = 0.0;
  for (double x : v) {
    n += x * x;
  }
  n = std::sqrt(n);
  for (double& x : v) {
    x /= n;
  }
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    s += a[i] * b[i];
  }
  return s;
}

}  // namespace

std::vector<std::vector<double>> class_directions(std::size_t count, std::size_t dim,
                                                  std::uint64_t seed) {
  constexpr std::size_t kCandidates = 4096;
  constexpr int kRepelIters = 500;
  constexpr double kRepelSharpness = 8.0;
  constexpr double kRepelStep = 0.05;

  RngStream rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::vector<double>> pool(kCandidates, std::vector<double>(dim));
  for (auto& p : pool) {
    for (double& x : p) {
      x = normal(rng);
    }
    normalize(p);
  }

  // Greedy farthest-point selection on cosine similarity.
  std::vector<std::vector<double>> dirs{pool[0]};
  std::vector<double> closest(kCandidates, -std::numeric_limits<double>::infinity());
  while (dirs.size() < count) {
    std::size_t best = 0;
    double best_score = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < kCandidates; ++i) {
      closest[i] = std::max(closest[i], dot(pool[i], dirs.back()));
      if (closest[i] < best_score) {
        best_score = closest[i];
        best = i;
      }
    }
    dirs.push_back(pool[best]);
  }

  // Soft-max repulsion: each direction moves away from exp-weighted neighbours.
  for (int it = 0; it < kRepelIters; ++it) {
    std::vector<std::vector<double>> push(count, std::vector<double>(dim, 0.0));
    double largest = 0.0;
    for (std::size_t i = 0; i < count; ++i) {
      for (std::size_t j = 0; j < count; ++j) {
        if (i == j) {
          continue;
        }
        const double w = std::exp(kRepelSharpness * dot(dirs[i], dirs[j]));
        for (std::size_t k = 0; k < dim; ++k) {
          push[i][k] += w * dirs[j][k];
        }
      }
      for (double x : push[i]) {
        largest = std::max(largest, std::abs(x));
      }
    }
    if (largest == 0.0) {
      break;
    }
    for (std::size_t i = 0; i < count; ++i) {
      for (std::size_t k = 0; k < dim; ++k) {
        dirs[i][k] -= kRepelStep * push[i][k] / largest;
      }
      normalize(dirs[i]);
    }
  }
  return dirs;
}

Dataset generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
  spec.validate();
  const auto dirs = class_directions(spec.num_classes_total, spec.dim_target,
                                     derive_seed(seed, {tag(StreamTag::dataset), 0}));
  RngStream rng = make_stream(seed, {tag(StreamTag::dataset), 1});
  std::normal_distribution<double> normal(0.0, 1.0);

  Dataset out;
  const std::size_t d = spec.dim_target + spec.dim_noise;
  out.sample_shape = {d};
  out.num_classes = spec.num_classes_total;
  out.modality = Modality::vector;
  out.noise_layout = NoiseLayout{spec.dim_target, spec.dim_noise};
  out.values.reserve(spec.num_classes_total * spec.samples_per_class * d);
  for (std::size_t c = 0; c < spec.num_classes_total; ++c) {
    out.class_names.push_back("class" + std::to_string(c));
    for (std::size_t s = 0; s < spec.samples_per_class; ++s) {
      for (std::size_t k = 0; k < spec.dim_target; ++k) {
        out.values.push_back(spec.class_margin * dirs[c][k] + normal(rng));
      }
      for (std::size_t k = 0; k < spec.dim_noise; ++k) {
        const double z = normal(rng);
        out.values.push_back(spec.noise_scale * z);
      }
      out.labels.push_back(static_cast<int>(c));
      out.sources.push_back("synthetic/class" + std::to_string(c) + "/" + std::to_string(s));
    }
  }
  return out;
}

}  // namespace msd::episodes

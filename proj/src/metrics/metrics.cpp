#include "msd/metrics.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "msd/error.hpp"
#include "msd/meta.hpp"
#include "msd/ops.hpp"

namespace msd::metrics {

using ordered_json = nlohmann::ordered_json;

double ci95(std::span<const double> values) {
  if (values.size() < 2) {
    return 0.0;
  }
  double mean = 0.0;
  for (double v : values) {
    mean += v;
  }
  mean /= static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) {
    var += (v - mean) * (v - mean);
  }
  var /= static_cast<double>(values.size());
  return 1.96 * std::sqrt(var) / std::sqrt(static_cast<double>(values.size()));
}

MetricsRecord aggregate(std::span<const TaskRecord> tasks) {
  if (tasks.empty()) {
    throw ContractError("aggregate: no task records");
  }
  MetricsRecord out;
  out.task_count = tasks.size();
  const double n = static_cast<double>(tasks.size());
  std::vector<double> acc;
  acc.reserve(tasks.size());
  double ns_sum = 0.0;
  std::size_t ns_count = 0;
  out.consistency_mean = 0.0;
  out.consistency_softmax_mean = 0.0;
  for (const TaskRecord& t : tasks) {
    acc.push_back(t.accuracy);
    out.accuracy_mean += t.accuracy;
    out.consistency_mean += t.consistency;
    out.consistency_softmax_mean += t.consistency_softmax;
    out.kc_loss_mean += t.kc_loss;
    out.cls_loss_mean += t.cls_loss;
    out.degeneracy_count += t.degenerate;
    if (t.noise_sensitivity) {
      ns_sum += *t.noise_sensitivity;
      ++ns_count;
    }
  }
  out.accuracy_mean /= n;
  out.consistency_mean /= n;
  out.consistency_softmax_mean /= n;
  out.kc_loss_mean /= n;
  out.cls_loss_mean /= n;
  out.accuracy_ci95 = ci95(acc);
  if (ns_count > 0) {
    out.noise_sensitivity = ns_sum / static_cast<double>(ns_count);
  }
  return out;
}

Consistency consistency_score(std::span<const Tensor> query_logits) {
  std::vector<Tensor> detached;
  detached.reserve(query_logits.size());
  for (const Tensor& t : query_logits) {
    detached.push_back(t.detach());
  }
  const auto r = meta::knowledge_consistency_loss(detached, meta::ConsistencySpace::logits);
  return {r.consistency, r.degenerate};
}

Tensor knowledge_change(const ParamSet& theta1, const ParamSet& theta2, const nn::ModelSpec& spec,
                        const Tensor& probes) {
  return ops::sub(nn::predict(theta2, spec, probes), nn::predict(theta1, spec, probes));
}

double noise_sensitivity(const ParamSet& theta, const Tensor& support_x, std::span<const int> support_y,
                         const nn::ModelSpec& spec, const meta::InnerLoopConfig& inner, const Tensor& probes,
                         const Tensor& perturbed, NormKind norm) {
  if (probes.shape() != perturbed.shape() || probes.rank() < 1 || probes.dim(0) == 0) {
    throw ShapeError("noise_sensitivity: probe batches " + shape_str(probes.shape()) + " and " +
                     shape_str(perturbed.shape()) + " must match and be nonempty");
  }
  const ParamSet base = theta.snapshot();
  const ParamSet adapted = meta::inner_update(base, support_x, support_y, spec, inner, false);
  const Tensor dk = knowledge_change(base, adapted, spec, probes);
  const Tensor dk_perturbed = knowledge_change(base, adapted, spec, perturbed);
  const std::size_t rows = dk.dim(0), cols = dk.dim(1);
  double total = 0.0;
  for (std::size_t b = 0; b < rows; ++b) {
    double s = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      const double d = dk[b * cols + j] - dk_perturbed[b * cols + j];
      s += norm == NormKind::l1 ? std::abs(d) : d * d;
    }
    total += norm == NormKind::l1 ? s : std::sqrt(s);
  }
  return total / static_cast<double>(rows);
}

Tensor perturb_noise_channels(const Tensor& x, std::size_t target_dim, double scale, std::uint64_t seed) {
  if (x.rank() != 2 || target_dim > x.dim(1)) {
    throw ShapeError("perturb_noise_channels: expected [B,D] with D >= " + std::to_string(target_dim) +
                     ", got " + shape_str(x.shape()));
  }
  RngStream rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(x.values().begin(), x.values().end());
  const std::size_t d = x.dim(1);
  for (std::size_t b = 0; b < x.dim(0); ++b) {
    for (std::size_t k = target_dim; k < d; ++k) {
      v[b * d + k] += scale * normal(rng);
    }
  }
  return Tensor(x.shape(), std::move(v));
}

std::string to_json_line(const MetricsRecord& r) {
  ordered_json j;
  j["label"] = r.label;
  j["epoch"] = r.epoch ? ordered_json(*r.epoch) : ordered_json(nullptr);
  j["inner_steps"] = r.inner_steps ? ordered_json(*r.inner_steps) : ordered_json(nullptr);
  j["task_count"] = r.task_count;
  j["accuracy_mean"] = r.accuracy_mean;
  j["accuracy_ci95"] = r.accuracy_ci95;
  j["consistency_mean"] = r.consistency_mean;
  j["consistency_softmax_mean"] = r.consistency_softmax_mean;
  j["kc_loss_mean"] = r.kc_loss_mean;
  j["cls_loss_mean"] = r.cls_loss_mean;
  j["degeneracy_count"] = r.degeneracy_count;
  j["noise_sensitivity"] = r.noise_sensitivity ? ordered_json(*r.noise_sensitivity) : ordered_json(nullptr);
  j["fingerprint"] = r.fingerprint;
  j["seed"] = r.seed;
  return j.dump();
}

MetricsRecord from_json_line(const std::string& line) {
  ordered_json j;
  try {
    j = ordered_json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("metrics row: ") + e.what(), e.byte);
  }
  MetricsRecord r;
  try {
    r.label = j.at("label").get<std::string>();
    if (!j.at("epoch").is_null()) r.epoch = j["epoch"].get<std::size_t>();
    if (!j.at("inner_steps").is_null()) r.inner_steps = j["inner_steps"].get<std::size_t>();
    r.task_count = j.at("task_count").get<std::size_t>();
    r.accuracy_mean = j.at("accuracy_mean").get<double>();
    r.accuracy_ci95 = j.at("accuracy_ci95").get<double>();
    r.consistency_mean = j.at("consistency_mean").get<double>();
    r.consistency_softmax_mean = j.at("consistency_softmax_mean").get<double>();
    r.kc_loss_mean = j.at("kc_loss_mean").get<double>();
    r.cls_loss_mean = j.at("cls_loss_mean").get<double>();
    r.degeneracy_count = j.at("degeneracy_count").get<std::size_t>();
    if (!j.at("noise_sensitivity").is_null()) r.noise_sensitivity = j["noise_sensitivity"].get<double>();
    r.fingerprint = j.at("fingerprint").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("metrics row: ") + e.what(), 0);
  }
  return r;
}

std::string csv_header() {
  return "label,epoch,inner_steps,task_count,accuracy_mean,accuracy_ci95,consistency_mean,"
         "consistency_softmax_mean,kc_loss_mean,cls_loss_mean,degeneracy_count,noise_sensitivity,"
         "fingerprint,seed";
}

std::string to_csv_row(const MetricsRecord& r) {
  std::ostringstream out;
  out << std::setprecision(17);
  out << r.label << ',';
  if (r.epoch) out << *r.epoch;
  out << ',';
  if (r.inner_steps) out << *r.inner_steps;
  out << ',' << r.task_count << ',' << r.accuracy_mean << ',' << r.accuracy_ci95 << ',' << r.consistency_mean
      << ',' << r.consistency_softmax_mean << ',' << r.kc_loss_mean << ',' << r.cls_loss_mean << ','
      << r.degeneracy_count << ',';
  if (r.noise_sensitivity) out << *r.noise_sensitivity;
  out << ',' << r.fingerprint << ',' << r.seed;
  return out.str();
}

}  // namespace msd::metrics

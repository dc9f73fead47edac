#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include <json.hpp>

#include "msd/error.hpp"
#include "msd/harness.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace msd::harness {

RunConfig default_config() {
  RunConfig cfg;
  cfg.model.kind = nn::ModelKind::mlp;
  cfg.model.input_shape = {cfg.dataset.synthetic.dim_target + cfg.dataset.synthetic.dim_noise};
  cfg.model.hidden_widths = {32};
  cfg.model.num_classes = cfg.task.way;
  return cfg;
}

namespace {

std::string norm_name(metrics::NormKind n) { return n == metrics::NormKind::l1 ? "l1" : "l2"; }

metrics::NormKind norm_from(const std::string& s) {
  if (s == "l1") return metrics::NormKind::l1;
  if (s == "l2") return metrics::NormKind::l2;
  throw ConfigError("unknown norm '" + s + "' (expected l1|l2)");
}

json aug_to_json(const episodes::AugmentationSpec& a) {
  json j;
  j["kind"] = episodes::to_string(a.kind);
  j["random_resize_crop"] = a.random_resize_crop;
  j["crop_scale_min"] = a.crop_scale_min;
  j["crop_scale_max"] = a.crop_scale_max;
  j["center_crop"] = a.center_crop;
  j["jitter_brightness"] = a.jitter_brightness;
  j["jitter_contrast"] = a.jitter_contrast;
  j["jitter_saturation"] = a.jitter_saturation;
  j["jitter_hue"] = a.jitter_hue;
  j["jitter_prob"] = a.jitter_prob;
  j["grayscale_prob"] = a.grayscale_prob;
  j["blur_sigma_mean"] = a.blur_sigma_mean;
  j["blur_sigma_variance"] = a.blur_sigma_variance;
  j["blur_prob"] = a.blur_prob;
  j["hflip_prob"] = a.hflip_prob;
  j["noise_scale"] = a.noise_scale;
  j["stream_id"] = a.stream_id;
  return j;
}

json to_json(const RunConfig& c) {
  json j;
  j["version"] = c.version;
  j["algo"] = meta::to_string(c.algo);
  j["model"] = {{"kind", nn::to_string(c.model.kind)},
                {"input_shape", c.model.input_shape},
                {"hidden_widths", c.model.hidden_widths},
                {"num_classes", c.model.num_classes},
                {"shared_head", c.model.shared_head}};
  const auto& s = c.dataset.synthetic;
  j["dataset"] = {{"source", c.dataset.source},
                  {"synthetic",
                   {{"num_classes_total", s.num_classes_total},
                    {"dim_target", s.dim_target},
                    {"dim_noise", s.dim_noise},
                    {"class_margin", s.class_margin},
                    {"noise_scale", s.noise_scale},
                    {"samples_per_class", s.samples_per_class}}},
                  {"data_seed", c.dataset.data_seed},
                  {"image_folder", c.dataset.image_folder},
                  {"train_classes", c.dataset.train_classes},
                  {"test_classes", c.dataset.test_classes}};
  j["task"] = {{"way", c.task.way}, {"shot", c.task.shot}, {"query", c.task.query}};
  j["inner"] = {{"steps", c.inner.steps}, {"lr", c.inner.lr}, {"first_order", c.inner.first_order}};
  const auto& m = c.meta;
  j["meta"] = {{"outer_lr", m.outer_lr},
               {"alpha", m.alpha},
               {"task_batch", m.task_batch},
               {"views", m.views},
               {"lr_decay", m.lr_decay},
               {"lr_decay_every", m.lr_decay_every},
               {"epochs", m.epochs},
               {"tasks_per_epoch", m.tasks_per_epoch},
               {"optimizer", meta::to_string(m.optimizer)},
               {"adam_beta1", m.adam_beta1},
               {"adam_beta2", m.adam_beta2},
               {"adam_eps", m.adam_eps},
               {"kc_loss", m.kc_loss},
               {"consistency_space", meta::to_string(m.consistency_space)},
               {"val_tasks", m.val_tasks}};
  j["train_aug"] = aug_to_json(c.train_aug);
  j["test_aug"] = aug_to_json(c.test_aug);
  j["eval"] = {{"tasks", c.eval.tasks},
               {"views", c.eval.views},
               {"noise_sensitivity", c.eval.noise_sensitivity},
               {"probe_noise_scale", c.eval.probe_noise_scale},
               {"norm", norm_name(c.eval.norm)}};
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  j["workers"] = c.workers;
  return j;
}

// Reads fields of one JSON object, rejecting keys it was never asked about.
class Reader {
 public:
  Reader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) {
      throw ConfigError(where_ + ": expected an object");
    }
  }

  /// Throws on any key no get()/child() call asked about.
  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) {
        throw ConfigError(where_ + ": unknown key '" + it.key() + "'");
      }
    }
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) {
      return;
    }
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(where_ + "." + key + ": wrong type");
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

episodes::AugmentationSpec aug_from_json(const json& j, const std::string& where, std::size_t image_side) {
  std::string kind_name = "none";
  if (j.is_object() && j.contains("kind")) {
    try {
      kind_name = j.at("kind").get<std::string>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(where + ".kind: wrong type");
    }
  }
  episodes::AugmentationSpec a;
  switch (episodes::aug_kind_from_string(kind_name)) {
    case episodes::AugKind::none:
      a = episodes::AugmentationSpec::none();
      break;
    case episodes::AugKind::strong:
      a = episodes::AugmentationSpec::strong();
      break;
    case episodes::AugKind::weak:
      a = episodes::AugmentationSpec::weak(image_side);
      break;
    case episodes::AugKind::noise_channel:
      a = episodes::AugmentationSpec::noise_channel(1.0);
      break;
  }
  Reader r(j, where);
  std::string ignored;
  r.get("kind", ignored);
  r.get("random_resize_crop", a.random_resize_crop);
  r.get("crop_scale_min", a.crop_scale_min);
  r.get("crop_scale_max", a.crop_scale_max);
  r.get("center_crop", a.center_crop);
  r.get("jitter_brightness", a.jitter_brightness);
  r.get("jitter_contrast", a.jitter_contrast);
  r.get("jitter_saturation", a.jitter_saturation);
  r.get("jitter_hue", a.jitter_hue);
  r.get("jitter_prob", a.jitter_prob);
  r.get("grayscale_prob", a.grayscale_prob);
  r.get("blur_sigma_mean", a.blur_sigma_mean);
  r.get("blur_sigma_variance", a.blur_sigma_variance);
  r.get("blur_prob", a.blur_prob);
  r.get("hflip_prob", a.hflip_prob);
  r.get("noise_scale", a.noise_scale);
  r.get("stream_id", a.stream_id);
  r.finish();
  return a;
}

}  // namespace

std::string dump_config(const RunConfig& cfg) { return to_json(cfg).dump(2) + "\n"; }

RunConfig parse_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("config: ") + e.what(), e.byte);
  }
  if (!j.is_object() || !j.contains("version")) {
    throw ConfigError("config: missing required \"version\" field");
  }
  RunConfig c = default_config();
  std::string algo, opt, space, norm;
  {
    Reader root(j, "config");
    root.get("version", c.version);
    if (c.version != kConfigVersion) {
      throw ConfigError("config: unsupported version " + std::to_string(c.version) + " (expected " +
                        std::to_string(kConfigVersion) + ")");
    }
    algo = meta::to_string(c.algo);
    root.get("algo", algo);
    c.algo = meta::algo_from_string(algo);
    if (const json* m = root.child("model")) {
      Reader r(*m, "config.model");
      std::string kind = nn::to_string(c.model.kind);
      r.get("kind", kind);
      c.model.kind = nn::model_kind_from_string(kind);
      r.get("input_shape", c.model.input_shape);
      r.get("hidden_widths", c.model.hidden_widths);
      r.get("num_classes", c.model.num_classes);
      r.get("shared_head", c.model.shared_head);
      r.finish();
    }
    if (const json* d = root.child("dataset")) {
      Reader r(*d, "config.dataset");
      r.get("source", c.dataset.source);
      if (const json* s = r.child("synthetic")) {
        Reader rs(*s, "config.dataset.synthetic");
        auto& sp = c.dataset.synthetic;
        rs.get("num_classes_total", sp.num_classes_total);
        rs.get("dim_target", sp.dim_target);
        rs.get("dim_noise", sp.dim_noise);
        rs.get("class_margin", sp.class_margin);
        rs.get("noise_scale", sp.noise_scale);
        rs.get("samples_per_class", sp.samples_per_class);
        rs.finish();
      }
      r.get("data_seed", c.dataset.data_seed);
      r.get("image_folder", c.dataset.image_folder);
      r.get("train_classes", c.dataset.train_classes);
      r.get("test_classes", c.dataset.test_classes);
      r.finish();
    }
    if (const json* t = root.child("task")) {
      Reader r(*t, "config.task");
      r.get("way", c.task.way);
      r.get("shot", c.task.shot);
      r.get("query", c.task.query);
      r.finish();
    }
    if (const json* in = root.child("inner")) {
      Reader r(*in, "config.inner");
      r.get("steps", c.inner.steps);
      r.get("lr", c.inner.lr);
      r.get("first_order", c.inner.first_order);
      r.finish();
    }
    if (const json* m = root.child("meta")) {
      Reader r(*m, "config.meta");
      auto& mc = c.meta;
      r.get("outer_lr", mc.outer_lr);
      r.get("alpha", mc.alpha);
      r.get("task_batch", mc.task_batch);
      r.get("views", mc.views);
      r.get("lr_decay", mc.lr_decay);
      r.get("lr_decay_every", mc.lr_decay_every);
      r.get("epochs", mc.epochs);
      r.get("tasks_per_epoch", mc.tasks_per_epoch);
      opt = meta::to_string(mc.optimizer);
      r.get("optimizer", opt);
      mc.optimizer = meta::optimizer_from_string(opt);
      r.get("adam_beta1", mc.adam_beta1);
      r.get("adam_beta2", mc.adam_beta2);
      r.get("adam_eps", mc.adam_eps);
      r.get("kc_loss", mc.kc_loss);
      space = meta::to_string(mc.consistency_space);
      r.get("consistency_space", space);
      mc.consistency_space = meta::consistency_space_from_string(space);
      r.get("val_tasks", mc.val_tasks);
      r.finish();
    }
    const std::size_t side = c.model.input_shape.size() == 3 ? c.model.input_shape[1] : 0;
    if (const json* a = root.child("train_aug")) {
      c.train_aug = aug_from_json(*a, "config.train_aug", side);
    }
    if (const json* a = root.child("test_aug")) {
      c.test_aug = aug_from_json(*a, "config.test_aug", side);
    }
    if (const json* e = root.child("eval")) {
      Reader r(*e, "config.eval");
      r.get("tasks", c.eval.tasks);
      r.get("views", c.eval.views);
      r.get("noise_sensitivity", c.eval.noise_sensitivity);
      r.get("probe_noise_scale", c.eval.probe_noise_scale);
      norm = norm_name(c.eval.norm);
      r.get("norm", norm);
      c.eval.norm = norm_from(norm);
      r.finish();
    }
    root.get("seed", c.seed);
    root.get("output_dir", c.output_dir);
    root.get("workers", c.workers);
    root.finish();
  }
  validate(c);
  return c;
}

RunConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot read config " + path.string());
  }
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str());
}

void validate(const RunConfig& c) {
  try {
    c.model.validate();
  } catch (const Error& e) {
    throw ConfigError(std::string("model: ") + e.what());
  }
  if (c.model.num_classes != c.task.way) {
    throw ConfigError("model.num_classes (" + std::to_string(c.model.num_classes) + ") must equal task.way (" +
                      std::to_string(c.task.way) + ")");
  }
  if (c.task.way < 2 || c.task.shot < 1 || c.task.query < 1) {
    throw ConfigError("task: way >= 2, shot >= 1 and query >= 1 required");
  }
  if (c.dataset.source != "synthetic" && c.dataset.source != "image-folder") {
    throw ConfigError("dataset.source must be synthetic or image-folder, got '" + c.dataset.source + "'");
  }
  if (c.dataset.source == "synthetic") {
    c.dataset.synthetic.validate();
    if (c.dataset.train_classes + c.dataset.test_classes > c.dataset.synthetic.num_classes_total) {
      throw ConfigError("dataset: train_classes + test_classes exceeds num_classes_total");
    }
    const Shape expected{c.dataset.synthetic.dim_target + c.dataset.synthetic.dim_noise};
    if (c.model.kind != nn::ModelKind::mlp || c.model.input_shape != expected) {
      throw ConfigError("model: synthetic data needs an mlp with input_shape " + shape_str(expected));
    }
  } else if (c.dataset.image_folder.empty()) {
    throw ConfigError("dataset.image_folder is required for source image-folder");
  }
  if (c.dataset.train_classes < c.task.way || c.dataset.test_classes < c.task.way) {
    throw ConfigError("dataset: train and test splits need at least task.way classes each");
  }
  c.inner.validate();
  c.meta.validate();
  c.train_aug.validate();
  c.test_aug.validate();
  if (c.eval.tasks < 1) {
    throw ConfigError("eval.tasks must be >= 1");
  }
  if (c.eval.views < 1 || c.eval.views > 8) {
    throw ConfigError("eval.views must be in [1, 8]");
  }
  if (c.workers < 1) {
    throw ConfigError("workers must be >= 1");
  }
}

std::vector<std::string> config_warnings(const RunConfig& c) {
  std::vector<std::string> out;
  if (c.algo == meta::Algo::msd && c.meta.kc_loss && c.train_aug.kind == episodes::AugKind::none) {
    out.push_back("kc loss is enabled without training augmentation; identical views make it ineffective");
  }
  if (c.algo != meta::Algo::msd && c.train_aug.kind != episodes::AugKind::none) {
    out.push_back("train_aug is ignored for " + meta::to_string(c.algo) + " (single unaugmented support)");
  }
  return out;
}

std::string fingerprint(const RunConfig& cfg) {
  json j = to_json(cfg);
  j.erase("seed");
  j.erase("output_dir");
  j.erase("workers");
  const std::string canonical = j.dump();
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : canonical) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << h;
  return out.str();
}

Splits load_splits(const RunConfig& cfg) {
  Splits s;
  if (cfg.dataset.source == "synthetic") {
    s.all = episodes::generate_synthetic(cfg.dataset.synthetic, cfg.dataset.data_seed);
  } else {
    s.all = episodes::load_image_folder(cfg.dataset.image_folder);
    if (s.all.sample_shape != cfg.model.input_shape) {
      throw ConfigError("model.input_shape " + shape_str(cfg.model.input_shape) + " does not match images " +
                        shape_str(s.all.sample_shape));
    }
  }
  s.train = episodes::select_classes(s.all, 0, cfg.dataset.train_classes);
  s.test = episodes::select_classes(s.all, cfg.dataset.train_classes, cfg.dataset.test_classes);
  return s;
}

void save_checkpoint(const ParamSet& params, const fs::path& path) {
  if (path.has_parent_path()) {
    fs::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw IoError("cannot write checkpoint " + path.string());
  }
  write_params(out, params);
  if (!out) {
    throw IoError("failed writing checkpoint " + path.string());
  }
}

ParamSet restore_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot read checkpoint " + path.string());
  }
  return read_params(in);
}

ParamSet initial_params(const RunConfig& cfg) {
  return nn::init_params(cfg.model, derive_seed(cfg.seed, {tag(StreamTag::init)}));
}

}  // namespace msd::harness

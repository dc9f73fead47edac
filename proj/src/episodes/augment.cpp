#include <cmath>

#include "msd/episodes.hpp"
#include "msd/error.hpp"

namespace msd::episodes {

std::string to_string(AugKind kind) {
  switch (kind) {
    case AugKind::none:
      return "none";
    case AugKind::strong:
      return "strong";
    case AugKind::weak:
      return "weak";
    case AugKind::noise_channel:
      return "noise-channel";
  }
  return "none";
}

AugKind aug_kind_from_string(const std::string& s) {
  if (s == "none") return AugKind::none;
  if (s == "strong") return AugKind::strong;
  if (s == "weak") return AugKind::weak;
  if (s == "noise-channel") return AugKind::noise_channel;
  throw ConfigError("unknown augmentation kind '" + s + "' (expected none|strong|weak|noise-channel)");
}

AugmentationSpec AugmentationSpec::none() { return AugmentationSpec{}; }

AugmentationSpec AugmentationSpec::strong() {
  AugmentationSpec s;
  s.kind = AugKind::strong;
  s.random_resize_crop = true;
  s.crop_scale_min = 0.5;
  s.crop_scale_max = 1.0;
  s.jitter_brightness = 0.8;
  s.jitter_contrast = 0.8;
  s.jitter_saturation = 0.8;
  s.jitter_hue = 0.2;
  s.jitter_prob = 0.8;
  s.grayscale_prob = 0.2;
  s.blur_sigma_mean = 0.1;
  s.blur_sigma_variance = 2.0;
  s.blur_prob = 0.5;
  s.hflip_prob = 0.5;
  return s;
}

AugmentationSpec AugmentationSpec::weak(std::size_t crop_size) {
  AugmentationSpec s;
  s.kind = AugKind::weak;
  s.center_crop = crop_size;
  s.jitter_brightness = 0.4;
  s.jitter_contrast = 0.4;
  s.jitter_saturation = 0.4;
  s.jitter_hue = 0.1;
  s.jitter_prob = 0.8;
  s.grayscale_prob = 0.2;
  s.blur_sigma_mean = 0.0;
  s.blur_sigma_variance = 1.0;
  s.blur_prob = 0.5;
  s.hflip_prob = 0.5;
  return s;
}

AugmentationSpec AugmentationSpec::noise_channel(double scale) {
  AugmentationSpec s;
  s.kind = AugKind::noise_channel;
  s.noise_scale = scale;
  return s;
}

void AugmentationSpec::validate() const {
  auto prob = [](double p, const char* name) {
    if (!(p >= 0.0 && p <= 1.0)) {
      throw ConfigError(std::string("augmentation: ") + name + " must be in [0,1]");
    }
  };
  prob(jitter_prob, "jitter_prob");
  prob(grayscale_prob, "grayscale_prob");
  prob(blur_prob, "blur_prob");
  prob(hflip_prob, "hflip_prob");
  if (random_resize_crop &&
      !(crop_scale_min > 0.0 && crop_scale_min <= crop_scale_max && crop_scale_max <= 1.0)) {
    throw ConfigError("augmentation: crop scale range must satisfy 0 < min <= max <= 1");
  }
  for (double s : {jitter_brightness, jitter_contrast, jitter_saturation, jitter_hue,
                   blur_sigma_variance, noise_scale}) {
    if (!(s >= 0.0) || !std::isfinite(s)) {
      throw ConfigError("augmentation: strengths, variances and scales must be finite and >= 0");
    }
  }
  if (jitter_hue > 0.5) {
    throw ConfigError("augmentation: jitter_hue must be <= 0.5");
  }
}

Tensor augment_sample(const Tensor& sample, const AugmentationSpec& spec, Modality modality,
                      const std::optional<NoiseLayout>& layout, RngStream& rng) {
  if (spec.kind == AugKind::none) {
    return sample;
  }
  if (spec.kind == AugKind::noise_channel) {
    if (modality != Modality::vector || !layout) {
      throw ModalityError("noise-channel augmentation needs vector data with a target/noise layout");
    }
    if (layout->target_dim + layout->noise_dim != sample.size()) {
      throw ShapeError("noise-channel augmentation: layout does not match sample " +
                       shape_str(sample.shape()));
    }
    std::vector<double> v(sample.values().begin(), sample.values().end());
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t k = layout->target_dim; k < v.size(); ++k) {
      v[k] += spec.noise_scale * normal(rng);
    }
    return Tensor(sample.shape(), std::move(v));
  }

  if (modality != Modality::image) {
    throw ModalityError("augmentation '" + to_string(spec.kind) + "' applies to images, not vectors");
  }
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto coin = [&](double p) { return p > 0.0 && unit(rng) < p; };

  image::Params params;
  Tensor img = sample;
  if (spec.random_resize_crop) {
    params.scale_min = spec.crop_scale_min;
    params.scale_max = spec.crop_scale_max;
    img = image::apply(image::Op::resize_crop, img, params, rng);
  } else if (spec.center_crop > 0) {
    const std::size_t h = img.dim(1), w = img.dim(2);
    img = image::center_crop(img, spec.center_crop);
    if (img.dim(1) != h || img.dim(2) != w) {
      img = image::resized_crop(img, 0, 0, img.dim(1), img.dim(2), h, w);
    }
  }
  if (coin(spec.jitter_prob)) {
    params.brightness = spec.jitter_brightness;
    params.contrast = spec.jitter_contrast;
    params.saturation = spec.jitter_saturation;
    params.hue = spec.jitter_hue;
    img = image::apply(image::Op::color_jitter, img, params, rng);
  }
  if (coin(spec.grayscale_prob)) {
    img = image::grayscale(img);
  }
  if (coin(spec.blur_prob)) {
    params.sigma_mean = spec.blur_sigma_mean;
    params.sigma_variance = spec.blur_sigma_variance;
    img = image::apply(image::Op::gaussian_blur, img, params, rng);
  }
  if (coin(spec.hflip_prob)) {
    img = image::hflip(img);
  }
  return img;
}

AugmentedTaskSet augment_views(const Task& task, const AugmentationSpec& spec, std::size_t n,
                               std::uint64_t stream_seed) {
  if (n < 1) {
    throw ContractError("augment_views: need at least one view");
  }
  spec.validate();
  AugmentedTaskSet out;
  out.support_y = task.support_y;
  out.query_x = task.query_x;
  out.query_y = task.query_y;

  const std::size_t rows = task.support_x.dim(0);
  const std::size_t d = rows == 0 ? 0 : task.support_x.size() / rows;
  Shape sample_shape(task.support_x.shape().begin() + 1, task.support_x.shape().end());
  for (std::size_t i = 0; i < n; ++i) {
    if (spec.kind == AugKind::none) {
      out.views.push_back(task.support_x);
      continue;
    }
    RngStream rng = make_stream(stream_seed, {spec.stream_id, i});
    std::vector<double> v;
    v.reserve(task.support_x.size());
    for (std::size_t r = 0; r < rows; ++r) {
      const auto begin = task.support_x.values().begin() + static_cast<std::ptrdiff_t>(r * d);
      Tensor sample(sample_shape, std::vector<double>(begin, begin + static_cast<std::ptrdiff_t>(d)));
      const Tensor aug = augment_sample(sample, spec, task.modality, task.noise_layout, rng);
      if (aug.shape() != sample_shape) {
        throw ShapeError("augment_views: augmentation changed sample shape to " + shape_str(aug.shape()));
      }
      v.insert(v.end(), aug.values().begin(), aug.values().end());
    }
    out.views.emplace_back(task.support_x.shape(), std::move(v));
  }
  return out;
}

AugmentedTaskSet identity_views(const Task& task, std::size_t n) {
  return augment_views(task, AugmentationSpec::none(), n, 0);
}

}  // namespace msd::episodes

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "msd/rng.hpp"
#include "msd/tensor.hpp"

namespace msd::episodes {

enum class Modality { vector, image };

/// Channel split of synthetic vectors: [0, target_dim) carry the class
/// signal, the following noise_dim channels carry none.
struct NoiseLayout {
  std::size_t target_dim = 0;
  std::size_t noise_dim = 0;
};

/// Immutable labeled sample collection.
struct Dataset {
  Shape sample_shape;
  std::vector<double> values;  // samples back to back, row-major
  std::vector<int> labels;
  std::size_t num_classes = 0;
  Modality modality = Modality::vector;
  std::optional<NoiseLayout> noise_layout;
  std::vector<std::string> class_names;
  std::vector<std::string> sources;  // one per sample, for the manifest

  std::size_t size() const { return labels.size(); }
  std::size_t sample_dim() const { return numel(sample_shape); }
  std::vector<std::vector<std::size_t>> indices_by_class() const;
  /// Stacks the given samples into [ids.size(), sample_shape...].
  Tensor gather(std::span<const std::size_t> ids) const;
};

/// Keeps classes [first, first + count), relabeled to [0, count).
Dataset select_classes(const Dataset& data, std::size_t first, std::size_t count);

/// One "path<TAB>class" line per sample.
void write_manifest(const Dataset& data, std::ostream& out);

// ---------------------------------------------------------------------------
// Synthetic target/noise benchmark

struct SyntheticSpec {
  std::size_t num_classes_total = 25;
  std::size_t dim_target = 8;
  std::size_t dim_noise = 32;
  double class_margin = 4.0;
  double noise_scale = 1.0;
  std::size_t samples_per_class = 100;

  void validate() const;
};

/// Unit vectors spread over the sphere (greedy farthest-point selection
/// refined by pairwise repulsion). Deterministic per seed.
std::vector<std::vector<double>> class_directions(std::size_t count, std::size_t dim,
                                                  std::uint64_t seed);

/// Sample = [margin * dir_c + N(0, I_target), noise_scale * N(0, I_noise)].
Dataset generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Episodes

struct Task {
  Tensor support_x;
  std::vector<int> support_y;
  Tensor query_x;
  std::vector<int> query_y;
  std::size_t way = 0;
  std::size_t shot = 0;
  std::size_t query_per_class = 0;
  std::vector<std::size_t> support_ids;  // dataset indices
  std::vector<std::size_t> query_ids;
  Modality modality = Modality::vector;
  std::optional<NoiseLayout> noise_layout;
};

/// N-way K-shot episode: N random classes relabeled 0..N-1 in draw order,
/// K support and `queries` query samples per class drawn without
/// replacement. Support and query rows are grouped by episode label.
Task sample_task(const Dataset& data, std::size_t way, std::size_t shot, std::size_t queries,
                 RngStream& rng);

// ---------------------------------------------------------------------------
// Augmentation

enum class AugKind { none, strong, weak, noise_channel };

std::string to_string(AugKind kind);
AugKind aug_kind_from_string(const std::string& s);

struct AugmentationSpec {
  AugKind kind = AugKind::none;

  // Image pipelines: optional random resized crop (fixed aspect ratio) or
  // center crop, then color jitter, grayscale, gaussian blur, horizontal flip.
  bool random_resize_crop = false;
  double crop_scale_min = 1.0;
  double crop_scale_max = 1.0;
  std::size_t center_crop = 0;  // 0 = no center crop
  double jitter_brightness = 0.0;
  double jitter_contrast = 0.0;
  double jitter_saturation = 0.0;
  double jitter_hue = 0.0;
  double jitter_prob = 0.0;
  double grayscale_prob = 0.0;
  double blur_sigma_mean = 0.0;
  double blur_sigma_variance = 0.0;
  double blur_prob = 0.0;
  double hflip_prob = 0.0;

  // Synthetic vectors: additive N(0, noise_scale^2) on noise channels only.
  double noise_scale = 0.0;

  std::uint64_t stream_id = 0;

  static AugmentationSpec none();
  /// Strong recipe: resized crop scale 0.5-1, jitter (0.8,0.8,0.8,0.2) w.p.
  /// 0.8, grayscale 0.2, blur sigma ~ (0.1, var 2) w.p. 0.5, hflip 0.5.
  static AugmentationSpec strong();
  /// Weak recipe: center crop, jitter (0.4,0.4,0.4,0.1) w.p. 0.8, grayscale
  /// 0.2, blur sigma ~ (0, var 1) w.p. 0.5, hflip 0.5.
  static AugmentationSpec weak(std::size_t crop_size);
  static AugmentationSpec noise_channel(double scale);

  void validate() const;
};

/// Minimum blur sigma after sampling.
inline constexpr double kMinBlurSigma = 0.05;

struct AugmentedTaskSet {
  std::vector<Tensor> views;  // n augmented copies of support_x
  std::vector<int> support_y;
  Tensor query_x;
  std::vector<int> query_y;
};

/// n independently augmented support views sharing the untouched query set.
/// View i draws from derive_seed(stream_seed, {spec.stream_id, i}).
AugmentedTaskSet augment_views(const Task& task, const AugmentationSpec& spec, std::size_t n,
                               std::uint64_t stream_seed);

/// Applies the augmentation pipeline to one sample (image [C,H,W] or vector).
Tensor augment_sample(const Tensor& sample, const AugmentationSpec& spec, Modality modality,
                      const std::optional<NoiseLayout>& layout, RngStream& rng);

/// The same task with a single unaugmented view.
AugmentedTaskSet identity_views(const Task& task, std::size_t n);

// ---------------------------------------------------------------------------
// Image primitives on [C,H,W] tensors with values in [0,1].

namespace image {

Tensor hflip(const Tensor& img);
Tensor grayscale(const Tensor& img);
Tensor gaussian_blur(const Tensor& img, double sigma);
/// Multiplicative brightness/contrast/saturation factors and a hue rotation
/// expressed as a fraction of a full turn.
Tensor color_jitter(const Tensor& img, double brightness, double contrast, double saturation,
                    double hue);
Tensor center_crop(const Tensor& img, std::size_t size);
/// Bilinear resample of the window [top, top+h) x [left, left+w) to out_h x out_w.
Tensor resized_crop(const Tensor& img, std::size_t top, std::size_t left, std::size_t h,
                    std::size_t w, std::size_t out_h, std::size_t out_w);

enum class Op { resize_crop, color_jitter, grayscale, gaussian_blur, hflip, center_crop };

struct Params {
  double scale_min = 0.5, scale_max = 1.0;                         // resize_crop
  double brightness = 0.0, contrast = 0.0, saturation = 0.0, hue = 0.0;  // color_jitter strengths
  double sigma_mean = 0.0, sigma_variance = 0.0;                   // gaussian_blur
  std::size_t crop_size = 0;                                       // center_crop
};

/// Randomized primitive: draws its parameters from `rng` only.
Tensor apply(Op op, const Tensor& img, const Params& params, RngStream& rng);

}  // namespace image

// ---------------------------------------------------------------------------
// P6 PPM ingestion

/// Decodes a binary P6 image with maxval 255 into [3,H,W] scaled to [0,1].
Tensor decode_ppm(std::span<const std::uint8_t> bytes);
Tensor read_ppm(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const Tensor& img);

/// One subdirectory per class (lexicographic order gives the class index),
/// each holding .ppm files of identical extents.
Dataset load_image_folder(const std::filesystem::path& root);

}  // namespace msd::episodes

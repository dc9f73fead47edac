#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <set>
#include <string>
#include <vector>

#include "msd/episodes.hpp"
#include "msd/error.hpp"

using namespace msd;
using namespace msd::episodes;
namespace fs = std::filesystem;

namespace {

// Multinomial logistic regression fit by full-batch gradient descent with
// hand-written gradients; returns held-out accuracy (percent). Even-indexed
// samples of each class train, odd ones test.
double linear_probe_accuracy(const Dataset& data, std::size_t first, std::size_t count) {
  const std::size_t d = count, k = data.num_classes, n = data.size(), stride = data.sample_dim();
  std::vector<double> w((d + 1) * k, 0.0);
  auto feature = [&](std::size_t i, std::size_t j) { return data.values[i * stride + first + j]; };
  std::vector<std::size_t> train, test;
  for (std::size_t i = 0; i < n; ++i) (i % 2 == 0 ? train : test).push_back(i);

  auto scores = [&](std::size_t i) {
    std::vector<double> s(k);
    for (std::size_t c = 0; c < k; ++c) {
      double z = w[d * k + c];
      for (std::size_t j = 0; j < d; ++j) z += feature(i, j) * w[j * k + c];
      s[c] = z;
    }
    return s;
  };
  for (int epoch = 0; epoch < 300; ++epoch) {
    std::vector<double> g(w.size(), 0.0);
    for (std::size_t i : train) {
      auto s = scores(i);
      const double m = *std::max_element(s.begin(), s.end());
      double z = 0.0;
      for (double& v : s) z += (v = std::exp(v - m));
      for (std::size_t c = 0; c < k; ++c) {
        const double r = s[c] / z - (static_cast<int>(c) == data.labels[i] ? 1.0 : 0.0);
        for (std::size_t j = 0; j < d; ++j) g[j * k + c] += r * feature(i, j);
        g[d * k + c] += r;
      }
    }
    for (std::size_t q = 0; q < w.size(); ++q) w[q] -= 0.5 * g[q] / static_cast<double>(train.size());
  }
  std::size_t correct = 0;
  for (std::size_t i : test) {
    const auto s = scores(i);
    correct += static_cast<int>(std::max_element(s.begin(), s.end()) - s.begin()) == data.labels[i];
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(test.size());
}

Dataset synthetic(std::size_t classes, std::size_t per_class, double noise_scale = 1.0) {
  SyntheticSpec spec;
  spec.num_classes_total = classes;
  spec.samples_per_class = per_class;
  spec.noise_scale = noise_scale;
  return generate_synthetic(spec, 1000);
}

Tensor random_image(std::size_t h, std::size_t w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> v(3 * h * w);
  for (double& x : v) x = u(rng);
  return Tensor({3, h, w}, v);
}

double max_abs_dev(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

bool same_values(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::equal(a.values().begin(), a.values().end(), b.values().begin());
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("msd_test_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("synthetic benchmark: target channels separate classes, noise channels do not") {
  const Dataset data = synthetic(20, 100);
  REQUIRE(data.noise_layout.has_value());
  CHECK(data.noise_layout->target_dim == 8);
  CHECK(data.noise_layout->noise_dim == 32);
  CHECK(data.size() == 2000);
  const double target = linear_probe_accuracy(data, 0, 8);
  const double noise = linear_probe_accuracy(data, 8, 32);
  INFO("target probe " << target << "%, noise probe " << noise << "%");
  CHECK(target >= 95.0);
  CHECK(std::abs(noise - 5.0) <= 5.0);
}

TEST_CASE("synthetic: zero noise scale gives zero noise channels; deterministic per seed") {
  const Dataset data = synthetic(5, 10, 0.0);
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (std::size_t j = 8; j < 40; ++j) CHECK(data.values[i * 40 + j] == 0.0);
  }
  const Dataset a = synthetic(5, 10), b = synthetic(5, 10);
  CHECK(a.values == b.values);
  CHECK(a.labels == b.labels);
}

TEST_CASE("sample_task invariants") {
  const Dataset data = synthetic(10, 30);
  for (std::size_t shot : {1u, 5u}) {
    RngStream rng(5);
    for (int rep = 0; rep < 20; ++rep) {
      const Task t = sample_task(data, 5, shot, 15, rng);
      CHECK(t.support_x.shape() == Shape{5 * shot, 40});
      CHECK(t.query_x.shape() == Shape{75, 40});
      std::set<std::size_t> s(t.support_ids.begin(), t.support_ids.end());
      std::set<std::size_t> q(t.query_ids.begin(), t.query_ids.end());
      CHECK(s.size() == 5 * shot);
      CHECK(q.size() == 75);
      for (auto id : q) CHECK(s.count(id) == 0);
      std::vector<int> sc(5, 0), qc(5, 0);
      for (int y : t.support_y) ++sc.at(static_cast<std::size_t>(y));
      for (int y : t.query_y) ++qc.at(static_cast<std::size_t>(y));
      for (int c = 0; c < 5; ++c) {
        CHECK(sc[static_cast<std::size_t>(c)] == static_cast<int>(shot));
        CHECK(qc[static_cast<std::size_t>(c)] == 15);
      }
      // Episode labels map consistently onto dataset classes.
      std::vector<int> cls(5, -1);
      for (std::size_t r = 0; r < t.support_ids.size(); ++r) {
        auto& c = cls[static_cast<std::size_t>(t.support_y[r])];
        const int orig = data.labels[t.support_ids[r]];
        CHECK((c == -1 || c == orig));
        c = orig;
      }
      for (std::size_t r = 0; r < t.query_ids.size(); ++r) {
        CHECK(cls[static_cast<std::size_t>(t.query_y[r])] == data.labels[t.query_ids[r]]);
      }
    }
  }
  RngStream r1(77), r2(77);
  const Task a = sample_task(data, 5, 1, 15, r1), b = sample_task(data, 5, 1, 15, r2);
  CHECK(a.support_ids == b.support_ids);
  CHECK(a.query_ids == b.query_ids);
}

TEST_CASE("sample_task capacity errors") {
  const Dataset data = synthetic(6, 10);
  RngStream rng(1);
  CHECK_THROWS_AS(sample_task(data, 7, 1, 5, rng), CapacityError);
  CHECK_THROWS_AS(sample_task(data, 5, 1, 15, rng), CapacityError);
  try {
    sample_task(data, 5, 5, 6, rng);
    FAIL("expected a capacity error");
  } catch (const CapacityError& e) {
    CHECK(std::string(e.what()).find("class") != std::string::npos);
  }
}

TEST_CASE("augment_views: identity pipeline, query untouched, reproducible") {
  const Dataset data = synthetic(5, 20);
  RngStream rng(3);
  const Task t = sample_task(data, 5, 1, 15, rng);
  const AugmentedTaskSet id = augment_views(t, AugmentationSpec::noise_channel(0.0), 1, 9);
  CHECK(same_values(id.views[0], t.support_x));

  const AugmentedTaskSet a = augment_views(t, AugmentationSpec::noise_channel(1.0), 3, 9);
  const AugmentedTaskSet b = augment_views(t, AugmentationSpec::noise_channel(1.0), 3, 9);
  REQUIRE(a.views.size() == 3);
  CHECK(same_values(a.query_x, t.query_x));
  CHECK(a.query_y == t.query_y);
  CHECK(a.support_y == t.support_y);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(same_values(a.views[i], b.views[i]));
    for (std::size_t r = 0; r < 5; ++r) {
      for (std::size_t j = 0; j < 8; ++j) CHECK(a.views[i][r * 40 + j] == t.support_x[r * 40 + j]);
      bool moved = false;
      for (std::size_t j = 8; j < 40; ++j) moved |= a.views[i][r * 40 + j] != t.support_x[r * 40 + j];
      CHECK(moved);
    }
  }
  CHECK_FALSE(same_values(a.views[0], a.views[1]));
  CHECK_THROWS_AS(augment_views(t, AugmentationSpec::none(), 0, 1), ContractError);
}

TEST_CASE("image augmentation on vector data is a modality error") {
  const Dataset data = synthetic(5, 20);
  RngStream rng(3);
  const Task t = sample_task(data, 5, 1, 15, rng);
  CHECK_THROWS_AS(augment_views(t, AugmentationSpec::strong(), 2, 1), ModalityError);
}

TEST_CASE("augmentation presets") {
  const auto s = AugmentationSpec::strong();
  CHECK(s.jitter_brightness == 0.8);
  CHECK(s.jitter_contrast == 0.8);
  CHECK(s.jitter_saturation == 0.8);
  CHECK(s.jitter_hue == 0.2);
  CHECK(s.jitter_prob == 0.8);
  CHECK(s.grayscale_prob == 0.2);
  CHECK(s.blur_prob == 0.5);
  CHECK(s.blur_sigma_mean == 0.1);
  CHECK(s.blur_sigma_variance == 2.0);
  CHECK(s.hflip_prob == 0.5);
  CHECK(s.random_resize_crop);
  CHECK(s.crop_scale_min == 0.5);
  CHECK(s.crop_scale_max == 1.0);
  const auto w = AugmentationSpec::weak(14);
  CHECK(w.center_crop == 14);
  CHECK(w.jitter_brightness == 0.4);
  CHECK(w.jitter_hue == 0.1);
  CHECK(w.blur_sigma_variance == 1.0);
  auto bad = s;
  bad.hflip_prob = 1.5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("image pipeline with zero probabilities is the identity") {
  AugmentationSpec spec = AugmentationSpec::strong();
  spec.random_resize_crop = false;
  spec.jitter_prob = spec.grayscale_prob = spec.blur_prob = spec.hflip_prob = 0.0;
  const Tensor img = random_image(8, 8, 1);
  RngStream rng(2);
  CHECK(same_values(augment_sample(img, spec, Modality::image, std::nullopt, rng), img));

  // Strong pipeline keeps extents and the [0,1] range.
  const auto strong = AugmentationSpec::strong();
  for (int i = 0; i < 20; ++i) {
    const Tensor out = augment_sample(img, strong, Modality::image, std::nullopt, rng);
    CHECK(out.shape() == img.shape());
    for (double v : out.values()) CHECK((v >= 0.0 && v <= 1.0));
  }
  const auto weak = AugmentationSpec::weak(6);
  const Tensor out = augment_sample(img, weak, Modality::image, std::nullopt, rng);
  CHECK(out.shape() == img.shape());
}

TEST_CASE("image primitives") {
  const Tensor img = random_image(6, 5, 11);
  CHECK(same_values(image::hflip(image::hflip(img)), img));
  CHECK_FALSE(same_values(image::hflip(img), img));

  const Tensor g = image::grayscale(img);
  const Tensor gg = image::grayscale(g);
  CHECK(max_abs_dev(g, gg) < 1e-15);
  for (std::size_t p = 0; p < 30; ++p) {
    CHECK(g[p] == g[30 + p]);
    CHECK(g[p] == g[60 + p]);
  }
  CHECK(g[0] == doctest::Approx(0.299 * img[0] + 0.587 * img[30] + 0.114 * img[60]).epsilon(1e-14));

  image::Params p;
  p.sigma_mean = 0.0;
  p.sigma_variance = 1e-6;
  RngStream rng(4);
  CHECK(max_abs_dev(image::apply(image::Op::gaussian_blur, img, p, rng), img) < 1e-3);
  CHECK_THROWS_AS(image::gaussian_blur(img, 0.0), ContractError);
  // A wide blur of a constant image stays constant.
  const Tensor flat = Tensor::full({3, 5, 5}, 0.3);
  CHECK(max_abs_dev(image::gaussian_blur(flat, 2.0), flat) < 1e-12);

  CHECK_THROWS_AS(image::center_crop(img, 7), ShapeError);
  const Tensor c = image::center_crop(img, 3);
  CHECK(c.shape() == Shape{3, 3, 3});
  CHECK(c[0] == img[1 * 5 + 1]);
  p.crop_size = 9;
  CHECK_THROWS_AS(image::apply(image::Op::center_crop, img, p, rng), ShapeError);
  CHECK_THROWS_AS(image::resized_crop(img, 4, 0, 3, 3, 6, 5), ShapeError);

  // Full-window resample at the same size reproduces the image.
  CHECK(max_abs_dev(image::resized_crop(img, 0, 0, 6, 5, 6, 5), img) < 1e-12);

  // Neutral jitter is the identity; any jitter stays in range.
  CHECK(max_abs_dev(image::color_jitter(img, 1.0, 1.0, 1.0, 0.0), img) < 1e-12);
  const Tensor j = image::color_jitter(img, 1.7, 0.4, 1.5, 0.2);
  for (double v : j.values()) CHECK((v >= 0.0 && v <= 1.0));

  // Randomized primitives draw only from the stream they are given.
  image::Params q;
  q.brightness = q.contrast = q.saturation = 0.5;
  q.hue = 0.1;
  RngStream r1(8), r2(8);
  CHECK(same_values(image::apply(image::Op::color_jitter, img, q, r1), image::apply(image::Op::color_jitter, img, q, r2)));
  const Tensor rc = image::apply(image::Op::resize_crop, img, q, r1);
  CHECK(rc.shape() == img.shape());
}

TEST_CASE("ppm decoding and image folders") {
  TempDir dir("ppm");
  for (const char* cls : {"b_dogs", "a_cats"}) {
    fs::create_directories(dir.path / cls);
    for (int i = 0; i < 3; ++i) {
      write_ppm(dir.path / cls / ("img" + std::to_string(i) + ".ppm"), random_image(4, 4, static_cast<std::uint64_t>(i) + 1));
    }
  }
  fs::create_directories(dir.path / "a_cats" / "not_an_image_dir");
  const Dataset data = load_image_folder(dir.path);
  CHECK(data.size() == 6);
  CHECK(data.num_classes == 2);
  CHECK(data.modality == Modality::image);
  CHECK(data.sample_shape == Shape{3, 4, 4});
  CHECK(data.class_names == std::vector<std::string>{"a_cats", "b_dogs"});
  CHECK(std::set<int>(data.labels.begin(), data.labels.end()) == std::set<int>{0, 1});
  for (double v : data.values) CHECK((v >= 0.0 && v <= 1.0));

  const std::string bytes = std::string("P6\n# comment\n1 1\n255\n") + '\xff' + '\x00' + '\x80';
  const std::vector<std::uint8_t> raw(bytes.begin(), bytes.end());
  const Tensor px = decode_ppm(raw);
  CHECK(px.shape() == Shape{3, 1, 1});
  CHECK(px[0] == 1.0);
  CHECK(px[1] == 0.0);
  CHECK(px[2] == 128.0 / 255.0);

  const std::string bad_max = "P6\n1 1\n65535\n";
  try {
    decode_ppm(std::vector<std::uint8_t>(bad_max.begin(), bad_max.end()));
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.offset() == 7);
  }
  const std::string bad_magic = "P3\n1 1\n255\n";
  CHECK_THROWS_AS(decode_ppm(std::vector<std::uint8_t>(bad_magic.begin(), bad_magic.end())), ParseError);
  const std::string short_px = "P6\n2 2\n255\n\x01\x02";
  try {
    decode_ppm(std::vector<std::uint8_t>(short_px.begin(), short_px.end()));
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.offset() == short_px.size());
  }

  SUBCASE("empty class directory") {
    fs::create_directories(dir.path / "c_empty");
    CHECK_THROWS_AS(load_image_folder(dir.path), CapacityError);
  }
  SUBCASE("ragged extents") {
    write_ppm(dir.path / "b_dogs" / "odd.ppm", random_image(5, 4, 9));
    CHECK_THROWS_AS(load_image_folder(dir.path), ShapeError);
  }
}

TEST_CASE("select_classes relabels and the manifest lists every sample") {
  const Dataset data = synthetic(6, 4);
  const Dataset sub = select_classes(data, 2, 3);
  CHECK(sub.num_classes == 3);
  CHECK(sub.size() == 12);
  for (int y : sub.labels) CHECK((y >= 0 && y < 3));
  CHECK_THROWS_AS(select_classes(data, 4, 3), CapacityError);
  std::ostringstream out;
  write_manifest(sub, out);
  const std::string text = out.str();
  CHECK(std::count(text.begin(), text.end(), '\n') == 12);
}

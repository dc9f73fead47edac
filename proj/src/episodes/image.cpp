#include <algorithm>
#include <cmath>
#include <numbers>

#include "msd/episodes.hpp"
#include "msd/error.hpp"

namespace msd::episodes::image {

namespace {

struct Dims {
  std::size_t c, h, w;
};

Dims dims_of(const Tensor& img, const char* op) {
  if (img.rank() != 3) {
    throw ShapeError(std::string(op) + ": expected [C,H,W], got " + shape_str(img.shape()));
  }
  return {img.dim(0), img.dim(1), img.dim(2)};
}

Dims rgb_dims(const Tensor& img, const char* op) {
  const Dims d = dims_of(img, op);
  if (d.c != 3) {
    throw ShapeError(std::string(op) + ": expects 3 channels, got " + shape_str(img.shape()));
  }
  return d;
}

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

constexpr double kLumaR = 0.299, kLumaG = 0.587, kLumaB = 0.114;

double luma(double r, double g, double b) {
  // Gray pixels map to themselves exactly.
  if (r == g && g == b) {
    return r;
  }
  return kLumaR * r + kLumaG * g + kLumaB * b;
}

}  // namespace

Tensor hflip(const Tensor& img) {
  const Dims d = dims_of(img, "hflip");
  std::vector<double> out(img.size());
  const auto v = img.values();
  for (std::size_t c = 0; c < d.c; ++c) {
    for (std::size_t i = 0; i < d.h; ++i) {
      for (std::size_t j = 0; j < d.w; ++j) {
        out[(c * d.h + i) * d.w + j] = v[(c * d.h + i) * d.w + (d.w - 1 - j)];
      }
    }
  }
  return Tensor(img.shape(), std::move(out));
}

Tensor grayscale(const Tensor& img) {
  const Dims d = rgb_dims(img, "grayscale");
  const std::size_t hw = d.h * d.w;
  const auto v = img.values();
  std::vector<double> out(img.size());
  for (std::size_t p = 0; p < hw; ++p) {
    const double y = clamp01(luma(v[p], v[hw + p], v[2 * hw + p]));
    out[p] = out[hw + p] = out[2 * hw + p] = y;
  }
  return Tensor(img.shape(), std::move(out));
}

Tensor gaussian_blur(const Tensor& img, double sigma) {
  const Dims d = dims_of(img, "gaussian_blur");
  if (!(sigma > 0.0)) {
    throw ContractError("gaussian_blur: sigma must be positive");
  }
  const auto radius = static_cast<std::ptrdiff_t>(
      std::min<double>(std::max(1.0, std::ceil(3.0 * sigma)), static_cast<double>(std::max(d.h, d.w))));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
    const double x = static_cast<double>(k);
    kernel[static_cast<std::size_t>(k + radius)] = std::exp(-x * x / (2.0 * sigma * sigma));
    total += kernel[static_cast<std::size_t>(k + radius)];
  }
  for (double& k : kernel) {
    k /= total;
  }
  const auto v = img.values();
  std::vector<double> tmp(img.size()), out(img.size());
  auto clampi = [](std::ptrdiff_t i, std::size_t n) {
    return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(i, 0, static_cast<std::ptrdiff_t>(n) - 1));
  };
  // Separable pass, clamp-to-edge borders.
  for (std::size_t c = 0; c < d.c; ++c) {
    const std::size_t base = c * d.h * d.w;
    for (std::size_t i = 0; i < d.h; ++i) {
      for (std::size_t j = 0; j < d.w; ++j) {
        double s = 0.0;
        for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
          const std::size_t jj = clampi(static_cast<std::ptrdiff_t>(j) + k, d.w);
          s += kernel[static_cast<std::size_t>(k + radius)] * v[base + i * d.w + jj];
        }
        tmp[base + i * d.w + j] = s;
      }
    }
    for (std::size_t i = 0; i < d.h; ++i) {
      for (std::size_t j = 0; j < d.w; ++j) {
        double s = 0.0;
        for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
          const std::size_t ii = clampi(static_cast<std::ptrdiff_t>(i) + k, d.h);
          s += kernel[static_cast<std::size_t>(k + radius)] * tmp[base + ii * d.w + j];
        }
        out[base + i * d.w + j] = clamp01(s);
      }
    }
  }
  return Tensor(img.shape(), std::move(out));
}

Tensor color_jitter(const Tensor& img, double brightness, double contrast, double saturation,
                    double hue) {
  const Dims d = rgb_dims(img, "color_jitter");
  const std::size_t hw = d.h * d.w;
  std::vector<double> v(img.values().begin(), img.values().end());
  double* r = v.data();
  double* g = v.data() + hw;
  double* b = v.data() + 2 * hw;

  for (double& x : v) {
    x = clamp01(x * brightness);
  }

  double mean_luma = 0.0;
  for (std::size_t p = 0; p < hw; ++p) {
    mean_luma += luma(r[p], g[p], b[p]);
  }
  mean_luma /= static_cast<double>(hw);
  for (double& x : v) {
    x = clamp01((x - mean_luma) * contrast + mean_luma);
  }

  for (std::size_t p = 0; p < hw; ++p) {
    const double y = luma(r[p], g[p], b[p]);
    r[p] = clamp01(y + (r[p] - y) * saturation);
    g[p] = clamp01(y + (g[p] - y) * saturation);
    b[p] = clamp01(y + (b[p] - y) * saturation);
  }

  if (hue != 0.0) {
    // Rotate chroma in YIQ space.
    const double angle = 2.0 * std::numbers::pi * hue;
    const double cs = std::cos(angle), sn = std::sin(angle);
    for (std::size_t p = 0; p < hw; ++p) {
      const double y = 0.299 * r[p] + 0.587 * g[p] + 0.114 * b[p];
      const double i = 0.596 * r[p] - 0.274 * g[p] - 0.322 * b[p];
      const double q = 0.211 * r[p] - 0.523 * g[p] + 0.312 * b[p];
      const double i2 = cs * i - sn * q;
      const double q2 = sn * i + cs * q;
      r[p] = clamp01(y + 0.956 * i2 + 0.621 * q2);
      g[p] = clamp01(y - 0.272 * i2 - 0.647 * q2);
      b[p] = clamp01(y - 1.106 * i2 + 1.703 * q2);
    }
  }
  return Tensor(img.shape(), std::move(v));
}

Tensor resized_crop(const Tensor& img, std::size_t top, std::size_t left, std::size_t h,
                    std::size_t w, std::size_t out_h, std::size_t out_w) {
  const Dims d = dims_of(img, "resized_crop");
  if (h == 0 || w == 0 || top + h > d.h || left + w > d.w || out_h == 0 || out_w == 0) {
    throw ShapeError("resized_crop: window " + std::to_string(h) + "x" + std::to_string(w) + " at (" +
                     std::to_string(top) + "," + std::to_string(left) + ") does not fit " +
                     shape_str(img.shape()));
  }
  const auto v = img.values();
  std::vector<double> out(d.c * out_h * out_w);
  auto coord = [](std::size_t i, std::size_t src, std::size_t dst) {
    const double x = (static_cast<double>(i) + 0.5) * static_cast<double>(src) / static_cast<double>(dst) - 0.5;
    return std::clamp(x, 0.0, static_cast<double>(src - 1));
  };
  for (std::size_t i = 0; i < out_h; ++i) {
    const double y = coord(i, h, out_h);
    const auto y0 = static_cast<std::size_t>(std::floor(y));
    const std::size_t y1 = std::min(y0 + 1, h - 1);
    const double fy = y - static_cast<double>(y0);
    for (std::size_t j = 0; j < out_w; ++j) {
      const double x = coord(j, w, out_w);
      const auto x0 = static_cast<std::size_t>(std::floor(x));
      const std::size_t x1 = std::min(x0 + 1, w - 1);
      const double fx = x - static_cast<double>(x0);
      for (std::size_t c = 0; c < d.c; ++c) {
        auto at = [&](std::size_t yy, std::size_t xx) {
          return v[(c * d.h + top + yy) * d.w + left + xx];
        };
        const double top_row = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
        const double bottom_row = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
        out[(c * out_h + i) * out_w + j] = clamp01(top_row * (1.0 - fy) + bottom_row * fy);
      }
    }
  }
  return Tensor({d.c, out_h, out_w}, std::move(out));
}

Tensor center_crop(const Tensor& img, std::size_t size) {
  const Dims d = dims_of(img, "center_crop");
  if (size == 0 || size > d.h || size > d.w) {
    throw ShapeError("center_crop: crop " + std::to_string(size) + " larger than image " +
                     shape_str(img.shape()));
  }
  const std::size_t top = (d.h - size) / 2, left = (d.w - size) / 2;
  std::vector<double> out(d.c * size * size);
  const auto v = img.values();
  for (std::size_t c = 0; c < d.c; ++c) {
    for (std::size_t i = 0; i < size; ++i) {
      for (std::size_t j = 0; j < size; ++j) {
        out[(c * size + i) * size + j] = v[(c * d.h + top + i) * d.w + left + j];
      }
    }
  }
  return Tensor({d.c, size, size}, std::move(out));
}

Tensor apply(Op op, const Tensor& img, const Params& params, RngStream& rng) {
  auto factor = [&](double strength) {
    return std::uniform_real_distribution<double>(std::max(0.0, 1.0 - strength), 1.0 + strength)(rng);
  };
  switch (op) {
    case Op::resize_crop: {
      const Dims d = dims_of(img, "resize_crop");
      if (!(params.scale_min > 0.0) || params.scale_min > params.scale_max || params.scale_max > 1.0) {
        throw ContractError("resize_crop: scale range must satisfy 0 < min <= max <= 1");
      }
      const double area = std::uniform_real_distribution<double>(params.scale_min, params.scale_max)(rng);
      const double side = std::sqrt(area);
      const auto h = std::clamp<std::size_t>(
          static_cast<std::size_t>(std::lround(side * static_cast<double>(d.h))), 1, d.h);
      const auto w = std::clamp<std::size_t>(
          static_cast<std::size_t>(std::lround(side * static_cast<double>(d.w))), 1, d.w);
      const std::size_t top = std::uniform_int_distribution<std::size_t>(0, d.h - h)(rng);
      const std::size_t left = std::uniform_int_distribution<std::size_t>(0, d.w - w)(rng);
      return resized_crop(img, top, left, h, w, d.h, d.w);
    }
    case Op::color_jitter: {
      const double b = factor(params.brightness);
      const double c = factor(params.contrast);
      const double s = factor(params.saturation);
      const double h = std::uniform_real_distribution<double>(-params.hue, params.hue)(rng);
      return color_jitter(img, b, c, s, h);
    }
    case Op::grayscale:
      return grayscale(img);
    case Op::gaussian_blur: {
      std::normal_distribution<double> draw(params.sigma_mean, std::sqrt(params.sigma_variance));
      const double sigma = std::max(kMinBlurSigma, params.sigma_variance > 0.0 ? draw(rng) : params.sigma_mean);
      return gaussian_blur(img, sigma);
    }
    case Op::hflip:
      return hflip(img);
    case Op::center_crop:
      return center_crop(img, params.crop_size);
  }
  throw ContractError("image::apply: unknown op");
}

}  // namespace msd::episodes::image

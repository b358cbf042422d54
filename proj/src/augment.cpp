// Copyright (c) 2026, The HPT Lab Authors
// SPDX-License-Identifier: Apache-2.0
#include "hpt/augment.hpp"

#include <algorithm>
#include <cmath>

#include "hpt/error.hpp"
#include "hpt/rng.hpp"

namespace hpt {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};

constexpr double kLuma[3] = {0.299, 0.587, 0.114};
constexpr int kCropAttempts = 10;

double luma(const Image& img, std::size_t y, std::size_t x) {
  return kLuma[0] * img.at(0, y, x) + kLuma[1] * img.at(1, y, x) + kLuma[2] * img.at(2, y, x);
}

void clamp01(Image& img) {
  for (auto& v : img.pixels) v = std::clamp(v, 0.0, 1.0);
}

Image blend(const Image& a, const Image& b, double factor) {
  // factor * a + (1 - factor) * b
  Image out = a;
  for (std::size_t i = 0; i < out.pixels.size(); ++i)
    out.pixels[i] = std::clamp(factor * a.pixels[i] + (1.0 - factor) * b.pixels[i], 0.0, 1.0);
  return out;
}

Image apply_crop(const Image& img, const RandomResizedCrop& p, Rng& rng) {
  const double H = static_cast<double>(img.height), W = static_cast<double>(img.width);
  const double area = H * W;
  const double log_lo = std::log(p.ratio_min), log_hi = std::log(p.ratio_max);
  double top = 0, left = 0, ch = H, cw = W;
  bool found = false;
  for (int attempt = 0; attempt < kCropAttempts; ++attempt) {
    const double u_scale = rng.uniform();
    const double u_ratio = rng.uniform();
    const double u_top = rng.uniform();
    const double u_left = rng.uniform();
    if (found) continue;
    const double target = area * (p.scale_min + (p.scale_max - p.scale_min) * u_scale);
    const double ratio = std::exp(log_lo + (log_hi - log_lo) * u_ratio);
    const double w = std::round(std::sqrt(target * ratio));
    const double h = std::round(std::sqrt(target / ratio));
    if (w > 0 && h > 0 && w <= W && h <= H) {
      top = std::floor(u_top * (H - h + 1));
      left = std::floor(u_left * (W - w + 1));
      ch = h;
      cw = w;
      found = true;
    }
  }
  if (!found) {
    // Central crop clamped to the ratio range.
    const double in_ratio = W / H;
    if (in_ratio < p.ratio_min) {
      cw = W;
      ch = std::round(W / p.ratio_min);
    } else if (in_ratio > p.ratio_max) {
      ch = H;
      cw = std::round(H * p.ratio_max);
    }
    top = std::floor((H - ch) / 2);
    left = std::floor((W - cw) / 2);
  }
  return resize_crop(img, top, left, ch, cw, p.out_size, p.out_size);
}

Image apply_jitter(const Image& img, const ColorJitter& p, double fb, double fc, double fs, double hue) {
  Image out = img;
  if (p.brightness > 0) {
    for (auto& v : out.pixels) v = std::clamp(v * fb, 0.0, 1.0);
  }
  if (p.contrast > 0) {
    double m = 0.0;
    for (std::size_t y = 0; y < out.height; ++y)
      for (std::size_t x = 0; x < out.width; ++x) m += luma(out, y, x);
    m /= static_cast<double>(out.height * out.width);
    Image gray(out.height, out.width, m);
    out = blend(out, gray, fc);
  }
  if (p.saturation > 0) out = blend(out, to_grayscale(out), fs);
  if (p.hue > 0) out = adjust_hue(out, hue);
  return out;
}

}  // namespace

std::string Transform::name() const {
  return std::visit(overloaded{[](const RandomResizedCrop&) { return std::string("RandomResizedCrop"); },
                               [](const ColorJitter&) { return std::string("ColorJitter"); },
                               [](const Grayscale&) { return std::string("Grayscale"); },
                               [](const GaussianBlur&) { return std::string("GaussianBlur"); },
                               [](const RandomHorizontalFlip&) { return std::string("RandomHorizontalFlip"); }},
                    op);
}

void Policy::validate() const {
  if (transforms.empty() || !std::holds_alternative<RandomResizedCrop>(transforms.front().op))
    throw ConfigError("augmentation policy must start with RandomResizedCrop");
  if (transforms.front().probability != 1.0) throw ConfigError("RandomResizedCrop must have probability 1");
  for (const auto& t : transforms)
    if (!(t.probability >= 0.0 && t.probability <= 1.0))
      throw ConfigError("transform " + t.name() + " has probability outside [0, 1]");
  for (std::size_t i = 1; i < transforms.size(); ++i)
    if (std::holds_alternative<RandomResizedCrop>(transforms[i].op))
      throw ConfigError("RandomResizedCrop may appear only once");
}

std::size_t Policy::output_size() const {
  validate();
  return std::get<RandomResizedCrop>(transforms.front().op).out_size;
}

std::vector<std::string> Policy::names() const {
  std::vector<std::string> out;
  for (const auto& t : transforms) out.push_back(t.name());
  return out;
}

Policy default_policy(std::size_t input_size) {
  RandomResizedCrop crop;
  crop.out_size = input_size;
  return Policy{{
      {crop, 1.0},
      {ColorJitter{}, 0.8},
      {Grayscale{}, 0.2},
      {GaussianBlur{}, 0.5},
      {RandomHorizontalFlip{}, 0.5},
  }};
}

Policy ablate(const Policy& policy, const std::vector<std::string>& remove) {
  const auto& known = transform_names();
  for (const auto& name : remove) {
    if (std::find(known.begin(), known.end(), name) == known.end())
      throw ConfigError("unknown transform '" + name + "'");
    if (name == "RandomResizedCrop") throw ConfigError("RandomResizedCrop cannot be removed");
  }
  Policy out;
  for (const auto& t : policy.transforms)
    if (std::find(remove.begin(), remove.end(), t.name()) == remove.end()) out.transforms.push_back(t);
  return out;
}

std::uint64_t view_stream(std::uint64_t seed, std::uint64_t stage, std::uint64_t step, std::uint64_t example,
                          std::uint64_t view) {
  return derive_seed(seed, {0x76696577, stage, step, example, view});
}

Image sample_view(const Image& image, const Policy& policy, std::uint64_t stream_seed) {
  policy.validate();
  Image img = image;
  for (const auto& t : policy.transforms) {
    Rng rng(derive_seed(stream_seed, {fnv1a64(t.name())}));
    const double gate = rng.uniform();
    const bool fire = gate < t.probability;
    std::visit(overloaded{
                   [&](const RandomResizedCrop& p) { img = apply_crop(img, p, rng); },
                   [&](const ColorJitter& p) {
                     const double fb = rng.uniform(std::max(0.0, 1.0 - p.brightness), 1.0 + p.brightness);
                     const double fc = rng.uniform(std::max(0.0, 1.0 - p.contrast), 1.0 + p.contrast);
                     const double fs = rng.uniform(std::max(0.0, 1.0 - p.saturation), 1.0 + p.saturation);
                     const double hue = rng.uniform(-p.hue, p.hue);
                     if (fire) img = apply_jitter(img, p, fb, fc, fs, hue);
                   },
                   [&](const Grayscale&) {
                     if (fire) img = to_grayscale(img);
                   },
                   [&](const GaussianBlur& p) {
                     const double sigma = rng.uniform(p.sigma_min, p.sigma_max);
                     if (fire) img = gaussian_blur(img, sigma);
                   },
                   [&](const RandomHorizontalFlip&) {
                     if (fire) img = hflip(img);
                   },
               },
               t.op);
  }
  clamp01(img);
  return img;
}

Image to_grayscale(const Image& img) {
  Image out(img.height, img.width);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x) {
      const double l = luma(img, y, x);
      for (std::size_t c = 0; c < 3; ++c) out.at(c, y, x) = l;
    }
  return out;
}

Image hflip(const Image& img) {
  Image out(img.height, img.width);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < img.height; ++y)
      for (std::size_t x = 0; x < img.width; ++x) out.at(c, y, x) = img.at(c, y, img.width - 1 - x);
  return out;
}

Image gaussian_blur(const Image& img, double sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    total += k[i + radius];
  }
  for (auto& v : k) v /= total;
  const int H = static_cast<int>(img.height), W = static_cast<int>(img.width);
  Image tmp(img.height, img.width), out(img.height, img.width);
  for (std::size_t c = 0; c < 3; ++c) {
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        double s = 0.0;
        for (int i = -radius; i <= radius; ++i) s += k[i + radius] * img.at(c, y, std::clamp(x + i, 0, W - 1));
        tmp.at(c, y, x) = s;
      }
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        double s = 0.0;
        for (int i = -radius; i <= radius; ++i) s += k[i + radius] * tmp.at(c, std::clamp(y + i, 0, H - 1), x);
        out.at(c, y, x) = s;
      }
  }
  return out;
}

Image adjust_hue(const Image& img, double shift) {
  Image out(img.height, img.width);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x) {
      const double r = img.at(0, y, x), g = img.at(1, y, x), b = img.at(2, y, x);
      const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
      const double delta = mx - mn;
      double h = 0.0;
      if (delta > 0) {
        if (mx == r)
          h = std::fmod((g - b) / delta, 6.0);
        else if (mx == g)
          h = (b - r) / delta + 2.0;
        else
          h = (r - g) / delta + 4.0;
        h /= 6.0;
      }
      const double s = mx > 0 ? delta / mx : 0.0;
      const double v = mx;
      h = h + shift;
      h -= std::floor(h);
      const double hh = h * 6.0;
      const int sector = static_cast<int>(hh) % 6;
      const double f = hh - std::floor(hh);
      const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
      double rr, gg, bb;
      switch (sector) {
        case 0: rr = v, gg = t, bb = p; break;
        case 1: rr = q, gg = v, bb = p; break;
        case 2: rr = p, gg = v, bb = t; break;
        case 3: rr = p, gg = q, bb = v; break;
        case 4: rr = t, gg = p, bb = v; break;
        default: rr = v, gg = p, bb = q; break;
      }
      out.at(0, y, x) = rr;
      out.at(1, y, x) = gg;
      out.at(2, y, x) = bb;
    }
  return out;
}

}  // namespace hpt

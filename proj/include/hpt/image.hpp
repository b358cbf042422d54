// Copyright (c) 2026, The HPT Lab Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

#include "hpt/tensor.hpp"

namespace hpt {

/// Planar RGB image, values in [0, 1], layout 3 x height x width.
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w, double fill = 0.0) : height(h), width(w), pixels(3 * h * w, fill) {}

  double& at(std::size_t c, std::size_t y, std::size_t x) { return pixels[(c * height + y) * width + x]; }
  double at(std::size_t c, std::size_t y, std::size_t x) const { return pixels[(c * height + y) * width + x]; }

  friend bool operator==(const Image&, const Image&) = default;
};

/// Bilinear resample of the window [top, top + crop_h) x [left, left + crop_w)
/// to out_h x out_w (half-pixel centers, edge clamped).
Image resize_crop(const Image& src, double top, double left, double crop_h, double crop_w, std::size_t out_h,
                  std::size_t out_w);

Image resize(const Image& src, std::size_t out_h, std::size_t out_w);

/// Evaluation preprocessing: resize so the long edge is round(1.14 * size),
/// then take the central size x size window.
Image eval_preprocess(const Image& src, std::size_t size);

/// Stacks equally sized images into N x 3 x H x W.
Tensor stack_images(const std::vector<const Image*>& images);

/// Binary PPM (P6, maxval 255). Values are decoded by /255.
Image read_ppm(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const Image& img);

}  // namespace hpt

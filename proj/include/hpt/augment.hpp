// Copyright (c) 2026, The HPT Lab Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "hpt/image.hpp"

namespace hpt {

struct RandomResizedCrop {
  double scale_min = 0.2;
  double scale_max = 1.0;
  double ratio_min = 3.0 / 4.0;
  double ratio_max = 4.0 / 3.0;
  std::size_t out_size = 32;
  friend bool operator==(const RandomResizedCrop&, const RandomResizedCrop&) = default;
};

struct ColorJitter {
  double brightness = 0.4;
  double contrast = 0.4;
  double saturation = 0.4;
  double hue = 0.1;
  friend bool operator==(const ColorJitter&, const ColorJitter&) = default;
};

struct Grayscale {
  friend bool operator==(const Grayscale&, const Grayscale&) = default;
};

struct GaussianBlur {
  double sigma_min = 0.1;
  double sigma_max = 2.0;
  friend bool operator==(const GaussianBlur&, const GaussianBlur&) = default;
};

struct RandomHorizontalFlip {
  friend bool operator==(const RandomHorizontalFlip&, const RandomHorizontalFlip&) = default;
};

struct Transform {
  std::variant<RandomResizedCrop, ColorJitter, Grayscale, GaussianBlur, RandomHorizontalFlip> op;
  double probability = 1.0;

  std::string name() const;
  friend bool operator==(const Transform&, const Transform&) = default;
};

/// Ordered augmentation list. The crop is always present and first.
struct Policy {
  std::vector<Transform> transforms;

  void validate() const;
  std::size_t output_size() const;
  std::vector<std::string> names() const;
  friend bool operator==(const Policy&, const Policy&) = default;
};

inline const std::vector<std::string>& transform_names() {
  static const std::vector<std::string> names{"RandomResizedCrop", "ColorJitter", "Grayscale", "GaussianBlur",
                                              "RandomHorizontalFlip"};
  return names;
}

/// Crop(0.2-1.0), ColorJitter(0.4, 0.4, 0.4, 0.1; p 0.8), Grayscale(p 0.2),
/// GaussianBlur(sigma 0.1-2.0; p 0.5), HorizontalFlip(p 0.5).
Policy default_policy(std::size_t input_size);

/// Removes the named transforms, keeping order. Unknown names and the crop
/// are rejected with ConfigError.
Policy ablate(const Policy& policy, const std::vector<std::string>& remove);

/// Applies the policy in order. Every transform draws from its own substream
/// keyed by (stream_seed, transform name) and consumes a fixed number of
/// draws whether or not it fires, so removing one transform leaves the draws
/// of the others unchanged. Output is clamped to [0, 1].
Image sample_view(const Image& image, const Policy& policy, std::uint64_t stream_seed);

/// Seed of the view stream for one example of one training step.
std::uint64_t view_stream(std::uint64_t seed, std::uint64_t stage, std::uint64_t step, std::uint64_t example,
                          std::uint64_t view);

// Individual image operations, exposed for tests.
Image to_grayscale(const Image& img);
Image hflip(const Image& img);
Image gaussian_blur(const Image& img, double sigma);
Image adjust_hue(const Image& img, double shift);

}  // namespace hpt

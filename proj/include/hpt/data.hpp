// Copyright (c) 2026, The HPT Lab Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include "hpt/image.hpp"

namespace hpt {

enum class Split { train, val, test };

std::string to_string(Split s);
Split split_from_string(const std::string& s);

struct Record {
  std::string id;
  /// Image file (relative paths resolve against the manifest directory) or
  /// the seed of a synthetic image.
  std::variant<std::filesystem::path, std::uint64_t> source;
  Split split = Split::train;
  std::vector<std::size_t> labels;

  friend bool operator==(const Record&, const Record&) = default;
};

struct Manifest {
  std::vector<Record> records;
  std::size_t class_count = 0;
  bool multi_label = false;

  /// Throws DuplicateIdError / LabelRangeError / DataError.
  void validate() const;
  std::vector<std::size_t> indices(Split s) const;
  std::size_t count(Split s) const { return indices(s).size(); }

  friend bool operator==(const Manifest&, const Manifest&) = default;
};

/// CSV with header `id,path,split,labels`; labels are `;`-separated class
/// indices and synthetic rows use `synthetic:<seed>`.
Manifest load_manifest(const std::filesystem::path& path, std::size_t class_count, bool multi_label = false);
void save_manifest(const Manifest& m, const std::filesystem::path& path);

enum class ShapeFamily { blobs, strokes, gratings };

std::string to_string(ShapeFamily f);
ShapeFamily shape_family_from_string(const std::string& s);

/// Target per-channel mean and variance of rendered images.
struct Palette {
  std::array<double, 3> mean{0.5, 0.5, 0.5};
  std::array<double, 3> var{0.04, 0.04, 0.04};
  friend bool operator==(const Palette&, const Palette&) = default;
};

/// Style of one synthetic domain. Classes are distinguished by shape
/// (blob count, stroke crossing angle, grating frequency); position, scale,
/// phase, contrast and noise are nuisance variables.
struct DomainSpec {
  std::string name = "domain";
  Palette palette;
  ShapeFamily shape_family = ShapeFamily::blobs;
  double noise_level = 0.05;
  std::size_t class_count = 4;
  std::size_t image_size = 32;
  /// Half-width of the uniform per-image shift added to each palette channel.
  double color_shift = 0.04;

  void validate() const;
  friend bool operator==(const DomainSpec&, const DomainSpec&) = default;
};

struct SplitFractions {
  double train = 1.0;
  double val = 0.0;
  double test = 0.0;
};

/// Manifest plus decoded images, aligned index for index with the records.
struct Dataset {
  Manifest manifest;
  std::vector<Image> images;

  const Image& image(std::size_t record_index) const { return images.at(record_index); }
  std::size_t size() const { return images.size(); }
};

/// Pure function of (spec, label, record seed).
Image render_synthetic(const DomainSpec& spec, std::size_t label, std::uint64_t record_seed);

/// n labeled images; record i has class i mod class_count, so every class
/// appears. Splits are assigned per class in the given proportions.
Dataset gen_synthetic(const DomainSpec& spec, std::size_t n, std::uint64_t seed, SplitFractions splits = {});

/// Decodes every record. Synthetic records need the domain that made them.
Dataset load_dataset(const Manifest& m, const std::filesystem::path& base_dir, const DomainSpec* domain = nullptr);

/// Writes PPM files plus manifest.csv into dir.
void export_dataset(const Dataset& ds, const std::filesystem::path& dir);

/// Keeps ceil(f |train|) uniformly chosen train records, topped up so that
/// every class present in train stays present; val and test are untouched.
Manifest subsample_fraction(const Manifest& m, double f, std::uint64_t seed);

/// n train ids drawn uniformly without class balancing, with missing classes
/// swapped in for random surplus picks. Sorted. Throws InfeasibleBudgetError.
std::vector<std::string> label_budget(const Manifest& m, std::size_t n, std::uint64_t seed);

/// Records (and images) of ds whose ids appear in keep, in ds order.
Dataset restrict_to(const Dataset& ds, const Manifest& keep);

/// Concatenation; ids must stay unique. class_count is the maximum.
Dataset merge(const std::vector<Dataset>& parts);

/// Stable digest of the manifest and pixel data.
std::uint64_t dataset_hash(const Dataset& ds);

}  // namespace hpt

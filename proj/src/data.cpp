// Copyright (c) 2026, The HPT Lab Authors
// SPDX-License-Identifier: Apache-2.0
#include "hpt/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

#include "hpt/error.hpp"
#include "hpt/rng.hpp"

namespace hpt {

std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "train";
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw SplitTokenError("unknown split token '" + s + "'");
}

std::string to_string(ShapeFamily f) {
  switch (f) {
    case ShapeFamily::blobs: return "blobs";
    case ShapeFamily::strokes: return "strokes";
    case ShapeFamily::gratings: return "gratings";
  }
  return "blobs";
}

ShapeFamily shape_family_from_string(const std::string& s) {
  if (s == "blobs") return ShapeFamily::blobs;
  if (s == "strokes") return ShapeFamily::strokes;
  if (s == "gratings") return ShapeFamily::gratings;
  throw ConfigError("unknown shape family '" + s + "'");
}

// ---------------------------------------------------------------------------
// Manifest

void Manifest::validate() const {
  if (class_count == 0) throw DataError("manifest: class_count must be positive");
  std::set<std::string> seen;
  for (const auto& r : records) {
    if (!seen.insert(r.id).second) throw DuplicateIdError("duplicate record id '" + r.id + "'");
    if (r.labels.empty()) throw LabelRangeError("record '" + r.id + "' has no labels");
    if (!multi_label && r.labels.size() != 1)
      throw LabelRangeError("record '" + r.id + "' has several labels in a single-label dataset");
    for (auto l : r.labels)
      if (l >= class_count)
        throw LabelRangeError("record '" + r.id + "': label " + std::to_string(l) + " outside [0, " +
                              std::to_string(class_count) + ")");
  }
}

std::vector<std::size_t> Manifest::indices(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < records.size(); ++i)
    if (records[i].split == s) out.push_back(i);
  return out;
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur.push_back('"');
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

std::string trim(std::string s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ' || s.back() == '\t')) s.pop_back();
  std::size_t i = 0;
  while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
  return s.substr(i);
}

constexpr std::string_view kSyntheticPrefix = "synthetic:";

}  // namespace

Manifest load_manifest(const std::filesystem::path& path, std::size_t class_count, bool multi_label) {
  std::ifstream in(path);
  if (!in) throw MissingFileError("manifest not found: " + path.string());
  Manifest m;
  m.class_count = class_count;
  m.multi_label = multi_label;
  std::string line;
  if (!std::getline(in, line) || trim(line) != "id,path,split,labels")
    throw DataError(path.string() + ": header must be 'id,path,split,labels'");
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    auto f = split_csv(trim(line));
    if (f.size() != 4)
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected 4 fields, got " +
                      std::to_string(f.size()));
    Record r;
    r.id = trim(f[0]);
    const std::string src = trim(f[1]);
    if (src.rfind(kSyntheticPrefix, 0) == 0) {
      try {
        r.source = static_cast<std::uint64_t>(std::stoull(src.substr(kSyntheticPrefix.size())));
      } catch (const std::exception&) {
        throw DataError(path.string() + ":" + std::to_string(lineno) + ": bad synthetic seed '" + src + "'");
      }
    } else {
      r.source = std::filesystem::path(src);
    }
    r.split = split_from_string(trim(f[2]));
    std::stringstream ls(trim(f[3]));
    std::string tok;
    while (std::getline(ls, tok, ';')) {
      tok = trim(tok);
      if (tok.empty()) continue;
      std::size_t used = 0;
      long long v = -1;
      try {
        v = std::stoll(tok, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != tok.size() || v < 0)
        throw LabelRangeError(path.string() + ":" + std::to_string(lineno) + ": bad label '" + tok + "'");
      r.labels.push_back(static_cast<std::size_t>(v));
    }
    m.records.push_back(std::move(r));
  }
  m.validate();
  return m;
}

void save_manifest(const Manifest& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write manifest " + path.string());
  out << "id,path,split,labels\n";
  for (const auto& r : m.records) {
    out << r.id << ",";
    if (const auto* seed = std::get_if<std::uint64_t>(&r.source))
      out << kSyntheticPrefix << *seed;
    else
      out << std::get<std::filesystem::path>(r.source).generic_string();
    out << "," << to_string(r.split) << ",";
    for (std::size_t i = 0; i < r.labels.size(); ++i) out << (i ? ";" : "") << r.labels[i];
    out << "\n";
  }
}

// ---------------------------------------------------------------------------
// Synthetic domains

void DomainSpec::validate() const {
  if (class_count < 2) throw ConfigError("domain '" + name + "': class_count must be >= 2");
  if (!(noise_level >= 0.0)) throw ConfigError("domain '" + name + "': noise_level must be >= 0");
  if (image_size < 4) throw ConfigError("domain '" + name + "': image_size must be >= 4");
  if (!(color_shift >= 0.0)) throw ConfigError("domain '" + name + "': color_shift must be >= 0");
  for (double v : palette.var)
    if (!(v >= 0.0)) throw ConfigError("domain '" + name + "': palette variances must be >= 0");
}

namespace {

std::vector<double> shape_mask(const DomainSpec& spec, std::size_t label, Rng& rng) {
  const std::size_t S = spec.image_size;
  const double s = static_cast<double>(S);
  const double C = static_cast<double>(spec.class_count);
  std::vector<double> m(S * S, 0.0);
  auto coord = [&](std::size_t i) { return static_cast<double>(i) + 0.5; };

  switch (spec.shape_family) {
    case ShapeFamily::blobs: {
      // Class c shows c + 1 blobs.
      const std::size_t count = label + 1;
      for (std::size_t b = 0; b < count; ++b) {
        const double cy = s * rng.uniform(0.18, 0.82);
        const double cx = s * rng.uniform(0.18, 0.82);
        const double r = s * rng.uniform(0.05, 0.09);
        for (std::size_t y = 0; y < S; ++y)
          for (std::size_t x = 0; x < S; ++x) {
            const double d2 = (coord(y) - cy) * (coord(y) - cy) + (coord(x) - cx) * (coord(x) - cx);
            m[y * S + x] = std::max(m[y * S + x], std::exp(-0.5 * d2 / (r * r)));
          }
      }
      break;
    }
    case ShapeFamily::strokes: {
      // Class c: two strokes crossing at +-theta_c about the horizontal, so
      // the shape is mirror symmetric and a horizontal flip keeps the class.
      const double theta =
          0.5 * std::numbers::pi * (static_cast<double>(label) + 0.5 + rng.uniform(-0.15, 0.15)) / C;
      const double cy = s * rng.uniform(0.35, 0.65), cx = s * rng.uniform(0.35, 0.65);
      const double half_len = s * rng.uniform(0.25, 0.4);
      const double width = s * rng.uniform(0.04, 0.06);
      for (int k = -1; k <= 1; k += 2) {
        const double dy = k * std::sin(theta), dx = std::cos(theta);
        for (std::size_t y = 0; y < S; ++y)
          for (std::size_t x = 0; x < S; ++x) {
            const double ry = coord(y) - cy, rx = coord(x) - cx;
            const double along = rx * dx + ry * dy;
            const double across = -rx * dy + ry * dx;
            const double over = std::max(0.0, std::abs(along) - half_len);
            const double d2 = across * across + over * over;
            m[y * S + x] = std::max(m[y * S + x], std::exp(-0.5 * d2 / (width * width)));
          }
      }
      break;
    }
    case ShapeFamily::gratings: {
      // Class c: c-th spatial frequency under a Gaussian window.
      const double cycles = 1.5 + 1.25 * static_cast<double>(label) + rng.uniform(-0.2, 0.2);
      const double theta = rng.uniform(0.0, std::numbers::pi);
      const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
      const double cy = s * rng.uniform(0.35, 0.65), cx = s * rng.uniform(0.35, 0.65);
      const double env = s * rng.uniform(0.25, 0.35);
      for (std::size_t y = 0; y < S; ++y)
        for (std::size_t x = 0; x < S; ++x) {
          const double ry = coord(y) - cy, rx = coord(x) - cx;
          const double u = (rx * std::cos(theta) + ry * std::sin(theta)) / s;
          const double w = std::exp(-0.5 * (rx * rx + ry * ry) / (env * env));
          m[y * S + x] = 0.5 + 0.5 * w * std::sin(2.0 * std::numbers::pi * cycles * u + phase);
        }
      break;
    }
  }
  return m;
}

}  // namespace

Image render_synthetic(const DomainSpec& spec, std::size_t label, std::uint64_t record_seed) {
  spec.validate();
  if (label >= spec.class_count) throw LabelRangeError("render_synthetic: label out of range");
  Rng rng(record_seed);
  std::vector<double> m = shape_mask(spec, label, rng);
  const std::size_t S = spec.image_size;
  const double n = static_cast<double>(S * S);
  double mu = 0.0;
  for (double v : m) mu += v;
  mu /= n;
  double var = 0.0;
  for (double v : m) var += (v - mu) * (v - mu);
  const double sd = std::sqrt(var / n);
  const double inv = sd > 1e-12 ? 1.0 / sd : 0.0;

  const double contrast = rng.uniform(0.7, 1.3);
  std::array<double, 3> shift;
  for (auto& v : shift) v = rng.uniform(-spec.color_shift, spec.color_shift);
  Image img(S, S);
  for (std::size_t c = 0; c < 3; ++c) {
    const double amp = std::sqrt(spec.palette.var[c]) * contrast;
    for (std::size_t i = 0; i < S * S; ++i) {
      const double noise = spec.noise_level > 0 ? spec.noise_level * rng.normal() : 0.0;
      img.pixels[c * S * S + i] =
          std::clamp(spec.palette.mean[c] + shift[c] + amp * (m[i] - mu) * inv + noise, 0.0, 1.0);
    }
  }
  return img;
}

Dataset gen_synthetic(const DomainSpec& spec, std::size_t n, std::uint64_t seed, SplitFractions splits) {
  spec.validate();
  if (n < spec.class_count)
    throw ContractError("gen_synthetic: n = " + std::to_string(n) + " is below class_count " +
                        std::to_string(spec.class_count));
  const double total = splits.train + splits.val + splits.test;
  if (!(total > 0) || splits.train < 0 || splits.val < 0 || splits.test < 0)
    throw ConfigError("gen_synthetic: split fractions must be non-negative with positive sum");
  Dataset ds;
  ds.manifest.class_count = spec.class_count;
  const std::size_t C = spec.class_count;
  const std::size_t width = std::to_string(n - 1).size();
  for (std::size_t i = 0; i < n; ++i) {
    Record r;
    std::string num = std::to_string(i);
    r.id = spec.name + "-" + std::string(width - num.size(), '0') + num;
    const std::uint64_t rs = derive_seed(seed, {fnv1a64(spec.name), i});
    r.source = rs;
    const std::size_t label = i % C;
    r.labels = {label};
    const std::size_t per_class = n / C + (label < n % C ? 1 : 0);
    const double pos = (static_cast<double>(i / C) + 0.5) / static_cast<double>(per_class);
    if (pos < splits.train / total)
      r.split = Split::train;
    else if (pos < (splits.train + splits.val) / total)
      r.split = Split::val;
    else
      r.split = Split::test;
    ds.images.push_back(render_synthetic(spec, label, rs));
    ds.manifest.records.push_back(std::move(r));
  }
  ds.manifest.validate();
  return ds;
}

Dataset load_dataset(const Manifest& m, const std::filesystem::path& base_dir, const DomainSpec* domain) {
  m.validate();
  Dataset ds;
  ds.manifest = m;
  for (const auto& r : m.records) {
    if (const auto* seed = std::get_if<std::uint64_t>(&r.source)) {
      if (!domain) throw DataError("record '" + r.id + "' is synthetic but no domain was given");
      ds.images.push_back(render_synthetic(*domain, r.labels.front(), *seed));
    } else {
      auto p = std::get<std::filesystem::path>(r.source);
      if (p.is_relative()) p = base_dir / p;
      ds.images.push_back(read_ppm(p));
    }
  }
  return ds;
}

void export_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "images");
  Manifest out = ds.manifest;
  for (std::size_t i = 0; i < out.records.size(); ++i) {
    const std::filesystem::path rel = std::filesystem::path("images") / (out.records[i].id + ".ppm");
    write_ppm(dir / rel, ds.images[i]);
    out.records[i].source = rel;
  }
  save_manifest(out, dir / "manifest.csv");
}

// ---------------------------------------------------------------------------
// Subsets

Manifest subsample_fraction(const Manifest& m, double f, std::uint64_t seed) {
  if (!(f > 0.0 && f <= 1.0)) throw ContractError("subsample_fraction: f must lie in (0, 1]");
  const auto train = m.indices(Split::train);
  if (train.empty()) return m;
  const std::size_t keep = std::min(
      train.size(), static_cast<std::size_t>(std::ceil(f * static_cast<double>(train.size()) - 1e-9)));
  std::vector<std::size_t> order = train;
  Rng rng(derive_seed(seed, {0x66726163}));
  rng.shuffle(order);
  std::vector<bool> chosen(m.records.size(), false);
  std::set<std::size_t> covered;
  for (std::size_t i = 0; i < keep; ++i) {
    chosen[order[i]] = true;
    for (auto l : m.records[order[i]].labels) covered.insert(l);
  }
  std::set<std::size_t> present;
  for (auto i : train)
    for (auto l : m.records[i].labels) present.insert(l);
  for (auto c : present) {
    if (covered.count(c)) continue;
    for (auto i : order) {
      const auto& labels = m.records[i].labels;
      if (!chosen[i] && std::find(labels.begin(), labels.end(), c) != labels.end()) {
        chosen[i] = true;
        for (auto l : labels) covered.insert(l);
        break;
      }
    }
  }
  Manifest out;
  out.class_count = m.class_count;
  out.multi_label = m.multi_label;
  for (std::size_t i = 0; i < m.records.size(); ++i)
    if (m.records[i].split != Split::train || chosen[i]) out.records.push_back(m.records[i]);
  return out;
}

std::vector<std::string> label_budget(const Manifest& m, std::size_t n, std::uint64_t seed) {
  const auto train = m.indices(Split::train);
  std::set<std::size_t> present;
  for (auto i : train)
    for (auto l : m.records[i].labels) present.insert(l);
  if (n < present.size() || n < m.class_count)
    throw InfeasibleBudgetError("label budget " + std::to_string(n) + " is below the class count " +
                                std::to_string(std::max(present.size(), m.class_count)));
  if (n > train.size())
    throw InfeasibleBudgetError("label budget " + std::to_string(n) + " exceeds the " +
                                std::to_string(train.size()) + " train records");
  std::vector<std::size_t> order = train;
  Rng rng(derive_seed(seed, {0x62756467}));
  rng.shuffle(order);
  std::vector<std::size_t> picked(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n));
  std::vector<std::size_t> pool(order.begin() + static_cast<std::ptrdiff_t>(n), order.end());

  auto class_counts = [&]() {
    std::map<std::size_t, std::size_t> cnt;
    for (auto i : picked)
      for (auto l : m.records[i].labels) ++cnt[l];
    return cnt;
  };
  for (auto c : present) {
    auto cnt = class_counts();
    if (cnt.count(c)) continue;
    auto has_c = [&](std::size_t i) {
      const auto& labels = m.records[i].labels;
      return std::find(labels.begin(), labels.end(), c) != labels.end();
    };
    auto it = std::find_if(pool.begin(), pool.end(), has_c);
    if (it == pool.end()) throw InfeasibleBudgetError("no unpicked record carries class " + std::to_string(c));
    std::vector<std::size_t> surplus;
    for (std::size_t k = 0; k < picked.size(); ++k) {
      bool removable = true;
      for (auto l : m.records[picked[k]].labels) removable = removable && cnt[l] >= 2;
      if (removable) surplus.push_back(k);
    }
    if (surplus.empty()) throw InfeasibleBudgetError("cannot cover class " + std::to_string(c) + " within budget");
    const std::size_t victim = surplus[rng.below(surplus.size())];
    std::swap(picked[victim], *it);
  }
  std::vector<std::string> ids;
  for (auto i : picked) ids.push_back(m.records[i].id);
  std::sort(ids.begin(), ids.end());
  return ids;
}

Dataset restrict_to(const Dataset& ds, const Manifest& keep) {
  std::set<std::string> ids;
  for (const auto& r : keep.records) ids.insert(r.id);
  Dataset out;
  out.manifest.class_count = ds.manifest.class_count;
  out.manifest.multi_label = ds.manifest.multi_label;
  for (std::size_t i = 0; i < ds.manifest.records.size(); ++i)
    if (ids.count(ds.manifest.records[i].id)) {
      out.manifest.records.push_back(ds.manifest.records[i]);
      out.images.push_back(ds.images[i]);
    }
  return out;
}

Dataset merge(const std::vector<Dataset>& parts) {
  Dataset out;
  for (const auto& p : parts) {
    out.manifest.class_count = std::max(out.manifest.class_count, p.manifest.class_count);
    out.manifest.multi_label = out.manifest.multi_label || p.manifest.multi_label;
    out.manifest.records.insert(out.manifest.records.end(), p.manifest.records.begin(), p.manifest.records.end());
    out.images.insert(out.images.end(), p.images.begin(), p.images.end());
  }
  out.manifest.validate();
  return out;
}

std::uint64_t dataset_hash(const Dataset& ds) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < ds.manifest.records.size(); ++i) {
    const auto& r = ds.manifest.records[i];
    h = fnv1a64(r.id, h);
    h = fnv1a64(to_string(r.split), h);
    for (auto l : r.labels) h = fnv1a64(std::to_string(l) + ";", h);
    const auto& px = ds.images[i].pixels;
    h = fnv1a64(std::string_view(reinterpret_cast<const char*>(px.data()), px.size() * sizeof(double)), h);
  }
  return h;
}

}  // namespace hpt

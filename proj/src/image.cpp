// Copyright (c) 2026, The HPT Lab Authors
// SPDX-License-Identifier: Apache-2.0
#include "hpt/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>

#include "hpt/error.hpp"

namespace hpt {

Image resize_crop(const Image& src, double top, double left, double crop_h, double crop_w, std::size_t out_h,
                  std::size_t out_w) {
  Image out(out_h, out_w);
  const double sy = crop_h / static_cast<double>(out_h);
  const double sx = crop_w / static_cast<double>(out_w);
  const double max_y = static_cast<double>(src.height - 1);
  const double max_x = static_cast<double>(src.width - 1);
  for (std::size_t y = 0; y < out_h; ++y) {
    const double fy = std::clamp(top + (static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, max_y);
    const std::size_t y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, src.height - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < out_w; ++x) {
      const double fx = std::clamp(left + (static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, max_x);
      const std::size_t x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, src.width - 1);
      const double wx = fx - static_cast<double>(x0);
      for (std::size_t c = 0; c < 3; ++c) {
        const double top_v = src.at(c, y0, x0) * (1.0 - wx) + src.at(c, y0, x1) * wx;
        const double bot_v = src.at(c, y1, x0) * (1.0 - wx) + src.at(c, y1, x1) * wx;
        out.at(c, y, x) = top_v * (1.0 - wy) + bot_v * wy;
      }
    }
  }
  return out;
}

Image resize(const Image& src, std::size_t out_h, std::size_t out_w) {
  if (out_h == src.height && out_w == src.width) return src;
  return resize_crop(src, 0.0, 0.0, static_cast<double>(src.height), static_cast<double>(src.width), out_h, out_w);
}

Image eval_preprocess(const Image& src, std::size_t size) {
  const std::size_t long_edge = static_cast<std::size_t>(std::lround(1.14 * static_cast<double>(size)));
  std::size_t h, w;
  if (src.height >= src.width) {
    h = long_edge;
    w = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(static_cast<double>(src.width) * long_edge /
                                                                        static_cast<double>(src.height))));
  } else {
    w = long_edge;
    h = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(static_cast<double>(src.height) * long_edge /
                                                                        static_cast<double>(src.width))));
  }
  Image r = resize(src, h, w);
  // A short edge below size is stretched so the central window fits.
  if (h < size || w < size) r = resize(r, std::max(h, size), std::max(w, size));
  const std::size_t top = (r.height - size) / 2, left = (r.width - size) / 2;
  Image out(size, size);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < size; ++y)
      for (std::size_t x = 0; x < size; ++x) out.at(c, y, x) = r.at(c, top + y, left + x);
  return out;
}

Tensor stack_images(const std::vector<const Image*>& images) {
  if (images.empty()) throw DimensionError("stack_images: empty batch");
  const std::size_t h = images[0]->height, w = images[0]->width;
  Tensor out({images.size(), 3, h, w});
  auto od = out.data();
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i]->height != h || images[i]->width != w)
      throw DimensionError("stack_images: images of different sizes");
    std::copy(images[i]->pixels.begin(), images[i]->pixels.end(), od.begin() + i * 3 * h * w);
  }
  return out;
}

namespace {

std::string next_token(std::istream& in) {
  std::string tok;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  return tok;
}

}  // namespace

Image read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingFileError("cannot open image " + path.string());
  if (next_token(in) != "P6") throw DataError(path.string() + ": not a binary PPM (P6)");
  std::size_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoul(next_token(in));
    h = std::stoul(next_token(in));
    maxval = std::stoul(next_token(in));
  } catch (const std::exception&) {
    throw DataError(path.string() + ": malformed PPM header");
  }
  if (w == 0 || h == 0 || maxval != 255) throw DataError(path.string() + ": only 8-bit PPM with nonzero size supported");
  std::vector<unsigned char> raw(3 * w * h);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size())) throw DataError(path.string() + ": truncated PPM data");
  Image img(h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) img.at(c, y, x) = raw[(y * w + x) * 3 + c] / 255.0;
  return img;
}

void write_ppm(const std::filesystem::path& path, const Image& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write image " + path.string());
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  std::vector<unsigned char> raw(3 * img.width * img.height);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        raw[(y * img.width + x) * 3 + c] =
            static_cast<unsigned char>(std::lround(std::clamp(img.at(c, y, x), 0.0, 1.0) * 255.0));
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
}

}  // namespace hpt

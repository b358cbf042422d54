// Copyright (c) 2026, The HPT Lab Authors
// SPDX-License-Identifier: Apache-2.0
#include "hpt/tensor.hpp"

#include <algorithm>

#include "hpt/error.hpp"

namespace hpt {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace {
void check_shape(const Shape& shape) {
  if (shape.empty()) throw DimensionError("tensor shape must have at least one dim");
  for (auto d : shape)
    if (d == 0) throw DimensionError("tensor dims must be positive, got " + shape_str(shape));
}
}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  check_shape(shape_);
  data_.assign(shape_numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  check_shape(shape_);
  if (data_.size() != shape_numel(shape_))
    throw DimensionError("data length " + std::to_string(data_.size()) + " does not match shape " +
                         shape_str(shape_));
}

double Tensor::item() const {
  if (data_.size() != 1) throw DimensionError("item() on non-scalar tensor " + shape_str(shape_));
  return data_[0];
}

std::span<double> Tensor::grad_mut() {
  if (grad_.empty()) grad_.assign(data_.size(), 0.0);
  return grad_;
}

void Tensor::zero_grad() {
  if (!grad_.empty()) std::fill(grad_.begin(), grad_.end(), 0.0);
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != data_.size())
    throw DimensionError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  return Tensor(std::move(shape), data_);
}

}  // namespace hpt

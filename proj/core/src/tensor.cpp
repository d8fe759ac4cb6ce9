// Copyright 2026 The recovnet contributors
// SPDX-License-Identifier: Apache-2.0

#include "recovnet/tensor.hpp"

#include <algorithm>
#include <functional>
#include <numeric>

#include "recovnet/error.hpp"

namespace recovnet {

std::int64_t Shape::elements() const noexcept {
  if (dims_.empty()) return 0;
  return std::accumulate(dims_.begin(), dims_.end(), std::int64_t{1}, std::multiplies<>());
}

std::string Shape::str() const {
  std::string out = "(";
  for (std::size_t i = 0; i < dims_.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(dims_[i]);
  }
  return out + ")";
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(static_cast<std::size_t>(shape_.elements()), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(values.begin(), values.end()) {
  if (static_cast<std::int64_t>(data_.size()) != shape_.elements())
    throw ShapeError("tensor data size " + std::to_string(data_.size()) + " does not match shape " +
                     shape_.str());
}

double& Tensor::at(std::int64_t n, std::int64_t y, std::int64_t x, std::int64_t c) {
  return data_[static_cast<std::size_t>(((n * shape_[1] + y) * shape_[2] + x) * shape_[3] + c)];
}

double Tensor::at(std::int64_t n, std::int64_t y, std::int64_t x, std::int64_t c) const {
  return data_[static_cast<std::size_t>(((n * shape_[1] + y) * shape_[2] + x) * shape_[3] + c)];
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor& Tensor::operator+=(const Tensor& other) {
  require_same_shape(shape_, other.shape_, "tensor +=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(double s) {
  for (double& v : data_) v *= s;
  return *this;
}

Tensor Tensor::slice(std::int64_t begin, std::int64_t end) const {
  if (shape_.rank() == 0 || begin < 0 || end > shape_[0] || begin >= end)
    throw ShapeError("invalid slice [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") of " + shape_.str());
  std::vector<std::int64_t> dims = shape_.dims();
  const std::int64_t stride = shape_.elements() / shape_[0];
  dims[0] = end - begin;
  Tensor out;
  out.shape_ = Shape(std::move(dims));
  out.data_.assign(data_.begin() + begin * stride, data_.begin() + end * stride);
  return out;
}

void require_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (a != b) throw ShapeError(std::string(what) + ": shape mismatch " + a.str() + " vs " + b.str());
}

void require_rank4(const Tensor& t, const char* what) {
  if (t.shape().rank() != 4)
    throw ShapeError(std::string(what) + ": expected NHWC tensor, got " + t.shape().str());
}

}  // namespace recovnet

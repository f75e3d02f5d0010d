// SPDX-License-Identifier: Apache-2.0
#include "hld/autodiff/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "hld/util/error.hpp"

namespace hld::ad {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

void require_finite(std::span<const double> values, const char* context) {
  for (double v : values) {
    if (!std::isfinite(v)) throw Error(ErrorCode::NonFinite, context);
  }
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : impl_(std::make_shared<Impl>()) {
  for (std::size_t d : shape) {
    if (d == 0) throw Error(ErrorCode::ShapeMismatch, "zero-length dimension in " + shape_string(shape));
  }
  if (shape_size(shape) != values.size()) {
    throw Error(ErrorCode::ShapeMismatch, "shape " + shape_string(shape) + " does not hold " +
                                              std::to_string(values.size()) + " values");
  }
  impl_->shape = std::move(shape);
  impl_->values = std::move(values);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const std::size_t n = shape_size(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({}, {value}, requires_grad); }

Tensor Tensor::vector(std::vector<double> values, bool requires_grad) {
  Shape shape{values.size()};
  return Tensor(std::move(shape), std::move(values), requires_grad);
}

const Shape& Tensor::shape() const { return impl_->shape; }
std::size_t Tensor::size() const { return impl_->values.size(); }
std::size_t Tensor::dim(std::size_t axis) const { return impl_->shape.at(axis); }

std::span<const double> Tensor::values() const { return impl_->values; }
std::span<double> Tensor::mutable_values() { return impl_->values; }

double Tensor::item() const {
  if (size() != 1) throw Error(ErrorCode::NotScalar, "item() on " + shape_string(shape()));
  return impl_->values[0];
}

bool Tensor::requires_grad() const { return impl_->requires_grad; }
void Tensor::set_requires_grad(bool on) { impl_->requires_grad = on; }

bool Tensor::has_grad() const { return !impl_->grad.empty(); }
std::span<const double> Tensor::grad() const { return impl_->grad; }

std::span<double> Tensor::mutable_grad() {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->values.size(), 0.0);
  return impl_->grad;
}

void Tensor::zero_grad() {
  std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

Tensor Tensor::clone() const { return Tensor(impl_->shape, impl_->values, impl_->requires_grad); }

}  // namespace hld::ad

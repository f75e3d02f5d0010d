// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace hld::ad {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major array of doubles that can take part in a Tape.
///
/// Tensor is a handle: copies share storage, the way framework tensors do.
/// Parameters live across many tapes and accumulate gradients until
/// zero_grad(); intermediates are created by a Tape and die with it.
/// A scalar has shape {} (one element).
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor vector(std::vector<double> values, bool requires_grad = false);

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const;
  std::size_t dim(std::size_t axis) const;

  std::span<const double> values() const;
  std::span<double> mutable_values();
  double item() const;

  bool requires_grad() const;
  void set_requires_grad(bool on);

  bool has_grad() const;
  /// Gradient buffer; empty span when no gradient has been accumulated.
  std::span<const double> grad() const;
  /// Gradient buffer, allocated zero-filled on first access.
  std::span<double> mutable_grad();
  void zero_grad();

  /// Deep copy of shape and values (no gradient).
  Tensor clone() const;
  bool same_storage(const Tensor& other) const noexcept { return impl_ == other.impl_; }

 private:
  struct Impl {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Impl> impl_;
};

/// Throws NonFinite when any element is NaN or infinite.
void require_finite(std::span<const double> values, const char* context);

}  // namespace hld::ad

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "hld/autodiff/tape.hpp"

namespace hld::ad {

struct GradCheckReport {
  std::vector<double> analytic;
  std::vector<double> numeric;
  std::vector<double> relative_error;
  double max_relative_error = 0.0;
  bool passed = false;
};

/// Builds a scalar on the given tape from the (leaf) input.
using ScalarFn = std::function<Tensor(Tape&, const Tensor&)>;

/// Compares the tape gradient of `f` at `x` with central differences
/// (f(x + eps e_i) - f(x - eps e_i)) / 2 eps for every element of x.
///
/// Relative error is |a - n| / max(|a|, |n|, floor); the floor keeps
/// round-off in near-zero gradients from reading as a failure.
GradCheckReport finite_difference_check(const ScalarFn& f, const Tensor& x, double epsilon,
                                        double rtol, double floor = 1e-6);

}  // namespace hld::ad

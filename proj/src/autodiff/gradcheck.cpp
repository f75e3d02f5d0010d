// SPDX-License-Identifier: Apache-2.0
#include "hld/autodiff/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace hld::ad {

GradCheckReport finite_difference_check(const ScalarFn& f, const Tensor& x, double epsilon,
                                        double rtol, double floor) {
  GradCheckReport report;
  Tensor leaf = x.clone();
  leaf.set_requires_grad(true);
  {
    Tape tape;
    Tensor loss = f(tape, leaf);
    tape.backward(loss);
  }
  if (leaf.has_grad()) {
    report.analytic.assign(leaf.grad().begin(), leaf.grad().end());
  } else {
    report.analytic.assign(leaf.size(), 0.0);
  }

  auto eval_at = [&](const Tensor& point) {
    Tape tape(false);
    return f(tape, point).item();
  };

  Tensor probe = x.clone();
  probe.set_requires_grad(false);
  auto pv = probe.mutable_values();
  for (std::size_t i = 0; i < pv.size(); ++i) {
    const double orig = pv[i];
    pv[i] = orig + epsilon;
    const double up = eval_at(probe);
    pv[i] = orig - epsilon;
    const double down = eval_at(probe);
    pv[i] = orig;
    const double numeric = (up - down) / (2.0 * epsilon);
    const double a = report.analytic[i];
    const double denom = std::max({std::abs(a), std::abs(numeric), floor});
    const double rel = std::abs(a - numeric) / denom;
    report.numeric.push_back(numeric);
    report.relative_error.push_back(rel);
    report.max_relative_error = std::max(report.max_relative_error, rel);
  }
  report.passed = report.max_relative_error < rtol;
  return report;
}

}  // namespace hld::ad

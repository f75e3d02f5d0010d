// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <vector>

namespace hld::eval {

/// I_x(a, b), continued-fraction evaluation (absolute error well below 1e-10).
double regularized_incomplete_beta(double a, double b, double x);

/// P(T <= t) for Student's t with `df` degrees of freedom.
double student_t_cdf(double t, double df);

double mean(std::span<const double> xs);
/// Sample (n-1) standard deviation; 0 for a single value.
double sample_std(std::span<const double> xs);

struct PearsonResult {
  double r = 0.0;
  double t = 0.0;
  double p = 1.0;  // two-sided
  std::size_t n = 0;
};

/// Throws TooFewPoints (n < 3, or unequal lengths) and ConstantInput.
PearsonResult pearson_r(std::span<const double> x, std::span<const double> y);

struct WelchResult {
  double t = 0.0;
  double df = 0.0;
  double p = 0.5;  // one-tailed, H1: mean(a) > mean(b)
};

/// Throws TooFewSamples when either side has fewer than two scores.
/// Zero pooled variance gives p = 0.5 on equal means, else 0 or 1.
WelchResult welch_one_tailed(std::span<const double> a, std::span<const double> b);

/// Holm step-down adjustment; output keeps the input order.
std::vector<double> holm_adjust(std::span<const double> p_values);

}  // namespace hld::eval

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hld/autodiff/tape.hpp"

namespace hld::app {

struct CheckResult {
  std::string name;
  std::size_t instances = 0;
  double max_relative_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

struct SuiteReport {
  std::vector<CheckResult> checks;
  double seconds = 0.0;

  bool passed() const;
  /// One line per check: name, instances, max relative error, PASS/FAIL.
  std::string format() const;
};

struct SuiteOptions {
  std::uint64_t seed = 0;
  std::size_t instances = 20;
  double op_tolerance = 1e-4;
  double end_to_end_tolerance = 1e-3;
  /// Sign-flips the upstream gradient of this op's backward rule for the
  /// duration of the run (fault injection).
  std::optional<ad::OpKind> fault;
};

/// Central-difference checks of every tape op, the fused and composed GRU,
/// the MLP head, the losses, and the full AnchorVMABM batch loss.
SuiteReport run_gradcheck_suite(const SuiteOptions& options = {});

/// Inverse of ad::to_string(OpKind); throws InvalidConfig.
ad::OpKind op_kind_from_string(const std::string& name);

}  // namespace hld::app

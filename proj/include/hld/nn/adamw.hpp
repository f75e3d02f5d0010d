// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "hld/autodiff/tensor.hpp"

namespace hld::nn {

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// AdamW with decoupled weight decay:
///   theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * theta)
class AdamW {
 public:
  AdamW(std::vector<ad::Tensor> params, AdamWConfig config);

  /// Applies one update from the parameters' accumulated gradients.
  /// Parameters without a gradient buffer are treated as g = 0.
  void step();
  void zero_grad();

  std::uint64_t steps() const noexcept { return t_; }
  const AdamWConfig& config() const noexcept { return config_; }
  const std::vector<std::vector<double>>& first_moment() const noexcept { return m_; }
  const std::vector<std::vector<double>>& second_moment() const noexcept { return v_; }

 private:
  std::vector<ad::Tensor> params_;
  AdamWConfig config_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::uint64_t t_ = 0;
};

}  // namespace hld::nn

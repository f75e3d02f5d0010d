// SPDX-License-Identifier: Apache-2.0
#include "hld/nn/adamw.hpp"

#include <cmath>

#include "hld/util/error.hpp"

namespace hld::nn {

AdamW::AdamW(std::vector<ad::Tensor> params, AdamWConfig config)
    : params_(std::move(params)), config_(config) {
  if (!(config_.lr > 0.0) || config_.beta1 < 0.0 || config_.beta1 >= 1.0 || config_.beta2 < 0.0 ||
      config_.beta2 >= 1.0 || !(config_.eps > 0.0) || config_.weight_decay < 0.0) {
    throw Error(ErrorCode::InvalidConfig, "invalid AdamW hyperparameters");
  }
  for (const auto& p : params_) {
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

void AdamW::step() {
  for (const auto& p : params_) {
    if (p.has_grad()) ad::require_finite(p.grad(), "AdamW gradient");
  }
  ++t_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double bias1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double bias2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto theta = params_[k].mutable_values();
    const auto grad = params_[k].grad();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double g = grad.empty() ? 0.0 : grad[i];
      m[i] = b1 * m[i] + (1.0 - b1) * g;
      v[i] = b2 * v[i] + (1.0 - b2) * g * g;
      const double m_hat = m[i] / bias1;
      const double v_hat = v[i] / bias2;
      theta[i] -= config_.lr * (m_hat / (std::sqrt(v_hat) + config_.eps) + config_.weight_decay * theta[i]);
    }
  }
}

void AdamW::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

}  // namespace hld::nn

// SPDX-License-Identifier: Apache-2.0
#include "adanas/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "adanas/errors.hpp"

namespace adanas {

double cosine_lr(std::size_t epoch, std::size_t total_epochs, double lr_max, double lr_min) {
  if (total_epochs <= 1) return lr_max;
  const double t = static_cast<double>(std::min(epoch, total_epochs - 1)) / static_cast<double>(total_epochs - 1);
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(std::numbers::pi * t));
}

namespace {

void ensure_state(std::vector<Tensor>& state, const std::vector<Parameter*>& params) {
  if (state.empty()) {
    for (auto* p : params) state.emplace_back(p->value.shape());
    return;
  }
  if (state.size() != params.size()) throw ConfigError("optimizer state does not match the parameter list");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state[i].shape() != params[i]->value.shape()) {
      throw ConfigError("optimizer state shape mismatch for " + params[i]->name);
    }
  }
}

}  // namespace

void Sgd::step(const std::vector<Parameter*>& params, double lr) {
  ensure_state(velocity_, params);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i]->value.data();
    auto g = params[i]->grad.data();
    auto v = velocity_[i].data();
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double grad = g[k] + weight_decay_ * w[k];
      v[k] = momentum_ * v[k] + grad;
      w[k] -= lr * v[k];
    }
    params[i]->zero_grad();
  }
}

void Adam::step(const std::vector<Parameter*>& params) {
  ensure_state(m_, params);
  ensure_state(v_, params);
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i]->value.data();
    auto g = params[i]->grad.data();
    auto m = m_[i].data();
    auto v = v_[i].data();
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double grad = g[k] + weight_decay_ * w[k];
      m[k] = beta1_ * m[k] + (1.0 - beta1_) * grad;
      v[k] = beta2_ * v[k] + (1.0 - beta2_) * grad * grad;
      w[k] -= lr_ * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps_);
    }
    params[i]->zero_grad();
  }
}

void zero_grads(const std::vector<Parameter*>& params) {
  for (auto* p : params) p->zero_grad();
}

}  // namespace adanas

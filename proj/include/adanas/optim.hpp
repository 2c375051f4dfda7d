// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "adanas/autodiff.hpp"

namespace adanas {

/// Cosine annealing from lr_max at epoch 0 to lr_min at epoch total-1.
double cosine_lr(std::size_t epoch, std::size_t total_epochs, double lr_max, double lr_min);

/// SGD with momentum. State is kept per position in the parameter list, so
/// callers must pass the same list, in the same order, on every step.
class Sgd {
 public:
  explicit Sgd(double momentum = 0.9, double weight_decay = 0.0)
      : momentum_(momentum), weight_decay_(weight_decay) {}

  /// Applies one update with the given learning rate and zeroes the grads.
  void step(const std::vector<Parameter*>& params, double lr);

  std::vector<Tensor>& velocity() { return velocity_; }
  const std::vector<Tensor>& velocity() const { return velocity_; }

 private:
  double momentum_;
  double weight_decay_;
  std::vector<Tensor> velocity_;
};

/// Adam with coupled L2 weight decay (added to the gradient).
class Adam {
 public:
  explicit Adam(double lr = 3e-4, double weight_decay = 1e-3, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8)
      : lr_(lr), weight_decay_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(const std::vector<Parameter*>& params);

  double lr() const { return lr_; }
  std::uint64_t steps() const { return t_; }
  void set_steps(std::uint64_t t) { t_ = t; }
  std::vector<Tensor>& first_moment() { return m_; }
  std::vector<Tensor>& second_moment() { return v_; }
  const std::vector<Tensor>& first_moment() const { return m_; }
  const std::vector<Tensor>& second_moment() const { return v_; }

 private:
  double lr_;
  double weight_decay_;
  double beta1_;
  double beta2_;
  double eps_;
  std::uint64_t t_ = 0;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
};

void zero_grads(const std::vector<Parameter*>& params);

}  // namespace adanas

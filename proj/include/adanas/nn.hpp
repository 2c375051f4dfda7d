// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "adanas/autodiff.hpp"

namespace adanas {

using Rng = std::mt19937_64;

/// U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
Tensor uniform_fan_in(Shape shape, std::size_t fan_in, Rng& rng);

/// Affine map followed by softmax; used for student probes, teacher probes
/// and the child classification head.
struct LinearProbe {
  LinearProbe() = default;
  LinearProbe(const std::string& name, std::size_t in_dim, std::size_t classes, Rng& rng);

  Parameter weight;  // [classes, in_dim]
  Parameter bias;    // [classes]

  std::size_t in_dim() const { return weight.value.shape().at(1); }
  std::size_t classes() const { return weight.value.shape().at(0); }

  Var logits(Tape& tape, Var x) { return affine(x, tape.param(weight), tape.param(bias)); }
  /// softmax(W x + b) without a tape.
  std::vector<double> probabilities(std::span<const double> x) const;
  std::vector<Parameter*> parameters() { return {&weight, &bias}; }

 private:
  static Var affine(Var x, Var w, Var b);
};

std::vector<double> softmax_values(std::span<const double> logits);

}  // namespace adanas

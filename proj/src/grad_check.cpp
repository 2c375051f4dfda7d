// SPDX-License-Identifier: Apache-2.0
#include "adanas/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "adanas/errors.hpp"

namespace adanas {
namespace {

double evaluate(const ScalarFn& f, const std::vector<Tensor>& inputs) {
  Tape tape;
  std::vector<Var> leaves;
  leaves.reserve(inputs.size());
  for (const auto& t : inputs) leaves.push_back(tape.constant(t));
  Var out = f(tape, leaves);
  if (out.value().size() != 1) throw DimensionError("grad_check: function must be scalar-valued");
  return out.value()[0];
}

}  // namespace

double grad_check(const ScalarFn& f, const std::vector<Tensor>& inputs, double eps) {
  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> leaves;
    for (const auto& t : inputs) leaves.push_back(tape.leaf(t));
    Var out = f(tape, leaves);
    tape.backward(out);
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      const Tensor& g = tape.grad(leaves[i]);
      analytic.push_back(g.empty() ? Tensor(inputs[i].shape()) : g);
    }
  }

  double worst = 0.0;
  std::vector<Tensor> probe = inputs;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (std::size_t k = 0; k < inputs[i].size(); ++k) {
      const double orig = inputs[i][k];
      probe[i][k] = orig + eps;
      const double up = evaluate(f, probe);
      probe[i][k] = orig - eps;
      const double down = evaluate(f, probe);
      probe[i][k] = orig;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[i][k];
      const double denom = std::max({1.0, std::abs(a), std::abs(numeric)});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace adanas

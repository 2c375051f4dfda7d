// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <vector>

#include "adanas/autodiff.hpp"

namespace adanas {

/// Builds a scalar from leaves placed on the given tape.
using ScalarFn = std::function<Var(Tape&, const std::vector<Var>&)>;

/// Compares tape gradients with central finite differences at every input
/// coordinate. Returns max |g_a - g_n| / max(1, |g_a|, |g_n|).
double grad_check(const ScalarFn& f, const std::vector<Tensor>& inputs, double eps = 1e-5);

}  // namespace adanas

// SPDX-License-Identifier: Apache-2.0
#include "adanas/nn.hpp"

#include <algorithm>
#include <cmath>

#include "adanas/errors.hpp"
#include "adanas/ops.hpp"

namespace adanas {

Tensor uniform_fan_in(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

LinearProbe::LinearProbe(const std::string& name, std::size_t in_dim, std::size_t classes, Rng& rng)
    : weight(name + ".weight", uniform_fan_in({classes, in_dim}, in_dim, rng)),
      bias(name + ".bias", uniform_fan_in({classes}, in_dim, rng)) {}

Var LinearProbe::affine(Var x, Var w, Var b) { return adanas::affine(x, w, b); }

std::vector<double> LinearProbe::probabilities(std::span<const double> x) const {
  const std::size_t in = in_dim(), n = classes();
  if (x.size() != in) {
    throw DimensionError("probe expects " + std::to_string(in) + " features, got " +
                         std::to_string(x.size()));
  }
  std::vector<double> logits(n);
  const auto w = weight.value.data();
  for (std::size_t c = 0; c < n; ++c) {
    double s = bias.value[c];
    for (std::size_t i = 0; i < in; ++i) s += w[c * in + i] * x[i];
    logits[c] = s;
  }
  return softmax_values(logits);
}

std::vector<double> softmax_values(std::span<const double> logits) {
  std::vector<double> p(logits.begin(), logits.end());
  if (p.empty()) return p;
  const double m = *std::max_element(p.begin(), p.end());
  double total = 0.0;
  for (auto& v : p) {
    v = std::exp(v - m);
    total += v;
  }
  for (auto& v : p) v /= total;
  return p;
}

}  // namespace adanas

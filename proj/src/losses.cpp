// SPDX-License-Identifier: Apache-2.0
#include "adanas/losses.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <utility>

#include "adanas/errors.hpp"
#include "adanas/nn.hpp"
#include "adanas/ops.hpp"

namespace adanas {

void LossConfig::validate() const {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in [0, 1]");
  if (!(beta >= 0.0) || !std::isfinite(beta)) throw ConfigError("beta must be a nonnegative finite number");
  if (!(temperature > 0.0) || !std::isfinite(temperature)) throw ConfigError("kd temperature must be positive");
}

Tensor CostTable::combined(std::span<const OperationKind> candidates) const {
  Tensor out({candidates.size()});
  for (std::size_t i = 0; i < candidates.size(); ++i) out[i] = at(candidates[i]).combined();
  return out;
}

namespace {

CostTable compute_cost_table(std::size_t c, std::size_t l) {
  CostTable t;
  t.embed_dim = c;
  t.seq_len = l;
  std::size_t max_params = 0, max_flops = 0;
  for (auto op : all_operations()) {
    OperationCost& e = t.entries[static_cast<std::size_t>(op)];
    if (auto spec = conv_spec(op)) {
      e.raw_params = spec->kernel * c * c + c + 2 * c;
      e.raw_flops = 2 * spec->kernel * c * c * l;
    } else if (op == OperationKind::max_pool_3 || op == OperationKind::avg_pool_3) {
      e.raw_flops = 3 * c * l;
    }
    max_params = std::max(max_params, e.raw_params);
    max_flops = std::max(max_flops, e.raw_flops);
  }
  for (auto& e : t.entries) {
    e.size_norm = static_cast<double>(e.raw_params) / static_cast<double>(max_params);
    e.flops_norm = static_cast<double>(e.raw_flops) / static_cast<double>(max_flops);
  }
  return t;
}

}  // namespace

const CostTable& build_cost_table(std::size_t embed_dim, std::size_t seq_len) {
  if (embed_dim == 0 || seq_len == 0) throw ConfigError("cost table needs positive dimensions");
  static std::mutex mu;
  static std::map<std::pair<std::size_t, std::size_t>, std::unique_ptr<CostTable>> cache;
  std::lock_guard lock(mu);
  auto& slot = cache[{embed_dim, seq_len}];
  if (!slot) slot = std::make_unique<CostTable>(compute_cost_table(embed_dim, seq_len));
  return *slot;
}

Var efficiency_loss(Var layer_sample, const std::vector<Var>& edge_samples,
                    std::span<const OperationKind> candidates, const CostTable& table) {
  Tape& tape = layer_sample.tape();
  const std::size_t k_max = layer_sample.value().size();
  Tensor depth({k_max});
  for (std::size_t k = 0; k < k_max; ++k) depth[k] = static_cast<double>(k + 1) / static_cast<double>(k_max);
  Var k_fraction = sum(mul(layer_sample, tape.constant(depth)));

  const Tensor costs = table.combined(candidates);
  Var cell = tape.constant(Tensor::scalar(0.0));
  for (const Var& v : edge_samples) {
    if (v.value().size() != candidates.size()) {
      throw DimensionError("edge sample has " + std::to_string(v.value().size()) + " entries for " +
                           std::to_string(candidates.size()) + " candidates");
    }
    cell = add(cell, sum(mul(v, tape.constant(costs))));
  }
  return mul(k_fraction, cell);
}

double efficiency_cost(const ChildGraph& child, std::size_t k_max, const CostTable& table) {
  if (child.k < 1 || child.k > k_max) throw ValidationError("child depth outside [1, K_max]");
  double cell = 0.0;
  for (auto op : child.ops) cell += table.at(op).combined();
  return static_cast<double>(child.k) / static_cast<double>(k_max) * cell;
}

std::size_t layer_map(std::size_t i, std::size_t k, std::size_t j) {
  if (j < 1) throw ValidationError("teacher depth J must be at least 1");
  if (i < 1 || i > k) {
    throw ValidationError("student layer " + std::to_string(i) + " outside [1, " + std::to_string(k) + "]");
  }
  return (i * j + k - 1) / k;
}

namespace {

void require_distribution(std::span<const double> p, const char* what) {
  double s = 0.0;
  for (double v : p) {
    if (!(v >= 0.0)) throw ValidationError(std::string(what) + " has a negative or NaN entry");
    s += v;
  }
  if (std::abs(s - 1.0) > 1e-6) throw ValidationError(std::string(what) + " does not sum to 1");
}

}  // namespace

Var kd_instance_loss(std::span<const double> teacher_probs, Var student_logits, double temperature) {
  if (!(temperature > 0.0)) throw ConfigError("kd temperature must be positive");
  require_distribution(teacher_probs, "teacher probability vector");
  const std::size_t n = teacher_probs.size();
  if (student_logits.value().size() != n) {
    throw DimensionError("student logits have " + std::to_string(student_logits.value().size()) +
                         " classes, teacher has " + std::to_string(n));
  }
  Tape& tape = student_logits.tape();
  Var z = reshape(scale(student_logits, 1.0 / temperature), {1, n});
  Tensor p({1, n}, std::vector<double>(teacher_probs.begin(), teacher_probs.end()));
  return scale(sum(mul(log_softmax(z, 1), tape.constant(p))), -1.0);
}

std::vector<double> attentive_weights(std::span<const double> true_label_log_probs) {
  return softmax_values(true_label_log_probs);
}

namespace {

const Tensor& teacher_layer(const TeacherBatch& teacher, std::size_t j, std::size_t batch) {
  if (j < 1 || j > teacher.probs.size() || teacher.probs[j - 1].empty()) {
    throw DataError("teacher layer " + std::to_string(j) + " is missing");
  }
  const Tensor& t = teacher.probs[j - 1];
  if (t.rank() != 2 || t.dim(0) != batch) {
    throw DataError("teacher layer " + std::to_string(j) + " has shape " + shape_string(t.shape()) +
                    " for a batch of " + std::to_string(batch));
  }
  return t;
}

}  // namespace

Tensor attentive_weight_matrix(const TeacherBatch& teacher, std::span<const int> labels, std::size_t k) {
  const std::size_t batch = labels.size();
  Tensor w({batch, k});
  std::vector<double> scores(k);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 1; i <= k; ++i) {
      const Tensor& t = teacher_layer(teacher, layer_map(i, k, teacher.layers), batch);
      const std::size_t n = t.dim(1);
      const auto label = static_cast<std::size_t>(labels[b]);
      if (labels[b] < 0 || label >= n) throw DataError("label outside the teacher's class range");
      scores[i - 1] = std::log(std::max(t[b * n + label], 1e-300));
    }
    const auto row = attentive_weights(scores);
    std::copy(row.begin(), row.end(), w.data().begin() + static_cast<std::ptrdiff_t>(b * k));
  }
  return w;
}

Var attentive_kd_loss(const TeacherBatch& teacher, const std::vector<Var>& student_logits,
                      std::span<const int> labels, std::size_t k, double temperature) {
  if (!(temperature > 0.0)) throw ConfigError("kd temperature must be positive");
  if (k < 1 || k > student_logits.size()) throw ValidationError("sampled depth outside the student layers");
  const std::size_t batch = labels.size();
  const Tensor w = attentive_weight_matrix(teacher, labels, k);
  Tape& tape = student_logits.front().tape();
  Var total = tape.constant(Tensor::scalar(0.0));
  for (std::size_t i = 1; i <= k; ++i) {
    const Tensor& p = teacher_layer(teacher, layer_map(i, k, teacher.layers), batch);
    const Var& z = student_logits[i - 1];
    if (z.shape() != p.shape()) {
      throw DimensionError("student logits " + shape_string(z.shape()) + " vs teacher " + shape_string(p.shape()));
    }
    const std::size_t n = p.dim(1);
    Tensor coeff(p.shape());
    for (std::size_t b = 0; b < batch; ++b) {
      require_distribution(p.data().subspan(b * n, n), "teacher probability vector");
      for (std::size_t c = 0; c < n; ++c) coeff[b * n + c] = w[b * k + i - 1] * p[b * n + c];
    }
    Var logp = log_softmax(scale(z, 1.0 / temperature), 1);
    total = add(total, sum(mul(logp, tape.constant(std::move(coeff)))));
  }
  return scale(total, -1.0 / static_cast<double>(batch));
}

Var total_loss(Var ce, Var kd, Var eff, const LossConfig& config) {
  return add(add(scale(ce, 1.0 - config.gamma), scale(kd, config.gamma)), scale(eff, config.beta));
}

double total_loss(double ce, double kd, double eff, const LossConfig& config) {
  return (1.0 - config.gamma) * ce + config.gamma * kd + config.beta * eff;
}

}  // namespace adanas

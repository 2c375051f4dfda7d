// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "adanas/autodiff.hpp"
#include "adanas/search_space.hpp"

namespace adanas {

struct LossConfig {
  double gamma = 0.8;
  double beta = 4.0;
  double temperature = 1.0;

  /// Throws ConfigError for gamma outside [0,1], negative beta or T <= 0.
  void validate() const;
};

struct OperationCost {
  std::size_t raw_params = 0;
  std::size_t raw_flops = 0;
  double size_norm = 0.0;
  double flops_norm = 0.0;

  double combined() const { return size_norm + flops_norm; }
};

/// Analytic SIZE and FLOPs of every candidate for one [1, C, L] input,
/// normalized by the largest entry over the full candidate set.
struct CostTable {
  std::size_t embed_dim = 0;
  std::size_t seq_len = 0;
  std::array<OperationCost, kNumOperations> entries{};

  const OperationCost& at(OperationKind op) const { return entries[static_cast<std::size_t>(op)]; }
  /// size_norm + flops_norm for each op of `candidates`, in order.
  Tensor combined(std::span<const OperationKind> candidates) const;
};

/// Cached per (embed_dim, seq_len); the reference stays valid for the process.
const CostTable& build_cost_table(std::size_t embed_dim = 128, std::size_t seq_len = 128);

/// (K / K_max) * sum_e sum_o v_eo (size_o + flops_o) with K = sum_k k * y_k,
/// so a one-hot y over layers selects its depth and stays differentiable.
Var efficiency_loss(Var layer_sample, const std::vector<Var>& edge_samples,
                    std::span<const OperationKind> candidates, const CostTable& table);

/// The same quantity for a discrete child.
double efficiency_cost(const ChildGraph& child, std::size_t k_max, const CostTable& table);

/// ceil(i * J / K). Throws ValidationError unless 1 <= i <= K and J >= 1.
std::size_t layer_map(std::size_t i, std::size_t k, std::size_t j);

/// -sum_c p_c log softmax(z / T)_c for one instance; z is [n] or [1,n].
Var kd_instance_loss(std::span<const double> teacher_probs, Var student_logits, double temperature);

/// softmax over student layers of the teacher's true-label log-probabilities.
std::vector<double> attentive_weights(std::span<const double> true_label_log_probs);

/// Teacher probe outputs for one batch: probs[j-1] is [B, classes] for
/// teacher layer j.
struct TeacherBatch {
  std::size_t layers = 0;
  std::size_t classes = 0;
  std::vector<Tensor> probs;
};

/// [B, K] attentive weights w_{i,m} for student layers 1..K.
Tensor attentive_weight_matrix(const TeacherBatch& teacher, std::span<const int> labels, std::size_t k);

/// Batch mean of sum_{i<=K} w_{i,m} * kd_instance_loss(teacher layer
/// layer_map(i), student layer i). Throws DataError when a mapped teacher
/// layer is missing.
Var attentive_kd_loss(const TeacherBatch& teacher, const std::vector<Var>& student_logits,
                      std::span<const int> labels, std::size_t k, double temperature);

/// (1 - gamma) * ce + gamma * kd + beta * eff.
Var total_loss(Var ce, Var kd, Var eff, const LossConfig& config);
double total_loss(double ce, double kd, double eff, const LossConfig& config);

}  // namespace adanas

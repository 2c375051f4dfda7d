// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "adanas/errors.hpp"
#include "adanas/losses.hpp"
#include "support/primitive_catalog.hpp"

namespace adanas {
namespace {

using testing::random_tensor;

std::vector<OperationKind> all_ops() { return {all_operations().begin(), all_operations().end()}; }

Var one_hot(Tape& tape, std::size_t n, std::size_t at) {
  Tensor t({n}, 0.0);
  t[at] = 1.0;
  return tape.constant(t);
}

std::size_t counted_params(OperationKind op, std::size_t c) {
  auto spec = conv_spec(op);
  if (!spec) return 0;
  Rng rng(0);
  ConvBlock block("b", *spec, c, rng);
  std::size_t n = 0;
  for (auto* p : block.parameters()) n += p->value.size();
  return n;
}

TEST(CostTable, ZeroAndSkipAreFree) {
  const CostTable& t = build_cost_table();
  for (auto op : {OperationKind::skip, OperationKind::zero}) {
    EXPECT_EQ(t.at(op).raw_params, 0u);
    EXPECT_EQ(t.at(op).raw_flops, 0u);
    EXPECT_EQ(t.at(op).combined(), 0.0);
  }
  EXPECT_EQ(t.at(OperationKind::max_pool_3).raw_params, 0u);
  EXPECT_GT(t.at(OperationKind::avg_pool_3).raw_flops, 0u);
}

TEST(CostTable, LargestConvAnchorsNormalization) {
  const CostTable& t = build_cost_table(128, 128);
  EXPECT_EQ(t.at(OperationKind::std_conv_7).size_norm, 1.0);
  EXPECT_EQ(t.at(OperationKind::std_conv_7).flops_norm, 1.0);
  EXPECT_EQ(t.at(OperationKind::dil_conv_7).size_norm, 1.0);
  for (const auto& e : t.entries) {
    EXPECT_GE(e.size_norm, 0.0);
    EXPECT_LE(e.size_norm, 1.0);
    EXPECT_LE(e.flops_norm, 1.0);
  }
}

TEST(CostTable, ParameterCountsMatchBuiltModules) {
  for (std::size_t c : {4, 16, 128}) {
    const CostTable& t = build_cost_table(c, 32);
    for (auto op : all_operations()) EXPECT_EQ(t.at(op).raw_params, counted_params(op, c)) << operation_name(op);
    const double ratio = t.at(OperationKind::std_conv_3).size_norm / t.at(OperationKind::std_conv_7).size_norm;
    const double cc = static_cast<double>(c * c);
    EXPECT_NEAR(ratio, (3 * cc + 3.0 * c) / (7 * cc + 3.0 * c), 1e-15);
  }
}

TEST(CostTable, CachedPerDimensions) {
  EXPECT_EQ(&build_cost_table(8, 16), &build_cost_table(8, 16));
  EXPECT_NE(&build_cost_table(8, 16), &build_cost_table(8, 17));
  EXPECT_THROW(build_cost_table(0, 4), ConfigError);
}

TEST(EfficiencyLoss, AllZeroIsFree) {
  const CostTable& t = build_cost_table();
  Tape tape;
  std::vector<Var> edges(9, one_hot(tape, 10, static_cast<std::size_t>(OperationKind::zero)));
  auto ops = all_ops();
  for (std::size_t k = 0; k < 8; ++k) {
    EXPECT_EQ(efficiency_loss(one_hot(tape, 8, k), edges, ops, t).value()[0], 0.0);
  }
}

TEST(EfficiencyLoss, LargestChildCostsEighteen) {
  const CostTable& t = build_cost_table();
  Tape tape;
  std::vector<Var> edges(9, one_hot(tape, 10, static_cast<std::size_t>(OperationKind::std_conv_7)));
  auto ops = all_ops();
  EXPECT_EQ(efficiency_loss(one_hot(tape, 8, 7), edges, ops, t).value()[0], 18.0);
}

TEST(EfficiencyLoss, MatchesDirectSummation) {
  const CostTable& t = build_cost_table(16, 24);
  std::mt19937_64 rng(1);
  auto ops = all_ops();
  for (int trial = 0; trial < 50; ++trial) {
    Tape tape;
    const std::size_t k = rng() % 8;
    std::vector<Var> edges;
    double oracle_cell = 0.0;
    for (int e = 0; e < 9; ++e) {
      const std::size_t o = rng() % 10;
      edges.push_back(one_hot(tape, 10, o));
      const auto& entry = t.entries[o];
      oracle_cell += static_cast<double>(entry.raw_params) / static_cast<double>(t.at(OperationKind::std_conv_7).raw_params) +
                     static_cast<double>(entry.raw_flops) / static_cast<double>(t.at(OperationKind::std_conv_7).raw_flops);
    }
    const double oracle = static_cast<double>(k + 1) / 8.0 * oracle_cell;
    EXPECT_NEAR(efficiency_loss(one_hot(tape, 8, k), edges, ops, t).value()[0], oracle, 1e-12);
  }
}

TEST(EfficiencyLoss, DiscreteCostAgreesWithSampleForm) {
  const CostTable& t = build_cost_table(8, 8);
  ChildGraph g{TaskType::single_text, 3, 3, 8,
               {OperationKind::std_conv_5, OperationKind::skip, OperationKind::max_pool_3, OperationKind::zero,
                OperationKind::dil_conv_3, OperationKind::avg_pool_3, OperationKind::std_conv_3,
                OperationKind::dil_conv_7, OperationKind::skip}};
  Tape tape;
  std::vector<Var> edges;
  for (auto op : g.ops) edges.push_back(one_hot(tape, 10, static_cast<std::size_t>(op)));
  auto ops = all_ops();
  EXPECT_NEAR(efficiency_cost(g, 4, t), efficiency_loss(one_hot(tape, 4, 2), edges, ops, t).value()[0], 1e-15);
}

TEST(EfficiencyLoss, GradientReachesArchitectureThroughStraightThrough) {
  const CostTable& t = build_cost_table(8, 8);
  Rng rng(2);
  Parameter theta_k("k", Tensor({4}, 0.0));
  Parameter theta_o("o", Tensor({9, 10}, 0.0));
  Tape tape;
  Var yk = straight_through(gumbel_softmax(tape.param(theta_k), 1.0, rng));
  std::vector<Var> edges;
  for (std::size_t e = 0; e < 9; ++e) {
    edges.push_back(straight_through(gumbel_softmax(row(tape.param(theta_o), e), 1.0, rng)));
  }
  auto ops = all_ops();
  tape.backward(scale(efficiency_loss(yk, edges, ops, t), 4.0));
  double go = 0.0;
  for (double v : theta_o.grad.data()) go += std::abs(v);
  EXPECT_GT(go, 0.0);
}

TEST(LayerMap, Examples) {
  EXPECT_EQ(layer_map(1, 3, 12), 4u);
  EXPECT_EQ(layer_map(2, 3, 12), 8u);
  EXPECT_EQ(layer_map(3, 3, 12), 12u);
  for (std::size_t i = 1; i <= 12; ++i) EXPECT_EQ(layer_map(i, 12, 12), i);
  const std::vector<std::size_t> k8{2, 3, 5, 6, 8, 9, 11, 12};
  for (std::size_t i = 1; i <= 8; ++i) EXPECT_EQ(layer_map(i, 8, 12), k8[i - 1]);
}

TEST(LayerMap, RangeAndMonotonicity) {
  for (std::size_t j = 1; j <= 16; ++j) {
    for (std::size_t k = 1; k <= 16; ++k) {
      std::size_t prev = 0;
      for (std::size_t i = 1; i <= k; ++i) {
        const std::size_t m = layer_map(i, k, j);
        EXPECT_GE(m, 1u);
        EXPECT_LE(m, j);
        EXPECT_GE(m, prev);
        prev = m;
      }
      EXPECT_EQ(layer_map(k, k, j), j);
    }
  }
  EXPECT_THROW(layer_map(0, 3, 12), ValidationError);
  EXPECT_THROW(layer_map(4, 3, 12), ValidationError);
  EXPECT_THROW(layer_map(1, 3, 0), ValidationError);
}

TEST(KdInstanceLoss, PerfectMimicryIsNearZero) {
  Tape tape;
  const std::vector<double> p{0.0, 1.0, 0.0};
  EXPECT_LE(kd_instance_loss(p, tape.constant(Tensor({3}, {-20, 20, -20})), 1.0).value()[0], 1e-12);
}

TEST(KdInstanceLoss, UniformTeacherBound) {
  Rng rng(3);
  const std::vector<double> p(4, 0.25);
  for (int i = 0; i < 20; ++i) {
    Tape tape;
    EXPECT_GE(kd_instance_loss(p, tape.constant(random_tensor({4}, rng, -3, 3)), 1.0).value()[0], std::log(4.0));
  }
  Tape tape;
  EXPECT_NEAR(kd_instance_loss(p, tape.constant(Tensor({4}, 1.3)), 1.0).value()[0], std::log(4.0), 1e-15);
}

TEST(KdInstanceLoss, MatchesDirectFormula) {
  const double lse = std::log(std::exp(1.0) + std::exp(0.0));
  const double oracle = -(0.7 * (1.0 - lse) + 0.3 * (0.0 - lse));
  Tape tape;
  const std::vector<double> p{0.7, 0.3};
  EXPECT_NEAR(kd_instance_loss(p, tape.constant(Tensor({2}, {1, 0})), 1.0).value()[0], oracle, 1e-15);
  // T divides the logits before the softmax.
  const double lse2 = std::log(std::exp(0.5) + std::exp(0.0));
  Tape tape2;
  EXPECT_NEAR(kd_instance_loss(p, tape2.constant(Tensor({2}, {1, 0})), 2.0).value()[0],
              -(0.7 * (0.5 - lse2) + 0.3 * (0.0 - lse2)), 1e-15);
}

TEST(KdInstanceLoss, RejectsNonDistribution) {
  Tape tape;
  const std::vector<double> p{0.7, 0.4};
  EXPECT_THROW(kd_instance_loss(p, tape.constant(Tensor({2})), 1.0), ValidationError);
}

TEST(KdInstanceLoss, GibbsInequality) {
  Rng rng(4);
  for (int i = 0; i < 200; ++i) {
    Tensor p = testing::random_distribution_rows(1, 5, rng);
    double entropy = 0.0;
    for (double v : p.data()) entropy -= v * std::log(v);
    Tape tape;
    EXPECT_GE(kd_instance_loss(p.data(), tape.constant(random_tensor({5}, rng, -4, 4)), 1.0).value()[0],
              entropy - 1e-12);
    Tensor logp({5});
    for (std::size_t c = 0; c < 5; ++c) logp[c] = std::log(p[c]) + 0.37;
    EXPECT_NEAR(kd_instance_loss(p.data(), tape.constant(logp), 1.0).value()[0], entropy, 1e-9);
  }
}

TEST(AttentiveWeights, SymmetricTeachersGiveUniformWeights) {
  auto w = attentive_weights(std::vector<double>(4, -0.4));
  for (double v : w) EXPECT_NEAR(v, 0.25, 1e-15);
}

TEST(AttentiveWeights, TwoLayerOracle) {
  auto w = attentive_weights(std::vector<double>{-0.1, -2.3});
  const double a = std::exp(-0.1), b = std::exp(-2.3);
  EXPECT_NEAR(w[0], a / (a + b), 1e-15);
  EXPECT_NEAR(w[1], b / (a + b), 1e-15);
  EXPECT_NEAR(w[0], 0.900, 5e-4);
  EXPECT_NEAR(w[1], 0.100, 5e-4);
}

TeacherBatch make_teacher(std::size_t j, std::size_t batch, std::size_t classes, Rng& rng) {
  TeacherBatch t{j, classes, {}};
  for (std::size_t l = 0; l < j; ++l) t.probs.push_back(testing::random_distribution_rows(batch, classes, rng));
  return t;
}

TEST(AttentiveKd, WeightsSumToOneAndFollowConfidence) {
  Rng rng(5);
  TeacherBatch t = make_teacher(12, 6, 3, rng);
  const std::vector<int> labels{0, 1, 2, 1, 0, 2};
  for (std::size_t k = 1; k <= 8; ++k) {
    Tensor w = attentive_weight_matrix(t, labels, k);
    for (std::size_t b = 0; b < 6; ++b) {
      double s = 0.0;
      for (std::size_t i = 0; i < k; ++i) {
        EXPECT_GT(w[b * k + i], 0.0);
        s += w[b * k + i];
        for (std::size_t i2 = 0; i2 < k; ++i2) {
          const double pa = t.probs[layer_map(i + 1, k, 12) - 1][b * 3 + labels[b]];
          const double pb = t.probs[layer_map(i2 + 1, k, 12) - 1][b * 3 + labels[b]];
          if (pa > pb) EXPECT_GT(w[b * k + i], w[b * k + i2]);
        }
      }
      EXPECT_NEAR(s, 1.0, 1e-9);
    }
  }
}

TEST(AttentiveKd, TwoLayerCombinedLossOracle) {
  TeacherBatch t{2, 2, {Tensor({1, 2}, {std::exp(-0.1), 1 - std::exp(-0.1)}), Tensor({1, 2}, {std::exp(-2.3), 1 - std::exp(-2.3)})}};
  const std::vector<int> labels{0};
  Tape tape;
  std::vector<Var> student{tape.constant(Tensor({1, 2}, {0.4, -0.2})), tape.constant(Tensor({1, 2}, {1.5, 0.3}))};
  const double a = std::exp(-0.1), b = std::exp(-2.3);
  const double w0 = a / (a + b), w1 = b / (a + b);
  auto xent = [](double p0, double z0, double z1) {
    const double lse = std::log(std::exp(z0) + std::exp(z1));
    return -(p0 * (z0 - lse) + (1 - p0) * (z1 - lse));
  };
  const double oracle = w0 * xent(std::exp(-0.1), 0.4, -0.2) + w1 * xent(std::exp(-2.3), 1.5, 0.3);
  EXPECT_NEAR(attentive_kd_loss(t, student, labels, 2, 1.0).value()[0], oracle, 1e-12);
}

TEST(AttentiveKd, MissingTeacherLayerIsDataError) {
  Rng rng(6);
  TeacherBatch t = make_teacher(4, 2, 2, rng);
  t.probs.pop_back();
  const std::vector<int> labels{0, 1};
  Tape tape;
  std::vector<Var> student(2, tape.constant(Tensor({2, 2})));
  EXPECT_THROW(attentive_kd_loss(t, student, labels, 2, 1.0), DataError);
}

TEST(AttentiveKd, MatchesPerInstanceComposition) {
  Rng rng(7);
  TeacherBatch t = make_teacher(6, 4, 3, rng);
  const std::vector<int> labels{2, 0, 1, 1};
  Tape tape;
  std::vector<Var> student;
  for (int i = 0; i < 3; ++i) student.push_back(tape.constant(random_tensor({4, 3}, rng, -2, 2)));
  const double got = attentive_kd_loss(t, student, labels, 3, 1.5).value()[0];
  Tensor w = attentive_weight_matrix(t, labels, 3);
  double expected = 0.0;
  for (std::size_t b = 0; b < 4; ++b) {
    for (std::size_t i = 0; i < 3; ++i) {
      const Tensor& p = t.probs[layer_map(i + 1, 3, 6) - 1];
      Tape inner;
      Tensor z({3});
      for (std::size_t c = 0; c < 3; ++c) z[c] = student[i].value()[b * 3 + c];
      expected += w[b * 3 + i] * kd_instance_loss(p.data().subspan(b * 3, 3), inner.constant(z), 1.5).value()[0];
    }
  }
  EXPECT_NEAR(got, expected / 4.0, 1e-12);
}

TEST(AttentiveKd, GradientCheck) {
  Rng rng(8);
  TeacherBatch t = make_teacher(5, 3, 2, rng);
  const std::vector<int> labels{1, 0, 1};
  auto f = [&](Tape&, const std::vector<Var>& v) { return attentive_kd_loss(t, v, labels, 2, 1.0); };
  EXPECT_LE(grad_check(f, {random_tensor({3, 2}, rng), random_tensor({3, 2}, rng)}), 1e-5);
}

TEST(TotalLoss, Boundaries) {
  LossConfig c;
  EXPECT_DOUBLE_EQ(total_loss(1.0, 2.0, 0.5, c), 3.8);
  EXPECT_NEAR(total_loss(1.0, 2.0, 0.5, LossConfig{0.0, 4.0, 1.0}), 1.0 + 4.0 * 0.5, 1e-15);
  EXPECT_EQ(total_loss(1.0, 2.0, 0.5, LossConfig{1.0, 0.0, 1.0}), 2.0);
  Tape tape;
  Var v = total_loss(tape.constant(Tensor::scalar(1.0)), tape.constant(Tensor::scalar(2.0)),
                     tape.constant(Tensor::scalar(0.5)), c);
  EXPECT_NEAR(v.value()[0], 3.8, 1e-15);
}

TEST(LossConfig, Defaults) {
  LossConfig c;
  EXPECT_EQ(c.gamma, 0.8);
  EXPECT_EQ(c.beta, 4.0);
  EXPECT_EQ(c.temperature, 1.0);
  EXPECT_NO_THROW(c.validate());
  EXPECT_THROW((LossConfig{1.5, 4.0, 1.0}.validate()), ConfigError);
  EXPECT_THROW((LossConfig{0.5, -1.0, 1.0}.validate()), ConfigError);
  EXPECT_THROW((LossConfig{0.5, 1.0, 0.0}.validate()), ConfigError);
}

}  // namespace
}  // namespace adanas

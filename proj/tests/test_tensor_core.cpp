// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "adanas/errors.hpp"
#include "adanas/grad_check.hpp"
#include "adanas/ops.hpp"
#include "support/primitive_catalog.hpp"

namespace adanas {
namespace {

using testing::random_tensor;

// Naive conv with an explicitly padded buffer, written independently of conv1d.
std::vector<double> naive_conv(const std::vector<double>& x, const std::vector<double>& w, std::size_t d) {
  const std::size_t k = w.size(), pad = (k - 1) * d / 2, L = x.size();
  std::vector<double> padded(L + 2 * pad, 0.0);
  for (std::size_t i = 0; i < L; ++i) padded[i + pad] = x[i];
  std::vector<double> out(L, 0.0);
  for (std::size_t i = 0; i < L; ++i)
    for (std::size_t t = 0; t < k; ++t) out[i] += w[t] * padded[i + t * d];
  return out;
}

std::vector<double> naive_pool(const std::vector<double>& x, bool is_max) {
  std::vector<double> out;
  for (std::size_t i = 0; i < x.size(); ++i) {
    std::vector<double> window;
    if (i > 0) window.push_back(x[i - 1]);
    window.push_back(x[i]);
    if (i + 1 < x.size()) window.push_back(x[i + 1]);
    double acc = is_max ? window[0] : 0.0;
    for (double v : window) acc = is_max ? std::max(acc, v) : acc + v;
    out.push_back(is_max ? acc : acc / static_cast<double>(window.size()));
  }
  return out;
}

Tensor row3(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor({1, 1, n}, std::move(v));
}

TEST(Conv1d, ZeroInputGivesZeroOutput) {
  std::mt19937_64 rng(1);
  Tape tape;
  Var y = conv1d(tape.constant(Tensor({2, 3, 6})), tape.constant(random_tensor({4, 3, 5}, rng)), 2);
  for (double v : y.value().data()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(y.shape(), (Shape{2, 4, 6}));
}

TEST(Conv1d, IdentityStencil) {
  Tape tape;
  Tensor x = row3({0.5, -1.0, 2.0, 3.5, 7.0});
  Var y = conv1d(tape.constant(x), tape.constant(Tensor({1, 1, 3}, {0, 1, 0})), 1);
  EXPECT_EQ(y.value(), x);
}

TEST(Conv1d, OnesKernelMatchesNaiveOracle) {
  Tape tape;
  Var y = conv1d(tape.constant(row3({1, 2, 3, 4})), tape.constant(Tensor({1, 1, 3}, {1, 1, 1})), 1);
  std::vector<double> expected = naive_conv({1, 2, 3, 4}, {1, 1, 1}, 1);
  EXPECT_EQ(y.value().values(), expected);
  EXPECT_EQ(expected, (std::vector<double>{3, 6, 9, 7}));
}

TEST(Conv1d, DilatedMatchesNaiveOracle) {
  std::mt19937_64 rng(2);
  for (std::size_t k : {3, 5, 7}) {
    for (std::size_t d : {1, 2}) {
      Tensor x = random_tensor({1, 1, 11}, rng);
      Tensor w = random_tensor({1, 1, k}, rng);
      Tape tape;
      Var y = conv1d(tape.constant(x), tape.constant(w), d);
      std::vector<double> expected = naive_conv(x.values(), w.values(), d);
      for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_NEAR(y.value()[i], expected[i], 1e-12);
    }
  }
}

TEST(Conv1d, Errors) {
  Tape tape;
  Var x = tape.constant(Tensor({1, 2, 5}));
  EXPECT_THROW(conv1d(x, tape.constant(Tensor({2, 2, 4})), 1), ConfigError);
  EXPECT_THROW(conv1d(x, tape.constant(Tensor({2, 3, 3})), 1), DimensionError);
  EXPECT_THROW(conv1d(x, tape.constant(Tensor({2, 2, 3})), 0), ConfigError);
}

TEST(Conv1d, PreservesLengthForEveryCandidate) {
  std::mt19937_64 rng(3);
  for (std::size_t L : {1, 2, 5, 16}) {
    for (std::size_t k : {3, 5, 7}) {
      for (std::size_t d : {1, 2}) {
        Tape tape;
        Var y = conv1d(tape.constant(random_tensor({2, 3, L}, rng)), tape.constant(random_tensor({3, 3, k}, rng)), d);
        EXPECT_EQ(y.shape(), (Shape{2, 3, L}));
      }
    }
    Tape tape;
    Var x = tape.constant(random_tensor({2, 3, L}, rng));
    EXPECT_EQ(pool1d(x, PoolKind::max).shape(), (Shape{2, 3, L}));
    EXPECT_EQ(pool1d(x, PoolKind::avg).shape(), (Shape{2, 3, L}));
  }
}

TEST(Pool1d, ConstantInvariance) {
  Tape tape;
  Var x = tape.constant(Tensor({2, 2, 5}, 3.25));
  EXPECT_EQ(pool1d(x, PoolKind::max).value(), x.value());
  EXPECT_EQ(pool1d(x, PoolKind::avg).value(), x.value());
}

TEST(Pool1d, MaxAndAvgMatchNaiveOracle) {
  Tape tape;
  Var x = tape.constant(row3({1, 2, 3, 4}));
  EXPECT_EQ(pool1d(x, PoolKind::max).value().values(), naive_pool({1, 2, 3, 4}, true));
  EXPECT_EQ(pool1d(x, PoolKind::max).value().values(), (std::vector<double>{2, 3, 4, 4}));
  std::vector<double> avg = pool1d(x, PoolKind::avg).value().values();
  std::vector<double> oracle = naive_pool({1, 2, 3, 4}, false);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(avg[i], oracle[i], 1e-15);
  EXPECT_NEAR(avg[0], 1.5, 1e-15);
  EXPECT_NEAR(avg[3], 3.5, 1e-15);
}

TEST(Pool1d, MaxTieGradientGoesToLowestIndex) {
  Tape tape;
  Var x = tape.leaf(row3({5, 5, 1}));
  Var y = pool1d(x, PoolKind::max);
  tape.backward(select(reshape(y, {3}), 0));
  EXPECT_EQ(tape.grad(x).values(), (std::vector<double>{1, 0, 0}));
}

TEST(BatchNorm, FixedPointOnStandardizedInput) {
  // mean 0, biased variance 1
  Tensor x({1, 1, 4}, {-1.5, -0.5, 0.5, 1.5});
  const double s = std::sqrt(1.25);
  for (auto& v : x.data()) v /= s;
  Tape tape;
  BatchNormStats stats(1);
  Var y = batchnorm(tape.constant(x), tape.constant(Tensor({1}, 1.0)), tape.constant(Tensor({1}, 0.0)), stats,
                    BnMode::train);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(y.value()[i], x[i], 1e-5);
}

TEST(BatchNorm, ZeroGammaCollapsesToBeta) {
  std::mt19937_64 rng(4);
  Tape tape;
  BatchNormStats stats(3);
  Var y = batchnorm(tape.constant(random_tensor({2, 3, 4}, rng)), tape.constant(Tensor({3}, 0.0)),
                    tape.constant(Tensor({3}, {0.5, -1.0, 2.0})), stats, BnMode::train);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t l = 0; l < 4; ++l) EXPECT_EQ(y.value()[(b * 3 + c) * 4 + l], (std::vector<double>{0.5, -1.0, 2.0})[c]);
}

TEST(BatchNorm, MatchesDirectFormula) {
  const std::vector<double> x{1, 2, 3, 4};
  double m = 0.0;
  for (double v : x) m += v;
  m /= 4.0;
  double var = 0.0;
  for (double v : x) var += (v - m) * (v - m);
  var /= 4.0;

  Tape tape;
  BatchNormStats stats(1);
  Var y = batchnorm(tape.constant(row3(x)), tape.constant(Tensor({1}, 1.0)), tape.constant(Tensor({1}, 0.0)), stats,
                    BnMode::train);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(y.value()[i], (x[i] - m) / std::sqrt(var + 1e-5), 1e-12);

  // Running statistics: momentum 0.1, unbiased variance.
  EXPECT_NEAR(stats.running_mean[0], 0.1 * m, 1e-15);
  EXPECT_NEAR(stats.running_var[0], 0.9 + 0.1 * var * 4.0 / 3.0, 1e-15);
}

TEST(BatchNorm, EvalUsesRunningStatistics) {
  Tape tape;
  BatchNormStats stats(1);
  stats.running_mean = {2.0};
  stats.running_var = {4.0};
  Var y = batchnorm(tape.constant(row3({2, 4})), tape.constant(Tensor({1}, 3.0)), tape.constant(Tensor({1}, 1.0)),
                    stats, BnMode::eval);
  EXPECT_NEAR(y.value()[0], 1.0, 1e-12);
  EXPECT_NEAR(y.value()[1], 1.0 + 3.0 * 2.0 / std::sqrt(4.0 + 1e-5), 1e-12);
  EXPECT_EQ(stats.running_mean[0], 2.0);
}

TEST(BatchNorm, DegenerateBatchThrows) {
  Tape tape;
  BatchNormStats stats(1);
  EXPECT_THROW(batchnorm(tape.constant(Tensor({1, 1, 1}, 1.0)), tape.constant(Tensor({1}, 1.0)),
                         tape.constant(Tensor({1}, 0.0)), stats, BnMode::train),
               DegenerateError);
}

TEST(SoftmaxXent, UniformLogitsGiveLogN) {
  for (std::size_t n : {2, 3, 10}) {
    Tape tape;
    Tensor target({1, n}, 0.0);
    target[n - 1] = 1.0;
    Var loss = softmax_xent(tape.constant(Tensor({1, n}, 0.7)), target);
    EXPECT_NEAR(loss.value()[0], std::log(static_cast<double>(n)), 1e-12);
  }
}

TEST(SoftmaxXent, SaturatedIsNearZero) {
  Tape tape;
  Var loss = softmax_xent(tape.constant(Tensor({1, 2}, {10, -10})), Tensor({1, 2}, {1, 0}));
  EXPECT_LE(loss.value()[0], 1e-4);
}

TEST(SoftmaxXent, MatchesDirectFormula) {
  const std::vector<double> z{1, 2, 3}, p{0.2, 0.3, 0.5};
  const double lse = std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0));
  double expected = 0.0;
  for (std::size_t i = 0; i < 3; ++i) expected -= p[i] * (z[i] - lse);
  Tape tape;
  Var loss = softmax_xent(tape.constant(Tensor({1, 3}, z)), Tensor({1, 3}, p));
  EXPECT_NEAR(loss.value()[0], expected, 1e-12);
}

TEST(SoftmaxXent, RejectsNonNormalizedTarget) {
  Tape tape;
  EXPECT_THROW(softmax_xent(tape.constant(Tensor({1, 2})), Tensor({1, 2}, {0.5, 0.6})), ValidationError);
}

TEST(Primitives, ReluOfNegativeIsZero) {
  Tape tape;
  Var y = relu(tape.constant(Tensor({3}, {-0.5, -2.0, -1e-9})));
  for (double v : y.value().data()) EXPECT_EQ(v, 0.0);
}

TEST(Primitives, WeightedSumSelectsFirst) {
  std::mt19937_64 rng(5);
  Tape tape;
  Var a = tape.constant(random_tensor({2, 3}, rng));
  Var b = tape.constant(random_tensor({2, 3}, rng));
  Var c = tape.constant(random_tensor({2, 3}, rng));
  Var y = weighted_sum({a, b, c}, tape.constant(Tensor({3}, {1, 0, 0})));
  EXPECT_EQ(y.value(), a.value());
}

TEST(Primitives, MatmulTwoByTwo) {
  Tape tape;
  const std::vector<double> a{1, 2, 3, 4}, b{5, 6, 7, 8};
  std::vector<double> expected(4, 0.0);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j)
      for (std::size_t k = 0; k < 2; ++k) expected[i * 2 + j] += a[i * 2 + k] * b[k * 2 + j];
  Var y = matmul(tape.constant(Tensor({2, 2}, a)), tape.constant(Tensor({2, 2}, b)));
  EXPECT_EQ(y.value().values(), expected);
  EXPECT_EQ(expected, (std::vector<double>{19, 22, 43, 50}));
}

TEST(Primitives, ShapeMismatchThrowsDimensionError) {
  Tape tape;
  EXPECT_THROW(add(tape.constant(Tensor({2})), tape.constant(Tensor({3}))), DimensionError);
  EXPECT_THROW(matmul(tape.constant(Tensor({2, 3})), tape.constant(Tensor({2, 3}))), DimensionError);
  EXPECT_THROW(weighted_sum({tape.constant(Tensor({2}))}, tape.constant(Tensor({2}))), DimensionError);
}

TEST(Primitives, LogRejectsNonPositive) {
  Tape tape;
  EXPECT_THROW(adanas::log(tape.constant(Tensor({2}, {1.0, 0.0}))), ValidationError);
}

TEST(Primitives, WeightedSumGradientIsProportionalToWeights) {
  std::mt19937_64 rng(6);
  Tape tape;
  Var a = tape.leaf(random_tensor({2, 2}, rng));
  Var b = tape.leaf(random_tensor({2, 2}, rng));
  const Tensor w({2}, {0.25, 0.75});
  Var y = weighted_sum({a, b}, tape.constant(w));
  Tensor upstream = random_tensor({2, 2}, rng);
  tape.backward(testing::project(y, upstream));
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(tape.grad(a)[i], 0.25 * upstream[i]);
    EXPECT_EQ(tape.grad(b)[i], 0.75 * upstream[i]);
  }
}

TEST(Primitives, SharedInputGradientsAccumulate) {
  Tape tape;
  Var x = tape.leaf(Tensor({2}, {1.5, -2.0}));
  tape.backward(sum(add(mul(x, x), x)));
  EXPECT_EQ(tape.grad(x).values(), (std::vector<double>{4.0, -3.0}));
}

TEST(Primitives, StraightThroughIsOneHotWithPassThroughGradient) {
  Tape tape;
  Var y = tape.leaf(Tensor({3}, {0.2, 0.5, 0.3}));
  Var h = straight_through(y);
  EXPECT_EQ(h.value().values(), (std::vector<double>{0, 1, 0}));
  const Tensor g({3}, {0.3, -1.2, 2.5});
  tape.backward(testing::project(h, g));
  EXPECT_EQ(tape.grad(y), g);

  Tape tie;
  EXPECT_EQ(straight_through(tie.leaf(Tensor({2}, {0.5, 0.5}))).value().values(), (std::vector<double>{1, 0}));
}

TEST(Primitives, ForwardIsDeterministic) {
  auto run = [] {
    std::mt19937_64 rng(7);
    Tape tape;
    Var x = tape.constant(random_tensor({2, 3, 8}, rng));
    BatchNormStats stats(3);
    Var y = conv1d(x, tape.constant(random_tensor({3, 3, 5}, rng)), 2);
    y = batchnorm(relu(y), tape.constant(Tensor({3}, 1.0)), tape.constant(Tensor({3}, 0.0)), stats, BnMode::train);
    return pool1d(y, PoolKind::avg).value();
  };
  EXPECT_EQ(run(), run());
}

TEST(GradCheck, Polynomial) {
  const double err =
      grad_check([](Tape&, const std::vector<Var>& v) { return sum(mul(v[0], v[0])); }, {Tensor({2}, {1, 2})});
  EXPECT_LE(err, 1e-7);
}

TEST(GradCheck, ConvReluXentComposite) {
  std::mt19937_64 rng(8);
  Tensor target = testing::random_distribution_rows(2, 3, rng);
  auto f = [target](Tape&, const std::vector<Var>& v) {
    Var h = relu(conv1d(v[0], v[1], 1));
    return softmax_xent(mean_positions(h), target);
  };
  EXPECT_LE(grad_check(f, {random_tensor({2, 2, 6}, rng), random_tensor({3, 2, 3}, rng)}), 1e-5);
}

TEST(GradCheck, MaxPoolAtStrictMax) {
  auto f = [](Tape&, const std::vector<Var>& v) {
    return testing::project(pool1d(v[0], PoolKind::max), Tensor({1, 1, 5}, {0.3, -1.0, 2.0, 0.5, 1.0}));
  };
  EXPECT_LE(grad_check(f, {row3({0.1, 0.9, -0.4, 0.6, 0.2})}), 1e-5);
}

TEST(GradCheck, EveryPrimitivePassesOnRandomInputs) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 5; ++trial) {
    for (const auto& c : testing::primitive_cases(rng)) {
      EXPECT_LE(grad_check(c.fn, c.inputs), 1e-5) << c.name << " trial " << trial;
    }
  }
}

TEST(GradCheck, ReportsWrongGradient) {
  // A primitive whose backward is deliberately off by a factor of two.
  auto f = [](Tape& tape, const std::vector<Var>& v) {
    Var x = v[0];
    Var y = tape.record("bad_square", Tensor({1}, x.value()[0] * x.value()[0]), {x}, [x](Tape& t, std::size_t out) {
      t.grad_buffer(x.id())[0] += 4.0 * t.value(x)[0] * t.grad(out)[0];
    });
    return y;
  };
  EXPECT_GT(grad_check(f, {Tensor({1}, {1.5})}), 0.1);
}

}  // namespace
}  // namespace adanas

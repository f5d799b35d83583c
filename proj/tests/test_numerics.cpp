// Copyright 2026 The AALBERT Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <limits>

#include "aalbert/adamw.hpp"
#include "aalbert/errors.hpp"
#include "aalbert/log.hpp"
#include "aalbert/ops.hpp"
#include "gradcheck.hpp"

namespace aalbert {
namespace {

using testing::gradcheck;
using testing::project;
using testing::random_tensor;
using Td = Tensor<double>;
using Tf = Tensor<float>;

constexpr double kGradTolerance = 1e-4;

TEST(Primitives, SoftmaxOfEqualLogitsIsUniform) {
  const auto y = softmax(Tf({2}, {0.0f, 0.0f}));
  EXPECT_FLOAT_EQ(y.values()[0], 0.5f);
  EXPECT_FLOAT_EQ(y.values()[1], 0.5f);
}

TEST(Primitives, LayerNormOfConstantRowIsZero) {
  const auto y = layer_norm(Tf({2, 3}, {4, 4, 4, -1, -1, -1}), Tf::full({3}, 1.0f), Tf::zeros({3}));
  for (float v : y.values()) EXPECT_EQ(v, 0.0f);
}

TEST(Primitives, IdentityMatmul) {
  Rng rng(3);
  const auto a = random_tensor({3, 3}, rng, 1.0, false);
  const auto eye = Td({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  const auto y = matmul(eye, a);
  for (std::size_t i = 0; i < 9; ++i) EXPECT_EQ(y.values()[i], a.values()[i]);
}

TEST(Primitives, ShapeMismatchNamesOpAndShapes) {
  try {
    matmul(Tf::zeros({2, 3}), Tf::zeros({4, 5}));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("matmul"), std::string::npos);
    EXPECT_NE(what.find("[2,3]"), std::string::npos);
    EXPECT_NE(what.find("[4,5]"), std::string::npos);
  }
  EXPECT_THROW(add(Tf::zeros({2}), Tf::zeros({3})), ShapeError);
  EXPECT_THROW(layer_norm(Tf::zeros({2, 3}), Tf::zeros({2}), Tf::zeros({2})), ShapeError);
  EXPECT_THROW(Tf({2, 2}, {1, 2, 3}), ShapeError);
}

TEST(Primitives, SoftmaxRowsAreDistributions) {
  Rng rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t rows = 1 + rng.below(6), cols = 1 + rng.below(40);
    std::vector<float> v(rows * cols);
    for (auto& x : v) x = static_cast<float>(rng.normal() * 20.0);
    const auto y = softmax(Tf({rows, cols}, v));
    for (std::size_t r = 0; r < rows; ++r) {
      double total = 0.0;
      for (std::size_t c = 0; c < cols; ++c) {
        const float p = y.values()[r * cols + c];
        EXPECT_GE(p, 0.0f);
        total += p;
      }
      EXPECT_NEAR(total, 1.0, 1e-6);
    }
  }
}

TEST(Autodiff, SquareSumGradient) {
  Td w({2}, {1.0, 2.0}, true);
  backward(sum(mul(w, w)));
  EXPECT_DOUBLE_EQ(w.grad()[0], 2.0);
  EXPECT_DOUBLE_EQ(w.grad()[1], 4.0);
}

TEST(Autodiff, ReusedTensorAccumulates) {
  Td w({1, 3}, {0.5, -1.0, 2.0}, true);
  const Td x1({3, 1}, {1.0, 2.0, 3.0});
  const Td x2({3, 1}, {-4.0, 0.5, 7.0});
  backward(add(sum(matmul(w, x1)), sum(matmul(w, x2))));
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_DOUBLE_EQ(w.grad()[i], x1.values()[i] + x2.values()[i]);
  }
}

TEST(Autodiff, KUsesEqualSumOfSingleUses) {
  Rng rng(5);
  auto w = random_tensor({3, 4}, rng);
  std::vector<Td> xs;
  for (int k = 0; k < 4; ++k) xs.push_back(random_tensor({2, 3}, rng, 1.0, false));

  std::vector<double> expected(w.numel(), 0.0);
  for (const auto& x : xs) {
    w.zero_grad();
    backward(project(gelu(matmul(x, w))));
    for (std::size_t i = 0; i < expected.size(); ++i) expected[i] += w.grad()[i];
  }
  w.zero_grad();
  Td total = project(gelu(matmul(xs[0], w)));
  for (std::size_t k = 1; k < xs.size(); ++k) total = add(total, project(gelu(matmul(xs[k], w))));
  backward(total);
  for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_NEAR(w.grad()[i], expected[i], 1e-12);
}

TEST(Autodiff, NonScalarLossRejected) {
  Td w({2}, {1.0, 2.0}, true);
  EXPECT_THROW(backward(mul(w, w)), ShapeError);
}

TEST(Autodiff, TapeIsTopological) {
  Rng rng(8);
  auto a = random_tensor({3, 3}, rng);
  auto b = random_tensor({3, 3}, rng);
  const auto loss = sum(softmax(add(matmul(a, b), matmul(b, a))));
  const auto tape = Tape<double>::build(loss);
  EXPECT_TRUE(tape.is_topologically_ordered());
  EXPECT_EQ(tape.entries().back(), loss.node().get());
}

TEST(Autodiff, NoGradGuardSkipsRecording) {
  Td w({2}, {1.0, 2.0}, true);
  NoGradGuard guard;
  const auto y = mul(w, w);
  EXPECT_FALSE(y.requires_grad());
}

TEST(Autodiff, ThreeLayerMlpMatchesFiniteDifferences) {
  Rng rng(2024);
  auto x = random_tensor({5, 4}, rng, 1.0, false);
  auto w1 = random_tensor({4, 8}, rng, 0.5), b1 = random_tensor({8}, rng, 0.1);
  auto w2 = random_tensor({8, 8}, rng, 0.5), b2 = random_tensor({8}, rng, 0.1);
  auto w3 = random_tensor({8, 3}, rng, 0.5), b3 = random_tensor({3}, rng, 0.1);
  const std::vector<int> labels{0, 2, 1, 1, 0};
  auto loss = [&] {
    auto h = gelu(linear(x, w1, b1));
    h = gelu(linear(h, w2, b2));
    return cross_entropy(linear(h, w3, b3), labels);
  };
  const auto r = gradcheck({w1, b1, w2, b2, w3, b3}, loss);
  EXPECT_LT(r.max_relative_error, kGradTolerance) << "worst tensor " << r.worst_tensor;
}

// One finite-difference check per primitive on random small inputs.
class PrimitiveGradcheck : public ::testing::Test {
 protected:
  Rng rng{777};
};

TEST_F(PrimitiveGradcheck, Matmul) {
  auto a = random_tensor({3, 4}, rng), b = random_tensor({4, 2}, rng);
  EXPECT_LT(gradcheck({a, b}, [&] { return project(matmul(a, b)); }).max_relative_error, kGradTolerance);
}

TEST_F(PrimitiveGradcheck, ElementwiseAddSubMul) {
  auto a = random_tensor({2, 3}, rng), b = random_tensor({2, 3}, rng);
  EXPECT_LT(gradcheck({a, b}, [&] { return project(add(a, b)); }).max_relative_error, kGradTolerance);
  EXPECT_LT(gradcheck({a, b}, [&] { return project(sub(a, b)); }).max_relative_error, kGradTolerance);
  EXPECT_LT(gradcheck({a, b}, [&] { return project(mul(a, b)); }).max_relative_error, kGradTolerance);
}

TEST_F(PrimitiveGradcheck, BroadcastAndScalars) {
  auto a = random_tensor({3, 4}, rng), bias = random_tensor({4}, rng), s = random_tensor({}, rng);
  EXPECT_LT(gradcheck({a, bias}, [&] { return project(add_row(a, bias)); }).max_relative_error,
            kGradTolerance);
  EXPECT_LT(gradcheck({a, s}, [&] { return project(mul_scalar(a, s)); }).max_relative_error,
            kGradTolerance);
  EXPECT_LT(gradcheck({a}, [&] { return project(scale(a, 0.37)); }).max_relative_error, kGradTolerance);
}

TEST_F(PrimitiveGradcheck, TransposeReshape) {
  auto a = random_tensor({3, 4}, rng);
  EXPECT_LT(gradcheck({a}, [&] { return project(transpose(a)); }).max_relative_error, kGradTolerance);
  EXPECT_LT(gradcheck({a}, [&] { return project(reshape(a, {2, 6})); }).max_relative_error,
            kGradTolerance);
}

TEST_F(PrimitiveGradcheck, SoftmaxLayerNormGelu) {
  auto a = random_tensor({3, 5}, rng);
  auto gamma = random_tensor({5}, rng), beta = random_tensor({5}, rng);
  EXPECT_LT(gradcheck({a}, [&] { return project(softmax(a)); }).max_relative_error, kGradTolerance);
  EXPECT_LT(gradcheck({a, gamma, beta}, [&] { return project(layer_norm(a, gamma, beta)); })
                .max_relative_error,
            kGradTolerance);
  EXPECT_LT(gradcheck({a}, [&] { return project(gelu(a)); }).max_relative_error, kGradTolerance);
}

TEST_F(PrimitiveGradcheck, Losses) {
  auto pred = random_tensor({4, 3}, rng);
  const auto target = random_tensor({4, 3}, rng, 1.0, false);
  const std::vector<std::uint8_t> mask{1, 0, 1, 1};
  EXPECT_LT(gradcheck({pred}, [&] { return l1_loss(pred, target, mask); }).max_relative_error,
            kGradTolerance);
  const std::vector<int> labels{2, 0, 1, 2};
  EXPECT_LT(gradcheck({pred}, [&] { return cross_entropy(pred, labels); }).max_relative_error,
            kGradTolerance);
}

TEST_F(PrimitiveGradcheck, ReductionsAndSlicing) {
  auto a = random_tensor({3, 4}, rng), b = random_tensor({2, 4}, rng), c = random_tensor({3, 2}, rng);
  EXPECT_LT(gradcheck({a}, [&] { return project(mean(a, 0)); }).max_relative_error, kGradTolerance);
  EXPECT_LT(gradcheck({a}, [&] { return project(mean(a, 1)); }).max_relative_error, kGradTolerance);
  EXPECT_LT(gradcheck({a}, [&] { return sum(a); }).max_relative_error, kGradTolerance);
  EXPECT_LT(gradcheck({a, b},
                      [&] {
                        const std::vector<Td> parts{a, b};
                        return project(concat<double>(parts, 0));
                      })
                .max_relative_error,
            kGradTolerance);
  EXPECT_LT(gradcheck({a, c},
                      [&] {
                        const std::vector<Td> parts{a, c};
                        return project(concat<double>(parts, 1));
                      })
                .max_relative_error,
            kGradTolerance);
  EXPECT_LT(gradcheck({a}, [&] { return project(slice_cols(a, 1, 3)); }).max_relative_error,
            kGradTolerance);
}

TEST_F(PrimitiveGradcheck, LinearDropoutWeightedSum) {
  auto x = random_tensor({3, 4}, rng), w = random_tensor({4, 2}, rng), b = random_tensor({2}, rng);
  EXPECT_LT(gradcheck({x, w, b}, [&] { return project(linear(x, w, b)); }).max_relative_error,
            kGradTolerance);
  EXPECT_LT(gradcheck({x},
                      [&] {
                        Rng drop(4);  // same mask on every evaluation
                        return project(dropout(x, 0.3, drop));
                      })
                .max_relative_error,
            kGradTolerance);
  auto p1 = random_tensor({2, 3}, rng), p2 = random_tensor({2, 3}, rng), weights = random_tensor({2}, rng);
  EXPECT_LT(gradcheck({p1, p2, weights},
                      [&] {
                        const std::vector<Td> parts{p1, p2};
                        return project(weighted_sum<double>(parts, weights));
                      })
                .max_relative_error,
            kGradTolerance);
}

TEST(AdamW, ZeroGradientWithoutDecayLeavesParameters) {
  Tf p({3}, {1.0f, -2.0f, 0.5f}, true);
  AdamW<float> opt({p}, {.learning_rate = 0.1, .weight_decay = 0.0});
  backward(scale(sum(p), 0.0f));
  opt.step();
  EXPECT_EQ(p.values()[0], 1.0f);
  EXPECT_EQ(p.values()[1], -2.0f);
  EXPECT_EQ(p.values()[2], 0.5f);
}

TEST(AdamW, FirstStepMovesByLearningRate) {
  Td p({1}, {0.0}, true);
  AdamW<double> opt({p}, {.learning_rate = 0.1, .beta1 = 0.9, .beta2 = 0.999, .epsilon = 1e-8,
                          .weight_decay = 0.0});
  backward(sum(p));  // g = 1
  opt.step();
  EXPECT_NEAR(p.values()[0], -0.1, 1e-8);
  EXPECT_EQ(opt.step_count(), 1);
}

TEST(AdamW, DecoupledDecayScalesParameters) {
  Td p({2}, {2.0, -3.0}, true);
  AdamW<double> opt({p}, {.learning_rate = 0.1, .weight_decay = 0.01});
  backward(scale(sum(p), 0.0));  // g = 0
  opt.step();
  EXPECT_NEAR(p.values()[0], 2.0 * (1.0 - 0.001), 1e-15);
  EXPECT_NEAR(p.values()[1], -3.0 * (1.0 - 0.001), 1e-15);
}

TEST(AdamW, WithoutDecayReproducesAdamBitwise) {
  Rng rng(11);
  std::vector<float> init(6);
  for (auto& x : init) x = static_cast<float>(rng.normal());
  Tf p({6}, init, true);
  const AdamWSettings s{.learning_rate = 1e-2, .weight_decay = 0.0};
  AdamW<float> opt({p}, s);

  // Reference Adam, written independently.
  std::vector<float> ref = init, m(6, 0.0f), v(6, 0.0f);
  for (int t = 1; t <= 5; ++t) {
    std::vector<float> g(6);
    for (auto& x : g) x = static_cast<float>(rng.normal());
    opt.zero_grad();
    backward(sum(mul(p, Tf({6}, g))));
    opt.step();
    const float c1 = 1.0f - static_cast<float>(std::pow(0.9, t));
    const float c2 = 1.0f - static_cast<float>(std::pow(0.999, t));
    for (int i = 0; i < 6; ++i) {
      m[i] = 0.9f * m[i] + (1.0f - 0.9f) * g[i];
      v[i] = 0.999f * v[i] + (1.0f - 0.999f) * g[i] * g[i];
      ref[i] -= 1e-2f * (m[i] / c1) / (std::sqrt(v[i] / c2) + 1e-8f);
    }
    for (int i = 0; i < 6; ++i) ASSERT_EQ(p.values()[i], ref[i]) << "step " << t << " index " << i;
  }
}

TEST(AdamW, NonFiniteGradientSkipsGroupButAdvancesCounter) {
  Tf bad({2}, {1.0f, 1.0f}, true);
  Tf good({1}, {1.0f}, true);
  AdamW<float> opt({bad, good}, {.learning_rate = 0.1, .weight_decay = 0.0});
  const float inf = std::numeric_limits<float>::infinity();
  backward(add(sum(mul(bad, Tf({2}, {inf, 1.0f}))), sum(good)));
  log::ScopedCapture capture;
  opt.step();
  EXPECT_EQ(capture.warnings(), 1);
  EXPECT_EQ(opt.step_count(), 1);
  EXPECT_EQ(bad.values()[0], 1.0f);
  EXPECT_EQ(bad.values()[1], 1.0f);
  EXPECT_LT(good.values()[0], 1.0f);
}

TEST(AdamW, StateRoundTrip) {
  Tf p({3}, {1.0f, 2.0f, 3.0f}, true);
  AdamW<float> opt({p}, {.learning_rate = 0.05});
  backward(sum(mul(p, p)));
  opt.step();
  const auto path = std::filesystem::temp_directory_path() / "aalbert_test_state.optim";
  opt.save_state(path);
  Tf q({3}, {0.0f, 0.0f, 0.0f}, true);
  AdamW<float> restored({q}, {});
  restored.load_state(path);
  EXPECT_EQ(restored.step_count(), 1);
  EXPECT_EQ(restored.first_moments(), opt.first_moments());
  EXPECT_EQ(restored.second_moments(), opt.second_moments());
  EXPECT_EQ(restored.settings().learning_rate, 0.05);
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace aalbert

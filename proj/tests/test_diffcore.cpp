#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "test_util.hpp"
#include "tcgl/autodiff.hpp"
#include "tcgl/gradcheck.hpp"
#include "tcgl/verify.hpp"

using namespace tcgl;
using tcgl::testing::random_tensor;

namespace {

Tensor<double> vec(std::vector<double> v) { return Tensor<double>::vector(std::move(v)); }

Tensor<double> leaf_value(std::vector<double> v) { return Tensor<double>::vector(std::move(v), true); }

}  // namespace

TEST(Tensor, RejectsMismatchedData) {
  EXPECT_THROW(Tensor<double>(Shape{2, 3}, std::vector<double>(5)), std::invalid_argument);
  EXPECT_THROW(Tensor<double>(Shape{0, 3}), std::invalid_argument);
  EXPECT_THROW(Tensor<double>(Shape{2, 2, 2}), std::invalid_argument);
  const Tensor<double> t(Shape{2, 3});
  EXPECT_EQ(t.size(), element_count(t.shape()));
}

TEST(Forward, ReluClampsNegatives) {
  Tape<double> tape;
  const auto y = relu(tape.constant(vec({-1.0, 2.0})));
  EXPECT_EQ(y.value(), vec({0.0, 2.0}));
}

TEST(Forward, MatmulByIdentity) {
  Rng rng(3);
  Tape<double> tape;
  const auto x = random_tensor<double>(rng, Shape{4, 5});
  const auto y = matmul(tape.constant(x), tape.constant(Tensor<double>::identity(5)));
  EXPECT_EQ(y.value(), x);
}

TEST(Forward, L2NormalizeThreeFour) {
  Tape<double> tape;
  const auto y = l2_normalize(tape.constant(vec({3.0, 4.0})));
  EXPECT_NEAR(y.value()[0], 0.6, 1e-12);
  EXPECT_NEAR(y.value()[1], 0.8, 1e-12);
  EXPECT_EQ(tape.diagnostics().guarded_normalizations, 0u);
}

TEST(Forward, L2NormalizeFlagsTinyNorms) {
  Tape<double> tape;
  const auto y = l2_normalize(tape.constant(vec({0.0, 0.0})));
  EXPECT_EQ(tape.diagnostics().guarded_normalizations, 1u);
  EXPECT_EQ(y.value(), vec({0.0, 0.0}));
}

TEST(Forward, ShapeMismatchNamesShapes) {
  Tape<double> tape;
  const auto a = tape.constant(Tensor<double>(Shape{2, 3}));
  const auto b = tape.constant(Tensor<double>(Shape{4, 2}));
  try {
    matmul(a, b);
    FAIL() << "matmul accepted [2x3] x [4x2]";
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[4x2]"), std::string::npos) << msg;
  }
  EXPECT_THROW(add(a, b), std::invalid_argument);
}

TEST(Forward, NamedDispatch) {
  Tape<double> tape;
  const auto x = tape.constant(vec({-1.0, 2.0}));
  EXPECT_EQ(forward<double>("relu", {x}).value(), relu(x).value());
  EXPECT_THROW(forward<double>("conv3d", {x}), std::invalid_argument);
  EXPECT_THROW(forward<double>("add", {x}), std::invalid_argument);
}

TEST(Forward, SoftmaxMatchesDirectFormula) {
  Rng rng(11);
  Tape<double> tape;
  const auto x = random_tensor<double>(rng, Shape{3, 5}, -5, 5);
  const auto s = softmax(tape.constant(x)).value();
  const auto ls = log_softmax(tape.constant(x)).value();
  const auto lse = logsumexp(tape.constant(x)).value();
  for (std::size_t r = 0; r < 3; ++r) {
    double z = 0;
    for (std::size_t c = 0; c < 5; ++c) z += std::exp(x(r, c));
    EXPECT_NEAR(lse[r], std::log(z), 1e-12);
    double total = 0;
    for (std::size_t c = 0; c < 5; ++c) {
      EXPECT_NEAR(s(r, c), std::exp(x(r, c)) / z, 1e-14);
      EXPECT_NEAR(ls(r, c), x(r, c) - std::log(z), 1e-12);
      total += s(r, c);
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(Forward, LogsumexpSurvivesLargeLogits) {
  Tape<double> tape;
  const auto v = logsumexp(tape.constant(vec({1000.0, 1000.0}))).value().item();
  EXPECT_NEAR(v, 1000.0 + std::log(2.0), 1e-9);
}

TEST(Forward, MatmulMatchesLoops) {
  Rng rng(5);
  const auto a = random_tensor<double>(rng, Shape{3, 4});
  const auto b = random_tensor<double>(rng, Shape{4, 2});
  Tape<double> tape;
  const auto c = matmul(tape.constant(a), tape.constant(b)).value();
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 2; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < 4; ++k) s += a(i, k) * b(k, j);
      EXPECT_NEAR(c(i, j), s, 1e-14);
    }
}

TEST(Backward, SquareAtThree) {
  Tape<double> tape;
  const auto x = tape.leaf(Tensor<double>::scalar(3.0, true));
  const auto g = backward(hadamard(x, x));
  EXPECT_DOUBLE_EQ(g[x].item(), 6.0);
}

TEST(Backward, MeanSplitsEvenly) {
  Tape<double> tape;
  const auto x = tape.leaf(leaf_value({1.5, -4.0}));
  const auto g = backward(mean(x));
  EXPECT_EQ(g[x], vec({0.5, 0.5}));
}

TEST(Backward, UnusedLeafGetsZeros) {
  Tape<double> tape;
  const auto x = tape.leaf(leaf_value({1.0, 2.0}));
  const auto unused = tape.leaf(leaf_value({7.0, 8.0, 9.0}));
  const auto g = backward(sum(x));
  EXPECT_EQ(g[unused], vec({0.0, 0.0, 0.0}));
}

TEST(Backward, RejectsNonScalarLoss) {
  Tape<double> tape;
  const auto x = tape.leaf(leaf_value({1.0, 2.0}));
  EXPECT_THROW(backward(x), std::invalid_argument);
}

TEST(Backward, ReluSubgradientAtZeroIsZero) {
  Tape<double> tape;
  const auto x = tape.leaf(leaf_value({0.0, 1.0, -1.0}));
  const auto g = backward(sum(relu(x)));
  EXPECT_EQ(g[x], vec({0.0, 1.0, 0.0}));
}

TEST(Backward, GradientsAccumulateOverReuse) {
  Tape<double> tape;
  const auto x = tape.leaf(leaf_value({2.0}));
  // y = x + 3x, dy/dx = 4
  const auto g = backward(sum(add(x, scale(x, 3.0))));
  EXPECT_DOUBLE_EQ(g[x][0], 4.0);
}

TEST(BackwardProperty, LinearInTheLoss) {
  Rng rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    const auto xv = random_tensor<double>(rng, Shape{3, 4});
    const auto wv = random_tensor<double>(rng, Shape{4, 2});
    auto run = [&](int which) {
      Tape<double> tape;
      Tensor<double> xl = xv, wl = wv;
      xl.set_requires_grad(true);
      wl.set_requires_grad(true);
      const auto x = tape.leaf(xl), w = tape.leaf(wl);
      const auto l1 = sum(sigmoid(matmul(x, w)));
      const auto l2 = mean(hadamard(x, x));
      const auto loss = which == 0 ? add(l1, l2) : (which == 1 ? l1 : l2);
      const auto g = backward(loss);
      return std::pair{g[x], g[w]};
    };
    const auto both = run(0), first = run(1), second = run(2);
    for (std::size_t i = 0; i < xv.size(); ++i) EXPECT_NEAR(both.first[i], first.first[i] + second.first[i], 1e-14);
    for (std::size_t i = 0; i < wv.size(); ++i) EXPECT_NEAR(both.second[i], first.second[i] + second.second[i], 1e-14);
  }
}

TEST(BackwardProperty, RepeatedForwardIsBitIdentical) {
  Rng rng(8);
  const auto xv = random_tensor<double>(rng, Shape{4, 6});
  auto once = [&] {
    Tape<double> tape;
    const auto x = tape.leaf(Tensor<double>(xv.shape(), xv.values(), true));
    const auto y = logsumexp(l2_normalize(relu(x)));
    const auto g = backward(sum(y));
    return std::pair{y.value(), g[x]};
  };
  EXPECT_EQ(once(), once());
}

TEST(Tape, InputsPrecedeOutputs) {
  Tape<double> tape;
  const auto a = tape.leaf(leaf_value({1.0, 2.0}));
  const auto b = exp(a);
  const auto c = add(a, b);
  const auto d = sum(c);
  for (std::size_t id = 0; id < tape.size(); ++id)
    for (std::size_t in : tape.inputs(id)) EXPECT_LT(in, id);
  EXPECT_EQ(d.id(), tape.size() - 1);
}

TEST(GradCheck, ReluAwayFromKink) {
  Rng rng(1);
  const auto x = random_tensor<double>(rng, Shape{10}, 0.1, 2.0);
  TapeFunction<double> f = [](Tape<double>&, std::span<const Var<double>> in) { return sum(relu(in[0])); };
  const auto r = finite_diff_check<double>(f, {x});
  EXPECT_LT(r.max_rel_error, 1e-6);
  EXPECT_EQ(r.coordinates_checked, 10u);
  EXPECT_EQ(r.coordinates_skipped, 0u);
}

TEST(GradCheck, Quadratic) {
  Rng rng(2);
  const auto x = random_tensor<double>(rng, Shape{3, 3}, -3, 3);
  TapeFunction<double> f = [](Tape<double>&, std::span<const Var<double>> in) { return sum(hadamard(in[0], in[0])); };
  EXPECT_LT(finite_diff_check<double>(f, {x}).max_rel_error, 1e-6);
}

TEST(GradCheck, ReportsNonFiniteCoordinate) {
  // log(0 - eps) is NaN at the second coordinate only.
  TapeFunction<double> f = [](Tape<double>&, std::span<const Var<double>> in) { return sum(log(in[0])); };
  try {
    finite_diff_check<double>(f, {vec({1.0, 1e-9})}, 1e-5);
    FAIL() << "non-finite difference not reported";
  } catch (const std::domain_error& e) {
    EXPECT_NE(std::string(e.what()).find("coordinate 1"), std::string::npos) << e.what();
  }
}

TEST(GradCheck, KinkCoordinatesAreSkipped) {
  TapeFunction<double> f = [](Tape<double>&, std::span<const Var<double>> in) { return sum(relu(in[0])); };
  const auto r = finite_diff_check<double>(f, {vec({1e-7, 1.0, -1.0})}, 1e-5);
  EXPECT_EQ(r.coordinates_skipped, 1u);
  EXPECT_EQ(r.coordinates_checked, 2u);
  EXPECT_LT(r.max_rel_error, 1e-8);
}

TEST(GradCheck, CatchesWrongBackwardRule) {
  // relu forward with a derivative of 0.5 on the positive side
  TapeFunction<double> f = [](Tape<double>&, std::span<const Var<double>> in) {
    return sum(detail::unary_elementwise(in[0], [](double v) { return v > 0 ? v : 0.0; },
                                         [](double v, double) { return v > 0 ? 0.5 : 0.0; }));
  };
  EXPECT_GT(finite_diff_check<double>(f, {vec({1.0, 2.0})}).max_rel_error, 0.4);
}

TEST(GradCheck, EveryOperationAtDoublePrecision) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    Rng rng(seed);
    const auto eps = default_epsilons<double>();
    for (const auto& c : verify_detail::op_cases<double>(rng, [](const Var<double>& x) { return relu(x); })) {
      const auto r = finite_diff_check<double>(c.fn, c.inputs, std::span<const double>(eps));
      EXPECT_LT(r.max_rel_error, 1e-4) << c.name << " seed " << seed;
      EXPECT_GT(r.coordinates_checked, 0u) << c.name;
      EXPECT_LE(r.coordinates_skipped * 20, r.coordinates_checked) << c.name;
    }
  }
}

TEST(GradCheck, EveryOperationAtSinglePrecision) {
  Rng rng(4);
  const auto eps = default_epsilons<float>();
  for (const auto& c : verify_detail::op_cases<float>(rng, [](const Var<float>& x) { return relu(x); })) {
    const auto r = finite_diff_check<float>(c.fn, c.inputs, std::span<const float>(eps));
    EXPECT_LT(r.max_rel_error, 5e-2) << c.name;
  }
}

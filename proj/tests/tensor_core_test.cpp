#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <unordered_map>

#include "mvccl/errors.hpp"
#include "mvccl/gradcheck.hpp"
#include "mvccl/ops.hpp"

using namespace mvccl;

namespace {

using TensorD = Tensor<double>;

TensorD random_tensor(Shape shape, std::mt19937_64& rng, bool requires_grad = true, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return TensorD::from_data(std::move(shape), std::move(v), requires_grad);
}

// Independent oracles: plain loops over std::vector, no library code.
std::vector<double> naive_matmul(const std::vector<double>& a, const std::vector<double>& b, std::size_t m,
                                 std::size_t k, std::size_t n) {
  std::vector<double> c(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      c[i * n + j] = s;
    }
  }
  return c;
}

std::vector<double> naive_conv(const std::vector<double>& in, std::size_t c_in, std::size_t h, std::size_t w,
                               const std::vector<double>& ker, std::size_t c_out, std::size_t k, std::size_t stride,
                               std::size_t pad) {
  const std::size_t oh = (h + 2 * pad - k) / stride + 1;
  const std::size_t ow = (w + 2 * pad - k) / stride + 1;
  std::vector<double> out(c_out * oh * ow);
  for (std::size_t o = 0; o < c_out; ++o) {
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x) {
        double s = 0.0;
        for (std::size_t c = 0; c < c_in; ++c) {
          for (std::size_t ky = 0; ky < k; ++ky) {
            for (std::size_t kx = 0; kx < k; ++kx) {
              const long iy = static_cast<long>(y * stride + ky) - static_cast<long>(pad);
              const long ix = static_cast<long>(x * stride + kx) - static_cast<long>(pad);
              if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w)) continue;
              s += in[(c * h + iy) * w + ix] * ker[((o * c_in + c) * k + ky) * k + kx];
            }
          }
        }
        out[(o * oh + y) * ow + x] = s;
      }
    }
  }
  return out;
}

void expect_gradcheck(const std::function<TensorD()>& f, std::vector<NamedTensor<double>> params, double tol = 1e-4) {
  const auto report = finite_diff_check<double>(f, params, 1e-5, tol);
  for (const auto& e : report.entries) {
    EXPECT_TRUE(e.passed) << e.name << " rel err " << e.max_rel_error;
    EXPECT_GT(e.checked, 0U) << e.name;
  }
}

}  // namespace

TEST(Matmul, IdentityTimesB) {
  const auto eye = TensorD::from_data({2, 2}, {1, 0, 0, 1});
  const auto b = TensorD::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  const auto c = matmul(eye, b);
  EXPECT_EQ(c.shape(), (Shape{2, 3}));
  EXPECT_EQ(std::vector<double>(c.data().begin(), c.data().end()), std::vector<double>({1, 2, 3, 4, 5, 6}));
}

TEST(Matmul, ZeroAnnihilates) {
  std::mt19937_64 rng(3);
  const auto a = random_tensor({3, 4}, rng);
  const auto c = matmul(a, TensorD::zeros({4, 2}));
  for (double v : c.data()) EXPECT_EQ(v, 0.0);
}

TEST(Matmul, MatchesTripleLoopOracle) {
  const std::vector<double> av{1, 2, 3, 4, 5, 6};
  const auto c = matmul(TensorD::from_data({2, 3}, av), TensorD::from_data({3, 2}, av));
  const auto expected = naive_matmul(av, av, 2, 3, 2);
  EXPECT_EQ(expected, (std::vector<double>{22, 28, 49, 64}));
  EXPECT_EQ(std::vector<double>(c.data().begin(), c.data().end()), expected);
}

TEST(Matmul, RandomShapesBitIdenticalToOracle) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t m = 1 + rng() % 6, k = 1 + rng() % 6, n = 1 + rng() % 6;
    const auto a = random_tensor({m, k}, rng);
    const auto b = random_tensor({k, n}, rng);
    const auto c = matmul(a, b);
    const auto oracle = naive_matmul({a.data().begin(), a.data().end()}, {b.data().begin(), b.data().end()}, m, k, n);
    EXPECT_EQ(std::vector<double>(c.data().begin(), c.data().end()), oracle);
  }
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  try {
    matmul(TensorD::zeros({2, 3}), TensorD::zeros({2, 3}));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("[2x3]"), std::string::npos);
  }
}

TEST(Conv2d, UnitKernelIsIdentity) {
  std::mt19937_64 rng(5);
  const auto x = random_tensor({1, 5, 4}, rng, false);
  const auto y = conv2d(x, TensorD::full({1, 1, 1, 1}, 1.0), 1, 0);
  EXPECT_EQ(y.shape(), x.shape());
  EXPECT_EQ(std::vector<double>(y.data().begin(), y.data().end()),
            std::vector<double>(x.data().begin(), x.data().end()));
}

TEST(Conv2d, ZeroKernelGivesZero) {
  std::mt19937_64 rng(6);
  const auto y = conv2d(random_tensor({2, 6, 6}, rng), TensorD::zeros({3, 2, 3, 3}), 2, 1);
  EXPECT_EQ(y.shape(), (Shape{3, 3, 3}));
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(Conv2d, StrideTwoMatchesSlidingWindowOracle) {
  std::vector<double> in(16);
  for (std::size_t i = 0; i < 16; ++i) in[i] = static_cast<double>(i + 1);
  const std::vector<double> ker{1, -1, 2, 0.5};
  const auto y = conv2d(TensorD::from_data({1, 4, 4}, in), TensorD::from_data({1, 1, 2, 2}, ker), 2, 0);
  const auto oracle = naive_conv(in, 1, 4, 4, ker, 1, 2, 2, 0);
  // Top-left window [1 2; 5 6]: 1 - 2 + 10 + 3 = 12.
  EXPECT_EQ(oracle[0], 12.0);
  EXPECT_EQ(std::vector<double>(y.data().begin(), y.data().end()), oracle);
}

TEST(Conv2d, RandomGeometriesMatchOracle) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t c_in = 1 + rng() % 3, c_out = 1 + rng() % 3, k = 1 + rng() % 3;
    const std::size_t h = k + rng() % 5, w = k + rng() % 5, stride = 1 + rng() % 2, pad = rng() % 2;
    const auto x = random_tensor({c_in, h, w}, rng);
    const auto ker = random_tensor({c_out, c_in, k, k}, rng);
    const auto y = conv2d(x, ker, stride, pad);
    const auto oracle = naive_conv({x.data().begin(), x.data().end()}, c_in, h, w,
                                   {ker.data().begin(), ker.data().end()}, c_out, k, stride, pad);
    ASSERT_EQ(y.numel(), oracle.size());
    for (std::size_t i = 0; i < oracle.size(); ++i) EXPECT_NEAR(y.data()[i], oracle[i], 1e-12);
  }
}

TEST(Conv2d, KernelLargerThanPaddedInput) {
  EXPECT_THROW(conv2d(TensorD::zeros({1, 2, 2}), TensorD::zeros({1, 1, 5, 5}), 1, 1), DimensionError);
  EXPECT_THROW(conv2d(TensorD::zeros({1, 4, 4}), TensorD::zeros({1, 1, 3, 3}), 0, 1), DimensionError);
}

TEST(Conv2d, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(9);
  const auto x = random_tensor({2, 5, 4}, rng);
  const auto ker = random_tensor({3, 2, 3, 3}, rng);
  const auto bias = random_tensor({3}, rng);
  const auto weights = random_tensor({3, 3, 2}, rng, false);
  expect_gradcheck([&] { return sum(mul(conv2d(x, ker, bias, 2, 1), weights)); },
                   {{"input", x}, {"kernel", ker}, {"bias", bias}});
}

TEST(Softmax, UniformRow) {
  const auto y = softmax_rows(TensorD::zeros({1, 4}));
  for (double v : y.data()) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(Softmax, LargeLogitsDoNotOverflow) {
  const auto y = softmax_rows(TensorD::from_data({1, 2}, {1000.0, 0.0}));
  EXPECT_NEAR(y.data()[0], 1.0, 1e-15);
  EXPECT_NEAR(y.data()[1], 0.0, 1e-15);
  const auto yf = softmax_rows(Tensor<float>::from_data({1, 2}, {1000.0F, 0.0F}));
  EXPECT_FLOAT_EQ(yf.data()[0], 1.0F);
}

TEST(Softmax, MatchesExtendedPrecisionOracle) {
  const auto y = softmax_rows(TensorD::from_data({1, 3}, {1.0, 2.0, 3.0}));
  const long double e1 = std::exp(1.0L), e2 = std::exp(2.0L), e3 = std::exp(3.0L);
  const long double z = e1 + e2 + e3;
  EXPECT_NEAR(y.data()[0], static_cast<double>(e1 / z), 1e-15);
  EXPECT_NEAR(y.data()[1], static_cast<double>(e2 / z), 1e-15);
  EXPECT_NEAR(y.data()[2], static_cast<double>(e3 / z), 1e-15);
}

TEST(Softmax, RowsAreDistributionsOnRandomInputs) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t rows = 1 + rng() % 5, cols = 1 + rng() % 7;
    const auto y = softmax_rows(random_tensor({rows, cols}, rng, false, -30.0, 30.0));
    for (std::size_t r = 0; r < rows; ++r) {
      double total = 0.0;
      for (std::size_t c = 0; c < cols; ++c) {
        EXPECT_GE(y.data()[r * cols + c], 0.0);
        total += y.data()[r * cols + c];
      }
      EXPECT_NEAR(total, 1.0, 1e-6);
    }
  }
}

TEST(PoolGlobal, ConstantMap) {
  const auto u = TensorD::full({3, 2, 4}, 1.75);
  for (auto mode : {PoolMode::max, PoolMode::avg}) {
    const auto g = pool_global(u, mode);
    EXPECT_EQ(g.shape(), (Shape{4}));
    for (double v : g.data()) EXPECT_EQ(v, 1.75);
  }
}

TEST(PoolGlobal, SinglePositionIsIdentity) {
  const auto u = TensorD::from_data({1, 1, 3}, {0.5, -2.0, 7.0});
  for (auto mode : {PoolMode::max, PoolMode::avg}) {
    const auto g = pool_global(u, mode);
    EXPECT_EQ(std::vector<double>(g.data().begin(), g.data().end()), (std::vector<double>{0.5, -2.0, 7.0}));
  }
}

TEST(PoolGlobal, TwoByTwoArithmetic) {
  const auto u = TensorD::from_data({2, 2, 1}, {1, 2, 3, 4});
  EXPECT_EQ(pool_global(u, PoolMode::max).item(), 4.0);
  EXPECT_EQ(pool_global(u, PoolMode::avg).item(), 2.5);
}

TEST(PoolGlobal, MaxTieRoutesGradientToLowestIndex) {
  const auto u = TensorD::from_data({3, 1}, {5.0, 5.0, 1.0}, true);
  backward(sum(pool_global(u, PoolMode::max)));
  EXPECT_EQ(std::vector<double>(u.grad().begin(), u.grad().end()), (std::vector<double>{1.0, 0.0, 0.0}));
}

TEST(Elementwise, TrivialValues) {
  EXPECT_EQ(sigmoid(TensorD::scalar(0.0)).item(), 0.5);
  EXPECT_EQ(relu(TensorD::scalar(-3.0)).item(), 0.0);
  EXPECT_EQ(relu(TensorD::scalar(3.0)).item(), 3.0);
}

TEST(Elementwise, ConcatPreservesOrder) {
  const auto z = concat_lastdim<double>({TensorD::from_data({4}, {1, 2, 3, 4}), TensorD::from_data({2}, {5, 6}),
                                         TensorD::from_data({2}, {7, 8})});
  EXPECT_EQ(z.shape(), (Shape{8}));
  EXPECT_EQ(std::vector<double>(z.data().begin(), z.data().end()), (std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8}));
}

TEST(Elementwise, IncompatibleShapes) {
  EXPECT_THROW(add(TensorD::zeros({2, 3}), TensorD::zeros({2})), DimensionError);
  EXPECT_THROW(mul(TensorD::zeros({3}), TensorD::zeros({4})), DimensionError);
  EXPECT_THROW(concat_lastdim<double>({TensorD::zeros({2, 3}), TensorD::zeros({3, 3})}), DimensionError);
}

TEST(Elementwise, BiasRowBroadcasts) {
  const auto y = add(TensorD::from_data({2, 2}, {1, 2, 3, 4}), TensorD::from_data({2}, {10, 20}));
  EXPECT_EQ(std::vector<double>(y.data().begin(), y.data().end()), (std::vector<double>{11, 22, 13, 24}));
}

TEST(Elementwise, NonFiniteResultIsAnError) {
  EXPECT_THROW(div(TensorD::scalar(1.0), TensorD::scalar(0.0)), NumericalError);
  EXPECT_THROW(mvccl::log(TensorD::scalar(-1.0)), NumericalError);
}

TEST(Backward, SumGivesOnes) {
  const auto x = TensorD::from_data({2, 3}, {1, -2, 3, 0.5, 8, -1}, true);
  backward(sum(x));
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, HalfSquaredNormGivesX) {
  const auto x = TensorD::from_data({4}, {1.5, -2.0, 0.25, 3.0}, true);
  backward(scale(sum(mul(x, x)), 0.5));
  for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(x.grad()[i], x.data()[i]);
}

TEST(Backward, NonScalarLossIsUsageError) {
  const auto x = TensorD::zeros({3}, true);
  EXPECT_THROW(backward(relu(x)), UsageError);
}

TEST(Backward, RepeatedCallsAccumulate) {
  const auto x = TensorD::from_data({2}, {1.0, 2.0}, true);
  const auto loss = sum(scale(x, 3.0));
  backward(loss);
  backward(loss);
  EXPECT_EQ(x.grad()[0], 6.0);
  EXPECT_EQ(x.grad()[1], 6.0);
}

TEST(Backward, TensorUsedTwiceSumsContributions) {
  std::mt19937_64 rng(21);
  const auto x = random_tensor({3}, rng);
  const auto w = random_tensor({3}, rng);
  // x feeds the graph along two paths.
  expect_gradcheck([&] { return sum(mul(sigmoid(mul(x, w)), x)); }, {{"x", x}, {"w", w}});
  const auto y = TensorD::from_data({1}, {2.0}, true);
  backward(sum(mul(y, y)));
  EXPECT_EQ(y.grad()[0], 4.0);
}

TEST(Backward, TapeIsTopologicalAndVisitsOnce) {
  std::mt19937_64 rng(2);
  const auto a = random_tensor({2, 2}, rng);
  const auto b = relu(matmul(a, a));
  const auto loss = sum(add(b, b));
  GradTape<double> tape(loss);
  std::unordered_map<const TensorNode<double>*, std::size_t> position;
  for (std::size_t i = 0; i < tape.nodes().size(); ++i) {
    EXPECT_TRUE(position.emplace(tape.nodes()[i], i).second) << "node recorded twice";
  }
  for (const auto* node : tape.nodes()) {
    for (const auto& in : node->inputs) EXPECT_LT(position.at(in.get()), position.at(node));
  }
  EXPECT_EQ(tape.op_count(), 4U);  // matmul, relu, add, sum
}

TEST(Backward, RecordedOutputsAreImmutable) {
  const auto x = TensorD::zeros({2}, true);
  auto y = relu(x);
  EXPECT_THROW(y.mutable_data(), UsageError);
}

TEST(Backward, NoGradGuardSkipsRecording) {
  const auto x = TensorD::zeros({2}, true);
  NoGradGuard guard;
  EXPECT_FALSE(relu(x).requires_grad());
}

TEST(GradCheck, QuadraticIsExactToRounding) {
  const auto x = TensorD::from_data({3}, {0.3, -1.2, 2.0}, true);
  const auto report = finite_diff_check<double>([&] { return sum(mul(x, x)); }, std::vector<NamedTensor<double>>{{"x", x}},
                                                1e-4, 1e-8);
  EXPECT_TRUE(report.passed());
  EXPECT_LT(report.max_rel_error(), 1e-9);
}

TEST(GradCheck, ConstantObjectiveHasZeroGradients) {
  const auto x = TensorD::from_data({2}, {1.0, 2.0}, true);
  const auto c = TensorD::scalar(4.0);
  const auto report = finite_diff_check<double>([&] { return add(c, scale(sum(x), 0.0)); },
                                                std::vector<NamedTensor<double>>{{"x", x}}, 1e-4, 1e-6);
  EXPECT_TRUE(report.passed());
  EXPECT_EQ(report.entries[0].max_abs_error, 0.0);
}

TEST(GradCheck, NondeterministicObjectiveIsRejected) {
  const auto x = TensorD::from_data({1}, {1.0}, true);
  int calls = 0;
  EXPECT_THROW(finite_diff_check<double>([&] { return add_scalar(sum(x), static_cast<double>(++calls)); },
                                         std::vector<NamedTensor<double>>{{"x", x}}, 1e-4, 1e-4),
               OracleInvalidError);
}

TEST(GradCheck, ZeroToleranceFails) {
  const auto x = TensorD::from_data({2}, {0.7, 1.1}, true);
  const auto report = finite_diff_check<double>([&] { return sum(mul(mul(x, x), x)); },
                                                std::vector<NamedTensor<double>>{{"x", x}}, 1e-4, 0.0);
  EXPECT_FALSE(report.passed());
}

TEST(GradCheck, KinkCrossingsAreExcluded) {
  // relu kink at 0 sits inside the ±step window.
  const auto x = TensorD::from_data({2}, {1e-6, 0.5}, true);
  const auto report = finite_diff_check<double>([&] { return sum(relu(x)); },
                                                std::vector<NamedTensor<double>>{{"x", x}}, 1e-4, 1e-6);
  EXPECT_EQ(report.entries[0].skipped_kinks, 1U);
  EXPECT_EQ(report.entries[0].checked, 1U);
  EXPECT_TRUE(report.passed());
}

// Every primitive on randomized inputs, double precision, 1e-4.
TEST(GradientProperty, AllPrimitivesDouble) {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 5; ++trial) {
    const auto a = random_tensor({3, 4}, rng);
    const auto b = random_tensor({4, 2}, rng);
    const auto v = random_tensor({4}, rng);
    const auto pos = random_tensor({3, 4}, rng, true, 0.5, 2.0);
    const auto w = random_tensor({3, 2}, rng, false);
    const auto hw = random_tensor({2, 3, 4}, rng);
    expect_gradcheck([&] { return sum(mul(matmul(a, b), w)); }, {{"a", a}, {"b", b}});
    expect_gradcheck([&] { return sum(mul(softmax_rows(a), a)); }, {{"a", a}});
    expect_gradcheck([&] { return sum(mul(pool_global(hw, PoolMode::max), v)); }, {{"hw", hw}});
    expect_gradcheck([&] { return sum(mul(pool_global(hw, PoolMode::avg), v)); }, {{"hw", hw}});
    expect_gradcheck([&] { return sum(mul(relu(add(a, v)), sigmoid(a))); }, {{"a", a}, {"v", v}});
    expect_gradcheck([&] { return sum(mvccl::log(div(pos, add_scalar(sub(pos, a), 5.0)))); }, {{"pos", pos}, {"a", a}});
    expect_gradcheck([&] { return div(sum(mul(a, pos)), l2_norm(a)); }, {{"a", a}, {"pos", pos}});
    expect_gradcheck([&] { return mean(clamp(mul(a, pos), -0.5, 0.5)); }, {{"a", a}, {"pos", pos}});
    expect_gradcheck(
        [&] {
          const auto t = transpose(concat_rows<double>({slice_rows(a, 0, 2), slice_rows(pos, 1, 3)}));
          return sum(mul(t, t));
        },
        {{"a", a}, {"pos", pos}});
    expect_gradcheck(
        [&] {
          const auto c = concat_lastdim<double>({a, pos});
          return sum(mul(reshape(c, {24}), reshape(chw_to_hwc(reshape(c, {2, 3, 4})), {24})));
        },
        {{"a", a}, {"pos", pos}});
  }
}

TEST(GradientProperty, SinglePrecisionWithinLooseTolerance) {
  std::mt19937 rng(5);
  std::uniform_real_distribution<float> dist(-1.0F, 1.0F);
  std::vector<float> av(12), bv(8);
  for (auto& x : av) x = dist(rng);
  for (auto& x : bv) x = dist(rng);
  const auto a = Tensor<float>::from_data({3, 4}, av, true);
  const auto b = Tensor<float>::from_data({4, 2}, bv, true);
  const auto report = finite_diff_check<float>([&] { return sum(sigmoid(matmul(a, b))); },
                                               std::vector<NamedTensor<float>>{{"a", a}, {"b", b}}, 1e-2, 1e-2);
  EXPECT_TRUE(report.passed()) << report.max_rel_error();
}

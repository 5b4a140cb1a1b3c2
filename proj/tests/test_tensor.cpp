#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "maskint/autodiff.hpp"
#include "maskint/errors.hpp"
#include "maskint/gradcheck.hpp"
#include "test_util.hpp"

namespace maskint {
namespace {

using ad::Tape;
using ad::Var;
using testing::CheckGraph;
using testing::Project;
using testing::RandomTensor;

Tensor<double> NaiveMatMul(const Tensor<double>& a, const Tensor<double>& b) {
  Tensor<double> c({a.rows(), b.cols()});
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a.at(i, k) * b.at(k, j);
      c.at(i, j) = s;
    }
  }
  return c;
}

TEST(TensorTest, RejectsZeroExtentsAndMismatchedValues) {
  EXPECT_THROW(Tensor<float>({2, 0}), GeometryError);
  EXPECT_THROW(Tensor<float>({2, 2}, {1.0f, 2.0f}), GeometryError);
  Tensor<float> t({2, 3});
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 3u);
}

TEST(MatMulTest, IdentityLeavesMatrixUnchanged) {
  Tape<double> tape;
  auto a = tape.Constant(Tensor<double>({2, 2}, {1, 2, 3, 4}));
  auto id = tape.Constant(Tensor<double>({2, 2}, {1, 0, 0, 1}));
  EXPECT_EQ(ad::MatMul(a, id).value(), a.value());
  EXPECT_EQ(ad::MatMul(id, a).value(), a.value());
}

TEST(MatMulTest, MatchesTripleLoop) {
  const auto a = RandomTensor({3, 4}, 1);
  const auto b = RandomTensor({4, 2}, 2);
  Tape<double> tape;
  const auto c = ad::MatMul(tape.Constant(a), tape.Constant(b)).value();
  const auto ref = NaiveMatMul(a, b);
  for (std::size_t i = 0; i < c.size(); ++i) EXPECT_NEAR(c[i], ref[i], 1e-12);
}

TEST(MatMulTest, InnerExtentMismatchThrows) {
  Tape<double> tape;
  auto a = tape.Constant(Tensor<double>({2, 3}));
  auto b = tape.Constant(Tensor<double>({2, 3}));
  EXPECT_THROW(ad::MatMul(a, b), GeometryError);
}

TEST(MatMulTest, BackwardIsTransposedProducts) {
  const auto a = RandomTensor({3, 4}, 3);
  const auto b = RandomTensor({4, 2}, 4);
  const auto dc = RandomTensor({3, 2}, 5);
  Tape<double> tape;
  auto va = tape.Parameter(a);
  auto vb = tape.Parameter(b);
  auto c = ad::MatMul(va, vb);
  tape.Backward(ad::Sum(ad::Mul(c, tape.Constant(dc))));
  Tensor<double> bt({2, 4}), at({4, 3});
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 2; ++j) bt.at(j, i) = b.at(i, j);
    for (std::size_t j = 0; j < 3; ++j) at.at(i, j) = a.at(j, i);
  }
  const auto da = NaiveMatMul(dc, bt);
  const auto db = NaiveMatMul(at, dc);
  for (std::size_t i = 0; i < da.size(); ++i) EXPECT_NEAR(tape.grad(va)[i], da[i], 1e-12);
  for (std::size_t i = 0; i < db.size(); ++i) EXPECT_NEAR(tape.grad(vb)[i], db[i], 1e-12);
}

TEST(SoftmaxTest, UniformRow) {
  const auto s = ad::SoftmaxValues(Tensor<double>({1, 5}, {2, 2, 2, 2, 2}), 1);
  for (double v : s.values()) EXPECT_DOUBLE_EQ(v, 0.2);
}

TEST(SoftmaxTest, ClosedFormPair) {
  const auto s = ad::SoftmaxValues(Tensor<double>({1, 2}, {0.0, std::log(3.0)}), 1);
  EXPECT_NEAR(s[0], 0.25, 1e-15);
  EXPECT_NEAR(s[1], 0.75, 1e-15);
}

TEST(SoftmaxTest, ShiftInvariantAndNormalized) {
  auto x = RandomTensor({4, 7}, 6, 3.0);
  auto shifted = x;
  for (double& v : shifted.values()) v += 100.0;
  const auto a = ad::SoftmaxValues(x, 1);
  const auto b = ad::SoftmaxValues(shifted, 1);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-9);
  for (std::size_t r = 0; r < 4; ++r) {
    double sum = 0.0;
    for (double v : a.row(r)) {
      EXPECT_GE(v, 0.0);
      sum += v;
    }
    EXPECT_NEAR(sum, 1.0, 1e-9);
  }
}

TEST(SoftmaxTest, ColumnAxis) {
  const auto s = ad::SoftmaxValues(Tensor<double>({2, 1}, {0.0, std::log(3.0)}), 0);
  EXPECT_NEAR(s[0], 0.25, 1e-15);
  EXPECT_NEAR(s[1], 0.75, 1e-15);
}

TEST(CrossEntropyTest, UniformLogitsGiveLogM) {
  std::vector<double> logits(64, 0.7);
  for (int target : {0, 17, 63}) {
    EXPECT_NEAR(ad::CrossEntropyValue<double>(logits, target), std::log(64.0), 1e-12);
  }
  EXPECT_NEAR(std::log(64.0), 4.1589, 1e-4);
}

TEST(CrossEntropyTest, SaturatedTarget) {
  std::vector<double> logits(64, 0.0);
  logits[5] = 50.0;
  EXPECT_LT(ad::CrossEntropyValue<double>(logits, 5), 1e-9);
}

TEST(CrossEntropyTest, TargetOutOfRangeThrows) {
  std::vector<double> logits(4, 0.0);
  EXPECT_THROW(ad::CrossEntropyValue<double>(logits, 4), IndexError);
  EXPECT_THROW(ad::CrossEntropyValue<double>(logits, -1), IndexError);
  Tape<double> tape;
  auto x = tape.Parameter(Tensor<double>({2, 4}));
  EXPECT_THROW(ad::CrossEntropy(x, {0}, {9}), IndexError);
}

TEST(CrossEntropyTest, GradientIsSoftmaxMinusOneHot) {
  const auto logits = RandomTensor({1, 6}, 7);
  Tape<double> tape;
  auto x = tape.Parameter(logits);
  tape.Backward(ad::CrossEntropy(x, {0}, {2}));
  const auto p = ad::SoftmaxValues(logits, 1);
  for (std::size_t c = 0; c < 6; ++c) {
    EXPECT_NEAR(tape.grad(x)[c], p[c] - (c == 2 ? 1.0 : 0.0), 1e-15);
  }
}

TEST(CrossEntropyTest, GradientMatchesFiniteDifferences) {
  auto report = CheckGraph<double>(
      [](auto& tape, auto v) { return ad::CrossEntropy(v[0], {0, 2}, {3, 1}); },
      {RandomTensor({3, 5}, 8)});
  EXPECT_LT(report.max_relative_error, 1e-5);
}

TEST(CrossEntropyTest, UnlistedRowsGetExactlyZeroGradient) {
  Tape<double> tape;
  auto x = tape.Parameter(RandomTensor({4, 5}, 9));
  tape.Backward(ad::CrossEntropy(x, {1, 3}, {0, 4}));
  const auto g = tape.grad(x);
  for (std::size_t r : {0u, 2u}) {
    for (double v : g.row(r)) EXPECT_EQ(v, 0.0);
  }
}

TEST(GradCheckTest, QuadraticIsExact) {
  const auto x = RandomTensor({10}, 10).storage();
  std::vector<double> analytic(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) analytic[i] = 2.0 * x[i];
  ad::ScalarFunction f = [](std::span<const double> p) {
    double s = 0.0;
    for (double v : p) s += v * v;
    return s;
  };
  const auto report = ad::GradCheck(f, analytic, x, {.epsilon = 1e-5});
  EXPECT_LT(report.max_relative_error, 1e-7);
  EXPECT_EQ(report.components, 10u);
}

TEST(GradCheckTest, ConstantFunctionHasZeroGradients) {
  ad::ScalarFunction f = [](std::span<const double>) { return 3.0; };
  const std::vector<double> x{1.0, -2.0, 0.5};
  const auto numerical = ad::NumericalGradient(f, x, {}, {});
  for (double g : numerical) EXPECT_EQ(g, 0.0);
  const std::vector<double> analytic(3, 0.0);
  EXPECT_EQ(ad::GradCheck(f, analytic, x).max_relative_error, 0.0);
}

TEST(GradCheckTest, DetectsWrongGradient) {
  ad::ScalarFunction f = [](std::span<const double> p) { return p[0] * p[0]; };
  const std::vector<double> wrong{1.0};
  EXPECT_GT(ad::GradCheck(f, wrong, {3.0}).max_relative_error, 0.5);
}

TEST(GradCheckTest, RichardsonLevelsCancelTruncation) {
  // d/dx exp(x) at 0 with a coarse step: each level gains accuracy.
  ad::ScalarFunction f = [](std::span<const double> p) { return std::exp(p[0]); };
  double previous = 1.0;
  for (std::size_t levels = 0; levels <= 3; ++levels) {
    const auto g = ad::NumericalGradient(f, {0.0}, {}, {.epsilon = 0.1, .richardson_levels = levels});
    const double err = std::abs(g[0] - 1.0);
    EXPECT_LT(err, previous * 0.05) << levels;
    previous = err;
  }
  EXPECT_LT(previous, 1e-12);
}

TEST(GradCheckTest, NormRelativeError) {
  const std::vector<double> a{3.0, 0.0}, n{3.0, 4.0};
  const auto r = ad::CompareGradients(a, n);
  EXPECT_DOUBLE_EQ(r.norm_relative_error, 4.0 / 5.0);
  EXPECT_DOUBLE_EQ(r.max_relative_error, 1.0);
  EXPECT_EQ(r.worst_component, 1u);
  EXPECT_NEAR(r.max_absolute_error, 4.0, 0.0);
}

// Every primitive, both precisions. Objectives project the op's output on a
// random direction so every output element contributes.
template <typename T>
void CheckAllPrimitives(double tolerance) {
  const ad::GradCheckOptions opts{.epsilon = 1e-5, .relative_floor = 1e-3};
  auto check = [&](const char* name, auto build, std::vector<Tensor<double>> inputs) {
    const auto r = CheckGraph<T>(build, std::move(inputs), opts);
    EXPECT_LT(r.max_relative_error, tolerance) << name << " worst component "
                                               << r.worst_component;
  };
  check("matmul", [](auto&, auto v) { return Project(ad::MatMul(v[0], v[1]), 1); },
        {RandomTensor({3, 4}, 11), RandomTensor({4, 5}, 12)});
  check("add", [](auto&, auto v) { return Project(ad::Add(v[0], v[1]), 2); },
        {RandomTensor({3, 4}, 13), RandomTensor({3, 4}, 14)});
  check("add_bias", [](auto&, auto v) { return Project(ad::AddBias(v[0], v[1]), 3); },
        {RandomTensor({3, 4}, 15), RandomTensor({4}, 16)});
  check("mul", [](auto&, auto v) { return Project(ad::Mul(v[0], v[1]), 4); },
        {RandomTensor({3, 4}, 17), RandomTensor({3, 4}, 18)});
  check("scale",
        [](auto&, auto v) { using U = std::decay_t<decltype(v[0].value()[0])>;
          return Project(ad::Scale(v[0], U(0.3)), 5); },
        {RandomTensor({2, 3}, 19)});
  check("scale_rows",
        [](auto&, auto v) {
          using U = std::decay_t<decltype(v[0].value()[0])>;
          return Project(ad::ScaleRows(v[0], std::vector<U>{U(1), U(0), U(0.5)}), 6);
        },
        {RandomTensor({3, 2}, 20)});
  check("gelu", [](auto&, auto v) { return Project(ad::Gelu(v[0]), 7); },
        {RandomTensor({4, 5}, 21)});
  check("layer_norm", [](auto&, auto v) { return Project(ad::LayerNorm(v[0], v[1], v[2]), 8); },
        {RandomTensor({3, 6}, 22), RandomTensor({6}, 23), RandomTensor({6}, 24)});
  check("embedding", [](auto&, auto v) { return Project(ad::Embedding(v[0], {2, 0, 2, 1}), 9); },
        {RandomTensor({3, 4}, 25)});
  check("softmax_rows", [](auto&, auto v) { return Project(ad::Softmax(v[0], 1), 10); },
        {RandomTensor({3, 5}, 26)});
  check("softmax_cols", [](auto&, auto v) { return Project(ad::Softmax(v[0], 0), 11); },
        {RandomTensor({3, 5}, 27)});
  check("cross_entropy", [](auto&, auto v) { return ad::CrossEntropy(v[0], {0, 1, 3}, {2, 0, 4}); },
        {RandomTensor({4, 5}, 28)});
  const ad::ConvGeometry down{.frames = 2, .height = 4, .width = 4};
  check("conv2d", [&](auto&, auto v) { return Project(ad::Conv2d(v[0], v[1], v[2], down), 12); },
        {RandomTensor({32, 3}, 29), RandomTensor({27, 2}, 30), RandomTensor({2}, 31)});
  const ad::ConvGeometry up{.frames = 2, .height = 2, .width = 2, .output_padding = 1};
  check("conv_transpose2d",
        [&](auto&, auto v) { return Project(ad::ConvTranspose2d(v[0], v[1], v[2], up), 13); },
        {RandomTensor({8, 2}, 32), RandomTensor({2, 27}, 33), RandomTensor({3}, 34)});
  ad::WindowPartition part{{{0, 2, 4}, {1, 3}, {5}}, 6};
  check("window_attention",
        [&](auto&, auto v) { return Project(ad::WindowAttention(v[0], part, 2), 14); },
        {RandomTensor({6, 12}, 35)});
}

TEST(PrimitiveGradientTest, DoublePrecision) { CheckAllPrimitives<double>(1e-7); }

TEST(PrimitiveGradientTest, SinglePrecision) { CheckAllPrimitives<float>(1e-4); }

TEST(ConvTest, TransposeIsAdjointOfConv) {
  // <conv(x), y> == <x, conv_transpose(y)> with the shared kernel.
  const ad::ConvGeometry g{.frames = 1, .height = 4, .width = 4};
  const std::size_t cin = 2, cout = 3;
  const auto x = RandomTensor({16, cin}, 40);
  const auto y = RandomTensor({4, cout}, 41);
  const auto w = RandomTensor({9 * cin, cout}, 42);
  Tensor<double> wt({cout, 9 * cin});
  for (std::size_t k = 0; k < 9; ++k) {
    for (std::size_t i = 0; i < cin; ++i) {
      for (std::size_t o = 0; o < cout; ++o) wt.at(o, k * cin + i) = w.at(k * cin + i, o);
    }
  }
  Tape<double> tape;
  const auto cx =
      ad::Conv2d(tape.Constant(x), tape.Constant(w), tape.Constant(Tensor<double>({cout})), g)
          .value();
  const ad::ConvGeometry ug{.frames = 1, .height = 2, .width = 2, .output_padding = 1};
  const auto ty = ad::ConvTranspose2d(tape.Constant(y), tape.Constant(wt),
                                      tape.Constant(Tensor<double>({cin})), ug)
                      .value();
  double lhs = 0.0, rhs = 0.0;
  for (std::size_t i = 0; i < cx.size(); ++i) lhs += cx[i] * y[i];
  for (std::size_t i = 0; i < ty.size(); ++i) rhs += x[i] * ty[i];
  EXPECT_NEAR(lhs, rhs, 1e-12);
}

TEST(ConvTest, KnownStencil) {
  // A single 1 in the center tap picks out the stride-2 subsample.
  const ad::ConvGeometry g{.frames = 1, .height = 4, .width = 4};
  Tensor<double> x({16, 1});
  for (std::size_t i = 0; i < 16; ++i) x[i] = static_cast<double>(i);
  Tensor<double> w({9, 1});
  w[4] = 1.0;
  Tape<double> tape;
  const auto y =
      ad::Conv2d(tape.Constant(x), tape.Constant(w), tape.Constant(Tensor<double>({1})), g)
          .value();
  EXPECT_EQ(y.storage(), (std::vector<double>{0, 2, 8, 10}));
}

TEST(TapeTest, BackwardVisitsEachOpOnceInReverse) {
  Tape<double> tape;
  auto a = tape.Parameter(RandomTensor({2, 2}, 50));
  auto b = tape.Parameter(RandomTensor({2, 2}, 51));
  auto c = ad::MatMul(a, b);
  auto d = ad::Gelu(c);
  auto e = ad::Add(d, c);
  auto s = ad::Sum(e);
  tape.Backward(s);
  EXPECT_EQ(tape.last_backward_visits(), (std::vector<std::uint32_t>{s.id, e.id, d.id, c.id}));
}

TEST(TapeTest, ConstantsGetNoBackwardWork) {
  Tape<double> tape;
  auto a = tape.Constant(RandomTensor({2, 2}, 52));
  auto p = tape.Parameter(RandomTensor({2, 2}, 53));
  auto c = ad::Gelu(a);
  auto s = ad::Sum(ad::Add(c, p));
  tape.Backward(s);
  const auto& visits = tape.last_backward_visits();
  EXPECT_EQ(std::count(visits.begin(), visits.end(), c.id), 0);
  const auto ga = tape.grad(a);
  for (double g : ga.values()) EXPECT_EQ(g, 0.0);
}

TEST(TapeTest, BackwardRejectsNonScalar) {
  Tape<double> tape;
  auto a = tape.Parameter(Tensor<double>({2, 2}));
  EXPECT_THROW(tape.Backward(a), GeometryError);
}

TEST(TapeTest, ForwardIsBitDeterministic) {
  auto run = [] {
    Tape<float> tape;
    auto x = tape.Parameter(RandomTensor<float>({5, 8}, 60));
    auto w = tape.Parameter(RandomTensor<float>({8, 8}, 61));
    auto y = ad::LayerNorm(ad::Gelu(ad::MatMul(x, w)), tape.Constant(Tensor<float>({8}, std::vector<float>(8, 1.0f))),
                           tape.Constant(Tensor<float>({8})));
    return y.value();
  };
  EXPECT_EQ(run(), run());
}

TEST(AttentionCounterTest, CountsScoreAndValueMultiplies) {
  Tape<double> tape;
  ad::WindowPartition part{{{0, 1, 2}, {3}}, 4};
  auto qkv = tape.Constant(RandomTensor({4, 12}, 70));
  ad::AttentionCounter counter;
  {
    ad::ScopedAttentionCounter scope(&counter);
    (void)ad::WindowAttention(qkv, part, 2);
  }
  // (3^2 + 1^2) * head_dim * heads = 10 * 4
  EXPECT_EQ(counter.score_multiplies, 40u);
  EXPECT_EQ(counter.value_multiplies, 40u);
}

}  // namespace
}  // namespace maskint

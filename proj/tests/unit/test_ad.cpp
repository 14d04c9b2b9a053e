#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "xfe/ad/ops.hpp"
#include "xfe/gradcheck.hpp"

using namespace xfe;
using namespace xfe::ad;

namespace {

Tensor<double> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<double> t(std::move(shape));
  for (auto& v : t.storage()) v = u(rng);
  return t;
}

// Random linear functional of v; makes every output entry matter for the gradient.
Var probe(Tape<double>& t, Var v, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sum(t, mul(t, v, t.constant(random_tensor(t.shape(v), rng))));
}

Parameter<double> random_param(const std::string& name, Shape shape, std::mt19937_64& rng, double lo = -1.0,
                               double hi = 1.0) {
  return Parameter<double>(name, random_tensor(std::move(shape), rng, lo, hi));
}

}  // namespace

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  Tape<float> t;
  Tensor<float> eye({3, 3});
  for (int i = 0; i < 3; ++i) eye.at(i, i) = 1.0f;
  Tensor<float> b({3, 2}, {1, 2, 3, 4, 5, 6});
  Var r = matmul(t, t.constant(eye), t.constant(b));
  EXPECT_EQ(t.value(r), b);
}

TEST(Matmul, ScalarProduct) {
  Tape<float> t;
  Var r = matmul(t, t.constant(Tensor<float>({1, 1}, {2.0f})), t.constant(Tensor<float>({1, 1}, {3.0f})));
  EXPECT_FLOAT_EQ(t.value(r)[0], 6.0f);
}

TEST(Matmul, ShapeMismatchIsContractError) {
  Tape<float> t;
  EXPECT_THROW(matmul(t, t.constant(Tensor<float>({2, 3})), t.constant(Tensor<float>({2, 3}))), ContractError);
}

TEST(Matmul, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(1);
  auto a = random_param("a", {4, 5}, rng);
  auto b = random_param("b", {5, 2}, rng);
  auto r = check_gradients({&a, &b}, [&](Tape<double>& t) {
    return probe(t, matmul(t, t.parameter(a), t.parameter(b)), 7);
  });
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
  EXPECT_EQ(r.checked, 30u);
}

TEST(Softmax, ConstantRowIsUniform) {
  Tape<double> t;
  Var s = softmax(t, t.constant(Tensor<double>({1, 4}, {3, 3, 3, 3})), 1);
  for (int i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(t.value(s)[i], 0.25);
}

TEST(Softmax, AnalyticTwoElementCase) {
  Tape<double> t;
  Var s = softmax(t, t.constant(Tensor<double>({2}, {0.0, std::log(2.0)})), 0);
  EXPECT_NEAR(t.value(s)[0], 1.0 / 3.0, 1e-12);
  EXPECT_NEAR(t.value(s)[1], 2.0 / 3.0, 1e-12);
}

TEST(Softmax, RowsSumToOneAlongEitherAxis) {
  std::mt19937_64 rng(3);
  Tape<float> t;
  Tensor<float> x = random_tensor({3, 5, 4}, rng, -30, 30).cast<float>();
  for (std::size_t axis = 0; axis < 3; ++axis) {
    const auto& y = t.value(softmax(t, t.constant(x), axis));
    const Shape& s = y.shape();
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < 3; ++i) inner *= s[i];
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t j = 0; j < inner; ++j) {
        double total = 0;
        for (std::size_t k = 0; k < s[axis]; ++k) total += y[(o * s[axis] + k) * inner + j];
        EXPECT_NEAR(total, 1.0, 1e-6);
      }
  }
}

TEST(Softmax, LargeInputsStayFinite) {
  Tape<float> t;
  Var s = softmax(t, t.constant(Tensor<float>({3}, {1000.0f, 999.0f, -1000.0f})), 0);
  EXPECT_GT(t.value(s)[0], t.value(s)[1]);
  EXPECT_EQ(t.value(s)[2], 0.0f);
}

TEST(Softmax, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(4);
  auto x = random_param("x", {3, 3}, rng, -2, 2);
  for (std::size_t axis : {0u, 1u}) {
    auto r = check_gradients({&x}, [&](Tape<double>& t) { return probe(t, softmax(t, t.parameter(x), axis), 11); });
    EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
  }
}

TEST(LayerNorm, NormalizedRowIsUnchanged) {
  Tape<double> t;
  // Mean 0, population variance 1.
  Tensor<double> x({1, 4}, {1.0, -1.0, 1.0, -1.0});
  Var y = layer_norm(t, t.constant(x), t.constant(Tensor<double>({4}, 1.0)), t.constant(Tensor<double>({4})));
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(t.value(y)[i], x[i], 1e-5);
}

TEST(LayerNorm, ConstantRowMapsToZero) {
  Tape<double> t;
  Var y = layer_norm(t, t.constant(Tensor<double>({1, 5}, 7.0)), t.constant(Tensor<double>({5}, 1.0)),
                     t.constant(Tensor<double>({5})));
  for (int i = 0; i < 5; ++i) EXPECT_EQ(t.value(y)[i], 0.0);
}

TEST(LayerNorm, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  auto x = random_param("x", {2, 8}, rng);
  auto g = random_param("gain", {8}, rng, 0.5, 1.5);
  auto b = random_param("bias", {8}, rng);
  auto r = check_gradients({&x, &g, &b}, [&](Tape<double>& t) {
    return probe(t, layer_norm(t, t.parameter(x), t.parameter(g), t.parameter(b)), 13);
  });
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
}

TEST(Backward, SumGivesOnes) {
  Parameter<float> p("p", Tensor<float>({2, 3}, {1, 2, 3, 4, 5, 6}));
  Tape<float> t;
  t.backward(sum(t, t.parameter(p)));
  for (float g : p.grad.values()) EXPECT_EQ(g, 1.0f);
}

TEST(Backward, SumOfSquares) {
  Parameter<double> p("p", Tensor<double>({2}, {1.0, 2.0}));
  Tape<double> t;
  t.backward(sum(t, square(t, t.parameter(p))));
  EXPECT_DOUBLE_EQ(p.grad[0], 2.0);
  EXPECT_DOUBLE_EQ(p.grad[1], 4.0);
}

TEST(Backward, NonScalarLossIsContractError) {
  Parameter<double> p("p", Tensor<double>({2}, {1.0, 2.0}));
  Tape<double> t;
  EXPECT_THROW(t.backward(square(t, t.parameter(p))), ContractError);
}

TEST(Backward, SecondCallIsContractError) {
  Parameter<double> p("p", Tensor<double>({2}, {1.0, 2.0}));
  Tape<double> t;
  Var loss = sum(t, t.parameter(p));
  t.backward(loss);
  EXPECT_THROW(t.backward(loss), ContractError);
}

TEST(Backward, ParameterUsedTwiceAccumulates) {
  Parameter<double> p("p", Tensor<double>({1}, {3.0}));
  Tape<double> t;
  Var a = t.parameter(p);
  Var b = t.parameter(p);
  t.backward(sum(t, mul(t, a, b)));
  EXPECT_DOUBLE_EQ(p.grad[0], 6.0);
}

TEST(Backward, DeterministicForFixedTape) {
  std::mt19937_64 rng(9);
  auto w = random_param("w", {6, 6}, rng);
  auto run = [&] {
    w.zero_grad();
    Tape<double> t;
    std::mt19937_64 r2(2);
    Var x = t.constant(random_tensor({5, 6}, r2));
    t.backward(probe(t, gelu(t, matmul(t, x, t.parameter(w))), 3));
    return w.grad;
  };
  EXPECT_EQ(run(), run());
}

TEST(Numerics, NonFiniteResultAborts) {
  Tape<float> t;
  EXPECT_THROW(exp(t, t.constant(Tensor<float>({1}, {1000.0f}))), NumericalError);
}

TEST(Numerics, ForwardIsBitIdenticalAcrossRuns) {
  std::mt19937_64 rng(10);
  Tensor<float> x = random_tensor({64, 32}, rng).cast<float>();
  Tensor<float> w = random_tensor({32, 32}, rng).cast<float>();
  auto run = [&] {
    Tape<float> t;
    Var y = softmax(t, gelu(t, matmul(t, t.constant(x), t.constant(w))), 1);
    return t.value(sum_cols(t, y));
  };
  EXPECT_EQ(run(), run());
}

// Every remaining primitive against central differences.
class ElementwiseGradients : public ::testing::Test {
 protected:
  std::mt19937_64 rng{21};
};

TEST_F(ElementwiseGradients, AddSubMulNegScale) {
  auto a = random_param("a", {3, 4}, rng);
  auto b = random_param("b", {3, 4}, rng);
  auto r = check_gradients({&a, &b}, [&](Tape<double>& t) {
    Var x = t.parameter(a), y = t.parameter(b);
    Var z = add(t, mul(t, x, y), sub(t, scale(t, x, 0.5), neg(t, y)));
    return probe(t, z, 1);
  });
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
}

TEST_F(ElementwiseGradients, ExpSoftplusGeluSquare) {
  auto a = random_param("a", {4, 4}, rng, -3, 3);
  for (int which = 0; which < 4; ++which) {
    auto r = check_gradients({&a}, [&](Tape<double>& t) {
      Var x = t.parameter(a);
      Var y = which == 0 ? exp(t, x) : which == 1 ? softplus(t, x) : which == 2 ? gelu(t, x) : square(t, x);
      return probe(t, y, 2);
    });
    EXPECT_LT(r.max_rel_error, 1e-4) << which << " " << r.worst;
  }
}

TEST_F(ElementwiseGradients, ConcatSliceReshape) {
  auto a = random_param("a", {4, 3}, rng);
  auto b = random_param("b", {4, 2}, rng);
  auto r = check_gradients({&a, &b}, [&](Tape<double>& t) {
    Var c = concat_cols(t, t.parameter(a), t.parameter(b));
    Var s0 = slice(t, c, 0, 1, 3);
    Var s1 = slice(t, c, 1, 2, 5);
    Var flat = reshape(t, s1, Shape{12});
    return add(t, probe(t, s0, 3), probe(t, flat, 4));
  });
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
}

TEST_F(ElementwiseGradients, Reductions) {
  auto a = random_param("a", {3, 5}, rng);
  auto r = check_gradients({&a}, [&](Tape<double>& t) {
    Var x = t.parameter(a);
    Var m = mean(t, square(t, x));
    Var s = probe(t, sum_cols(t, x), 5);
    return add(t, m, add(t, s, sum(t, exp(t, x))));
  });
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
}

TEST_F(ElementwiseGradients, LinearAndTiledAdd) {
  auto x = random_param("x", {6, 4}, rng);
  auto w = random_param("w", {4, 3}, rng);
  auto bias = random_param("bias", {3}, rng);
  auto table = random_param("table", {2, 3}, rng);
  auto r = check_gradients({&x, &w, &bias, &table}, [&](Tape<double>& t) {
    Var y = linear(t, t.parameter(x), t.parameter(w), t.parameter(bias));
    return probe(t, add_tiled(t, y, t.parameter(table)), 6);
  });
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
}

TEST_F(ElementwiseGradients, BatchedMatmulAllTransposes) {
  for (int ta = 0; ta < 2; ++ta)
    for (int tb = 0; tb < 2; ++tb) {
      auto a = random_param("a", ta ? Shape{3, 4, 2} : Shape{3, 2, 4}, rng);
      auto b = random_param("b", tb ? Shape{3, 5, 4} : Shape{3, 4, 5}, rng);
      auto r = check_gradients({&a, &b}, [&](Tape<double>& t) {
        return probe(t, batched_matmul(t, t.parameter(a), t.parameter(b), ta, tb), 7);
      });
      EXPECT_LT(r.max_rel_error, 1e-4) << ta << tb << " " << r.worst;
    }
}

TEST(BatchedMatmul, MatchesPlainMatmulPerBatch) {
  std::mt19937_64 rng(8);
  Tape<double> t;
  Tensor<double> a = random_tensor({2, 3, 4}, rng);
  Tensor<double> b = random_tensor({2, 3, 5}, rng);
  const std::uint64_t before = batched_mac_counter();
  Var c = batched_matmul(t, t.constant(a), t.constant(b), true, false);
  EXPECT_EQ(batched_mac_counter() - before, 2u * 4 * 3 * 5);
  for (std::size_t g = 0; g < 2; ++g)
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 5; ++j) {
        double ref = 0;
        for (std::size_t k = 0; k < 3; ++k) ref += a[(g * 3 + k) * 4 + i] * b[(g * 3 + k) * 5 + j];
        EXPECT_NEAR(t.value(c)[(g * 4 + i) * 5 + j], ref, 1e-12);
      }
}

TEST_F(ElementwiseGradients, SplitMergeHeadsAndGroupDivide) {
  auto x = random_param("x", {8, 6}, rng);
  auto alpha = random_param("alpha", {3}, rng, 0.5, 2.0);
  auto r = check_gradients({&x, &alpha}, [&](Tape<double>& t) {
    Var h = split_heads(t, t.parameter(x), 2, 3);
    Var d = divide_by_group(t, h, t.parameter(alpha), 1.5);
    return probe(t, merge_heads(t, d, 3), 8);
  });
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
}

TEST(SplitHeads, MergeInvertsSplitExactly) {
  std::mt19937_64 rng(12);
  Tape<float> t;
  Tensor<float> x = random_tensor({12, 8}, rng).cast<float>();
  Var m = merge_heads(t, split_heads(t, t.constant(x), 4, 2), 2);
  EXPECT_EQ(t.value(m), x);
}

TEST(SplitHeads, LayoutPlacesHeadChannelsContiguously) {
  Tape<float> t;
  Tensor<float> x({4, 4});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<float>(i);
  // rows 0-1 are segment 0; channels 2-3 are head 1.
  const auto& y = t.value(split_heads(t, t.constant(x), 2, 2));
  ASSERT_EQ(y.shape(), (Shape{4, 2, 2}));
  EXPECT_EQ(y[(1 * 2 + 0) * 2 + 0], x.at(0, 2));
  EXPECT_EQ(y[(1 * 2 + 1) * 2 + 1], x.at(1, 3));
  EXPECT_EQ(y[(2 * 2 + 0) * 2 + 0], x.at(2, 0));
}

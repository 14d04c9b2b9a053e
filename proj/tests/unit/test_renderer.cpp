#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "support/random.hpp"
#include "xfe/ad/ops.hpp"
#include "xfe/gradcheck.hpp"
#include "xfe/renderer.hpp"

using namespace xfe;
using namespace xfe::rendering;
using ad::Tape;
using ad::Tensor;
using ad::Var;

namespace {

std::vector<double> render_batch(const std::vector<double>& rho, const std::vector<double>& delta, std::size_t n) {
  Tape<double> t;
  const Var i = render<double>(t, t.constant(Tensor<double>({rho.size()}, rho)), delta, n);
  return t.value(i).to_vector();
}

}  // namespace

TEST(Render, EmptySpaceTransmitsEverything) {
  const std::vector<float> rho(16, 0.0f);
  const std::vector<double> delta(16, 0.3);
  EXPECT_EQ(render(rho, delta, 1.0).i_pred, 1.0);
  EXPECT_EQ(render_batch(std::vector<double>(16, 0.0), delta, 8), (std::vector<double>{1.0, 1.0}));
}

TEST(Render, UnitDensityOverTwoMillimeters) {
  const std::vector<float> rho(8, 1.0f);
  const std::vector<double> delta(8, 0.25);
  const auto r = render(rho, delta, 1.0);
  EXPECT_NEAR(r.i_pred, 0.135335, 1e-6);
  EXPECT_DOUBLE_EQ(r.absorption, 2.0);
}

TEST(Render, BatchMatchesScalarLoopOracle) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 0.1), ud(0.1, 2.0);
  const std::size_t rays = 20, n = 32;
  std::vector<float> rho(rays * n);
  std::vector<float> delta_f(rays * n);
  for (std::size_t r = 0; r < rays; ++r) {
    const double d = ud(rng);
    for (std::size_t i = 0; i < n; ++i) {
      rho[r * n + i] = static_cast<float>(u(rng));
      delta_f[r * n + i] = static_cast<float>(d);
    }
  }
  Tape<float> t;
  const auto& pred = t.value(render<float>(t, t.constant(Tensor<float>({rho.size()}, rho)), delta_f, n));
  for (std::size_t r = 0; r < rays; ++r) {
    double acc = 0;
    for (std::size_t i = 0; i < n; ++i) acc += static_cast<double>(rho[r * n + i]) * static_cast<double>(delta_f[r * n + i]);
    const double expected = std::exp(-acc);
    EXPECT_LT(std::abs(pred[r] - expected) / expected, 1e-6) << r;
  }
}

TEST(Render, NegativeDensityIsContractError) {
  const std::vector<float> rho{0.1f, -0.01f};
  const std::vector<double> delta{1.0, 1.0};
  EXPECT_THROW(render(rho, delta), ContractError);
  EXPECT_THROW(render_batch({0.1, -0.01}, delta, 2), ContractError);
}

TEST(Render, GradientIsMinusDeltaTimesIntensity) {
  ad::Parameter<double> rho("rho", Tensor<double>({4}, {0.1, 0.2, 0.05, 0.3}));
  const std::vector<double> delta{0.5, 1.0, 1.5, 2.0};
  Tape<double> t;
  const Var i = render<double>(t, t.parameter(rho), delta, 4);
  const double ip = t.value(i)[0];
  t.backward(ad::sum(t, i));
  for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(rho.grad[k], -delta[k] * ip, 1e-15);
}

TEST(Render, IncreasingAnyDensityLowersIntensity) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 0.2);
  std::vector<double> rho(12);
  for (auto& v : rho) v = u(rng);
  const std::vector<double> delta(12, 0.7);
  const double base = render_batch(rho, delta, 12)[0];
  for (std::size_t i = 0; i < 12; ++i) {
    auto bumped = rho;
    bumped[i] += 1e-3;
    EXPECT_LT(render_batch(bumped, delta, 12)[0], base) << i;
  }
}

TEST(Render, HalvingDensityAndDoublingStepIsExact) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<float> u(0.0f, 0.2f);
  std::vector<float> rho(40), half(40);
  std::vector<double> delta(40), twice(40);
  for (std::size_t i = 0; i < 40; ++i) {
    rho[i] = u(rng);
    half[i] = rho[i] / 2;
    delta[i] = 0.37 + 0.01 * static_cast<double>(i);
    twice[i] = 2 * delta[i];
  }
  EXPECT_EQ(render(rho, delta).i_pred, render(half, twice).i_pred);
}

TEST(Render, MidpointErrorAtLeastHalvesWhenPointsDouble) {
  // rho(t) = 0.02 * (1.5 + sin(t / 7)) on [0, 60]; reference by a 1e-5 step midpoint sum.
  auto rho = [](double t) { return 0.02 * (1.5 + std::sin(t / 7.0)); };
  const double length = 60.0;
  double reference = 0;
  const double h = 1e-5;
  for (double t = h / 2; t < length; t += h) reference += rho(t) * h;
  const double exact = std::exp(-reference);
  double prev = std::numeric_limits<double>::infinity();
  for (std::size_t n = 8; n <= 256; n *= 2) {
    std::vector<double> r(n), d(n, length / static_cast<double>(n));
    for (std::size_t i = 0; i < n; ++i) r[i] = rho((static_cast<double>(i) + 0.5) * d[i]);
    const double err = std::abs(render_batch(r, d, n)[0] - exact);
    EXPECT_LE(err, prev / 2) << n;
    prev = err;
  }
}

TEST(Loss, PerfectPredictionIsZero) {
  Tape<double> t;
  const std::vector<double> gt{0.3, 0.9, 0.5};
  const Var l = loss<double>(t, t.constant(Tensor<double>({3}, gt)), gt);
  EXPECT_EQ(t.value(l).item(), 0.0);
}

TEST(Loss, SumAndMeanReductions) {
  Tape<double> t;
  const std::vector<double> gt1{0.5};
  EXPECT_NEAR(t.value(loss<double>(t, t.constant(Tensor<double>({1}, {0.8})), gt1, Reduction::sum)).item(), 0.09,
              1e-15);
  const std::vector<double> gt2{0.5, 0.5};
  const Var p = t.constant(Tensor<double>({2}, {0.8, 0.6}));
  EXPECT_NEAR(t.value(loss<double>(t, p, gt2, Reduction::sum)).item(), 0.10, 1e-15);
  EXPECT_NEAR(t.value(loss<double>(t, p, gt2, Reduction::mean)).item(), 0.05, 1e-15);
}

TEST(Loss, LogDomainComparesAbsorptions) {
  Tape<double> t;
  const std::vector<double> gt{std::exp(-0.4)};
  const Var absorption = t.constant(Tensor<double>({1}, {0.7}));
  EXPECT_NEAR(t.value(loss<double>(t, absorption, gt, Reduction::sum, LossDomain::log)).item(), 0.09, 1e-12);
  EXPECT_THROW(parse_loss_domain("linear"), ConfigError);
}

TEST(Loss, GradientThroughRenderMatchesFiniteDifferences) {
  std::mt19937_64 rng(4);
  ad::Parameter<double> rho("rho", test_support::random_tensor({24}, rng, 0.0, 0.3));
  std::vector<double> delta(24);
  for (auto& d : delta) d = std::uniform_real_distribution<double>(0.5, 2.0)(rng);
  const std::vector<double> gt{0.4, 0.2, 0.7};
  for (Reduction red : {Reduction::mean, Reduction::sum}) {
    auto r = check_gradients({&rho}, [&](Tape<double>& t) {
      return loss<double>(t, render<double>(t, t.parameter(rho), delta, 8), gt, red);
    });
    EXPECT_LT(r.max_rel_error, 1e-3) << r.worst;
  }
}

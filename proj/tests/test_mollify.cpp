#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "opreg/mollify.hpp"
#include "test_support.hpp"

using namespace opreg;
using std::numbers::pi;

namespace {

// Independent oracle: Gauss-Legendre (20 points) on 400 panels of [-1, 1].
double bump_integral_oracle() {
  static const double x[10] = {0.0765265211334973, 0.2277858511416451, 0.3737060887154195, 0.5108670019508271,
                               0.6360536807265150, 0.7463319064601508, 0.8391169718222188, 0.9122344282513259,
                               0.9639719272779138, 0.9931285991850949};
  static const double w[10] = {0.1527533871307258, 0.1491729864726037, 0.1420961093183820, 0.1316886384491766,
                               0.1181945319615184, 0.1019301198172404, 0.0832767415767048, 0.0626720483341091,
                               0.0406014298003869, 0.0176140071391521};
  const int panels = 400;
  double acc = 0.0;
  for (int p = 0; p < panels; ++p) {
    const double a = -1.0 + 2.0 * p / panels, h = 2.0 / panels, mid = a + h / 2;
    for (int i = 0; i < 10; ++i) {
      for (double sgn : {-1.0, 1.0}) {
        const double s = mid + sgn * x[i] * h / 2;
        acc += w[i] * h / 2 * (std::abs(s) < 1 ? std::exp(1 / (s * s - 1)) : 0.0);
      }
    }
  }
  return acc;
}

std::vector<double> ladder_errors(const GridFunction& x, const std::vector<double>& xis) {
  std::vector<double> e;
  for (const auto& r : mollification_report(x, xis)) e.push_back(r.l2_error);
  return e;
}

}  // namespace

TEST(MollifierKernel, NormalizationConstant) {
  const double c = mollifier_normalization();
  EXPECT_NEAR(c, 1.0 / bump_integral_oracle(), 1e-12);
  EXPECT_NEAR(c, 2.2523, 1e-4);
  MollifierParams one(1.0);
  EXPECT_NEAR(mollifier_kernel(one, 0.0), c * std::exp(-1.0), 1e-15);
  for (double xi : {0.5, 0.1, 0.02}) {
    MollifierParams p(xi);
    EXPECT_EQ(mollifier_kernel(p, xi), 0.0);
    EXPECT_EQ(mollifier_kernel(p, -xi), 0.0);
    EXPECT_EQ(mollifier_kernel(p, 1.5 * xi), 0.0);
    // unit mass on the support, midpoint rule with 10^5 cells
    const int m = 100000;
    double acc = 0;
    for (int i = 0; i < m; ++i) acc += mollifier_kernel(p, -xi + (i + 0.5) * 2 * xi / m) * 2 * xi / m;
    EXPECT_NEAR(acc, 1.0, 1e-10);
    EXPECT_GE(mollifier_kernel(p, 0.3 * xi), 0.0);
  }
}

TEST(Mollify, ReproducesConstantsInTheInterior) {
  for (double xi : {0.2, 0.05, 0.01}) {
    auto x = GridFunction::constant(200, 1.0);
    auto m = mollify(x, xi);
    for (std::size_t i = 0; i <= 200; ++i) {
      const double s = m.node(i);
      if (s > xi && s < 1 - xi) {
        EXPECT_NEAR(m[i], 1.0, 1e-8) << xi << " " << s;
      }
      EXPECT_LE(m[i], 1.0 + 1e-12);
    }
  }
  auto z = mollify(GridFunction::zeros(64), 0.1);
  EXPECT_EQ(z.max(), 0.0);
  EXPECT_EQ(z.min(), 0.0);
}

TEST(Mollify, WidthLimit) {
  try {
    mollify(GridFunction::zeros(10), 0.5);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::WidthTooLarge);
  }
}

TEST(Mollify, TransposeIsAdjoint) {
  Mollifier m(40, 0.07);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> d;
  std::vector<double> a(41), b(41);
  for (auto& v : a) v = d(rng);
  for (auto& v : b) v = d(rng);
  const auto ma = m.apply(GridFunction(40, a));
  const auto mtb = m.apply_transpose(b);
  double l = 0, r = 0;
  for (int i = 0; i <= 40; ++i) {
    l += ma[i] * b[i];
    r += a[i] * mtb[i];
  }
  EXPECT_NEAR(l, r, 1e-12);
}

TEST(MollificationReport, NonExpansiveAndMonotone) {
  const std::vector<double> xis{0.2, 0.1, 0.05, 0.025};
  std::mt19937_64 rng(4);
  std::normal_distribution<double> d;
  std::vector<double> v(513);
  for (auto& a : v) a = d(rng);
  auto rough = GridFunction(512, v);
  for (const auto& r : mollification_report(rough, {0.3, 0.1, 0.03})) EXPECT_LE(r.norm_ratio, 1.0 + 1e-8);

  auto zero = mollification_report(GridFunction::zeros(64), xis);
  for (const auto& r : zero) {
    EXPECT_EQ(r.l2_error, 0.0);
    EXPECT_EQ(r.norm_ratio, 1.0);
  }
  EXPECT_THROW(mollification_report(GridFunction::zeros(64), {0.1, 0.2}), Error);
}

TEST(MollificationReport, RatesForSmoothAndStepInputs) {
  const std::vector<double> xis{0.2, 0.1, 0.05, 0.025};
  const std::size_t n = 2048;
  // sin^2(pi s) vanishes to first order at both ends, so its zero extension is H^2
  auto smooth = GridFunction::sample(n, [](double s) { return std::pow(std::sin(pi * s), 2); });
  EXPECT_NEAR(testing_support::loglog_slope(xis, ladder_errors(smooth, xis)), 2.0, 0.3);

  // sin(pi s) has a slope jump at the ends of its zero extension: the boundary
  // layer limits the L2 rate to about 3/2
  auto sine = GridFunction::sample(n, [](double s) { return std::sin(pi * s); });
  const double sine_slope = testing_support::loglog_slope(xis, ladder_errors(sine, xis));
  EXPECT_GT(sine_slope, 1.3);
  EXPECT_LT(sine_slope, 1.7);

  auto step = GridFunction::sample(n, [](double s) { return s > 0.5 ? 1.0 : 0.0; });
  const double step_slope = testing_support::loglog_slope(xis, ladder_errors(step, xis));
  EXPECT_NEAR(step_slope, 0.5, 0.15);
}

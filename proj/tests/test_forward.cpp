#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "opreg/forward.hpp"
#include "test_support.hpp"

using namespace opreg;
using std::numbers::pi;

namespace {

struct AnalyticCase {
  ProblemKind kind;
  double (*coeff)(double);
  double (*load)(double);
  double (*exact)(double);
};

const AnalyticCase kCases[] = {
    {ProblemKind(ProblemTag::AExample, 0.5), [](double) { return 1.0; },
     [](double s) { return pi * pi * std::sin(pi * s); }, [](double s) { return std::sin(pi * s); }},
    {ProblemKind(ProblemTag::AExample, 0.5), [](double s) { return 1.0 + s; },
     [](double s) { return 1.0 + 4.0 * s; }, [](double s) { return s * (1.0 - s); }},
    {ProblemKind(ProblemTag::CExample, 0.5), [](double) { return 1.0; },
     [](double s) { return (pi * pi + 1.0) * std::sin(pi * s); }, [](double s) { return std::sin(pi * s); }},
};

double fem_error(const AnalyticCase& c, std::size_t n) {
  // coefficient and load supplied on a finer mesh than the FEM mesh
  const auto x = GridFunction::sample(2 * n, c.coeff);
  const auto f = GridFunction::sample(2 * n, c.load);
  const auto y = solve_forward_fem(c.kind, x, f, n);
  return testing_support::l2_error_fine(y, c.exact);
}

}  // namespace

TEST(SolveForwardFem, SineCaseNodalAccuracy) {
  const ProblemKind kind(ProblemTag::AExample, 0.5);
  const auto x = GridFunction::constant(128, 1.0);
  const auto f = GridFunction::sample(128, [](double s) { return pi * pi * std::sin(pi * s); });
  const auto y = solve_forward_fem(kind, x, f, 128);
  ASSERT_EQ(y.n_cells(), 128u);
  EXPECT_EQ(y[0], 0.0);
  EXPECT_EQ(y[128], 0.0);
  double dev = 0.0;
  for (std::size_t i = 0; i <= 128; ++i) dev = std::max(dev, std::abs(y[i] - std::sin(pi * y.node(i))));
  EXPECT_LT(dev, 5e-4);
}

TEST(SolveForwardFem, VariableCoefficientCase) {
  const ProblemKind kind(ProblemTag::AExample, 0.5);
  const auto x = GridFunction::sample(64, [](double s) { return 1.0 + s; });
  const auto f = GridFunction::sample(64, [](double s) { return 1.0 + 4.0 * s; });
  const auto y = solve_forward_fem(kind, x, f, 64);
  for (std::size_t i = 0; i <= 64; ++i) {
    const double s = y.node(i);
    EXPECT_NEAR(y[i], s * (1.0 - s), 1e-4);
  }
}

TEST(SolveForwardFem, ReactionCase) {
  const ProblemKind kind(ProblemTag::CExample, 0.5);
  const auto x = GridFunction::constant(128, 1.0);
  const auto f = GridFunction::sample(128, [](double s) { return (pi * pi + 1.0) * std::sin(pi * s); });
  const auto y = solve_forward_fem(kind, x, f, 128);
  for (std::size_t i = 0; i <= 128; ++i) EXPECT_NEAR(y[i], std::sin(pi * y.node(i)), 5e-4);
}

TEST(SolveForwardFem, RejectsNonAdmissibleCoefficient) {
  const auto f = GridFunction::constant(16, 1.0);
  try {
    solve_forward_fem(ProblemKind(ProblemTag::AExample, 0.2), GridFunction::constant(16, 0.1), f, 16);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NonAdmissibleCoefficient);
  }
  // c-example FEM only needs x >= 0, while the reference operator needs x >= nu
  const ProblemKind c(ProblemTag::CExample, 0.2);
  const auto x = GridFunction::constant(16, 0.1);
  EXPECT_NO_THROW(solve_forward_fem(c, x, f, 16));
  EXPECT_THROW(solve_forward_reference(c, x, f), Error);
  const auto d = diagnose_coefficient(c, x);
  EXPECT_TRUE(d.meets_fem_bound);
  EXPECT_FALSE(d.meets_nu);
  EXPECT_THROW(solve_forward_fem(c, GridFunction::constant(16, -0.1), f, 16), Error);
  EXPECT_THROW(solve_forward_fem(c, x, f, 1), Error);
}

TEST(SolveForwardFem, ConvergesAtSecondOrder) {
  const std::vector<double> ns = {16, 32, 64, 128, 256};
  for (const auto& c : kCases) {
    std::vector<double> errs;
    for (double n : ns) errs.push_back(fem_error(c, static_cast<std::size_t>(n)));
    const double slope = testing_support::loglog_slope(ns, errs);
    EXPECT_GE(slope, -2.3);
    EXPECT_LE(slope, -1.7);
  }
}

TEST(SolveForwardFem, AssembledMatricesAreSymmetricPositiveDefinite) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0.5, 2.0);
  for (ProblemTag tag : {ProblemTag::AExample, ProblemTag::CExample}) {
    std::vector<double> c(33);
    for (double& v : c) v = u(rng);
    const std::size_t n = 32;
    // dense interior matrix from the operator applied to unit vectors
    std::vector<std::vector<double>> a(n - 1, std::vector<double>(n - 1));
    for (std::size_t j = 0; j + 1 < n; ++j) {
      std::vector<double> e(n + 1, 0.0);
      e[j + 1] = 1.0;
      const auto col = detail::apply_coefficient_form(tag, c, e);
      for (std::size_t i = 0; i + 1 < n; ++i) a[i][j] = col[i];
    }
    for (std::size_t i = 0; i + 1 < n; ++i)
      for (std::size_t j = 0; j + 1 < n; ++j) EXPECT_NEAR(a[i][j], a[j][i], 1e-14);
    EXPECT_NO_THROW(TridiagonalLDLT(detail::assemble_system(tag, c)));
  }
}

TEST(SolveForwardFem, MaximumPrincipleSmoke) {
  const ProblemKind kind(ProblemTag::AExample, 0.3);
  const auto x = GridFunction::sample(100, [](double s) { return 0.5 + s * s + 0.3 * std::sin(7 * s); });
  const auto f = GridFunction::sample(100, [](double s) { return s < 0.4 ? 0.0 : 5.0 * (s - 0.4); });
  const auto y = solve_forward_fem(kind, x, f, 100);
  EXPECT_GE(y.min(), -1e-12);
}

TEST(SolveForwardReference, MatchesAnalyticSolutions) {
  const ProblemKind a(ProblemTag::AExample, 0.5);
  const auto one = GridFunction::constant(64, 1.0);
  // the load is problem data and is supplied at oracle resolution
  const auto f = GridFunction::sample(kReferenceCells, [](double s) { return pi * pi * std::sin(pi * s); });
  const auto y = solve_forward_reference(a, one, f);
  EXPECT_EQ(y.n_cells(), 64u);
  const auto exact = GridFunction::sample(64, [](double s) { return std::sin(pi * s); });
  EXPECT_LT(l2_norm(y - exact), 1e-5);
  // Richardson-style self check: doubling the oracle resolution changes little
  const auto y2 = solve_forward_reference(a, one, f, 2 * kReferenceCells);
  EXPECT_LT(l2_norm(y - y2), 1e-6);

  const ProblemKind c(ProblemTag::CExample, 0.5);
  EXPECT_EQ(l2_norm(solve_forward_reference(c, one, GridFunction::zeros(64))), 0.0);

  const auto x = GridFunction::sample(64, [](double s) { return 1.0 + s; });
  const auto f2 = GridFunction::sample(kReferenceCells, [](double s) { return 1.0 + 4.0 * s; });
  const auto y3 = solve_forward_reference(a, x, f2);
  EXPECT_LT(l2_norm(y3 - GridFunction::sample(64, [](double s) { return s * (1.0 - s); })), 1e-5);
}

class DerivativeTest : public ::testing::TestWithParam<ProblemTag> {};

TEST_P(DerivativeTest, ZeroDirectionGivesZero) {
  const ProblemKind kind(GetParam(), 0.5);
  const auto x = GridFunction::constant(64, 1.0);
  const auto f = GridFunction::sample(64, [](double s) { return 1.0 + s; });
  const auto u = derivative_apply(kind, x, GridFunction::zeros(64), f, 64);
  EXPECT_EQ(l2_norm(u), 0.0);
}

TEST_P(DerivativeTest, FiniteDifferencesDecayLinearly) {
  const ProblemKind kind(GetParam(), 0.5);
  const std::size_t n = 64;
  const auto x = GridFunction::constant(n, 1.0);
  const auto f = GridFunction::sample(n, [](double s) { return 10.0 * std::sin(pi * s) + 3.0 * s; });
  const auto h = GridFunction::sample(n, [](double s) { return std::cos(3.0 * s) + s * s; });
  const FemLinearization lin(kind, x, f, n);
  const auto u = lin.derivative(h);
  const std::vector<double> eps = {1e-2, 1e-3, 1e-4, 1e-5};
  std::vector<double> res;
  for (double e : eps) {
    const auto fd = (1.0 / e) * (solve_forward_fem(kind, x + e * h, f, n) - lin.state());
    res.push_back(l2_norm(fd - u));
  }
  const double ratio = res[1] / res[2];
  EXPECT_GT(ratio, 8.0);
  EXPECT_LT(ratio, 12.0);
  EXPECT_GE(testing_support::loglog_slope(eps, res), 0.9);
}

TEST_P(DerivativeTest, AdjointSatisfiesBilinearIdentity) {
  const ProblemKind kind(GetParam(), 0.5);
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> nd;
  for (auto [xm, n] : {std::pair<std::size_t, std::size_t>{64, 64}, {40, 96}, {256, 128}}) {
    const auto x = GridFunction::sample(xm, [](double s) { return 1.0 + 0.3 * s; });
    const auto f = GridFunction::sample(n, [](double s) { return 1.0 + s * s; });
    const FemLinearization lin(kind, x, f, n);
    for (int trial = 0; trial < 20; ++trial) {
      const auto h = GridFunction::sample(xm, [&](double) { return nd(rng); });
      const auto r = GridFunction::sample(n, [&](double) { return nd(rng); });
      const double lhs = inner(SpaceKind::L2, lin.derivative(h), r);
      const auto g = lin.adjoint(r);
      const double rhs = inner(kind.parameter_space(), h, g);
      const double scale =
          norm(kind.parameter_space(), h) * l2_norm(r) * (1.0 + norm(kind.parameter_space(), g));
      EXPECT_LE(std::abs(lhs - rhs), 1e-10 * scale);
    }
  }
  const auto x = GridFunction::constant(32, 1.0);
  const auto f = GridFunction::constant(32, 1.0);
  EXPECT_EQ(l2_norm(adjoint_apply(kind, x, GridFunction::zeros(32), f, 32)), 0.0);
}

INSTANTIATE_TEST_SUITE_P(BothProblems, DerivativeTest,
                         ::testing::Values(ProblemTag::AExample, ProblemTag::CExample));

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "opreg/errors.hpp"
#include "opreg/grid_function.hpp"
#include "opreg/tridiagonal.hpp"

namespace opreg {

/// The two model problems on (0,1) with homogeneous Dirichlet conditions:
///   AExample: -(x y')' = f       (coefficient identification, x in H1)
///   CExample: -y'' + x y = f     (reaction identification, x in L2)
enum class ProblemTag { AExample, CExample };

inline const char* to_string(ProblemTag t) { return t == ProblemTag::AExample ? "a" : "c"; }

struct ProblemKind {
  ProblemTag tag = ProblemTag::AExample;
  double nu = 0.1;  // lower admissibility bound

  ProblemKind() = default;
  ProblemKind(ProblemTag t, double lower_bound) : tag(t), nu(lower_bound) {
    require(nu > 0.0, ErrorKind::OutOfRange, "admissibility bound nu must be positive");
  }

  /// Parameter space the Tikhonov penalty is measured in.
  SpaceKind parameter_space() const { return tag == ProblemTag::AExample ? SpaceKind::H1 : SpaceKind::L2; }

  /// Bound enforced by the discrete solver. The c-example FEM operator is
  /// defined for x >= 0; the a-example needs x >= nu.
  double fem_bound() const { return tag == ProblemTag::AExample ? nu : 0.0; }
};

inline constexpr std::size_t kReferenceCells = 4096;

struct CoefficientDiagnostics {
  double min_value = 0.0;
  bool meets_fem_bound = false;
  bool meets_nu = false;  // stricter bound required by the exact operator
};

inline CoefficientDiagnostics diagnose_coefficient(const ProblemKind& kind, const GridFunction& x) {
  CoefficientDiagnostics d;
  d.min_value = x.min();
  d.meets_fem_bound = d.min_value >= kind.fem_bound();
  d.meets_nu = d.min_value >= kind.nu;
  return d;
}

namespace detail {

// Element matrix of the coefficient-dependent part of the bilinear form on one
// cell of width h, for a coefficient linear on the cell with end values c0, c1.
// Returns {a00, a01, a11}; all integrals are exact.
struct ElementBlock {
  double a00, a01, a11;
};

inline ElementBlock coefficient_block(ProblemTag tag, double c0, double c1, double h) {
  if (tag == ProblemTag::AExample) {
    const double k = 0.5 * (c0 + c1) / h;
    return {k, -k, k};
  }
  return {h * (c0 / 4.0 + c1 / 12.0), h * (c0 + c1) / 12.0, h * (c0 / 12.0 + c1 / 4.0)};
}

// Interior-node system matrix (nodes 1..n-1).
inline SymTridiagonal assemble_system(ProblemTag tag, std::span<const double> c) {
  const std::size_t n = c.size() - 1;
  const double h = 1.0 / static_cast<double>(n);
  SymTridiagonal full(n + 1);
  for (std::size_t e = 0; e < n; ++e) {
    ElementBlock b = coefficient_block(tag, c[e], c[e + 1], h);
    if (tag == ProblemTag::CExample) {
      b.a00 += 1.0 / h;
      b.a11 += 1.0 / h;
      b.a01 -= 1.0 / h;
    }
    full.diag[e] += b.a00;
    full.diag[e + 1] += b.a11;
    full.off[e] += b.a01;
  }
  SymTridiagonal inner(n - 1);
  for (std::size_t i = 0; i + 1 < n; ++i) inner.diag[i] = full.diag[i + 1];
  for (std::size_t i = 0; i + 2 < n; ++i) inner.off[i] = full.off[i + 1];
  return inner;
}

// Consistent load vector of a piecewise-linear f, interior rows.
inline std::vector<double> assemble_load(std::span<const double> f) {
  const std::size_t n = f.size() - 1;
  const double h = 1.0 / static_cast<double>(n);
  std::vector<double> b(n - 1, 0.0);
  for (std::size_t e = 0; e < n; ++e) {
    const double l0 = h / 6.0 * (2.0 * f[e] + f[e + 1]);
    const double l1 = h / 6.0 * (f[e] + 2.0 * f[e + 1]);
    if (e >= 1) b[e - 1] += l0;
    if (e + 1 <= n - 1) b[e] += l1;
  }
  return b;
}

// Interior rows of B(c) y, the coefficient-dependent form with coefficient c
// applied to the full nodal vector y.
inline std::vector<double> apply_coefficient_form(ProblemTag tag, std::span<const double> c,
                                                  std::span<const double> y) {
  const std::size_t n = c.size() - 1;
  const double h = 1.0 / static_cast<double>(n);
  std::vector<double> full(n + 1, 0.0);
  for (std::size_t e = 0; e < n; ++e) {
    const ElementBlock b = coefficient_block(tag, c[e], c[e + 1], h);
    full[e] += b.a00 * y[e] + b.a01 * y[e + 1];
    full[e + 1] += b.a01 * y[e] + b.a11 * y[e + 1];
  }
  return {full.begin() + 1, full.end() - 1};
}

// Gradient with respect to nodal c of z^T B(c) y (z, y full nodal vectors).
inline std::vector<double> coefficient_form_gradient(ProblemTag tag, std::span<const double> z,
                                                     std::span<const double> y) {
  const std::size_t n = z.size() - 1;
  const double h = 1.0 / static_cast<double>(n);
  std::vector<double> g(n + 1, 0.0);
  for (std::size_t e = 0; e < n; ++e) {
    const double z0 = z[e], z1 = z[e + 1], y0 = y[e], y1 = y[e + 1];
    if (tag == ProblemTag::AExample) {
      const double v = 0.5 * (z1 - z0) * (y1 - y0) / h;
      g[e] += v;
      g[e + 1] += v;
    } else {
      const double cross = (z0 * y1 + z1 * y0) / 12.0;
      g[e] += h * (z0 * y0 / 4.0 + cross + z1 * y1 / 12.0);
      g[e + 1] += h * (z0 * y0 / 12.0 + cross + z1 * y1 / 4.0);
    }
  }
  return g;
}

inline std::vector<double> embed_interior(std::span<const double> interior) {
  std::vector<double> full(interior.size() + 2, 0.0);
  std::copy(interior.begin(), interior.end(), full.begin() + 1);
  return full;
}

}  // namespace detail

/// FEM solve of one model problem at a fixed coefficient, kept around so that
/// derivative and adjoint applications reuse the factorization.
///
/// The coefficient x lives on its own mesh and is interpolated linearly onto
/// the n-cell FEM mesh; the state and all data-side quantities live on the FEM
/// mesh. Y carries the discrete L2 product; X carries `kind.parameter_space()`.
class FemLinearization {
 public:
  FemLinearization(const ProblemKind& kind, const GridFunction& x, const GridFunction& f, std::size_t n)
      : kind_(kind), x_cells_(x.n_cells()), n_(n), to_fem_(x.n_cells(), n),
        coeff_(to_fem_.apply(x.values())),
        factor_(check_and_assemble(kind, x, n, coeff_)) {
    const std::vector<double> load = detail::assemble_load(f.resample(n).values());
    state_ = GridFunction(n, detail::embed_interior(factor_.solve(load)));
  }

  const GridFunction& state() const { return state_; }
  std::size_t cells() const { return n_; }

  /// u = F_n'[x] h.
  GridFunction derivative(const GridFunction& h) const {
    require(h.n_cells() == x_cells_, ErrorKind::DimensionMismatch, "derivative direction mesh");
    const std::vector<double> hc = to_fem_.apply(h.values());
    std::vector<double> rhs = detail::apply_coefficient_form(kind_.tag, hc, state_.values());
    for (double& v : rhs) v = -v;
    return GridFunction(n_, detail::embed_interior(factor_.solve(rhs)));
  }

  /// Euclidean (nodal) gradient of h -> <F_n'[x] h, r>_Y, before the Riesz map.
  std::vector<double> adjoint_functional(const GridFunction& r) const {
    require(r.n_cells() == n_, ErrorKind::DimensionMismatch, "adjoint residual must live on the FEM mesh");
    const auto w = trapezoid_weights(n_);
    std::vector<double> weighted(n_ - 1);
    for (std::size_t i = 1; i < n_; ++i) weighted[i - 1] = w[i] * r[i];
    const std::vector<double> z = detail::embed_interior(factor_.solve(weighted));
    std::vector<double> g = detail::coefficient_form_gradient(kind_.tag, z, state_.values());
    for (double& v : g) v = -v;
    return to_fem_.apply_transpose(g);
  }

  /// g with <F_n'[x] h, r>_Y = <h, g>_X for all h.
  GridFunction adjoint(const GridFunction& r, SpaceKind space) const {
    return riesz_map(space, x_cells_, adjoint_functional(r));
  }

  GridFunction adjoint(const GridFunction& r) const { return adjoint(r, kind_.parameter_space()); }

 private:
  static TridiagonalLDLT check_and_assemble(const ProblemKind& kind, const GridFunction& x, std::size_t n,
                                            const std::vector<double>& coeff) {
    require(n >= 2, ErrorKind::DimensionMismatch, "FEM mesh needs at least 2 cells");
    const double bound = kind.fem_bound();
    if (x.min() < bound) {
      fail(ErrorKind::NonAdmissibleCoefficient,
           "coefficient minimum " + std::to_string(x.min()) + " below bound " + std::to_string(bound));
    }
    return TridiagonalLDLT(detail::assemble_system(kind.tag, coeff));
  }

  ProblemKind kind_;
  std::size_t x_cells_;
  std::size_t n_;
  LinearResampler to_fem_;
  std::vector<double> coeff_;
  TridiagonalLDLT factor_;
  GridFunction state_;
};

inline GridFunction solve_forward_fem(const ProblemKind& kind, const GridFunction& x, const GridFunction& f,
                                      std::size_t n) {
  return FemLinearization(kind, x, f, n).state();
}

/// Stand-in for the exact operator: an n_ref-cell FEM solve resampled to x's mesh.
/// Unlike the FEM operator it insists on x >= nu for both problems.
inline GridFunction solve_forward_reference(const ProblemKind& kind, const GridFunction& x,
                                            const GridFunction& f, std::size_t n_ref = kReferenceCells) {
  if (x.min() < kind.nu) {
    fail(ErrorKind::NonAdmissibleCoefficient,
         "reference operator requires x >= nu = " + std::to_string(kind.nu));
  }
  return solve_forward_fem(kind, x, f, n_ref).resample(x.n_cells());
}

inline GridFunction derivative_apply(const ProblemKind& kind, const GridFunction& x, const GridFunction& h,
                                     const GridFunction& f, std::size_t n) {
  return FemLinearization(kind, x, f, n).derivative(h);
}

inline GridFunction adjoint_apply(const ProblemKind& kind, const GridFunction& x, const GridFunction& r,
                                  const GridFunction& f, std::size_t n) {
  return FemLinearization(kind, x, f, n).adjoint(r);
}

}  // namespace opreg

#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "opreg/errors.hpp"
#include "opreg/grid_function.hpp"

namespace opreg {

namespace detail {

inline double unit_bump(double s) {
  const double q = s * s - 1.0;
  return q < 0.0 ? std::exp(1.0 / q) : 0.0;
}

inline double compute_bump_normalization() {
  // the bump is flat to all orders at +-1, so the composite trapezoid rule
  // converges faster than any power; 2^16 cells are far past round-off
  const std::size_t m = 1 << 16;
  double acc = 0.0;
  for (std::size_t i = 1; i < m; ++i) acc += unit_bump(-1.0 + 2.0 * static_cast<double>(i) / m);
  return 1.0 / (acc * 2.0 / m);
}

}  // namespace detail

/// C with C * int_{-1}^{1} exp(1/(s^2-1)) ds = 1, computed on first use.
inline double mollifier_normalization() {
  static const double c = detail::compute_bump_normalization();
  return c;
}

struct MollifierParams {
  double xi = 0.1;
  double normalization = mollifier_normalization();

  explicit MollifierParams(double width) : xi(width) {
    require(xi > 0.0 && std::isfinite(xi), ErrorKind::OutOfRange, "mollifier width must be positive");
  }
};

inline double mollifier_kernel(const MollifierParams& p, double s) {
  return p.normalization / p.xi * detail::unit_bump(s / p.xi);
}

/// Quadrature cells per kernel support [-xi, xi].
inline constexpr std::size_t kMollifierCellsPerSupport = 256;

/// x -> x_xi as an explicit linear map on an n-cell mesh: x is extended by zero
/// outside [0,1] and the convolution at every node is a composite trapezoid
/// rule on the part of the kernel support inside [0,1], with x interpolated
/// linearly between nodes.
class Mollifier {
 public:
  Mollifier(std::size_t n_cells, double xi) : n_(n_cells), params_(xi), matrix_(n_cells + 1, n_cells + 1) {
    if (!(xi < 0.5)) fail(ErrorKind::WidthTooLarge, "mollifier width " + std::to_string(xi) + " must be below 0.5");
    matrix_.setZero();
    const double dq_target = 2.0 * xi / static_cast<double>(kMollifierCellsPerSupport);
    for (std::size_t i = 0; i <= n_; ++i) {
      const double s = static_cast<double>(i) / n_;
      const double a = std::max(0.0, s - xi), b = std::min(1.0, s + xi);
      const std::size_t m = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil((b - a) / dq_target)));
      const double dq = (b - a) / m;
      for (std::size_t q = 0; q <= m; ++q) {
        const double t = q == m ? b : a + dq * q;
        const double w = (q == 0 || q == m ? 0.5 : 1.0) * dq * mollifier_kernel(params_, s - t);
        if (w == 0.0) continue;
        const double pos = t * n_;
        const std::size_t c = std::min(static_cast<std::size_t>(pos), n_ - 1);
        const double f = pos - static_cast<double>(c);
        matrix_(i, c) += w * (1.0 - f);
        matrix_(i, c + 1) += w * f;
      }
    }
  }

  double xi() const { return params_.xi; }
  std::size_t n_cells() const { return n_; }
  const Eigen::MatrixXd& matrix() const { return matrix_; }

  GridFunction apply(const GridFunction& x) const {
    require(x.n_cells() == n_, ErrorKind::DimensionMismatch, "mollifier built for another mesh");
    Eigen::Map<const Eigen::VectorXd> v(x.values().data(), static_cast<Eigen::Index>(x.size()));
    Eigen::VectorXd out = matrix_ * v;
    return GridFunction(n_, std::vector<double>(out.data(), out.data() + out.size()));
  }

  std::vector<double> apply_transpose(std::span<const double> v) const {
    Eigen::Map<const Eigen::VectorXd> e(v.data(), static_cast<Eigen::Index>(v.size()));
    Eigen::VectorXd out = matrix_.transpose() * e;
    return std::vector<double>(out.data(), out.data() + out.size());
  }

 private:
  std::size_t n_;
  MollifierParams params_;
  Eigen::MatrixXd matrix_;
};

inline GridFunction mollify(const GridFunction& x, double xi) { return Mollifier(x.n_cells(), xi).apply(x); }

struct MollificationRow {
  double xi = 0.0;
  double l2_error = 0.0;
  double norm_ratio = 1.0;
};

/// Per xi: ||x_xi - x||_{L2} and ||x_xi|| / ||x||. Throws PropertyViolation if the
/// ratio exceeds 1 + 1e-8 or the errors fail to decrease along the ladder.
inline std::vector<MollificationRow> mollification_report(const GridFunction& x, const std::vector<double>& xis) {
  require(!xis.empty(), ErrorKind::ConfigInvalid, "empty xi ladder");
  for (std::size_t i = 0; i < xis.size(); ++i) {
    require(xis[i] > 0.0, ErrorKind::ConfigInvalid, "xi values must be positive");
    if (i) require(xis[i] < xis[i - 1], ErrorKind::ConfigInvalid, "xi ladder must be decreasing");
  }
  const double nx = l2_norm(x);
  std::vector<MollificationRow> rows;
  for (double xi : xis) {
    const GridFunction xm = mollify(x, xi);
    MollificationRow r{xi, l2_norm(xm - x), nx > 0 ? l2_norm(xm) / nx : 1.0};
    if (r.norm_ratio > 1.0 + 1e-8) {
      fail(ErrorKind::PropertyViolation, "mollification expanded the norm at xi = " + std::to_string(xi));
    }
    if (!rows.empty() && r.l2_error > rows.back().l2_error) {
      fail(ErrorKind::PropertyViolation, "mollification error increased at xi = " + std::to_string(xi));
    }
    rows.push_back(r);
  }
  return rows;
}

}  // namespace opreg

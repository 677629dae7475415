#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "opreg/errors.hpp"
#include "opreg/tridiagonal.hpp"

namespace opreg {

/// Discrete inner product used on grid functions.
///   L2: composite trapezoid of x*z.
///   H1: L2 part plus the cellwise product of forward differences.
enum class SpaceKind { L2, H1 };

inline const char* to_string(SpaceKind s) { return s == SpaceKind::L2 ? "L2" : "H1"; }

/// Real function on the uniform mesh s_i = i/n_cells of [0,1], stored by its nodal values.
class GridFunction {
 public:
  GridFunction() = default;

  GridFunction(std::size_t n_cells, std::vector<double> values)
      : n_cells_(n_cells), values_(std::move(values)) {
    require(n_cells_ >= 1, ErrorKind::DimensionMismatch, "GridFunction needs at least one cell");
    require(values_.size() == n_cells_ + 1, ErrorKind::DimensionMismatch,
            "GridFunction expects n_cells+1 values, got " + std::to_string(values_.size()));
    for (double v : values_) {
      require(std::isfinite(v), ErrorKind::OutOfRange, "GridFunction values must be finite");
    }
  }

  static GridFunction zeros(std::size_t n_cells) {
    return GridFunction(n_cells, std::vector<double>(n_cells + 1, 0.0));
  }

  static GridFunction constant(std::size_t n_cells, double c) {
    return GridFunction(n_cells, std::vector<double>(n_cells + 1, c));
  }

  template <class F>
  static GridFunction sample(std::size_t n_cells, F&& f) {
    std::vector<double> v(n_cells + 1);
    for (std::size_t i = 0; i <= n_cells; ++i) v[i] = f(static_cast<double>(i) / n_cells);
    return GridFunction(n_cells, std::move(v));
  }

  std::size_t n_cells() const { return n_cells_; }
  std::size_t size() const { return values_.size(); }
  double h() const { return 1.0 / static_cast<double>(n_cells_); }
  double node(std::size_t i) const { return static_cast<double>(i) / n_cells_; }

  std::span<const double> values() const { return values_; }
  std::span<double> values() { return values_; }
  double operator[](std::size_t i) const { return values_[i]; }
  double& operator[](std::size_t i) { return values_[i]; }

  double min() const { return *std::min_element(values_.begin(), values_.end()); }
  double max() const { return *std::max_element(values_.begin(), values_.end()); }

  /// Piecewise-linear interpolant evaluated at s in [0,1].
  double at(double s) const {
    require(s >= -1e-14 && s <= 1.0 + 1e-14, ErrorKind::OutOfRange, "evaluation point outside [0,1]");
    const double pos = std::clamp(s, 0.0, 1.0) * static_cast<double>(n_cells_);
    std::size_t cell = std::min(static_cast<std::size_t>(pos), n_cells_ - 1);
    const double t = pos - static_cast<double>(cell);
    return (1.0 - t) * values_[cell] + t * values_[cell + 1];
  }

  GridFunction resample(std::size_t n_cells) const {
    if (n_cells == n_cells_) return *this;
    return sample(n_cells, [this](double s) { return at(s); });
  }

  bool same_mesh(const GridFunction& o) const { return n_cells_ == o.n_cells_; }

  GridFunction& operator+=(const GridFunction& o) {
    check_mesh(o);
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += o.values_[i];
    return *this;
  }
  GridFunction& operator-=(const GridFunction& o) {
    check_mesh(o);
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] -= o.values_[i];
    return *this;
  }
  GridFunction& operator*=(double a) {
    for (double& v : values_) v *= a;
    return *this;
  }
  /// this += a * o
  GridFunction& axpy(double a, const GridFunction& o) {
    check_mesh(o);
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += a * o.values_[i];
    return *this;
  }

  friend GridFunction operator+(GridFunction a, const GridFunction& b) { return a += b; }
  friend GridFunction operator-(GridFunction a, const GridFunction& b) { return a -= b; }
  friend GridFunction operator*(double s, GridFunction a) { return a *= s; }
  friend GridFunction operator*(GridFunction a, double s) { return a *= s; }
  friend GridFunction operator-(GridFunction a) { return a *= -1.0; }

  friend bool operator==(const GridFunction&, const GridFunction&) = default;

  void check_mesh(const GridFunction& o) const {
    require(same_mesh(o), ErrorKind::DimensionMismatch,
            "grid functions live on different meshes (" + std::to_string(n_cells_) + " vs " +
                std::to_string(o.n_cells_) + " cells)");
  }

 private:
  std::size_t n_cells_ = 0;
  std::vector<double> values_;
};

/// Composite trapezoid weights on an n_cells mesh.
inline std::vector<double> trapezoid_weights(std::size_t n_cells) {
  const double h = 1.0 / static_cast<double>(n_cells);
  std::vector<double> w(n_cells + 1, h);
  w.front() = w.back() = 0.5 * h;
  return w;
}

inline double inner(SpaceKind space, const GridFunction& a, const GridFunction& b) {
  a.check_mesh(b);
  const std::size_t n = a.n_cells();
  const double h = a.h();
  double l2 = 0.5 * (a[0] * b[0] + a[n] * b[n]);
  for (std::size_t i = 1; i < n; ++i) l2 += a[i] * b[i];
  l2 *= h;
  if (space == SpaceKind::L2) return l2;
  double grad = 0.0;
  for (std::size_t i = 0; i < n; ++i) grad += (a[i + 1] - a[i]) * (b[i + 1] - b[i]);
  return l2 + grad / h;
}

inline double norm(SpaceKind space, const GridFunction& a) {
  return std::sqrt(std::max(0.0, inner(space, a, a)));
}

inline double l2_norm(const GridFunction& a) { return norm(SpaceKind::L2, a); }

/// Gram matrix G of the discrete inner product, <a,b> = a^T G b.
inline SymTridiagonal gram_matrix(SpaceKind space, std::size_t n_cells) {
  SymTridiagonal g(n_cells + 1);
  g.diag = trapezoid_weights(n_cells);
  if (space == SpaceKind::H1) {
    const double inv_h = static_cast<double>(n_cells);
    for (std::size_t i = 0; i < n_cells; ++i) {
      g.diag[i] += inv_h;
      g.diag[i + 1] += inv_h;
      g.off[i] -= inv_h;
    }
  }
  return g;
}

/// Riesz representer: solves G g = functional for g, where `functional` holds the
/// nodal action of a linear functional (the Euclidean gradient).
inline GridFunction riesz_map(SpaceKind space, std::size_t n_cells, std::span<const double> functional) {
  require(functional.size() == n_cells + 1, ErrorKind::DimensionMismatch, "riesz_map: length");
  if (space == SpaceKind::L2) {
    const auto w = trapezoid_weights(n_cells);
    std::vector<double> g(n_cells + 1);
    for (std::size_t i = 0; i <= n_cells; ++i) g[i] = functional[i] / w[i];
    return GridFunction(n_cells, std::move(g));
  }
  return GridFunction(n_cells, TridiagonalLDLT(gram_matrix(space, n_cells)).solve(functional));
}

/// Nodal action of the Gram matrix, G x.
inline std::vector<double> gram_apply(SpaceKind space, const GridFunction& x) {
  return gram_matrix(space, x.n_cells()).apply(x.values());
}

/// Linear interpolation between two uniform meshes as an explicit sparse map,
/// so its transpose is available for adjoint computations.
class LinearResampler {
 public:
  LinearResampler(std::size_t from_cells, std::size_t to_cells)
      : from_(from_cells), to_(to_cells), left_(to_cells + 1), weight_(to_cells + 1) {
    for (std::size_t i = 0; i <= to_cells; ++i) {
      const double pos = static_cast<double>(i) * from_cells / static_cast<double>(to_cells);
      std::size_t cell = std::min(static_cast<std::size_t>(pos), from_cells - 1);
      left_[i] = cell;
      weight_[i] = pos - static_cast<double>(cell);
    }
  }

  std::size_t from_cells() const { return from_; }
  std::size_t to_cells() const { return to_; }

  std::vector<double> apply(std::span<const double> v) const {
    std::vector<double> out(to_ + 1);
    for (std::size_t i = 0; i <= to_; ++i) {
      out[i] = (1.0 - weight_[i]) * v[left_[i]] + weight_[i] * v[left_[i] + 1];
    }
    return out;
  }

  std::vector<double> apply_transpose(std::span<const double> v) const {
    std::vector<double> out(from_ + 1, 0.0);
    for (std::size_t i = 0; i <= to_; ++i) {
      out[left_[i]] += (1.0 - weight_[i]) * v[i];
      out[left_[i] + 1] += weight_[i] * v[i];
    }
    return out;
  }

 private:
  std::size_t from_;
  std::size_t to_;
  std::vector<std::size_t> left_;
  std::vector<double> weight_;
};

}  // namespace opreg

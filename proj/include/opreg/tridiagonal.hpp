#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "opreg/errors.hpp"

namespace opreg {

/// Symmetric tridiagonal matrix stored by its diagonal and first off-diagonal.
struct SymTridiagonal {
  std::vector<double> diag;
  std::vector<double> off;  // off[i] couples rows i and i+1

  explicit SymTridiagonal(std::size_t n = 0) : diag(n, 0.0), off(n > 0 ? n - 1 : 0, 0.0) {}

  std::size_t size() const { return diag.size(); }

  std::vector<double> apply(std::span<const double> v) const {
    const std::size_t n = size();
    std::vector<double> out(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      double acc = diag[i] * v[i];
      if (i > 0) acc += off[i - 1] * v[i - 1];
      if (i + 1 < n) acc += off[i] * v[i + 1];
      out[i] = acc;
    }
    return out;
  }
};

/// LDL^T factorization of a symmetric tridiagonal matrix. Construction fails
/// with SingularSystem unless every pivot is strictly positive, i.e. unless the
/// matrix is positive definite.
class TridiagonalLDLT {
 public:
  explicit TridiagonalLDLT(const SymTridiagonal& a) : pivots_(a.size()), lower_(a.off.size()) {
    const std::size_t n = a.size();
    for (std::size_t i = 0; i < n; ++i) {
      double d = a.diag[i];
      if (i > 0) {
        lower_[i - 1] = a.off[i - 1] / pivots_[i - 1];
        d -= lower_[i - 1] * a.off[i - 1];
      }
      if (!(d > 0.0)) {
        fail(ErrorKind::SingularSystem,
             "tridiagonal system is not positive definite (pivot " + std::to_string(i) + ")");
      }
      pivots_[i] = d;
    }
  }

  std::vector<double> solve(std::span<const double> rhs) const {
    const std::size_t n = pivots_.size();
    require(rhs.size() == n, ErrorKind::DimensionMismatch, "tridiagonal solve: rhs length");
    std::vector<double> x(rhs.begin(), rhs.end());
    for (std::size_t i = 1; i < n; ++i) x[i] -= lower_[i - 1] * x[i - 1];
    for (std::size_t i = 0; i < n; ++i) x[i] /= pivots_[i];
    for (std::size_t i = n; i-- > 1;) x[i - 1] -= lower_[i - 1] * x[i];
    return x;
  }

 private:
  std::vector<double> pivots_;
  std::vector<double> lower_;
};

}  // namespace opreg

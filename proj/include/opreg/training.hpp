#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "opreg/errors.hpp"
#include "opreg/forward.hpp"
#include "opreg/grid_function.hpp"
#include "opreg/text_format.hpp"

namespace opreg {

enum class PerturbationMode { SineModes, SmoothBumps };

inline const char* to_string(PerturbationMode m) { return m == PerturbationMode::SineModes ? "sine" : "bumps"; }

inline PerturbationMode parse_perturbation(const std::string& s) {
  if (s == "sine" || s == "SineModes") return PerturbationMode::SineModes;
  if (s == "bumps" || s == "SmoothBumps") return PerturbationMode::SmoothBumps;
  fail(ErrorKind::ConfigInvalid, "unknown perturbation mode '" + s + "'");
}

struct PerturbationSpec {
  PerturbationMode mode = PerturbationMode::SineModes;
  double amplitude = 0.1;
  std::size_t count = 4;
  std::uint64_t seed = 0;
};

namespace detail {

inline constexpr double kSineNormalization = std::numbers::sqrt2;

// C^2 bump (1 - r^2)^3 on |r| < 1, peak value 1.
inline double bump(double s, double center, double half_width) {
  const double r = (s - center) / half_width;
  if (std::abs(r) >= 1.0) return 0.0;
  const double q = 1.0 - r * r;
  return q * q * q;
}

inline std::vector<double> bump_centers(std::size_t count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> jitter(-0.2, 0.2);
  std::vector<double> c(count);
  for (std::size_t l = 0; l < count; ++l) c[l] = (static_cast<double>(l) + 0.5 + jitter(rng)) / count;
  return c;
}

}  // namespace detail

/// Unit-amplitude perturbation shapes phi_1..phi_N sampled on an n-cell mesh.
/// SineModes: sqrt(2) sin(l pi s). SmoothBumps: C^2 bumps of half-width 1.5/N
/// around jittered, evenly spread centers (jitter drawn from the seed).
inline std::vector<GridFunction> perturbation_shapes(const PerturbationSpec& p, std::size_t n_cells) {
  std::vector<GridFunction> out;
  out.reserve(p.count);
  if (p.mode == PerturbationMode::SineModes) {
    for (std::size_t l = 1; l <= p.count; ++l) {
      out.push_back(GridFunction::sample(n_cells, [&](double s) {
        return detail::kSineNormalization * std::sin(static_cast<double>(l) * std::numbers::pi * s);
      }));
    }
  } else {
    const auto centers = detail::bump_centers(p.count, p.seed);
    const double w = 1.5 / static_cast<double>(p.count);
    for (double c : centers) out.push_back(GridFunction::sample(n_cells, [&](double s) { return detail::bump(s, c, w); }));
  }
  return out;
}

inline double shape_sup(PerturbationMode m) { return m == PerturbationMode::SineModes ? detail::kSineNormalization : 1.0; }

/// Supervised pairs (x_hat^l, y_hat^l), l = 0..N; index 0 is the center.
struct TrainingSet {
  ProblemKind problem{ProblemTag::AExample, 1.0};
  SpaceKind space = SpaceKind::H1;
  GridFunction f;
  PerturbationSpec perturbation;
  std::size_t n_ref = kReferenceCells;
  std::vector<GridFunction> x_hat;
  std::vector<GridFunction> y_hat;

  std::size_t N() const { return x_hat.empty() ? 0 : x_hat.size() - 1; }
  std::size_t n_cells() const { return x_hat.at(0).n_cells(); }
};

/// Determinant of the Gram matrix after scaling every image to unit norm, so
/// the independence check does not depend on the perturbation amplitude.
inline double normalized_gram_determinant(const std::vector<GridFunction>& images, SpaceKind space) {
  const std::size_t n = images.size();
  Eigen::MatrixXd g(n, n);
  std::vector<double> nrm(n);
  for (std::size_t i = 0; i < n; ++i) nrm[i] = norm(space, images[i]);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      const double v = (nrm[i] > 0 && nrm[j] > 0) ? inner(space, images[i], images[j]) / (nrm[i] * nrm[j]) : 0.0;
      g(i, j) = g(j, i) = v;
    }
  }
  return g.determinant();
}

inline TrainingSet generate_training_set(const ProblemKind& problem, const GridFunction& f,
                                         const GridFunction& center_x, const PerturbationSpec& p,
                                         std::size_t n_ref = kReferenceCells) {
  require(p.count >= 1, ErrorKind::ConfigInvalid, "training set needs at least one perturbation");
  require(p.amplitude > 0.0, ErrorKind::ConfigInvalid, "perturbation amplitude must be positive");
  const double margin = center_x.min() - problem.nu;
  if (p.amplitude * shape_sup(p.mode) > margin) {
    fail(ErrorKind::NonAdmissiblePerturbation,
         "amplitude " + std::to_string(p.amplitude) + " exceeds admissibility margin " + std::to_string(margin));
  }
  TrainingSet ts;
  ts.problem = problem;
  ts.space = problem.parameter_space();
  ts.f = f;
  ts.perturbation = p;
  ts.n_ref = n_ref;
  ts.x_hat.push_back(center_x);
  std::vector<GridFunction> shapes = perturbation_shapes(p, center_x.n_cells());
  for (auto& phi : shapes) {
    phi *= p.amplitude;
    ts.x_hat.push_back(center_x + phi);
  }
  const double det = normalized_gram_determinant(shapes, ts.space);
  if (!(det > 1e-12)) fail(ErrorKind::DependentImages, "normalized Gram determinant " + std::to_string(det));
  for (const auto& x : ts.x_hat) ts.y_hat.push_back(solve_forward_reference(problem, x, f, n_ref));
  return ts;
}

struct CenteredTrainingSet {
  GridFunction center_x;
  GridFunction center_y;
  std::vector<GridFunction> images;
  std::vector<GridFunction> data;

  std::size_t N() const { return images.size(); }
};

inline CenteredTrainingSet center_training_set(const TrainingSet& s) {
  require(s.N() >= 1 && s.y_hat.size() == s.x_hat.size(), ErrorKind::DimensionMismatch,
          "training set needs a center and at least one pair");
  CenteredTrainingSet c{s.x_hat[0], s.y_hat[0], {}, {}};
  for (std::size_t l = 1; l <= s.N(); ++l) {
    c.images.push_back(s.x_hat[l] - s.x_hat[0]);
    c.data.push_back(s.y_hat[l] - s.y_hat[0]);
  }
  return c;
}

/// basis_i = sum_j transform(i, j) images_j, transform lower triangular.
struct Orthonormalization {
  std::vector<GridFunction> basis;
  Eigen::MatrixXd transform;
};

/// Modified Gram-Schmidt with one reorthogonalization pass.
inline Orthonormalization gram_schmidt(const std::vector<GridFunction>& images, SpaceKind space) {
  const std::size_t n = images.size();
  require(n >= 1, ErrorKind::DimensionMismatch, "nothing to orthonormalize");
  Orthonormalization out{{}, Eigen::MatrixXd::Zero(n, n)};
  for (std::size_t l = 0; l < n; ++l) {
    GridFunction v = images[l];
    Eigen::VectorXd coef = Eigen::VectorXd::Zero(n);
    coef(l) = 1.0;
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t i = 0; i < l; ++i) {
        const double p = inner(space, v, out.basis[i]);
        v.axpy(-p, out.basis[i]);
        coef -= p * out.transform.row(i).transpose();
      }
    }
    const double r = norm(space, v);
    const double ref = norm(space, images[l]);
    if (!(r > 1e-10 * ref) || ref == 0.0) {
      fail(ErrorKind::DependentImages, "image " + std::to_string(l + 1) + " lies in the span of its predecessors");
    }
    v *= 1.0 / r;
    out.basis.push_back(std::move(v));
    out.transform.row(l) = coef.transpose() / r;
  }
  return out;
}

/// Rank-N operator x -> sum_l <x, basis_l>_X induced_l, built from a centered set.
/// The center pair is kept so the affine surrogate y0 + F#(x - x0) is available.
struct LinearSurrogate {
  std::vector<GridFunction> basis;
  std::vector<GridFunction> induced;
  Eigen::MatrixXd transform;
  SpaceKind space = SpaceKind::L2;
  GridFunction center_x;
  GridFunction center_y;

  std::size_t N() const { return basis.size(); }
  std::size_t input_cells() const { return basis.at(0).n_cells(); }
  std::size_t output_cells() const { return induced.at(0).n_cells(); }
};

inline LinearSurrogate build_linear_surrogate(const CenteredTrainingSet& c, SpaceKind space) {
  require(c.N() >= 1 && c.data.size() == c.N(), ErrorKind::DimensionMismatch, "centered set is empty");
  Orthonormalization o = gram_schmidt(c.images, space);
  LinearSurrogate ls;
  ls.space = space;
  ls.transform = o.transform;
  ls.basis = std::move(o.basis);
  ls.center_x = c.center_x;
  ls.center_y = c.center_y;
  for (std::size_t l = 0; l < c.N(); ++l) {
    GridFunction y = GridFunction::zeros(c.data[0].n_cells());
    for (std::size_t j = 0; j <= l; ++j) y.axpy(ls.transform(l, j), c.data[j]);
    ls.induced.push_back(std::move(y));
  }
  return ls;
}

/// Orthonormal coordinates <x, basis_l>_X, x resampled onto the basis mesh if needed.
inline std::vector<double> linear_coordinates(const LinearSurrogate& s, const GridFunction& x) {
  const GridFunction xr = x.n_cells() == s.input_cells() ? x : x.resample(s.input_cells());
  std::vector<double> c(s.N());
  for (std::size_t l = 0; l < s.N(); ++l) c[l] = inner(s.space, xr, s.basis[l]);
  return c;
}

/// F#x = sum_l <x, basis_l>_X induced_l (the purely linear part, no centering).
inline GridFunction apply_linear_surrogate(const LinearSurrogate& s, const GridFunction& x) {
  const auto c = linear_coordinates(s, x);
  GridFunction y = GridFunction::zeros(s.output_cells());
  for (std::size_t l = 0; l < s.N(); ++l) y.axpy(c[l], s.induced[l]);
  return y;
}

/// y0 + F#(x - x0).
inline GridFunction evaluate_affine_surrogate(const LinearSurrogate& s, const GridFunction& x) {
  const GridFunction xr = x.n_cells() == s.input_cells() ? x : x.resample(s.input_cells());
  return s.center_y + apply_linear_surrogate(s, xr - s.center_x);
}

/// (F#)* r in X: sum_l <r, induced_l>_{L2} basis_l.
inline GridFunction linear_surrogate_adjoint(const LinearSurrogate& s, const GridFunction& r) {
  GridFunction g = GridFunction::zeros(s.input_cells());
  for (std::size_t l = 0; l < s.N(); ++l) g.axpy(inner(SpaceKind::L2, r, s.induced[l]), s.basis[l]);
  return g;
}

// ---- text serialization ----

inline void write_grid(TextDocument& doc, const std::string& key, const GridFunction& g) {
  doc.set_array(key, {g.n_cells() + 1}, std::vector<double>(g.values().begin(), g.values().end()));
}

inline GridFunction read_grid(const TextDocument& doc, const std::string& key) {
  const auto& a = doc.get_array(key);
  require(a.values.size() >= 2, ErrorKind::ConfigInvalid, "grid '" + key + "' too short");
  return GridFunction(a.values.size() - 1, a.values);
}

inline void write_problem(TextDocument& doc, const ProblemKind& p) {
  doc.set("problem", std::string(to_string(p.tag)));
  doc.set("nu", p.nu);
}

inline ProblemKind read_problem(const TextDocument& doc) {
  const std::string& t = doc.get("problem");
  require(t == "a" || t == "c", ErrorKind::ConfigInvalid, "problem must be 'a' or 'c'");
  return ProblemKind(t == "a" ? ProblemTag::AExample : ProblemTag::CExample, doc.get_double("nu"));
}

inline TextDocument training_set_document(const TrainingSet& s) {
  TextDocument doc;
  doc.set("type", "training_set");
  write_problem(doc, s.problem);
  doc.set("space", std::string(to_string(s.space)));
  doc.set("perturbation", std::string(to_string(s.perturbation.mode)));
  doc.set("amplitude", s.perturbation.amplitude);
  doc.set("count", s.perturbation.count);
  doc.set("seed", static_cast<long long>(s.perturbation.seed));
  doc.set("sine_normalization", "sqrt2");
  doc.set("n_ref", s.n_ref);
  write_grid(doc, "f", s.f);
  for (std::size_t l = 0; l < s.x_hat.size(); ++l) {
    write_grid(doc, "x_hat." + std::to_string(l), s.x_hat[l]);
    write_grid(doc, "y_hat." + std::to_string(l), s.y_hat[l]);
  }
  return doc;
}

inline TrainingSet read_training_set(const TextDocument& doc) {
  require(doc.get("type") == "training_set", ErrorKind::ConfigInvalid, "not a training set file");
  TrainingSet s;
  s.problem = read_problem(doc);
  s.space = doc.get("space") == "H1" ? SpaceKind::H1 : SpaceKind::L2;
  s.perturbation.mode = parse_perturbation(doc.get("perturbation"));
  s.perturbation.amplitude = doc.get_double("amplitude");
  s.perturbation.count = doc.get_size("count");
  s.perturbation.seed = static_cast<std::uint64_t>(doc.get_int("seed"));
  s.n_ref = doc.get_size("n_ref");
  s.f = read_grid(doc, "f");
  for (std::size_t l = 0; l <= s.perturbation.count; ++l) {
    s.x_hat.push_back(read_grid(doc, "x_hat." + std::to_string(l)));
    s.y_hat.push_back(read_grid(doc, "y_hat." + std::to_string(l)));
  }
  return s;
}

}  // namespace opreg

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "opreg/activation.hpp"
#include "opreg/errors.hpp"
#include "opreg/forward.hpp"
#include "opreg/grid_function.hpp"
#include "opreg/neural_operator.hpp"
#include "opreg/training.hpp"

namespace opreg {

/// Anchored: (w_k, theta_k) solved once at the reference image and frozen.
/// InputAdaptive: re-solved at every evaluated input, which makes each neuron
/// reproduce its target product and the branch equal to the quadrature rule.
enum class BranchMode { Anchored, InputAdaptive };

inline const char* to_string(BranchMode m) { return m == BranchMode::Anchored ? "anchored" : "adaptive"; }

inline BranchMode parse_branch_mode(const std::string& s) {
  if (s == "anchored") return BranchMode::Anchored;
  if (s == "adaptive") return BranchMode::InputAdaptive;
  fail(ErrorKind::ConfigInvalid, "unknown branch mode '" + s + "'");
}

/// Trapezoid nodes t_k = k/N_k and weights 1/(2N_k) at the ends, 1/N_k inside.
inline std::vector<double> trapezoid_nodes(std::size_t nk) {
  std::vector<double> t(nk + 1);
  for (std::size_t k = 0; k <= nk; ++k) t[k] = static_cast<double>(k) / nk;
  return t;
}

inline std::vector<double> trapezoid_node_weights(std::size_t nk) {
  std::vector<double> c(nk + 1, 1.0 / nk);
  c.front() = c.back() = 0.5 / nk;
  return c;
}

/// Affine input map of the branch: u = 0.5 + sign * scale * L(x - reference),
/// with L a node value (L2 part) or a scaled node difference (H1 derivative part).
struct BranchRescale {
  GridFunction reference;
  double node_scale = 1.0;
  double slope_scale = 1.0;
};

/// Scales chosen so every centered training image, enlarged by `headroom`,
/// maps into [0.05, 0.95].
inline BranchRescale make_rescale(const CenteredTrainingSet& c, std::size_t nk, double headroom) {
  require(headroom >= 1.0, ErrorKind::ConfigInvalid, "rescale headroom must be >= 1");
  const auto t = trapezoid_nodes(nk);
  double rn = 0.0, rs = 0.0;
  for (const auto& x : c.images) {
    for (std::size_t k = 0; k <= nk; ++k) rn = std::max(rn, std::abs(x.at(t[k])));
    for (std::size_t k = 0; k < nk; ++k) rs = std::max(rs, std::abs(x.at(t[k + 1]) - x.at(t[k])) * nk);
  }
  BranchRescale r{c.center_x, 1.0, 1.0};
  if (rn > 0) r.node_scale = 0.45 / (headroom * rn);
  if (rs > 0) r.slope_scale = 0.45 / (headroom * rs);
  return r;
}

/// Branch network realizing x -> <x - x_ref, x_image>_X by a quadrature rule.
///
/// Each quadrature term C_m L_m(dx) L_m(x_image) becomes four neurons through
/// polarization, (u+ v+) - (u+ v-) - (u- v+) + (u- v-) = 4 a b with
/// u = 0.5 +- a, v = 0.5 +- b, so every neuron only has to produce a product of
/// two numbers in (0,1). Neuron parameters are the minimum-norm solution of
/// sigma^{-1}(u v) = w u + theta.
struct BranchPrior {
  struct Term {
    std::size_t l0 = 0, l1 = 0;  // sample indices
    double b0 = 0, b1 = 0;       // L(x) = b0 x(s_l0) + b1 x(s_l1)
    double quad_weight = 0;
    double input_scale = 1;
    double image_value = 0;  // L(x_image)
    double reference_value = 0;  // L(x_ref)
  };

  ActivationKind activation = ActivationKind::Logistic;
  std::vector<double> sample_points;
  std::vector<Term> terms;
  double image_scale = 1.0;
  BranchNet anchored;

  std::size_t neurons() const { return 4 * terms.size(); }

  static constexpr double kSign[4][2] = {{1, 1}, {1, -1}, {-1, 1}, {-1, -1}};

  double outer_weight(std::size_t term, int q) const {
    const Term& t = terms[term];
    return kSign[q][0] * kSign[q][1] * t.quad_weight / (4.0 * t.input_scale * image_scale);
  }

  double v_value(std::size_t term, int q) const { return 0.5 + kSign[q][1] * image_scale * terms[term].image_value; }

  double form(const Term& t, std::span<const double> xs) const { return t.b0 * xs[t.l0] + t.b1 * xs[t.l1]; }

  double u_value(std::size_t term, int q, std::span<const double> xs) const {
    const Term& t = terms[term];
    return 0.5 + kSign[q][0] * t.input_scale * (form(t, xs) - t.reference_value);
  }

  /// Network with parameters solved at the given samples (u computed from them).
  BranchNet net_at(std::span<const double> xs) const {
    const std::size_t nl = sample_points.size();
    BranchNet net;
    net.sample_points = sample_points;
    net.outer.resize(neurons());
    net.bias.resize(neurons());
    net.weights.assign(neurons() * nl, 0.0);
    for (std::size_t m = 0; m < terms.size(); ++m) {
      const Term& t = terms[m];
      for (int q = 0; q < 4; ++q) {
        const std::size_t k = 4 * m + q;
        const double u = u_value(m, q, xs);
        const double v = v_value(m, q);
        if (!(u > 0.0 && u < 1.0)) {
          fail(ErrorKind::RangeViolation, "branch input value " + std::to_string(u) + " left (0,1) at term " +
                                              std::to_string(m) + "; enlarge the rescale headroom");
        }
        const double g = activation_inverse(activation, u * v);
        const double w = g * u / (u * u + 1.0);
        const double theta = g / (u * u + 1.0);
        // z = w u + theta with u affine in the samples
        const double su = kSign[q][0] * t.input_scale;
        net.weights[k * nl + t.l0] += w * su * t.b0;
        net.weights[k * nl + t.l1] += w * su * t.b1;
        net.bias[k] = theta + w * (0.5 - su * t.reference_value);
        net.outer[k] = outer_weight(m, q);
      }
    }
    return net;
  }

  double evaluate(const GridFunction& x, BranchMode mode) const {
    const auto xs = sample_input(x, sample_points);
    if (mode == BranchMode::Anchored) return eval_branch(anchored, activation, xs);
    return eval_branch(net_at(xs), activation, xs);
  }

  /// The quadrature value sum_m C_m L_m(x - x_ref) L_m(x_image) computed directly.
  double quadrature(const GridFunction& x) const {
    const auto xs = sample_input(x, sample_points);
    double acc = 0.0;
    for (const auto& t : terms) acc += t.quad_weight * (form(t, xs) - t.reference_value) * t.image_value;
    return acc;
  }

  /// Gradient of evaluate() with respect to the samples.
  std::vector<double> sample_gradient(const GridFunction& x, BranchMode mode) const {
    const auto xs = sample_input(x, sample_points);
    if (mode == BranchMode::Anchored) return branch_sample_gradient(anchored, activation, xs);
    // each neuron returns u v exactly, so the branch is affine in the samples
    std::vector<double> g(sample_points.size(), 0.0);
    for (std::size_t m = 0; m < terms.size(); ++m) {
      const Term& t = terms[m];
      double d = 0.0;
      for (int q = 0; q < 4; ++q) d += outer_weight(m, q) * kSign[q][0] * t.input_scale * v_value(m, q);
      g[t.l0] += d * t.b0;
      g[t.l1] += d * t.b1;
    }
    return g;
  }
};

/// Quadrature prior for the functional x -> <x - rescale.reference, image>_space.
/// L2: trapezoid on N_k cells. H1 adds the midpoint rule for the derivative
/// term, using node differences.
inline BranchPrior build_branch_prior(const GridFunction& image, std::size_t nk, ActivationKind act,
                                      const BranchRescale& rescale, SpaceKind space = SpaceKind::L2) {
  require(nk >= 1, ErrorKind::ConfigInvalid, "N_k must be positive");
  BranchPrior p;
  p.activation = act;
  p.sample_points = trapezoid_nodes(nk);
  const auto c = trapezoid_node_weights(nk);
  const double dn = static_cast<double>(nk);
  for (std::size_t k = 0; k <= nk; ++k) {
    BranchPrior::Term t;
    t.l0 = t.l1 = k;
    t.b0 = 1.0;
    t.quad_weight = c[k];
    t.input_scale = rescale.node_scale;
    p.terms.push_back(t);
  }
  if (space == SpaceKind::H1) {
    for (std::size_t k = 0; k < nk; ++k) {
      BranchPrior::Term t;
      t.l0 = k;
      t.l1 = k + 1;
      t.b0 = -dn;
      t.b1 = dn;
      t.quad_weight = 1.0 / dn;
      t.input_scale = rescale.slope_scale;
      p.terms.push_back(t);
    }
  }
  const auto img = sample_input(image, p.sample_points);
  const auto ref = sample_input(rescale.reference, p.sample_points);
  double vmax = 0.0;
  for (auto& t : p.terms) {
    t.image_value = p.form(t, img);
    t.reference_value = p.form(t, ref);
    vmax = std::max(vmax, std::abs(t.image_value));
  }
  p.image_scale = vmax > 0 ? 0.45 / vmax : 1.0;
  p.anchored = p.net_at(ref);
  return p;
}

struct TrunkFit {
  TrunkNet net;
  double residual = 0.0;
  double condition = 1.0;
  std::size_t active = 0;
  std::uint64_t seed_used = 0;
};

namespace detail {

// acceptance limit for the greedy feature selection, below the hard 1e12
inline constexpr double kTrunkConditionLimit = 1e11;

inline std::uint64_t mix_seed(std::uint64_t s) {
  // splitmix64 finalizer
  s += 0x9e3779b97f4a7c15ULL;
  s = (s ^ (s >> 30)) * 0xbf58476d1ce4e5b9ULL;
  s = (s ^ (s >> 27)) * 0x94d049bb133111ebULL;
  return s ^ (s >> 31);
}

inline TrunkFit fit_trunk_once(const GridFunction& y, std::size_t nj, ActivationKind act, std::uint64_t seed) {
  const std::size_t n = y.n_cells();
  const std::size_t m = n + 1;
  TrunkFit fit;
  fit.seed_used = seed;
  fit.net.outer.assign(nj, 0.0);
  fit.net.weights.assign(nj, 0.0);
  fit.net.bias.assign(nj, 0.0);
  // neuron 0 stays the constant sigma(0); the rest get random slopes with
  // transitions spread over [0,1]
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> slope(-20.0, 20.0), center(0.0, 1.0);
  for (std::size_t j = 1; j < nj; ++j) {
    const double w = slope(rng);
    fit.net.weights[j] = w;
    fit.net.bias[j] = -w * center(rng);
  }
  const auto tw = trapezoid_weights(n);
  Eigen::VectorXd sw(m), rhs(m);
  for (std::size_t i = 0; i < m; ++i) {
    sw(i) = std::sqrt(tw[i]);
    rhs(i) = sw(i) * y[i];
  }
  // Keep features in draw order while the kept set stays well conditioned;
  // A = Q R with orthonormal Q, so cond(A) = cond(R) is checked on the small R.
  std::vector<std::size_t> keep;
  std::vector<Eigen::VectorXd> q;
  Eigen::MatrixXd r = Eigen::MatrixXd::Zero(nj, nj);
  Eigen::MatrixXd cols(m, nj);
  for (std::size_t j = 0; j < nj; ++j) {
    for (std::size_t i = 0; i < m; ++i) {
      cols(i, j) = sw(i) * activation(act, fit.net.weights[j] * y.node(i) + fit.net.bias[j]);
    }
    Eigen::VectorXd v = cols.col(j);
    const double n0 = v.norm();
    if (n0 == 0.0) continue;
    const std::size_t k = keep.size();
    Eigen::VectorXd rc = Eigen::VectorXd::Zero(k + 1);
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t b = 0; b < k; ++b) {
        const double p = q[b].dot(v);
        v -= p * q[b];
        rc(b) += p;
      }
    }
    rc(k) = v.norm();
    if (!(rc(k) > 1e-7 * n0)) continue;
    r.block(0, k, k + 1, 1) = rc;
    Eigen::JacobiSVD<Eigen::MatrixXd> rs(r.topLeftCorner(k + 1, k + 1));
    const auto& rsv = rs.singularValues();
    if (rsv(0) > kTrunkConditionLimit * rsv(k)) {
      r.block(0, k, k + 1, 1).setZero();
      continue;
    }
    q.push_back(v / rc(k));
    keep.push_back(j);
  }
  Eigen::MatrixXd a(m, keep.size());
  for (std::size_t c = 0; c < keep.size(); ++c) a.col(c) = cols.col(keep[c]);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  fit.condition = sv.size() ? sv(0) / sv(sv.size() - 1) : 1.0;
  fit.active = keep.size();
  if (!(fit.condition <= 1e12)) return fit;
  const Eigen::VectorXd coef = svd.solve(rhs);
  for (std::size_t c = 0; c < keep.size(); ++c) fit.net.outer[keep[c]] = coef(c);
  double r2 = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double d = eval_trunk(fit.net, act, y.node(i)) - y[i];
    r2 += tw[i] * d * d;
  }
  fit.residual = std::sqrt(r2);
  return fit;
}

}  // namespace detail

/// Random-feature trunk: frozen inner parameters, outer weights by weighted
/// least squares at the nodes of y. Features numerically dependent on earlier
/// ones get c_j = 0. Retries once with a derived seed if the kept system has
/// condition number above 1e12.
inline TrunkFit fit_trunk(const GridFunction& y, std::size_t nj, ActivationKind act, std::uint64_t seed) {
  require(nj >= 1, ErrorKind::ConfigInvalid, "N_j must be positive");
  TrunkFit fit = detail::fit_trunk_once(y, nj, act, seed);
  if (fit.condition <= 1e12) return fit;
  fit = detail::fit_trunk_once(y, nj, act, detail::mix_seed(seed));
  if (fit.condition <= 1e12) return fit;
  fail(ErrorKind::IllConditionedFit, "trunk least-squares condition number " + std::to_string(fit.condition));
}

struct SurrogateDiagnostics {
  double nu_N = 0.0;
  double q_N = 0.0;
  double r_N = 0.0;
  double rho_bound = 0.0;
  std::size_t N = 0;
};

inline SurrogateDiagnostics make_diagnostics(std::size_t N, double nu, double q, double r) {
  return SurrogateDiagnostics{nu, q, r, nu + static_cast<double>(N) * q * r, N};
}

struct NeuralSurrogateOptions {
  std::size_t n_k = 32;
  std::size_t n_j = 32;
  ActivationKind activation = ActivationKind::Logistic;
  BranchMode mode = BranchMode::Anchored;
  double headroom = 4.0;
  std::uint64_t seed = 0;
};

/// F~[x](t) = y0(t) + sum_l B_l(x) T_l(t): branch priors for the functionals
/// <x - x0, basis_l>_X and fitted trunks for the induced data functions.
struct NeuralSurrogate {
  SpaceKind space = SpaceKind::L2;
  ActivationKind activation = ActivationKind::Logistic;
  BranchMode mode = BranchMode::Anchored;
  GridFunction center_x;
  GridFunction center_y;
  std::vector<BranchPrior> branches;
  std::vector<TrunkFit> trunks;
  std::vector<GridFunction> trunk_values;  // trunks sampled on the output mesh
  SurrogateDiagnostics diagnostics;

  std::size_t N() const { return branches.size(); }
  std::size_t input_cells() const { return center_x.n_cells(); }
  std::size_t output_cells() const { return center_y.n_cells(); }

  std::vector<double> branch_values(const GridFunction& x) const {
    std::vector<double> b(N());
    for (std::size_t l = 0; l < N(); ++l) b[l] = branches[l].evaluate(x, mode);
    return b;
  }

  GridFunction evaluate(const GridFunction& x) const {
    GridFunction y = center_y;
    const auto b = branch_values(x);
    for (std::size_t l = 0; l < N(); ++l) y.axpy(b[l], trunk_values[l]);
    return y;
  }

  /// Euclidean (nodal) gradient on x's mesh of x -> <F~[x], r>_{L2}.
  std::vector<double> adjoint_functional(const GridFunction& x, const GridFunction& r) const {
    std::vector<double> g(x.size(), 0.0);
    for (std::size_t l = 0; l < N(); ++l) {
      const double tr = inner(SpaceKind::L2, trunk_values[l], r);
      if (tr == 0.0) continue;
      const auto gs = branches[l].sample_gradient(x, mode);
      const auto& pts = branches[l].sample_points;
      for (std::size_t i = 0; i < pts.size(); ++i) {
        // transpose of linear interpolation at pts[i]
        const double pos = pts[i] * x.n_cells();
        const std::size_t c = std::min(static_cast<std::size_t>(pos), x.n_cells() - 1);
        const double w = pos - static_cast<double>(c);
        g[c] += tr * gs[i] * (1.0 - w);
        g[c + 1] += tr * gs[i] * w;
      }
    }
    return g;
  }

  /// Structured coefficients with the anchored branch parameters (the
  /// input-adaptive parameters depend on x and have no frozen form).
  StructuredSurrogateCoeffs structured() const {
    StructuredSurrogateCoeffs s;
    s.activation = activation;
    for (std::size_t l = 0; l < N(); ++l) s.blocks.push_back({branches[l].anchored, trunks[l].net});
    return s;
  }

  /// Structured coefficients frozen at the parameters the branch uses at x.
  StructuredSurrogateCoeffs structured_at(const GridFunction& x) const {
    if (mode == BranchMode::Anchored) return structured();
    StructuredSurrogateCoeffs s;
    s.activation = activation;
    for (std::size_t l = 0; l < N(); ++l) {
      s.blocks.push_back({branches[l].net_at(sample_input(x, branches[l].sample_points)), trunks[l].net});
    }
    return s;
  }
};

/// Probes x0 + sum_l c_l (x_hat^l - x0), c_l uniform in [-1/N, 1/N]; they stay
/// inside the admissible region the training family was checked against.
inline std::vector<GridFunction> random_probes(const GridFunction& center, const std::vector<GridFunction>& images,
                                               std::size_t count, std::uint64_t seed) {
  require(!images.empty(), ErrorKind::EmptyProbeSet, "probes need at least one training image");
  std::mt19937_64 rng(seed);
  const double a = 1.0 / static_cast<double>(images.size());
  std::uniform_real_distribution<double> u(-a, a);
  std::vector<GridFunction> out;
  for (std::size_t p = 0; p < count; ++p) {
    GridFunction x = center;
    for (const auto& img : images) x.axpy(u(rng), img);
    out.push_back(std::move(x));
  }
  return out;
}

inline std::vector<GridFunction> random_probes(const CenteredTrainingSet& c, std::size_t count, std::uint64_t seed) {
  return random_probes(c.center_x, c.images, count, seed);
}

inline std::vector<GridFunction> random_probes(const TrainingSet& s, std::size_t count, std::uint64_t seed) {
  std::vector<GridFunction> images;
  for (std::size_t l = 1; l <= s.N(); ++l) images.push_back(s.x_hat[l] - s.x_hat[0]);
  return random_probes(s.x_hat[0], images, count, seed);
}

/// Orthogonal projection in L2 onto span{ys}.
inline GridFunction project_onto(const std::vector<GridFunction>& ys, const GridFunction& v) {
  const std::size_t n = ys.size();
  Eigen::MatrixXd g(n, n);
  Eigen::VectorXd b(n);
  for (std::size_t i = 0; i < n; ++i) {
    b(i) = inner(SpaceKind::L2, ys[i], v);
    for (std::size_t j = 0; j <= i; ++j) g(i, j) = g(j, i) = inner(SpaceKind::L2, ys[i], ys[j]);
  }
  const Eigen::VectorXd c = g.completeOrthogonalDecomposition().solve(b);
  GridFunction p = GridFunction::zeros(v.n_cells());
  for (std::size_t i = 0; i < n; ++i) p.axpy(c(i), ys[i]);
  return p;
}

/// Forward operator sampled on the surrogate's output mesh.
using ForwardMap = std::function<GridFunction(const GridFunction&)>;

/// max over probes of ||(I - P_N)(F[x] - F[x0])||_{L2} / ||x - x0||_X.
inline double estimate_nu_N(const LinearSurrogate& ls, const ForwardMap& forward,
                            const std::vector<GridFunction>& probes) {
  require(!probes.empty(), ErrorKind::EmptyProbeSet, "nu_N needs at least one probe");
  double nu = 0.0;
  for (const auto& x : probes) {
    const GridFunction xr = x.n_cells() == ls.input_cells() ? x : x.resample(ls.input_cells());
    const double dx = norm(ls.space, xr - ls.center_x);
    if (dx == 0.0) continue;
    GridFunction dy = forward(xr) - ls.center_y;
    dy -= project_onto(ls.induced, dy);
    nu = std::max(nu, l2_norm(dy) / dx);
  }
  return nu;
}

inline double estimate_nu_N(const LinearSurrogate& ls, const ProblemKind& problem, const GridFunction& f,
                            const std::vector<GridFunction>& probes, std::size_t n_ref = kReferenceCells) {
  const std::size_t out = ls.output_cells();
  return estimate_nu_N(
      ls, [&](const GridFunction& x) { return solve_forward_reference(problem, x, f, n_ref).resample(out); }, probes);
}

/// max over probes and l of |<x - x0, basis_l>_X - B_l(x)|.
inline double measure_q_N(const NeuralSurrogate& ns, const LinearSurrogate& ls, const std::vector<GridFunction>& probes) {
  double q = 0.0;
  for (const auto& x : probes) {
    const GridFunction xr = x.n_cells() == ls.input_cells() ? x : x.resample(ls.input_cells());
    const auto exact = linear_coordinates(ls, xr - ls.center_x);
    const auto b = ns.branch_values(xr);
    for (std::size_t l = 0; l < ns.N(); ++l) q = std::max(q, std::abs(exact[l] - b[l]));
  }
  return q;
}

inline NeuralSurrogate assemble_neural_surrogate(const LinearSurrogate& ls, const CenteredTrainingSet& centered,
                                                 const NeuralSurrogateOptions& opt) {
  NeuralSurrogate ns;
  ns.space = ls.space;
  ns.activation = opt.activation;
  ns.mode = opt.mode;
  ns.center_x = ls.center_x;
  ns.center_y = ls.center_y;
  const BranchRescale rescale = make_rescale(centered, opt.n_k, opt.headroom);
  double r = 0.0;
  for (std::size_t l = 0; l < ls.N(); ++l) {
    ns.branches.push_back(build_branch_prior(ls.basis[l], opt.n_k, opt.activation, rescale, ls.space));
    ns.trunks.push_back(fit_trunk(ls.induced[l], opt.n_j, opt.activation, opt.seed + 7919 * (l + 1)));
    ns.trunk_values.push_back(eval_trunk_on_mesh(ns.trunks.back().net, opt.activation, ls.output_cells()));
    r = std::max(r, ns.trunks.back().residual);
  }
  ns.diagnostics = make_diagnostics(ls.N(), 0.0, 0.0, r);
  return ns;
}

/// Fills nu_N and q_N from a probe set and recomputes rho_bound.
inline void attach_diagnostics(NeuralSurrogate& ns, const LinearSurrogate& ls, const ForwardMap& forward,
                               const std::vector<GridFunction>& probes) {
  const double nu = estimate_nu_N(ls, forward, probes);
  const double q = measure_q_N(ns, ls, probes);
  ns.diagnostics = make_diagnostics(ls.N(), nu, q, ns.diagnostics.r_N);
}

inline void attach_diagnostics(NeuralSurrogate& ns, const LinearSurrogate& ls, const ProblemKind& problem,
                               const GridFunction& f, const std::vector<GridFunction>& probes,
                               std::size_t n_ref = kReferenceCells) {
  const double nu = estimate_nu_N(ls, problem, f, probes, n_ref);
  const double q = measure_q_N(ns, ls, probes);
  ns.diagnostics = make_diagnostics(ls.N(), nu, q, ns.diagnostics.r_N);
}

}  // namespace opreg

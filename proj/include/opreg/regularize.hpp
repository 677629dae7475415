#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "opreg/errors.hpp"
#include "opreg/forward.hpp"
#include "opreg/grid_function.hpp"
#include "opreg/mollify.hpp"
#include "opreg/neural_surrogate.hpp"
#include "opreg/text_format.hpp"
#include "opreg/training.hpp"

namespace opreg {

/// y + e with a seeded Gaussian e rescaled to ||e||_{L2} = delta.
inline GridFunction add_noise(const GridFunction& y, double delta, std::uint64_t seed) {
  require(delta >= 0.0 && std::isfinite(delta), ErrorKind::OutOfRange, "noise level must be nonnegative");
  if (delta == 0.0) return y;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d;
  GridFunction e = GridFunction::zeros(y.n_cells());
  for (std::size_t i = 0; i < e.size(); ++i) e[i] = d(rng);
  e *= delta / l2_norm(e);
  return y + e;
}

struct TikhonovConfig {
  double alpha = 1e-3;
  double delta = 0.0;
  double eta = 1e-6;
  double xi = 0.0;
  GridFunction x0;
  SpaceKind space = SpaceKind::L2;
  double nu = 0.5;
  std::size_t max_iterations = 5000;
  std::optional<GridFunction> x_true;

  void validate() const {
    require(alpha > 0.0 && std::isfinite(alpha), ErrorKind::ConfigInvalid, "alpha must be positive");
    require(eta > 0.0 && std::isfinite(eta), ErrorKind::ConfigInvalid, "eta must be positive");
    require(xi >= 0.0, ErrorKind::ConfigInvalid, "xi must be nonnegative");
    require(delta >= 0.0, ErrorKind::ConfigInvalid, "delta must be nonnegative");
    require(nu > 0.0, ErrorKind::ConfigInvalid, "nu must be positive");
    require(max_iterations > 0, ErrorKind::ConfigInvalid, "max_iterations must be positive");
    require(x0.size() >= 2, ErrorKind::ConfigInvalid, "prior center x0 is missing");
    if (x0.min() < nu) fail(ErrorKind::NonAdmissibleCoefficient, "prior center x0 violates x >= nu");
  }
};

/// The operator used inside the functional: FEM forward map, neural surrogate,
/// or rank-N linear surrogate (affine about its center).
class SurrogateHandle {
 public:
  enum class Tag { FemForward, NeuralOperator, LinearRankN };

  static SurrogateHandle fem(const ProblemKind& kind, GridFunction f, std::size_t n) {
    SurrogateHandle h(Tag::FemForward);
    h.kind_ = kind;
    h.f_ = std::move(f);
    h.n_ = n;
    return h;
  }

  static SurrogateHandle neural(std::shared_ptr<const NeuralSurrogate> s) {
    SurrogateHandle h(Tag::NeuralOperator);
    h.neural_ = std::move(s);
    return h;
  }

  static SurrogateHandle linear(std::shared_ptr<const LinearSurrogate> s) {
    SurrogateHandle h(Tag::LinearRankN);
    h.linear_ = std::move(s);
    return h;
  }

  Tag tag() const { return tag_; }

  std::string name() const {
    switch (tag_) {
      case Tag::FemForward: return "fem";
      case Tag::NeuralOperator: return "neural";
      case Tag::LinearRankN: return "linear";
    }
    return "?";
  }

  /// Discretization size n (FEM cells, or output mesh cells for surrogates).
  std::size_t n() const {
    switch (tag_) {
      case Tag::FemForward: return n_;
      case Tag::NeuralOperator: return neural_->output_cells();
      case Tag::LinearRankN: return linear_->output_cells();
    }
    return 0;
  }

  /// Number of training pairs (0 for FEM).
  std::size_t N() const {
    switch (tag_) {
      case Tag::FemForward: return 0;
      case Tag::NeuralOperator: return neural_->N();
      case Tag::LinearRankN: return linear_->N();
    }
    return 0;
  }

  std::size_t output_cells() const { return n(); }

  const NeuralSurrogate* neural_surrogate() const { return neural_.get(); }
  const LinearSurrogate* linear_surrogate() const { return linear_.get(); }

  GridFunction forward(const GridFunction& x) const {
    switch (tag_) {
      case Tag::FemForward: return solve_forward_fem(kind_, x, f_, n_);
      case Tag::NeuralOperator: return neural_->evaluate(x);
      case Tag::LinearRankN: return evaluate_affine_surrogate(*linear_, x);
    }
    return x;
  }

  /// Forward value plus the nodal gradient of x -> <F[x], r>_{L2}, for a residual
  /// r that is a function of the forward value.
  template <class ResidualFn>
  std::pair<GridFunction, std::vector<double>> forward_and_adjoint(const GridFunction& x, ResidualFn&& residual) const {
    switch (tag_) {
      case Tag::FemForward: {
        FemLinearization lin(kind_, x, f_, n_);
        const GridFunction r = residual(lin.state());
        return {lin.state(), lin.adjoint_functional(r)};
      }
      case Tag::NeuralOperator: {
        GridFunction y = neural_->evaluate(x);
        const GridFunction r = residual(y);
        return {std::move(y), neural_->adjoint_functional(x, r)};
      }
      case Tag::LinearRankN: {
        GridFunction y = evaluate_affine_surrogate(*linear_, x);
        const GridFunction r = residual(y);
        require(x.n_cells() == linear_->input_cells(), ErrorKind::DimensionMismatch, "linear surrogate input mesh");
        return {std::move(y), gram_apply(linear_->space, linear_surrogate_adjoint(*linear_, r))};
      }
    }
    return {x, {}};
  }

 private:
  explicit SurrogateHandle(Tag t) : tag_(t) {}

  Tag tag_;
  ProblemKind kind_{ProblemTag::AExample, 1.0};
  GridFunction f_;
  std::size_t n_ = 0;
  std::shared_ptr<const NeuralSurrogate> neural_;
  std::shared_ptr<const LinearSurrogate> linear_;
};

namespace detail {

struct Evaluation {
  double value = 0.0;
  std::vector<double> gradient;  // nodal (Euclidean) gradient
};

class TikhonovFunctional {
 public:
  TikhonovFunctional(const SurrogateHandle& h, const GridFunction& y_delta, const TikhonovConfig& cfg)
      : h_(h), y_(y_delta), cfg_(cfg) {
    if (cfg.xi > 0.0) mollifier_.emplace(cfg.x0.n_cells(), cfg.xi);
    require(y_delta.n_cells() == h.output_cells(), ErrorKind::DimensionMismatch,
            "data mesh (" + std::to_string(y_delta.n_cells()) + ") differs from operator output mesh (" +
                std::to_string(h.output_cells()) + ")");
  }

  GridFunction input(const GridFunction& x) const { return mollifier_ ? mollifier_->apply(x) : x; }

  void check(const GridFunction& x) const {
    require(x.n_cells() == cfg_.x0.n_cells(), ErrorKind::DimensionMismatch, "iterate mesh differs from x0");
    if (x.min() < cfg_.nu) fail(ErrorKind::NonAdmissibleCoefficient, "iterate violates x >= nu");
  }

  double value(const GridFunction& x) const {
    check(x);
    const GridFunction r = h_.forward(input(x)) - y_;
    const GridFunction d = x - cfg_.x0;
    return inner(SpaceKind::L2, r, r) + cfg_.alpha * inner(cfg_.space, d, d);
  }

  Evaluation evaluate(const GridFunction& x) const {
    check(x);
    GridFunction r;
    auto [y, g] = h_.forward_and_adjoint(input(x), [&](const GridFunction& fy) {
      r = fy - y_;
      return r;
    });
    if (mollifier_) g = mollifier_->apply_transpose(g);
    const GridFunction d = x - cfg_.x0;
    const auto gp = gram_apply(cfg_.space, d);
    Evaluation e;
    e.value = inner(SpaceKind::L2, r, r) + cfg_.alpha * inner(cfg_.space, d, d);
    e.gradient.resize(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) e.gradient[i] = 2.0 * g[i] + 2.0 * cfg_.alpha * gp[i];
    return e;
  }

 private:
  const SurrogateHandle& h_;
  const GridFunction& y_;
  const TikhonovConfig& cfg_;
  std::optional<Mollifier> mollifier_;
};

}  // namespace detail

/// ||F[x_xi] - y_delta||^2_{L2} + alpha ||x - x0||^2_X, with x_xi = x when xi = 0.
inline double tikhonov_value(const SurrogateHandle& h, const GridFunction& x, const GridFunction& y_delta,
                             const TikhonovConfig& cfg) {
  return detail::TikhonovFunctional(h, y_delta, cfg).value(x);
}

/// X-Riesz representative of the functional's derivative at x.
inline GridFunction tikhonov_gradient(const SurrogateHandle& h, const GridFunction& x, const GridFunction& y_delta,
                                      const TikhonovConfig& cfg) {
  const auto e = detail::TikhonovFunctional(h, y_delta, cfg).evaluate(x);
  return riesz_map(cfg.space, x.n_cells(), e.gradient);
}

struct Certificate {
  double gradient_norm = 0.0;
  double eta_bound = 0.0;
  std::size_t iterations = 0;
};

enum class MinimizerStatus { Converged, MaxIterations };

struct ApproximateMinimizer {
  GridFunction x;
  double functional_value = 0.0;
  Certificate certificate;
  MinimizerStatus status = MinimizerStatus::Converged;
  TikhonovConfig config;
};

/// Line search could not make progress; carries the best iterate found.
class StalledError : public Error {
 public:
  StalledError(const std::string& what, ApproximateMinimizer best)
      : Error(ErrorKind::Stalled, what), best_(std::move(best)) {}
  const ApproximateMinimizer& best() const { return best_; }

 private:
  ApproximateMinimizer best_;
};

namespace detail {

// Gradient with the components that push active bound constraints outward removed.
inline std::vector<double> projected_gradient(const GridFunction& x, const std::vector<double>& g, double nu) {
  std::vector<double> p = g;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (x[i] <= nu && p[i] > 0.0) p[i] = 0.0;
  }
  return p;
}

inline double dual_norm(SpaceKind space, std::size_t n, const std::vector<double>& g) {
  const GridFunction r = riesz_map(space, n, g);
  double acc = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * r[i];
  return std::sqrt(std::max(acc, 0.0));
}

inline GridFunction clamp_below(GridFunction x, double nu) {
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::max(x[i], nu);
  return x;
}

}  // namespace detail

/// Projected gradient descent in the X metric with Barzilai-Borwein trial steps,
/// halving backtracking and the sufficient-decrease test
///   T(x+) <= T(x) + 1e-4 <grad T(x), x+ - x>.
/// Stops when gradient_norm^2 / (4 alpha) <= eta. The bound is exact for
/// quadratic functionals and a local certificate otherwise.
inline ApproximateMinimizer minimize_tikhonov(const SurrogateHandle& h, const GridFunction& y_delta,
                                              const TikhonovConfig& cfg, const GridFunction& x_init) {
  cfg.validate();
  const detail::TikhonovFunctional T(h, y_delta, cfg);
  const std::size_t n = x_init.n_cells();
  if (x_init.min() < cfg.nu) fail(ErrorKind::NonAdmissibleCoefficient, "initial iterate violates x >= nu");

  GridFunction x = x_init;
  detail::Evaluation ev = T.evaluate(x);
  ApproximateMinimizer out;
  out.config = cfg;
  auto certify = [&](const GridFunction& at, const detail::Evaluation& e, std::size_t it) {
    Certificate c;
    c.gradient_norm = detail::dual_norm(cfg.space, n, detail::projected_gradient(at, e.gradient, cfg.nu));
    c.eta_bound = c.gradient_norm * c.gradient_norm / (4.0 * cfg.alpha);
    c.iterations = it;
    return c;
  };

  double step = 1.0;
  GridFunction prev_x;
  std::vector<double> prev_g;
  for (std::size_t it = 0;; ++it) {
    Certificate cert = certify(x, ev, it);
    if (cert.eta_bound <= cfg.eta || it >= cfg.max_iterations) {
      out.x = x;
      out.functional_value = ev.value;
      out.certificate = cert;
      out.status = cert.eta_bound <= cfg.eta ? MinimizerStatus::Converged : MinimizerStatus::MaxIterations;
      return out;
    }
    const GridFunction dir = riesz_map(cfg.space, n, ev.gradient);
    if (!prev_g.empty()) {
      // BB1 step in the X metric: <s,s>_X / <s, grad difference>
      const GridFunction s = x - prev_x;
      double sy = 0.0;
      for (std::size_t i = 0; i < s.size(); ++i) sy += s[i] * (ev.gradient[i] - prev_g[i]);
      const double ss = inner(cfg.space, s, s);
      if (sy > 0.0 && ss > 0.0 && std::isfinite(ss / sy)) step = ss / sy;
      else step *= 2.0;
    }
    bool accepted = false;
    for (int halving = 0; halving <= 60; ++halving) {
      GridFunction trial = detail::clamp_below(x - step * dir, cfg.nu);
      double tv = std::numeric_limits<double>::infinity();
      try {
        tv = T.value(trial);
      } catch (const Error& e) {
        if (is_validation_error(e.kind()) && e.kind() != ErrorKind::NonAdmissibleCoefficient) throw;
      }
      double slope = 0.0;
      for (std::size_t i = 0; i < trial.size(); ++i) slope += ev.gradient[i] * (trial[i] - x[i]);
      if (std::isfinite(tv) && tv <= ev.value && tv <= ev.value + 1e-4 * slope) {
        prev_x = x;
        prev_g = ev.gradient;
        x = std::move(trial);
        ev = T.evaluate(x);
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      out.x = x;
      out.functional_value = ev.value;
      out.certificate = cert;
      out.status = MinimizerStatus::MaxIterations;
      throw StalledError("line search failed after 60 halvings at iteration " + std::to_string(it), out);
    }
  }
}

/// alpha = constant * max(delta, rho_n), eta = alpha^2.
struct ParameterChoice {
  double alpha = 0.0;
  double eta = 0.0;
};

inline ParameterChoice choose_parameters(double delta, double rho_n, double constant = 1.0) {
  require(delta >= 0.0 && rho_n >= 0.0, ErrorKind::OutOfRange, "delta and rho_n must be nonnegative");
  require(constant > 0.0, ErrorKind::ConfigInvalid, "parameter-choice constant must be positive");
  const double m = std::max(delta, rho_n);
  if (!(m > 0.0)) fail(ErrorKind::DegenerateScale, "delta and rho_n are both zero");
  const double a = constant * m;
  return {a, a * a};
}

/// One row of the regularization CSV.
struct RegularizationRun {
  std::string problem;
  std::string surrogate;
  std::size_t n = 0;
  std::size_t N = 0;
  double delta = 0.0;
  double alpha = 0.0;
  double eta = 0.0;
  double xi = 0.0;
  std::size_t iterations = 0;
  double gradient_norm = 0.0;
  double error_X = std::numeric_limits<double>::quiet_NaN();
  double runtime_ms = 0.0;
  std::uint64_t seed = 0;
  ApproximateMinimizer minimizer;
  std::optional<SurrogateDiagnostics> diagnostics;

  static std::string csv_header() {
    return "problem,surrogate,n,N,delta,alpha,eta,xi,iterations,gradient_norm,error_X,runtime_ms,seed";
  }

  std::string csv_row() const {
    std::ostringstream os;
    auto d = [](double v) { return TextDocument::format_double(v); };
    os << problem << ',' << surrogate << ',' << n << ',' << N << ',' << d(delta) << ',' << d(alpha) << ','
       << d(eta) << ',' << d(xi) << ',' << iterations << ',' << d(gradient_norm) << ',' << d(error_X) << ','
       << d(runtime_ms) << ',' << seed;
    return os.str();
  }
};

/// Fills the report fields for a minimizer, including one salvaged from a StalledError.
inline RegularizationRun describe_run(const SurrogateHandle& h, const TikhonovConfig& cfg, ApproximateMinimizer m,
                                      const std::string& problem, std::uint64_t seed, double runtime_ms) {
  RegularizationRun run;
  run.minimizer = std::move(m);
  run.runtime_ms = runtime_ms;
  run.problem = problem;
  run.surrogate = h.name();
  run.n = h.n();
  run.N = h.N();
  run.delta = cfg.delta;
  run.alpha = cfg.alpha;
  run.eta = cfg.eta;
  run.xi = cfg.xi;
  run.iterations = run.minimizer.certificate.iterations;
  run.gradient_norm = run.minimizer.certificate.gradient_norm;
  run.seed = seed;
  if (cfg.x_true) run.error_X = norm(cfg.space, run.minimizer.x - *cfg.x_true);
  if (h.neural_surrogate()) run.diagnostics = h.neural_surrogate()->diagnostics;
  return run;
}

inline RegularizationRun solve_inverse_problem(const SurrogateHandle& h, const GridFunction& y_delta,
                                               const TikhonovConfig& cfg, const GridFunction& x_init,
                                               const std::string& problem = "", std::uint64_t seed = 0) {
  const auto start = std::chrono::steady_clock::now();
  ApproximateMinimizer m = minimize_tikhonov(h, y_delta, cfg, x_init);
  const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return describe_run(h, cfg, std::move(m), problem, seed, ms);
}

}  // namespace opreg

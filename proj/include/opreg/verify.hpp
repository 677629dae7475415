#pragma once

#include <cmath>
#include <functional>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "opreg/study.hpp"

namespace opreg {

struct InvariantResult {
  std::string group;
  bool passed = false;
  std::string detail;
};

namespace detail {

inline GridFunction verify_random_grid(std::mt19937_64& rng, std::size_t n) {
  std::normal_distribution<double> d;
  std::vector<double> v(n + 1);
  for (auto& a : v) a = d(rng);
  return GridFunction(n, v);
}

inline std::string first_line(const std::string& s) { return s.substr(0, s.find('\n')); }

}  // namespace detail

/// Quick self-checks, one per module. Each group reports pass/fail with the
/// measured quantity; none takes more than a fraction of a second.
inline std::vector<InvariantResult> run_invariant_suite() {
  using std::numbers::pi;
  std::vector<InvariantResult> out;
  auto group = [&](const std::string& name, const std::function<std::string(bool&)>& body) {
    InvariantResult r{name, false, ""};
    try {
      r.detail = body(r.passed);
    } catch (const std::exception& e) {
      r.passed = false;
      r.detail = e.what();
    }
    out.push_back(r);
  };
  auto fmt = [](double v) { return format_short(v); };

  group("forward: P1 error slope in [-2.3, -1.7] on every analytic case", [&](bool& ok) {
    std::string d;
    ok = true;
    for (const auto& c : analytic_cases()) {
      std::vector<std::pair<double, double>> pts;
      for (std::size_t n : fem_calibration_ladder()) pts.emplace_back(double(n), fem_case_error(c, n));
      const double s = fit_slope(pts).slope;
      ok = ok && s >= -2.3 && s <= -1.7;
      d += c.name + " " + fmt(s) + " ";
    }
    return d;
  });

  group("surrogate: rank-N map equals the linearization on its span", [&](bool& ok) {
    const std::size_t n = 64;
    const ProblemKind kind(ProblemTag::CExample, 0.5);
    const auto x0 = GridFunction::sample(n, [](double s) { return 1 + 0.5 * s; });
    const auto f = GridFunction::sample(kReferenceCells, [](double s) { return 1.0 + std::sin(pi * s); });
    FemLinearization lin(kind, x0, f, n);
    CenteredTrainingSet c{x0, lin.state(), {}, {}};
    for (auto& phi : perturbation_shapes({PerturbationMode::SineModes, 0.1, 4, 0}, n)) {
      c.images.push_back(phi);
      c.data.push_back(lin.derivative(phi));
    }
    const auto ls = build_linear_surrogate(c, SpaceKind::L2);
    std::mt19937_64 rng(1);
    double worst = 0.0;
    GridFunction x = GridFunction::zeros(n);
    for (const auto& img : c.images) x.axpy(std::normal_distribution<double>()(rng), img);
    const auto want = lin.derivative(x);
    worst = l2_norm(apply_linear_surrogate(ls, x) - want) / l2_norm(want);
    GridFunction probe = detail::verify_random_grid(rng, n);
    for (const auto& b : ls.basis) probe.axpy(-inner(SpaceKind::L2, probe, b), b);
    worst = std::max(worst, l2_norm(apply_linear_surrogate(ls, probe)) / l2_norm(probe));
    ok = worst <= 1e-9;
    return "relative defect " + fmt(worst);
  });

  group("surrogate: rho_bound = nu_N + N q_N r_N", [&](bool& ok) {
    const auto d = make_diagnostics(3, 0.25, 0.125, 0.5);
    ok = d.rho_bound == 0.25 + 3 * 0.125 * 0.5;
    return "rho_bound " + fmt(d.rho_bound);
  });

  group("quadrature: branch prior error slope -2 +- 0.3", [&](bool& ok) {
    const std::size_t n = 4096;
    const auto ref = GridFunction::zeros(n);
    const auto img = GridFunction::sample(n, [](double s) { return std::exp(s); });
    const auto x = GridFunction::sample(n, [](double s) { return std::cos(pi * s); });
    const double exact = -(1 + std::exp(1.0)) / (1 + pi * pi);
    std::vector<std::pair<double, double>> pts;
    for (std::size_t nk : {8u, 16u, 32u, 64u}) {
      const auto p = build_branch_prior(img, nk, ActivationKind::Logistic, {ref, 0.4, 0.4});
      pts.emplace_back(double(nk), std::abs(p.evaluate(x, BranchMode::InputAdaptive) - exact));
    }
    const double s = fit_slope(pts).slope;
    ok = std::abs(s + 2.0) <= 0.3;
    return "slope " + fmt(s);
  });

  group("mollify: non-expansive, monotone, slope 2 +- 0.3 on sin^2", [&](bool& ok) {
    const auto x = GridFunction::sample(1024, [](double s) { return std::pow(std::sin(pi * s), 2); });
    const auto rows = mollification_report(x, {0.2, 0.1, 0.05, 0.025});
    std::vector<std::pair<double, double>> pts;
    for (const auto& r : rows) pts.emplace_back(r.xi, r.l2_error);
    const double s = fit_slope(pts).slope;
    ok = std::abs(s - 2.0) <= 0.3;
    return "slope " + fmt(s);
  });

  group("regularize: noise level exact, gradient matches differences, large alpha pins the prior", [&](bool& ok) {
    const std::size_t n = 32;
    const ProblemKind kind(ProblemTag::CExample, 0.5);
    const auto f = GridFunction::sample(n, [](double s) { return 1.0 + std::sin(pi * s); });
    const auto h = SurrogateHandle::fem(kind, f, n);
    const auto xt = GridFunction::sample(n, [](double s) { return 1.0 + 0.3 * s; });
    const auto y = h.forward(xt);
    const auto yd = add_noise(y, 1e-3, 9);
    const double noise_err = std::abs(l2_norm(yd - y) - 1e-3) / 1e-3;

    TikhonovConfig cfg;
    cfg.alpha = 1e-2;
    cfg.eta = 1e-12;
    cfg.delta = 1e-3;
    cfg.x0 = GridFunction::constant(n, 1.0);
    cfg.space = SpaceKind::L2;
    cfg.nu = 0.5;
    std::mt19937_64 rng(3);
    GridFunction x = xt, dir = detail::verify_random_grid(rng, n);
    const auto g = tikhonov_gradient(h, x, yd, cfg);
    const double eps = 1e-6;
    const double fd = (tikhonov_value(h, x + eps * dir, yd, cfg) - tikhonov_value(h, x - eps * dir, yd, cfg)) / (2 * eps);
    const double an = inner(SpaceKind::L2, g, dir);
    const double grad_err = std::abs(fd - an) / std::max(std::abs(an), 1e-300);

    cfg.alpha = 1e8;
    cfg.eta = 1e-20;
    const auto m = minimize_tikhonov(h, yd, cfg, xt);
    const double pin = norm(SpaceKind::L2, m.x - cfg.x0);
    ok = noise_err <= 1e-14 && grad_err <= 1e-4 && pin <= 1e-4;
    return "noise " + fmt(noise_err) + ", gradient " + fmt(grad_err) + ", prior distance " + fmt(pin);
  });

  group("schema: CSV headers match the documented column lists", [&](bool& ok) {
    const std::string runs = "problem,surrogate,n,N,delta,alpha,eta,xi,iterations,gradient_norm,error_X,runtime_ms,seed";
    const std::string rates =
        "study,problem,ladder,value,error,metric_a,metric_b,metric_c,status,fitted_slope,slope_stderr,runtime_ms";
    StudyConfig cfg;
    cfg.kind = StudyKind::FemRate;
    cfg.label = "fem_rate";
    cfg.ladder = {"n", {8, 16, 32, 64}};
    const auto res = run_study(cfg);
    ok = RegularizationRun::csv_header() == runs && RateTable::csv_header() == rates &&
         detail::first_line(res.table.csv()) == rates && detail::first_line(res.runs_csv()) == runs;
    return ok ? "2 schemas" : "header drift";
  });

  group("determinism: identical config and seed give identical CSV", [&](bool& ok) {
    StudyConfig cfg;
    cfg.kind = StudyKind::RegRate;
    cfg.label = "reg_rate";
    cfg.n = 32;
    cfg.seed = 11;
    cfg.ladder = {"delta", {1e-2, 5e-3, 2.5e-3, 1.25e-3}};
    cfg.jobs = 1;
    const auto a = run_study(cfg);
    cfg.jobs = 4;
    const auto b = run_study(cfg);
    ok = a.table.csv(false) == b.table.csv(false) && a.runs_csv(false) == b.runs_csv(false);
    return ok ? "jobs 1 and 4 agree" : "outputs differ";
  });

  return out;
}

}  // namespace opreg

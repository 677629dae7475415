#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <limits>
#include <memory>
#include <mutex>
#include <numbers>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "opreg/config.hpp"
#include "opreg/errors.hpp"
#include "opreg/forward.hpp"
#include "opreg/grid_function.hpp"
#include "opreg/mollify.hpp"
#include "opreg/neural_surrogate.hpp"
#include "opreg/regularize.hpp"
#include "opreg/text_format.hpp"
#include "opreg/training.hpp"

namespace opreg {

// ---- slope fits ----

struct SlopeFit {
  double slope = 0.0;
  double standard_error = 0.0;
};

/// Least squares of log(y) on log(x).
inline SlopeFit fit_slope(const std::vector<std::pair<double, double>>& points) {
  const std::size_t m = points.size();
  require(m >= 3, ErrorKind::DegenerateFit, "slope fit needs at least 3 points");
  double mx = 0.0, my = 0.0;
  for (const auto& [x, y] : points) {
    require(x > 0.0 && y > 0.0, ErrorKind::OutOfRange, "slope fit needs positive coordinates");
    mx += std::log(x);
    my += std::log(y);
  }
  mx /= m;
  my /= m;
  double sxx = 0.0, sxy = 0.0;
  for (const auto& [x, y] : points) {
    const double dx = std::log(x) - mx;
    sxx += dx * dx;
    sxy += dx * (std::log(y) - my);
  }
  if (!(sxx > 0.0)) fail(ErrorKind::DegenerateFit, "all ladder values are equal");
  SlopeFit fit;
  fit.slope = sxy / sxx;
  double ssr = 0.0;
  for (const auto& [x, y] : points) {
    const double r = std::log(y) - my - fit.slope * (std::log(x) - mx);
    ssr += r * r;
  }
  fit.standard_error = m > 2 ? std::sqrt(ssr / static_cast<double>(m - 2) / sxx) : 0.0;
  return fit;
}

// ---- analytic forward cases ----

struct AnalyticCase {
  std::string name;
  ProblemTag tag;
  double (*coefficient)(double);
  double (*source)(double);
  double (*exact)(double);
};

inline const std::vector<AnalyticCase>& analytic_cases() {
  using std::numbers::pi;
  static const std::vector<AnalyticCase> cases{
      {"a_sine", ProblemTag::AExample, [](double) { return 1.0; },
       [](double s) { return pi * pi * std::sin(pi * s); }, [](double s) { return std::sin(pi * s); }},
      // -((1+s) y')' = 1 + 4s with y = s(1-s)
      {"a_linear", ProblemTag::AExample, [](double s) { return 1.0 + s; }, [](double s) { return 1.0 + 4.0 * s; },
       [](double s) { return s * (1.0 - s); }},
      {"c_sine", ProblemTag::CExample, [](double) { return 1.0; },
       [](double s) { return (pi * pi + 1.0) * std::sin(pi * s); }, [](double s) { return std::sin(pi * s); }},
  };
  return cases;
}

inline const AnalyticCase& analytic_case(const std::string& name) {
  for (const auto& c : analytic_cases()) {
    if (c.name == name) return c;
  }
  fail(ErrorKind::ConfigInvalid, "unknown analytic case '" + name + "'");
}

/// L2 distance from the piecewise-linear interpolant of y to an exact function,
/// composite Simpson on 16 subintervals per cell.
inline double l2_error_to(const GridFunction& y, double (*exact)(double)) {
  const std::size_t sub = 16;
  const std::size_t m = y.n_cells() * sub;
  const double h = 1.0 / static_cast<double>(m);
  double acc = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double a = i * h, b = (i + 1) * h, c = 0.5 * (a + b);
    const double ea = y.at(a) - exact(a), eb = y.at(b) - exact(b), ec = y.at(c) - exact(c);
    acc += h / 6.0 * (ea * ea + 4.0 * ec * ec + eb * eb);
  }
  return std::sqrt(acc);
}

inline double fem_case_error(const AnalyticCase& c, std::size_t n) {
  const ProblemKind kind(c.tag, 0.5);
  const GridFunction x = GridFunction::sample(n, c.coefficient);
  const GridFunction f = GridFunction::sample(n, c.source);
  return l2_error_to(solve_forward_fem(kind, x, f, n), c.exact);
}

inline const std::vector<std::size_t>& fem_calibration_ladder() {
  static const std::vector<std::size_t> ns{16, 32, 64, 128, 256};
  return ns;
}

/// c in the FEM rate model c * n^-2: the largest err * n^2 over the calibration
/// ladder of the analytic sine case for the given problem.
inline double calibrate_fem_constant(ProblemTag tag) {
  const AnalyticCase& c = analytic_case(tag == ProblemTag::AExample ? "a_sine" : "c_sine");
  double k = 0.0;
  for (std::size_t n : fem_calibration_ladder()) {
    k = std::max(k, fem_case_error(c, n) * static_cast<double>(n * n));
  }
  return k;
}

// ---- study configuration ----

enum class StudyKind { FemRate, SurrogateError, RegRate, MollifyRate };

inline const char* to_string(StudyKind k) {
  switch (k) {
    case StudyKind::FemRate: return "fem_rate";
    case StudyKind::SurrogateError: return "surrogate_error";
    case StudyKind::RegRate: return "reg_rate";
    case StudyKind::MollifyRate: return "mollify_rate";
  }
  return "?";
}

inline StudyKind parse_study_kind(const std::string& s) {
  for (auto k : {StudyKind::FemRate, StudyKind::SurrogateError, StudyKind::RegRate, StudyKind::MollifyRate}) {
    if (s == to_string(k)) return k;
  }
  fail(ErrorKind::ConfigInvalid, "unknown study '" + s + "'");
}

inline ProblemTag parse_problem_tag(const std::string& s) {
  if (s == "a") return ProblemTag::AExample;
  if (s == "c") return ProblemTag::CExample;
  fail(ErrorKind::ConfigInvalid, "unknown problem '" + s + "' (expected a or c)");
}

inline SpaceKind parse_space(const std::string& s) {
  if (s == "L2") return SpaceKind::L2;
  if (s == "H1") return SpaceKind::H1;
  fail(ErrorKind::ConfigInvalid, "unknown space '" + s + "' (expected L2 or H1)");
}

struct Ladder {
  std::string name;
  std::vector<double> values;
};

/// values = v0 v1 ..., or start/factor/count.
inline Ladder read_ladder(const ConfigFile& f, const std::string& default_name) {
  Ladder l;
  l.name = f.get("ladder.name", default_name);
  if (f.has("ladder.values")) {
    l.values = f.get_list("ladder.values");
  } else {
    const double start = f.get_double("ladder.start");
    const double factor = f.get_double("ladder.factor");
    const long long count = f.get_int("ladder.count");
    require(count > 0 && count < 1000, ErrorKind::ConfigInvalid, "ladder.count out of range");
    require(factor > 0.0, ErrorKind::ConfigInvalid, "ladder.factor must be positive");
    for (long long i = 0; i < count; ++i) l.values.push_back(start * std::pow(factor, static_cast<double>(i)));
  }
  return l;
}

inline void validate_ladder(const Ladder& l) {
  require(l.values.size() >= 4, ErrorKind::ConfigInvalid, "ladder needs at least 4 points for a slope fit");
  const bool up = l.values[1] > l.values[0];
  for (std::size_t i = 0; i < l.values.size(); ++i) {
    require(l.values[i] > 0.0 && std::isfinite(l.values[i]), ErrorKind::ConfigInvalid, "ladder values must be positive");
    if (i) {
      const bool ok = up ? l.values[i] > l.values[i - 1] : l.values[i] < l.values[i - 1];
      require(ok, ErrorKind::ConfigInvalid, "ladder must be strictly monotone");
    }
  }
}

struct StudyConfig {
  StudyKind kind = StudyKind::FemRate;
  std::string label;  // "study" column; defaults to the kind
  ProblemKind problem{ProblemTag::AExample, 0.5};
  Ladder ladder;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  std::string output;

  // fem_rate
  std::string analytic = "a_sine";
  // mollify_rate
  std::string function = "sin2";

  // shared by surrogate_error and reg_rate
  std::size_t n = 64;
  PerturbationSpec training;
  std::string training_center = "truth";  // truth | one
  std::size_t probes = 10;
  NeuralSurrogateOptions network;

  // reg_rate
  std::string surrogate = "fem";  // fem | neural | linear
  double constant = 1.0;
  double xi = 0.0;
  std::optional<double> xi_alt;
  double source_weight = 5.0;
  std::size_t replicates = 1;
  std::size_t max_iterations = 200000;

  /// Everything but the study kind and ladder; also used by the single-run commands.
  static StudyConfig read_setup(const ConfigFile& f) {
    StudyConfig c;
    c.seed = static_cast<std::uint64_t>(f.get_int("seed", 0));
    c.jobs = f.get_size("jobs", 1);
    c.output = f.get("output", "");
    c.problem = ProblemKind(parse_problem_tag(f.get("problem.example", "a")), f.get_double("problem.nu", 0.5));

    c.analytic = f.get("fem.case", c.analytic);
    c.function = f.get("mollify.function", c.function);

    c.n = f.get_size("mesh.n", c.n);
    c.training.mode = parse_perturbation(f.get("training.mode", "sine"));
    c.training.amplitude = f.get_double("training.amplitude", 0.1);
    c.training.count = f.get_size("training.N", 8);
    c.training.seed = static_cast<std::uint64_t>(f.get_int("training.seed", static_cast<long long>(c.seed)));
    c.training_center = f.get("training.center", c.training_center);
    c.probes = f.get_size("training.probes", c.probes);

    c.network.n_k = f.get_size("surrogate.n_k", c.n);
    c.network.n_j = f.get_size("surrogate.n_j", 64);
    c.network.activation = parse_activation(f.get("surrogate.activation", "logistic"));
    c.network.mode = parse_branch_mode(f.get("surrogate.branch", "adaptive"));
    c.network.headroom = f.get_double("surrogate.headroom", c.network.headroom);
    c.network.seed = static_cast<std::uint64_t>(f.get_int("surrogate.seed", static_cast<long long>(c.seed)));

    c.surrogate = f.get("regularization.surrogate", c.surrogate);
    c.constant = f.get_double("regularization.constant", c.constant);
    c.xi = f.get_double("regularization.xi", c.xi);
    if (f.has("regularization.xi_alt")) c.xi_alt = f.get_double("regularization.xi_alt");
    c.source_weight = f.get_double("regularization.source_weight", c.source_weight);
    c.replicates = f.get_size("regularization.replicates", c.replicates);
    c.max_iterations = f.get_size("regularization.max_iterations", c.max_iterations);
    return c;
  }

  static StudyConfig from(const ConfigFile& f) {
    StudyConfig c = read_setup(f);
    c.kind = parse_study_kind(f.get("study"));
    c.label = f.get("label", to_string(c.kind));
    const char* default_ladder = "n";
    switch (c.kind) {
      case StudyKind::FemRate: default_ladder = "n"; break;
      case StudyKind::SurrogateError: default_ladder = "N"; break;
      case StudyKind::RegRate: default_ladder = "delta"; break;
      case StudyKind::MollifyRate: default_ladder = "xi"; break;
    }
    c.ladder = read_ladder(f, default_ladder);
    return c;
  }

  void validate() const {
    validate_ladder(ladder);
    require(jobs >= 1, ErrorKind::ConfigInvalid, "jobs must be at least 1");
    auto ladder_is = [&](std::initializer_list<const char*> names) {
      for (const char* s : names) {
        if (ladder.name == s) return;
      }
      fail(ErrorKind::ConfigInvalid, "ladder '" + ladder.name + "' does not fit study " + to_string(kind));
    };
    auto integral = [&] {
      for (double v : ladder.values) {
        require(v == std::floor(v) && v >= 1.0, ErrorKind::ConfigInvalid, "ladder " + ladder.name + " must be integral");
      }
    };
    switch (kind) {
      case StudyKind::FemRate:
        ladder_is({"n"});
        integral();
        analytic_case(analytic);
        for (double v : ladder.values) require(v >= 2, ErrorKind::ConfigInvalid, "FEM meshes need at least 2 cells");
        break;
      case StudyKind::SurrogateError:
        ladder_is({"N", "width"});
        integral();
        break;
      case StudyKind::RegRate:
        ladder_is({"delta"});
        require(surrogate == "fem" || surrogate == "neural" || surrogate == "linear", ErrorKind::ConfigInvalid,
                "regularization.surrogate must be fem, neural or linear");
        require(constant > 0.0, ErrorKind::ConfigInvalid, "regularization.constant must be positive");
        require(xi >= 0.0 && xi < 0.5, ErrorKind::ConfigInvalid, "regularization.xi must lie in [0, 0.5)");
        require(!xi_alt || (*xi_alt > 0.0 && *xi_alt < 0.5 && *xi_alt != xi), ErrorKind::ConfigInvalid,
                "regularization.xi_alt must differ from xi and lie in (0, 0.5)");
        require(replicates >= 1, ErrorKind::ConfigInvalid, "replicates must be at least 1");
        require(max_iterations >= 1, ErrorKind::ConfigInvalid, "max_iterations must be at least 1");
        break;
      case StudyKind::MollifyRate:
        ladder_is({"xi"});
        require(function == "sin2" || function == "sin" || function == "step", ErrorKind::ConfigInvalid,
                "mollify.function must be sin2, sin or step");
        for (double v : ladder.values) require(v < 0.5, ErrorKind::ConfigInvalid, "xi values must be below 0.5");
        break;
    }
    require(n >= 2, ErrorKind::ConfigInvalid, "mesh.n must be at least 2");
    require(training_center == "truth" || training_center == "one", ErrorKind::ConfigInvalid,
            "training.center must be truth or one");
  }
};

// ---- rate tables ----

struct RateRow {
  double value = 0.0;
  double error = std::numeric_limits<double>::quiet_NaN();
  double metric_a = 0.0;
  double metric_b = 0.0;
  double metric_c = 0.0;
  std::string status = "ok";
  double runtime_ms = 0.0;

  bool ok() const { return status == "ok"; }
};

struct RateTable {
  std::string study;
  std::string problem;
  std::string ladder;
  std::vector<RateRow> rows;
  double fitted_slope = std::numeric_limits<double>::quiet_NaN();
  double slope_stderr = std::numeric_limits<double>::quiet_NaN();

  static std::string csv_header() {
    return "study,problem,ladder,value,error,metric_a,metric_b,metric_c,status,fitted_slope,slope_stderr,runtime_ms";
  }

  bool complete() const {
    return std::all_of(rows.begin(), rows.end(), [](const RateRow& r) { return r.ok(); });
  }

  /// Fit over the rows that finished; leaves NaN when fewer than 3 did.
  void refit() {
    std::vector<std::pair<double, double>> pts;
    for (const auto& r : rows) {
      if (r.ok() && r.error > 0.0) pts.emplace_back(r.value, r.error);
    }
    if (pts.size() < 3) {
      fitted_slope = slope_stderr = std::numeric_limits<double>::quiet_NaN();
      return;
    }
    const SlopeFit f = fit_slope(pts);
    fitted_slope = f.slope;
    slope_stderr = f.standard_error;
  }

  void write_csv(std::ostream& os, bool with_runtime = true) const {
    auto d = [](double v) { return TextDocument::format_double(v); };
    os << csv_header() << '\n';
    for (const auto& r : rows) {
      os << study << ',' << problem << ',' << ladder << ',' << d(r.value) << ',' << d(r.error) << ',' << d(r.metric_a)
         << ',' << d(r.metric_b) << ',' << d(r.metric_c) << ',' << r.status << ',' << d(fitted_slope) << ','
         << d(slope_stderr) << ',' << (with_runtime ? d(r.runtime_ms) : std::string("0")) << '\n';
    }
  }

  std::string csv(bool with_runtime = true) const {
    std::ostringstream os;
    write_csv(os, with_runtime);
    return os.str();
  }
};

/// Extra run at the smallest delta with a second mollifier width.
struct XiComparison {
  double delta = 0.0;
  double xi = 0.0;
  double xi_alt = 0.0;
  double error = 0.0;
  double error_alt = 0.0;       // warm started from the xi minimizer
  double error_alt_cold = 0.0;  // started from x0, for reference
  double warm_iterations = 0.0;

  double gap() const { return std::abs(error - error_alt); }
  bool within(double factor) const { return gap() <= factor * std::abs(xi - xi_alt); }
};

struct StudyResult {
  RateTable table;
  std::vector<RegularizationRun> runs;  // reg_rate only, ladder order then replicate
  std::vector<std::string> notes;       // study header lines
  std::optional<XiComparison> xi_check;
  std::optional<ErrorKind> first_error;

  bool failed() const { return first_error.has_value(); }

  std::string runs_csv(bool with_runtime = true) const {
    std::ostringstream os;
    os << RegularizationRun::csv_header() << '\n';
    for (const auto& r : runs) {
      if (with_runtime) {
        os << r.csv_row() << '\n';
      } else {
        RegularizationRun c = r;
        c.runtime_ms = 0.0;
        os << c.csv_row() << '\n';
      }
    }
    return os.str();
  }
};

// ---- execution ----

/// Runs body(i) for i in [0, count) on up to `jobs` threads. The first
/// exception is rethrown after all workers finish.
inline void parallel_for(std::size_t count, std::size_t jobs, const std::function<void(std::size_t)>& body) {
  jobs = std::max<std::size_t>(1, std::min(jobs, count));
  if (jobs == 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex m;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < jobs; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          body(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(m);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

/// Test problem shared by the surrogate and regularization studies: the true
/// coefficient, the source term on the reference mesh, and the kinked element
/// w |s - 0.4| that defines the prior through x0 = x_true - F'(x_true)* w.
struct RateProblem {
  ProblemKind kind;
  GridFunction f;       // on the reference mesh
  GridFunction x_true;  // on the n-cell mesh
  GridFunction omega;   // on the n-cell mesh

  SpaceKind space() const { return kind.parameter_space(); }
};

inline RateProblem make_rate_problem(const ProblemKind& kind, std::size_t n, double source_weight) {
  using std::numbers::pi;
  RateProblem p{kind, {}, {}, {}};
  if (kind.tag == ProblemTag::AExample) {
    p.f = GridFunction::sample(kReferenceCells, [](double s) { return 1.0 + 2.0 * s; });
  } else {
    p.f = GridFunction::sample(kReferenceCells, [](double s) { return 1.0 + std::sin(pi * s); });
  }
  p.x_true = GridFunction::sample(n, [](double s) { return 1.0 + 0.3 * s * std::sin(pi * s); });
  p.omega = GridFunction::sample(n, [&](double s) { return source_weight * std::abs(s - 0.4); });
  return p;
}

/// Trained surrogate pieces for a rate problem.
struct TrainedSurrogate {
  TrainingSet training;
  CenteredTrainingSet centered;
  std::shared_ptr<const LinearSurrogate> linear;
  std::shared_ptr<const NeuralSurrogate> neural;
  SurrogateDiagnostics diagnostics;
};

/// Linear and (optionally) neural surrogate for a given training set, with
/// diagnostics measured against the reference operator on random probes.
inline TrainedSurrogate train_from_set(TrainingSet ts, std::size_t probes, std::uint64_t probe_seed,
                                       const NeuralSurrogateOptions& opt, bool with_neural) {
  TrainedSurrogate t;
  t.training = std::move(ts);
  t.centered = center_training_set(t.training);
  auto ls = std::make_shared<LinearSurrogate>(build_linear_surrogate(t.centered, t.training.space));
  const auto probe_set = random_probes(t.training, probes, probe_seed);
  const std::size_t out = ls->output_cells();
  const TrainingSet& tr = t.training;
  const ForwardMap exact = [&](const GridFunction& x) {
    return solve_forward_reference(tr.problem, x, tr.f, tr.n_ref).resample(out);
  };
  if (with_neural) {
    auto ns = std::make_shared<NeuralSurrogate>(assemble_neural_surrogate(*ls, t.centered, opt));
    attach_diagnostics(*ns, *ls, exact, probe_set);
    t.diagnostics = ns->diagnostics;
    t.neural = ns;
  } else {
    t.diagnostics = make_diagnostics(ls->N(), estimate_nu_N(*ls, exact, probe_set), 0.0, 0.0);
  }
  t.linear = ls;
  return t;
}

inline std::uint64_t probe_seed(std::uint64_t seed) { return detail::mix_seed(seed ^ 0x70b35ULL); }

inline TrainingSet generate_for(const RateProblem& p, const StudyConfig& cfg, const PerturbationSpec& spec) {
  const GridFunction center =
      cfg.training_center == "truth" ? p.x_true : GridFunction::constant(p.x_true.n_cells(), 1.0);
  return generate_training_set(p.kind, p.f, center, spec);
}

inline TrainedSurrogate train_surrogate(const RateProblem& p, const StudyConfig& cfg, const PerturbationSpec& spec,
                                        const NeuralSurrogateOptions& opt, bool with_neural) {
  return train_from_set(generate_for(p, cfg, spec), cfg.probes, probe_seed(cfg.seed), opt, with_neural);
}

/// A regularization problem ready to solve: surrogate, exact data and prior.
struct RegularizationSetup {
  RateProblem problem;
  std::optional<SurrogateHandle> handle;
  GridFunction y;   // exact data on the surrogate output mesh
  GridFunction x0;  // prior
  double rho = 0.0;
  std::string rho_source;
};

/// A stalled solve, with the run rebuilt from the best iterate.
struct StalledSolve : std::runtime_error {
  StalledSolve(RegularizationRun r, const std::string& what) : std::runtime_error(what), run(std::move(r)) {}
  RegularizationRun run;
};

inline std::string format_short(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3e", v);
  return buf;
}

inline RegularizationSetup prepare_regularization(const StudyConfig& cfg) {
  RegularizationSetup s{make_rate_problem(cfg.problem, cfg.n, cfg.source_weight), {}, {}, {}, 0.0, {}};
  const RateProblem& p = s.problem;
  const std::size_t n = cfg.n;
  if (cfg.surrogate == "fem") {
    s.handle = SurrogateHandle::fem(p.kind, p.f.resample(n), n);
    const double c = calibrate_fem_constant(p.kind.tag);
    s.rho = c / static_cast<double>(n * n);
    s.rho_source = "c n^-2 with c = " + format_short(c);
  } else {
    const TrainedSurrogate t = train_surrogate(p, cfg, cfg.training, cfg.network, cfg.surrogate == "neural");
    s.handle = cfg.surrogate == "neural" ? SurrogateHandle::neural(t.neural) : SurrogateHandle::linear(t.linear);
    s.rho = t.diagnostics.rho_bound;
    s.rho_source = cfg.surrogate == "neural"
                       ? "rho_bound = nu + N q r = " + format_short(t.diagnostics.nu_N) + " + " +
                             std::to_string(t.diagnostics.N) + " * " + format_short(t.diagnostics.q_N) + " * " +
                             format_short(t.diagnostics.r_N)
                       : "nu_N of the rank-N surrogate";
  }
  const SurrogateHandle& h = *s.handle;
  s.y = solve_forward_reference(p.kind, p.x_true, p.f).resample(h.output_cells());
  const GridFunction omega = p.omega.resample(h.output_cells());
  const auto fg = h.forward_and_adjoint(p.x_true, [&](const GridFunction&) { return omega; });
  s.x0 = p.x_true - riesz_map(p.space(), p.x_true.n_cells(), fg.second);
  require(s.x0.min() >= cfg.problem.nu, ErrorKind::NonAdmissibleCoefficient,
          "prior x0 leaves the admissible set; lower regularization.source_weight");
  return s;
}

/// Noise seed for replicate q at ladder point i.
inline std::uint64_t noise_seed(std::uint64_t seed, std::size_t point, std::size_t replicate) {
  return detail::mix_seed(detail::mix_seed(seed) ^ (static_cast<std::uint64_t>(point) << 20 | replicate));
}

/// One noisy solve with alpha, eta from choose_parameters, started at x0 unless
/// x_init is given. Throws StalledSolve carrying the best iterate if the line
/// search gives up.
inline RegularizationRun solve_point(const RegularizationSetup& s, const StudyConfig& cfg, double delta, double xi,
                                     std::uint64_t seed, const GridFunction* x_init = nullptr) {
  const SurrogateHandle& h = *s.handle;
  const GridFunction yd = add_noise(s.y, delta, seed);
  const ParameterChoice pc = choose_parameters(delta, s.rho, cfg.constant);
  TikhonovConfig tc;
  tc.alpha = pc.alpha;
  tc.eta = pc.eta;
  tc.delta = delta;
  tc.xi = xi;
  tc.x0 = s.x0;
  tc.space = s.problem.space();
  tc.nu = cfg.problem.nu;
  tc.max_iterations = cfg.max_iterations;
  tc.x_true = s.problem.x_true;
  const std::string problem = to_string(s.problem.kind.tag);
  const auto start = std::chrono::steady_clock::now();
  try {
    return solve_inverse_problem(h, yd, tc, x_init ? *x_init : s.x0, problem, seed);
  } catch (const StalledError& e) {
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    throw StalledSolve(describe_run(h, tc, e.best(), problem, seed, ms), e.what());
  }
}

namespace detail {

template <class Body>
void run_rows(const StudyConfig& cfg, StudyResult& res, Body&& body) {
  const std::size_t m = cfg.ladder.values.size();
  res.table.rows.assign(m, RateRow{});
  parallel_for(m, cfg.jobs, [&](std::size_t i) {
    RateRow& row = res.table.rows[i];
    row.value = cfg.ladder.values[i];
    const auto start = std::chrono::steady_clock::now();
    try {
      body(i, row);
    } catch (const Error& e) {
      row.status = std::string(to_string(e.kind()));
    }
    row.runtime_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  });
  for (const auto& r : res.table.rows) {
    if (!r.ok() && !res.first_error) {
      for (int k = 0; k <= static_cast<int>(ErrorKind::MaxIterations); ++k) {
        if (to_string(static_cast<ErrorKind>(k)) == r.status) res.first_error = static_cast<ErrorKind>(k);
      }
    }
  }
  res.table.refit();
}

inline void run_fem_rate(const StudyConfig& cfg, StudyResult& res) {
  const AnalyticCase& c = analytic_case(cfg.analytic);
  res.table.problem = c.name;
  res.notes.push_back("case " + c.name + ": L2 error of the P1 solution against the closed form");
  run_rows(cfg, res, [&](std::size_t, RateRow& row) {
    const auto n = static_cast<std::size_t>(row.value);
    const GridFunction x = GridFunction::sample(n, c.coefficient);
    const GridFunction f = GridFunction::sample(n, c.source);
    const GridFunction y = solve_forward_fem(ProblemKind(c.tag, 0.5), x, f, n);
    row.error = l2_error_to(y, c.exact);
    row.metric_a = row.error * static_cast<double>(n * n);
    double mx = 0.0;
    for (std::size_t i = 0; i <= n; ++i) mx = std::max(mx, std::abs(y[i] - c.exact(y.node(i))));
    row.metric_b = mx;
  });
}

inline void run_surrogate_error(const StudyConfig& cfg, StudyResult& res) {
  const RateProblem p = make_rate_problem(cfg.problem, cfg.n, cfg.source_weight);
  const bool by_width = cfg.ladder.name == "width";
  res.notes.push_back(by_width ? "error = q_N (branch quadrature) vs branch/trunk width at N = " +
                                     std::to_string(cfg.training.count)
                               : "error = rho_bound vs training size N");
  run_rows(cfg, res, [&](std::size_t, RateRow& row) {
    PerturbationSpec spec = cfg.training;
    NeuralSurrogateOptions opt = cfg.network;
    const auto v = static_cast<std::size_t>(row.value);
    if (by_width) {
      opt.n_k = opt.n_j = v;
    } else {
      spec.count = v;
    }
    const TrainedSurrogate t = train_surrogate(p, cfg, spec, opt, true);
    row.error = by_width ? t.diagnostics.q_N : t.diagnostics.rho_bound;
    row.metric_a = t.diagnostics.nu_N;
    row.metric_b = t.diagnostics.q_N;
    row.metric_c = t.diagnostics.r_N;
  });
}

inline void run_mollify_rate(const StudyConfig& cfg, StudyResult& res) {
  using std::numbers::pi;
  res.table.problem = cfg.function;
  const std::string fn = cfg.function;
  const GridFunction x = GridFunction::sample(cfg.n, [&](double s) {
    if (fn == "sin2") return std::pow(std::sin(pi * s), 2);
    if (fn == "sin") return std::sin(pi * s);
    return s > 0.5 ? 1.0 : 0.0;
  });
  const double nx = l2_norm(x);
  run_rows(cfg, res, [&](std::size_t, RateRow& row) {
    const GridFunction xm = mollify(x, row.value);
    row.error = l2_norm(xm - x);
    row.metric_a = nx > 0.0 ? l2_norm(xm) / nx : 1.0;
  });
  // the property checks of the report, over the whole ladder
  for (std::size_t i = 0; i < res.table.rows.size(); ++i) {
    const auto& r = res.table.rows[i];
    if (!r.ok()) continue;
    if (r.metric_a > 1.0 + 1e-8) res.notes.push_back("norm ratio above 1 at xi = " + format_short(r.value));
    if (i && res.table.rows[i - 1].ok()) {
      const bool finer = r.value < res.table.rows[i - 1].value;
      const bool worse = finer ? r.error > res.table.rows[i - 1].error : r.error < res.table.rows[i - 1].error;
      if (worse) res.notes.push_back("error not monotone in xi at xi = " + format_short(r.value));
    }
  }
}

inline void run_reg_rate(const StudyConfig& cfg, StudyResult& res) {
  const RegularizationSetup setup = prepare_regularization(cfg);
  const double dmin = *std::min_element(cfg.ladder.values.begin(), cfg.ladder.values.end());
  res.notes.push_back("surrogate " + setup.handle->name() + ", n = " + std::to_string(cfg.n) +
                      ", N = " + std::to_string(setup.handle->N()));
  res.notes.push_back("pinning: rho_n = " + format_short(setup.rho) + " (" + setup.rho_source +
                      ") <= min delta = " + format_short(dmin) + ": " + (setup.rho <= dmin ? "ok" : "VIOLATED"));
  res.notes.push_back("alpha = " + TextDocument::format_double(cfg.constant) +
                      " * max(delta, rho_n), eta = alpha^2; error in " + to_string(setup.problem.space()) +
                      ", RMS over " + std::to_string(cfg.replicates) + " noise draws; ||x_true - x0|| = " +
                      format_short(norm(setup.problem.space(), setup.problem.x_true - setup.x0)));
  if (!(setup.rho <= dmin)) {
    res.notes.push_back("warning: rho_n exceeds the smallest delta; the rate is not delta-bound");
  }
  auto solve_one = [&](double delta, double xi, std::uint64_t seed, const GridFunction* init = nullptr) {
    return solve_point(setup, cfg, delta, xi, seed, init);
  };

  const std::size_t m = cfg.ladder.values.size();
  std::vector<std::vector<RegularizationRun>> per_point(m);
  run_rows(cfg, res, [&](std::size_t i, RateRow& row) {
    double acc = 0.0, its = 0.0;
    for (std::size_t q = 0; q < cfg.replicates; ++q) {
      const std::uint64_t seed = noise_seed(cfg.seed, i, q);
      try {
        per_point[i].push_back(solve_one(row.value, cfg.xi, seed));
      } catch (const StalledSolve& s) {
        per_point[i].push_back(s.run);
        throw Error(ErrorKind::Stalled, s.what());
      }
      const auto& r = per_point[i].back();
      acc += r.error_X * r.error_X;
      its += static_cast<double>(r.iterations);
      row.metric_a = r.alpha;
      row.metric_b = r.eta;
    }
    row.error = std::sqrt(acc / static_cast<double>(cfg.replicates));
    row.metric_c = its / static_cast<double>(cfg.replicates);
  });
  for (auto& v : per_point) {
    for (auto& r : v) res.runs.push_back(std::move(r));
  }

  if (cfg.xi_alt && !res.failed()) {
    const std::size_t imin =
        static_cast<std::size_t>(std::min_element(cfg.ladder.values.begin(), cfg.ladder.values.end()) -
                                 cfg.ladder.values.begin());
    XiComparison xc;
    xc.delta = dmin;
    xc.xi = cfg.xi;
    xc.xi_alt = *cfg.xi_alt;
    xc.error = res.table.rows[imin].error;
    double acc = 0.0, cold = 0.0;
    try {
      for (std::size_t q = 0; q < cfg.replicates; ++q) {
        const std::uint64_t seed = noise_seed(cfg.seed, imin, q);
        // warm start from the first width's minimizer: at eta = alpha^2 the
        // stopping slack is of order sqrt(alpha), far above any xi gap, so a cold
        // start would compare two different stopping points
        const GridFunction start = res.runs[imin * cfg.replicates + q].minimizer.x;
        res.runs.push_back(solve_one(dmin, xc.xi_alt, seed, &start));
        acc += res.runs.back().error_X * res.runs.back().error_X;
        xc.warm_iterations += static_cast<double>(res.runs.back().iterations) / static_cast<double>(cfg.replicates);
        const double e = solve_one(dmin, xc.xi_alt, seed).error_X;
        cold += e * e;
      }
      xc.error_alt = std::sqrt(acc / static_cast<double>(cfg.replicates));
      xc.error_alt_cold = std::sqrt(cold / static_cast<double>(cfg.replicates));
      res.xi_check = xc;
      res.notes.push_back("xi term at delta = " + format_short(dmin) + ": error(xi=" + format_short(xc.xi) +
                          ") = " + format_short(xc.error) + ", error(xi=" + format_short(xc.xi_alt) +
                          ") = " + format_short(xc.error_alt) + ", |difference| = " + format_short(xc.gap()) +
                          " vs 3 |xi gap| = " + format_short(3.0 * std::abs(xc.xi - xc.xi_alt)) + " (warm start, " +
                          format_short(xc.warm_iterations) + " iterations; cold start error " +
                          format_short(xc.error_alt_cold) + ")");
    } catch (const StalledSolve& s) {
      res.runs.push_back(s.run);
      res.first_error = ErrorKind::Stalled;
    } catch (const Error& e) {
      res.first_error = e.kind();
    }
  }
}

}  // namespace detail

/// Runs the configured ladder. Numerical failures at a ladder point leave that
/// row flagged with the error kind, the other rows intact, and first_error set.
inline StudyResult run_study(const StudyConfig& cfg) {
  cfg.validate();
  StudyResult res;
  res.table.study = cfg.label;
  res.table.problem = to_string(cfg.problem.tag);
  res.table.ladder = cfg.ladder.name;
  res.notes.push_back("study " + cfg.label + " (" + to_string(cfg.kind) + "), ladder " + cfg.ladder.name + " with " +
                      std::to_string(cfg.ladder.values.size()) + " points, seed " + std::to_string(cfg.seed));
  switch (cfg.kind) {
    case StudyKind::FemRate: detail::run_fem_rate(cfg, res); break;
    case StudyKind::SurrogateError: detail::run_surrogate_error(cfg, res); break;
    case StudyKind::RegRate: detail::run_reg_rate(cfg, res); break;
    case StudyKind::MollifyRate: detail::run_mollify_rate(cfg, res); break;
  }
  return res;
}

}  // namespace opreg

// opreg_cli: training sets, surrogates, single inverse solves and rate studies.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "opreg/config.hpp"
#include "opreg/study.hpp"
#include "opreg/verify.hpp"

namespace {

using namespace opreg;

struct GlobalOptions {
  std::string config;
  std::optional<long long> seed;
  std::string out;
  std::optional<std::size_t> jobs;
  bool quiet = false;
};

ConfigFile load_config(const GlobalOptions& g) {
  require(!g.config.empty(), ErrorKind::ConfigInvalid, "this command needs --config <path>");
  ConfigFile f = ConfigFile::load(g.config);
  if (g.seed) f.set("seed", std::to_string(*g.seed));
  if (g.jobs) f.set("jobs", std::to_string(*g.jobs));
  return f;
}

void warn_unused(const ConfigFile& f, const GlobalOptions& g) {
  if (g.quiet) return;
  for (const auto& k : f.unused_keys()) std::cerr << "warning: config key '" << k << "' was not used\n";
}

// Writes to path, or to stdout when it is empty.
void emit(const std::string& path, const std::string& text) {
  if (path.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream os(path);
  require(static_cast<bool>(os), ErrorKind::ConfigInvalid, "cannot write '" + path + "'");
  os << text;
}

std::string runs_path(const std::string& out) {
  std::filesystem::path p(out);
  const std::string ext = p.has_extension() ? p.extension().string() : ".csv";
  return (p.parent_path() / (p.stem().string() + "_runs" + ext)).string();
}

TrainingSet training_set_for(const ConfigFile& f, const StudyConfig& cfg) {
  if (f.has("training.input")) return read_training_set(TextDocument::load(f.get("training.input")));
  const RateProblem p = make_rate_problem(cfg.problem, cfg.n, cfg.source_weight);
  return generate_for(p, cfg, cfg.training);
}

int cmd_generate(const GlobalOptions& g) {
  const ConfigFile f = load_config(g);
  const StudyConfig cfg = StudyConfig::read_setup(f);
  const TrainingSet ts = training_set_for(f, cfg);
  emit(g.out, training_set_document(ts).str());
  if (!g.quiet) {
    std::cerr << "training set: problem " << to_string(ts.problem.tag) << ", N = " << ts.N() << ", "
              << ts.n_cells() << " cells\n";
  }
  warn_unused(f, g);
  return 0;
}

int cmd_build(const GlobalOptions& g) {
  const ConfigFile f = load_config(g);
  const StudyConfig cfg = StudyConfig::read_setup(f);
  const TrainedSurrogate t = train_from_set(training_set_for(f, cfg), cfg.probes, probe_seed(cfg.seed), cfg.network, true);
  const NeuralSurrogate& ns = *t.neural;
  TextDocument doc;
  doc.set("type", "neural_surrogate");
  write_problem(doc, t.training.problem);
  doc.set("space", std::string(to_string(ns.space)));
  doc.set("branch", std::string(to_string(ns.mode)));
  doc.set("N", ns.N());
  doc.set("nu_N", ns.diagnostics.nu_N);
  doc.set("q_N", ns.diagnostics.q_N);
  doc.set("r_N", ns.diagnostics.r_N);
  doc.set("rho_bound", ns.diagnostics.rho_bound);
  write_grid(doc, "center_x", ns.center_x);
  write_grid(doc, "center_y", ns.center_y);
  write_structured(doc, ns.structured(), "net.");
  emit(g.out, doc.str());
  if (!g.quiet) {
    const auto& d = ns.diagnostics;
    std::cerr << "surrogate: N = " << d.N << ", nu_N = " << format_short(d.nu_N) << ", q_N = " << format_short(d.q_N)
              << ", r_N = " << format_short(d.r_N) << ", rho_bound = " << format_short(d.rho_bound) << '\n';
  }
  warn_unused(f, g);
  return 0;
}

int cmd_solve(const GlobalOptions& g) {
  const ConfigFile f = load_config(g);
  const StudyConfig cfg = StudyConfig::read_setup(f);
  const double delta = f.get_double("regularization.delta");
  require(delta > 0.0, ErrorKind::ConfigInvalid, "regularization.delta must be positive");
  require(cfg.surrogate == "fem" || cfg.surrogate == "neural" || cfg.surrogate == "linear", ErrorKind::ConfigInvalid,
          "regularization.surrogate must be fem, neural or linear");
  const RegularizationSetup setup = prepare_regularization(cfg);
  int code = 0;
  RegularizationRun run;
  try {
    run = solve_point(setup, cfg, delta, cfg.xi, noise_seed(cfg.seed, 0, 0));
  } catch (const StalledSolve& s) {
    run = s.run;
    std::cerr << "error: " << s.what() << " (best iterate reported)\n";
    code = 2;
  }
  emit(g.out, RegularizationRun::csv_header() + "\n" + run.csv_row() + "\n");
  if (!g.quiet) {
    std::cerr << "rho_n = " << format_short(setup.rho) << " (" << setup.rho_source << "), error_X = "
              << format_short(run.error_X) << ", iterations = " << run.iterations << '\n';
  }
  warn_unused(f, g);
  return code;
}

int cmd_study(const GlobalOptions& g) {
  const ConfigFile f = load_config(g);
  const StudyConfig cfg = StudyConfig::from(f);
  const std::string out = g.out.empty() ? cfg.output : g.out;
  const StudyResult res = run_study(cfg);
  if (!g.quiet) {
    std::ostream& log = out.empty() ? std::cerr : std::cout;
    for (const auto& n : res.notes) log << "# " << n << '\n';
    log << "# fitted slope " << format_short(res.table.fitted_slope) << " +- " << format_short(res.table.slope_stderr)
        << '\n';
  }
  emit(out, res.table.csv());
  if (!res.runs.empty() && !out.empty()) emit(runs_path(out), res.runs_csv());
  warn_unused(f, g);
  if (res.failed()) {
    std::cerr << "error: " << to_string(*res.first_error) << " at one or more ladder points; rows flagged in the CSV\n";
    return is_validation_error(*res.first_error) ? 1 : 2;
  }
  return 0;
}

int cmd_verify(const GlobalOptions& g) {
  const auto results = run_invariant_suite();
  bool all = true;
  for (const auto& r : results) {
    all = all && r.passed;
    if (!g.quiet || !r.passed) std::cout << (r.passed ? "PASS " : "FAIL ") << r.group << " (" << r.detail << ")\n";
  }
  return all ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tikhonov regularization with neural-operator surrogates for 1-D elliptic inverse problems"};
  app.require_subcommand(1, 1);
  GlobalOptions g;
  long long seed = 0;
  std::size_t jobs = 1;
  app.add_option("--config", g.config, "config file (key = value, [section] headers, # comments)");
  auto* seed_opt = app.add_option("--seed", seed, "override the config seed");
  app.add_option("--out", g.out, "output path (default: stdout)");
  auto* jobs_opt = app.add_option("--jobs", jobs, "ladder points run concurrently")->check(CLI::PositiveNumber);
  app.add_flag("--quiet", g.quiet, "suppress progress and notes");

  app.add_subcommand("generate", "generate a training set")->fallthrough();
  app.add_subcommand("build", "build a neural surrogate from a training set")->fallthrough();
  app.add_subcommand("solve", "one regularized inverse solve")->fallthrough();
  app.add_subcommand("study", "run a rate study and write its CSV")->fallthrough();
  app.add_subcommand("verify", "run the invariant suite")->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    const auto extra = app.remaining();
    if (!extra.empty() && extra.front().rfind("-", 0) != 0) {
      std::cerr << "error: unknown subcommand '" << extra.front() << "'\n\n" << app.help();
    } else {
      std::cerr << "error: " << e.what() << "\n\n" << app.help();
    }
    return 1;
  }
  if (*seed_opt) g.seed = seed;
  if (*jobs_opt) g.jobs = jobs;

  const std::string cmd = app.get_subcommands().front()->get_name();
  try {
    if (cmd == "generate") return cmd_generate(g);
    if (cmd == "build") return cmd_build(g);
    if (cmd == "solve") return cmd_solve(g);
    if (cmd == "study") return cmd_study(g);
    return cmd_verify(g);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return is_validation_error(e.kind()) ? 1 : 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}

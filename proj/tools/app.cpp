#include "app.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <functional>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "nlcr/constraints.hpp"
#include "nlcr/csv.hpp"
#include "nlcr/evalstats.hpp"
#include "nlcr/guarantee.hpp"
#include "nlcr/reconcile.hpp"
#include "nlcr/simlab.hpp"
#include "nlcr/weights.hpp"

namespace nlcr::app {
namespace {

constexpr const char* version_string = "1.0.0";

struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SolverFlags {
  std::optional<double> eps_kkt, eps_feas;
  std::optional<int> max_iter;
  unsigned jobs = 1;

  void attach(CLI::App* sub) {
    sub->add_option("--eps-kkt", eps_kkt, "stationarity tolerance");
    sub->add_option("--eps-feas", eps_feas, "feasibility tolerance");
    sub->add_option("--max-iter", max_iter, "SQP iteration limit");
    sub->add_option("--jobs", jobs, "worker threads")->check(CLI::PositiveNumber);
  }

  /// Defaults, then NLCR_* environment variables, then flags.
  SqpSettings resolve() const {
    SqpSettings s;
    auto env_double = [](const char* name, double& into) {
      if (const char* v = std::getenv(name)) {
        try {
          into = parse_number(v, 0);
        } catch (const std::exception&) {
          throw InputError(std::string("bad value for ") + name + ": '" + v + "'");
        }
      }
    };
    env_double("NLCR_EPS_KKT", s.eps_kkt);
    env_double("NLCR_EPS_FEAS", s.eps_feas);
    if (const char* v = std::getenv("NLCR_MAX_ITER")) {
      double it = 0;
      try {
        it = parse_number(v, 0);
      } catch (const std::exception&) {
        throw InputError(std::string("bad value for NLCR_MAX_ITER: '") + v + "'");
      }
      s.max_iter = static_cast<int>(it);
    }
    if (eps_kkt) s.eps_kkt = *eps_kkt;
    if (eps_feas) s.eps_feas = *eps_feas;
    if (max_iter) s.max_iter = *max_iter;
    try {
      s.validate();
    } catch (const std::invalid_argument& e) {
      throw InputError(e.what());
    }
    return s;
  }
};

bool is_diagnostic_column(const std::string& name) {
  return name == "status" || name == "iterations" || name == "max_abs_g" || name.rfind("lambda_", 0) == 0;
}

/// Forecast rows: the header names the series; diagnostic columns are
/// dropped when `drop_diagnostics` is set.
struct ForecastTable {
  std::vector<std::string> names;
  std::vector<Eigen::VectorXd> rows;
};

ForecastTable load_forecasts(const std::string& path, bool drop_diagnostics) {
  CsvTable t = read_csv_file(path);
  ForecastTable f;
  std::vector<std::size_t> cols;
  for (std::size_t j = 0; j < t.header.size(); ++j) {
    const auto& h = t.header[j];
    if (drop_diagnostics && is_diagnostic_column(h)) continue;
    if (!is_identifier(h)) throw InputError("invalid series name in header: '" + h + "'");
    for (const auto& seen : f.names)
      if (seen == h) throw InputError("duplicate series in header: '" + h + "'");
    f.names.push_back(h);
    cols.push_back(j);
  }
  Eigen::MatrixXd M = numeric_block(t, cols);
  for (Eigen::Index r = 0; r < M.rows(); ++r) f.rows.emplace_back(M.row(r).transpose());
  return f;
}

ConstraintSystem load_system(const std::vector<std::string>& names, const std::string& path, double tol) {
  std::vector<Expression> gs;
  try {
    gs = load_constraints(path);
  } catch (const ParseError& e) {
    throw InputError(path + ": " + e.what());
  }
  std::set<std::string> known(names.begin(), names.end());
  for (const auto& g : gs)
    for (const auto& v : g.variables())
      if (!known.count(v)) throw InputError("constraint uses series '" + v + "' not present in the forecast header");
  try {
    return ConstraintSystem(names, std::move(gs), tol);
  } catch (const std::invalid_argument& e) {
    throw InputError(e.what());
  }
}

WeightMatrix load_weight(WeightTag tag, const std::string& residuals, const std::vector<std::string>& names) {
  if (tag == WeightTag::ols) return WeightMatrix::identity(static_cast<Eigen::Index>(names.size()));
  if (residuals.empty()) throw InputError(std::string("--weights ") + to_string(tag) + " needs --residuals");
  CsvTable t = read_csv_file(residuals);
  std::vector<std::size_t> cols;
  for (const auto& n : names) {
    auto it = std::find(t.header.begin(), t.header.end(), n);
    if (it == t.header.end()) throw InputError("residuals file has no column '" + n + "'");
    cols.push_back(static_cast<std::size_t>(it - t.header.begin()));
  }
  try {
    return build_weight(ResidualSample(numeric_block(t, cols), names), tag);
  } catch (const ZeroVarianceError& e) {
    throw InputError(e.what());
  } catch (const std::invalid_argument& e) {
    throw InputError(e.what());
  }
}

/// Writes to the --out path, or to `fallback` when none is given.
class Sink {
 public:
  Sink(const std::string& path, std::ostream& fallback) : os_(&fallback) {
    if (!path.empty()) {
      file_ = std::make_unique<std::ofstream>(path);
      if (!*file_) throw InputError("cannot write '" + path + "'");
      os_ = file_.get();
    }
  }
  std::ostream& operator*() { return *os_; }

 private:
  std::unique_ptr<std::ofstream> file_;
  std::ostream* os_;
};

std::string join(const Eigen::VectorXd& v) {
  std::string s;
  for (Eigen::Index i = 0; i < v.size(); ++i) s += (i ? "," : "") + format_number(v[i]);
  return s;
}

// ---------------------------------------------------------------- reconcile

struct ReconcileCmd {
  std::string forecasts, constraints, residuals, out;
  std::string weights = "ols";
  SolverFlags solver;

  void attach(CLI::App& app) {
    auto* s = app.add_subcommand("reconcile", "reconcile forecast rows onto the constraint manifold");
    s->add_option("--forecasts", forecasts, "CSV, header = series names")->required();
    s->add_option("--constraints", constraints, "constraint file, one equation per line")->required();
    s->add_option("--weights", weights, "ols | wls | shr");
    s->add_option("--residuals", residuals, "in-sample residual CSV (wls, shr)");
    s->add_option("--out", out, "output CSV (default stdout)");
    solver.attach(s);
  }

  int run(std::ostream& stdout_, std::ostream& err) {
    SqpSettings sqp = solver.resolve();
    WeightTag tag;
    try {
      tag = parse_weight_tag(weights);
    } catch (const std::invalid_argument& e) {
      throw InputError(e.what());
    }
    ForecastTable f = load_forecasts(forecasts, false);
    ConstraintSystem sys = load_system(f.names, constraints, sqp.eps_feas);
    WeightMatrix w = load_weight(tag, residuals, f.names);
    ReconcileOptions opts;
    opts.sqp = sqp;
    auto items = reconcile_batch(f.rows, sys, w, opts, solver.jobs);

    Sink sink(out, stdout_);
    auto& os = *sink;
    for (std::size_t i = 0; i < f.names.size(); ++i) os << (i ? "," : "") << f.names[i];
    for (std::size_t c = 0; c < sys.count(); ++c) os << ",lambda_" << c + 1;
    os << ",status,iterations,max_abs_g\n";
    std::size_t failed = 0;
    for (std::size_t r = 0; r < items.size(); ++r) {
      const auto& it = items[r];
      if (it.ok()) {
        const auto& res = *it.result;
        bool good = res.coherent();
        failed += !good;
        os << join(res.y_tilde) << ',' << join(res.lambda) << ',' << to_string(res.solver.status) << ','
           << res.solver.iterations << ',' << format_number(res.coherence.max_abs_residual) << '\n';
      } else {
        ++failed;
        err << "row " << r + 1 << ": " << it.error << '\n';
        Eigen::VectorXd nan = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(sys.count()),
                                                        std::numeric_limits<double>::quiet_NaN());
        os << join(f.rows[r]) << ',' << join(nan) << ",evaluation-error,0,nan\n";
      }
    }
    if (failed) {
      err << failed << " of " << items.size() << " rows did not reconcile\n";
      return exit_numerical;
    }
    return exit_ok;
  }
};

// ---------------------------------------------------------------- ball

struct BallCmd {
  std::string forecasts, constraints, residuals;
  std::string weights = "wls";
  std::size_t row = 1;
  bool whiten = false;
  std::vector<std::string> curvature;
  SolverFlags solver;

  void attach(CLI::App& app) {
    auto* s = app.add_subcommand("ball", "guarantee ball around the reconciled forecast");
    s->add_option("--forecasts", forecasts, "CSV, header = series names")->required();
    s->add_option("--constraints", constraints, "constraint file")->required();
    s->add_option("--row", row, "1-based data row to analyse")->check(CLI::PositiveNumber);
    s->add_flag("--whiten", whiten, "work in W^{-1/2} coordinates (needs --residuals)");
    s->add_option("--weights", weights, "wls | shr (with --whiten)");
    s->add_option("--residuals", residuals, "in-sample residual CSV");
    s->add_option("--curvature", curvature, "convex|concave per constraint")->delimiter(',');
    solver.attach(s);
  }

  template <ConstraintModel S>
  int analyse(const Eigen::VectorXd& u_hat, const S& model, const ConstraintSystem& sys, const SqpSettings& sqp,
              const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& back, std::ostream& os,
              std::ostream& err, const Eigen::VectorXd& y_hat) {
    ReconcileOptions opts;
    opts.sqp = sqp;
    auto rec = reconcile(u_hat, model, WeightMatrix::identity(u_hat.size()), opts);
    if (!rec.solver.converged()) {
      err << "reconciliation failed: " << to_string(rec.solver.status) << '\n';
      return exit_numerical;
    }
    GuaranteeBall ball;
    try {
      ball = guarantee_ball(u_hat, rec.y_tilde, model, sqp);
    } catch (const DegenerateHyperplane& e) {
      err << e.what() << '\n';
      return exit_input;
    } catch (const ConventionMismatch& e) {
      err << e.what() << '\n';
      return exit_numerical;
    }
    os << "series: ";
    for (std::size_t i = 0; i < sys.size(); ++i) os << (i ? "," : "") << sys.series()[i];
    os << "\nmetric: " << (whiten ? "whitened" : "euclidean") << '\n';
    os << "y_hat: " << join(y_hat) << '\n';
    os << "y_tilde: " << join(back(rec.y_tilde)) << '\n';
    if (ball.finite()) {
      os << "radius: " << format_number(ball.radius) << '\n';
      os << "radius_algebraic: " << format_number(ball.radius_algebraic) << '\n';
      os << "y_breve: " << join(back(*ball.y_breve)) << '\n';
      os << "kappa: " << join(ball.kappa) << '\n';
      os << "mu: " << format_number(ball.mu) << '\n';
      os << "critical_point: " << (ball.detached ? "detached" : "hyperplane") << '\n';
    } else {
      os << "radius: infinite\ny_breve: none\n";
    }
    os << "hyperplane_c: " << format_number(ball.hyperplane_c) << '\n';
    auto regions = sys.classify_region(y_hat);
    os << "region: ";
    for (std::size_t c = 0; c < regions.size(); ++c) os << (c ? "," : "") << "g" << c + 1 << '=' << to_string(regions[c]);
    os << '\n';
    if (!curvature.empty()) {
      std::vector<Curvature> tags;
      for (const auto& t : curvature) {
        if (t == "convex") tags.push_back(Curvature::convex);
        else if (t == "concave") tags.push_back(Curvature::concave);
        else throw InputError("curvature tag must be convex or concave, got '" + t + "'");
      }
      if (tags.size() != sys.count()) throw InputError("need one --curvature tag per constraint");
      os << "hypograph_guarantee: " << (hypograph_guarantee(y_hat, sys, tags) ? "true" : "false") << '\n';
    }
    return exit_ok;
  }

  int run(std::ostream& os, std::ostream& err) {
    SqpSettings sqp = solver.resolve();
    ForecastTable f = load_forecasts(forecasts, true);
    if (row > f.rows.size()) throw InputError("forecast file has only " + std::to_string(f.rows.size()) + " rows");
    ConstraintSystem sys = load_system(f.names, constraints, sqp.eps_feas);
    const Eigen::VectorXd& y_hat = f.rows[row - 1];
    if (!whiten) return analyse(y_hat, sys, sys, sqp, [](const Eigen::VectorXd& v) { return v; }, os, err, y_hat);
    WeightTag tag;
    try {
      tag = parse_weight_tag(weights);
    } catch (const std::invalid_argument& e) {
      throw InputError(e.what());
    }
    WeightMatrix w = load_weight(tag, residuals, f.names);
    WhitenedConstraints<ConstraintSystem> ws(sys, w.lower_factor());
    return analyse(ws.to_whitened(y_hat), ws, sys, sqp,
                   [&](const Eigen::VectorXd& u) { return ws.from_whitened(u); }, os, err, y_hat);
  }
};

// ---------------------------------------------------------------- simulate

struct SimulateCmd {
  std::string which, out;
  std::optional<double> beta;
  std::optional<std::size_t> reps;
  std::uint64_t seed = 1;
  SolverFlags solver;

  void attach(CLI::App& app) {
    auto* s = app.add_subcommand("simulate", "Monte Carlo studies (sim1: quartic, sim2: ratio)");
    s->add_option("study", which, "sim1 | sim2")->required()->check(CLI::IsMember({"sim1", "sim2"}));
    s->add_option("--beta", beta, "sim1: normal displacement of the base forecasts");
    s->add_option("--reps", reps, "sim1: replications per grid point; sim2: truths per correlation")
        ->check(CLI::PositiveNumber);
    s->add_option("--seed", seed, "RNG seed");
    s->add_option("--out", out, "output CSV (default stdout)");
    solver.attach(s);
  }

  int run(std::ostream& stdout_, std::ostream& err) {
    SqpSettings sqp = solver.resolve();
    Sink sink(out, stdout_);
    if (which == "sim1") {
      Sim1Config cfg;
      if (beta) cfg.beta = *beta;
      if (reps) cfg.reps = *reps;
      cfg.seed = seed;
      cfg.sqp = sqp;
      auto cells = run_sim1(cfg, WeightMatrix::identity(2), solver.jobs);
      write_sim1_csv(*sink, cells);
      std::size_t imp = 0, tot = 0, fail = 0;
      for (const auto& c : cells) imp += c.improved, tot += c.reps, fail += c.failures;
      err << "sim1 pooled proportion " << format_number(static_cast<double>(imp) / static_cast<double>(tot))
          << " (" << fail << " solver failures)\n";
    } else {
      if (beta) throw InputError("--beta applies to sim1 only");
      Sim2Config cfg;
      if (reps) cfg.truths_per_rho = *reps;
      cfg.seed = seed;
      cfg.sqp = sqp;
      std::vector<Sim2Cell> cells;
      try {
        cells = run_sim2(cfg, WeightMatrix::identity(3), solver.jobs);
      } catch (const RedrawExhausted& e) {
        err << e.what() << '\n';
        return exit_numerical;
      }
      write_sim2_csv(*sink, cells);
      double lo = 1.0;
      for (const auto& c : cells) lo = std::min(lo, c.proportion());
      err << "sim2 minimum cell proportion " << format_number(lo) << '\n';
    }
    return exit_ok;
  }
};

// ---------------------------------------------------------------- evaluate

struct EvaluateCmd {
  std::string base, actuals, out;
  std::vector<std::string> methods;
  int horizons = 0;

  void attach(CLI::App& app) {
    auto* s = app.add_subcommand("evaluate", "accuracy report against a base panel");
    s->add_option("--base", base, "long CSV: series,horizon,origin,value")->required();
    s->add_option("--method", methods, "NAME=PATH (repeatable)")->required();
    s->add_option("--actuals", actuals, "long CSV of realised values")->required();
    s->add_option("--horizons", horizons, "use horizons 1..H (default: all)");
    s->add_option("--out", out, "report file (default stdout)");
  }

  static std::vector<LongRecord> load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open '" + path + "'");
    return read_long_csv(in);
  }

  int run(std::ostream& stdout_, std::ostream&) {
    auto act = load(actuals);
    ForecastPanel bp;
    try {
      bp = make_panel(load(base), act);
    } catch (const std::invalid_argument& e) {
      throw InputError(base + ": " + e.what());
    }
    std::vector<std::pair<std::string, ForecastPanel>> panels{{"base", bp}};
    for (const auto& spec : methods) {
      auto eq = spec.find('=');
      std::string name = eq == std::string::npos ? spec : spec.substr(0, eq);
      std::string path = eq == std::string::npos ? spec : spec.substr(eq + 1);
      ForecastPanel p;
      try {
        p = make_panel(load(path), act);
      } catch (const std::invalid_argument& e) {
        throw InputError(path + ": " + e.what());
      }
      if (!p.same_index(bp)) throw InputError("method '" + name + "' does not cover the base panel's index set");
      panels.emplace_back(name, std::move(p));
    }
    const auto series = bp.series_names();

    Sink sink(out, stdout_);
    auto& os = *sink;
    os << "# rmse\nmethod,series,rmse\n";
    Eigen::MatrixXd table(static_cast<Eigen::Index>(panels.size()), static_cast<Eigen::Index>(series.size()));
    for (std::size_t m = 0; m < panels.size(); ++m)
      for (std::size_t s = 0; s < series.size(); ++s) {
        double r = rmse_combined(panels[m].second, series[s], horizons);
        table(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(s)) = r;
        os << panels[m].first << ',' << series[s] << ',' << format_number(r) << '\n';
      }

    os << "\n# gmrmse\nmethod,gmrmse\n";
    for (const auto& [name, p] : panels) {
      double g;
      try {
        g = gm_rmse(p, bp, series, horizons);
      } catch (const std::domain_error& e) {
        throw NumericalError(e.what());
      }
      os << name << ',' << format_number(g) << '\n';
    }

    os << "\n# dm\nmethod,series,horizon,n,statistic,p_value,degenerate\n";
    for (std::size_t m = 1; m < panels.size(); ++m)
      for (const auto& s : series)
        for (const auto& [h, origins] : bp.series(s)) {
          if (horizons > 0 && h > horizons) continue;
          const auto& mo = panels[m].second.series(s).at(h);
          std::vector<double> la, lb;
          for (const auto& [l, c] : mo) la.push_back(c.error() * c.error());
          for (const auto& [l, c] : origins) lb.push_back(c.error() * c.error());
          os << panels[m].first << ',' << s << ',' << h << ',' << la.size() << ',';
          if (la.size() < 5 || static_cast<std::size_t>(h) >= la.size()) {
            os << "nan,nan,skipped\n";
            continue;
          }
          auto dm = diebold_mariano(la, lb, h);
          os << format_number(dm.statistic) << ',' << format_number(dm.p_value) << ','
             << (dm.degenerate ? "true" : "false") << '\n';
        }

    if (series.size() >= 2) {
      auto mcb = mcb_nemenyi(table);
      os << "\n# mcb\nmethod,mean_rank,lower,upper\n";
      for (std::size_t m = 0; m < panels.size(); ++m)
        os << panels[m].first << ',' << format_number(mcb.mean_ranks[m]) << ','
           << format_number(mcb.intervals[m].first) << ',' << format_number(mcb.intervals[m].second) << '\n';
      os << "\n# summary\ncritical_distance," << format_number(mcb.critical_distance) << '\n';
      if (mcb.friedman_degenerate)
        os << "friedman_statistic,nan\nfriedman_p_value,nan\nfriedman_degenerate,true\n";
      else
        os << "friedman_statistic," << format_number(mcb.friedman_statistic) << "\nfriedman_p_value,"
           << format_number(mcb.friedman_p_value) << "\nfriedman_degenerate,false\n";
    }
    return exit_ok;
  }
};

// ---------------------------------------------------------------- check

struct CheckCmd {
  std::string forecasts, constraints;
  double tol = default_feasibility_tolerance;

  void attach(CLI::App& app) {
    auto* s = app.add_subcommand("check", "verify that every row satisfies the constraints");
    s->add_option("--forecasts", forecasts, "CSV; diagnostic columns are ignored")->required();
    s->add_option("--constraints", constraints, "constraint file")->required();
    s->add_option("--tol", tol, "max |g| accepted as coherent")->check(CLI::PositiveNumber);
  }

  int run(std::ostream& os, std::ostream& err) {
    ForecastTable f = load_forecasts(forecasts, true);
    ConstraintSystem sys = load_system(f.names, constraints, tol);
    std::size_t bad = 0;
    os << "row,max_abs_g,coherent\n";
    for (std::size_t r = 0; r < f.rows.size(); ++r) {
      double m = std::numeric_limits<double>::infinity();
      bool ok = false;
      try {
        auto rep = sys.coherence(f.rows[r]);
        m = rep.max_abs_residual;
        ok = rep.coherent;
      } catch (const EvalError&) {
      }
      bad += !ok;
      os << r + 1 << ',' << format_number(m) << ',' << (ok ? "true" : "false") << '\n';
    }
    if (bad) {
      err << bad << " of " << f.rows.size() << " rows are not coherent\n";
      return exit_check_failed;
    }
    return exit_ok;
  }
};

void print_version(std::ostream& os) {
  SqpSettings d;
  os << "nlcr " << version_string << '\n'
     << "solver: equality-constrained SQP, damped BFGS (theta " << d.damping << "), L1 merit line search\n"
     << "eps_kkt " << d.eps_kkt << "\neps_feas " << d.eps_feas << "\nmax_iter " << d.max_iter << '\n'
     << "armijo " << d.armijo << "\nbacktrack " << d.backtrack << "\nrank_tol " << d.rank_tol << '\n'
     << "coherence_tol " << default_feasibility_tolerance << '\n';
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Non-linearly constrained forecast reconciliation"};
  app.name(args.empty() ? "nlcr" : args[0]);
  bool version = false;
  app.add_flag("--version", version, "print version and solver defaults");
  app.require_subcommand(0, 1);

  ReconcileCmd reconcile_cmd;
  BallCmd ball_cmd;
  SimulateCmd simulate_cmd;
  EvaluateCmd evaluate_cmd;
  CheckCmd check_cmd;
  reconcile_cmd.attach(app);
  ball_cmd.attach(app);
  simulate_cmd.attach(app);
  evaluate_cmd.attach(app);
  check_cmd.attach(app);

  // CLI11 consumes the arguments back to front.
  std::vector<std::string> rev(args.begin() + (args.empty() ? 0 : 1), args.end());
  std::reverse(rev.begin(), rev.end());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return exit_ok;
  } catch (const CLI::ParseError& e) {
    err << e.what() << '\n';
    return exit_input;
  }
  if (version) {
    print_version(out);
    return exit_ok;
  }

  try {
    if (app.got_subcommand("reconcile")) return reconcile_cmd.run(out, err);
    if (app.got_subcommand("ball")) return ball_cmd.run(out, err);
    if (app.got_subcommand("simulate")) return simulate_cmd.run(out, err);
    if (app.got_subcommand("evaluate")) return evaluate_cmd.run(out, err);
    if (app.got_subcommand("check")) return check_cmd.run(out, err);
  } catch (const InputError& e) {
    err << "error: " << e.what() << '\n';
    return exit_input;
  } catch (const CsvError& e) {
    err << "error: " << e.what() << '\n';
    return exit_input;
  } catch (const NumericalError& e) {
    err << "error: " << e.what() << '\n';
    return exit_numerical;
  } catch (const EvalError& e) {
    err << "error: " << e.what() << '\n';
    return exit_numerical;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return exit_input;
  }
  out << app.help();
  return exit_input;
}

}  // namespace nlcr::app

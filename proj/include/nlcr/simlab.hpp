#pragma once

// Monte Carlo studies of when reconciliation beats the base forecast.
//
// Sim 1: the quartic manifold y1 = y2^4; truths on a y2 grid, base forecasts
// displaced by beta along the unit normal and perturbed by Gaussian noise.
// Sim 2: the ratio manifold y1 = 100 y2 / y3 over a five-parameter grid.
//
// Every cell draws from its own RNG stream keyed by the seed and the cell
// coordinates, so serial and parallel runs give identical results.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <numbers>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "nlcr/constraints.hpp"
#include "nlcr/parallel.hpp"
#include "nlcr/reconcile.hpp"

namespace nlcr {

/// 12 y^2 / (1 + 16 y^6)^2, the curvature diagnostic of the quartic as
/// printed (the textbook plane-curve curvature uses exponent 3/2).
inline double gaussian_curvature_quartic(double y2) {
  double d = 1.0 + 16.0 * std::pow(y2, 6);
  return 12.0 * y2 * y2 / (d * d);
}

inline ConstraintSystem quartic_system() {
  return ConstraintSystem({"y1", "y2"}, parse_constraints("y1 = y2^4"));
}

inline ConstraintSystem ratio_system() {
  return ConstraintSystem({"y1", "y2", "y3"}, parse_constraints("y1 = 100*y2/y3"));
}

namespace detail {

inline std::mt19937_64 stream(std::uint64_t seed, std::initializer_list<std::uint64_t> key) {
  std::vector<std::uint32_t> words;
  auto push = [&](std::uint64_t v) {
    words.push_back(static_cast<std::uint32_t>(v));
    words.push_back(static_cast<std::uint32_t>(v >> 32));
  };
  push(seed);
  for (auto k : key) push(k);
  std::seed_seq seq(words.begin(), words.end());
  return std::mt19937_64(seq);
}

/// 1 when y_tilde is strictly closer to the truth, counted only for
/// converged reconciliations.
template <ConstraintModel S>
bool improves(const Eigen::VectorXd& y_hat, const Eigen::VectorXd& truth, const S& sys,
              const WeightMatrix& w, const SqpSettings& sqp, bool& failed) {
  failed = false;
  try {
    ReconcileOptions opts;
    opts.sqp = sqp;
    auto r = reconcile(y_hat, sys, w, opts);
    if (!r.solver.converged()) {
      failed = true;
      return false;
    }
    return (r.y_tilde - truth).norm() < (y_hat - truth).norm();
  } catch (const std::exception&) {
    failed = true;
    return false;
  }
}

}  // namespace detail

struct Sim1Config {
  std::vector<double> y2_grid = default_grid();
  double beta = 0.0;
  std::size_t reps = 1000;
  double var1 = 0.1;
  double var2 = 0.1;
  std::uint64_t seed = 1;
  SqpSettings sqp{};

  static std::vector<double> default_grid() {
    std::vector<double> g;
    for (int i = -150; i <= 150; ++i) g.push_back(i / 100.0);
    return g;
  }

  void validate() const {
    if (reps < 1) throw std::invalid_argument("reps must be at least 1");
    if (!(var1 > 0.0) || !(var2 > 0.0)) throw std::invalid_argument("noise variances must be positive");
    if (y2_grid.empty()) throw std::invalid_argument("empty y2 grid");
  }
};

struct Sim1Cell {
  double y2 = 0.0;
  double curvature = 0.0;
  double beta = 0.0;
  std::size_t reps = 0;
  std::size_t improved = 0;
  std::size_t failures = 0;

  double proportion() const { return reps ? static_cast<double>(improved) / static_cast<double>(reps) : 0.0; }
  bool operator==(const Sim1Cell&) const = default;
};

/// Unit normal of g = y1 - y2^4 at (y2^4, y2); beta > 0 points into g > 0.
inline Eigen::Vector2d quartic_unit_normal(double y2) {
  Eigen::Vector2d n(1.0, -4.0 * y2 * y2 * y2);
  return n / n.norm();
}

inline std::vector<Sim1Cell> run_sim1(const Sim1Config& cfg, const WeightMatrix& w = WeightMatrix::identity(2),
                                      unsigned jobs = 1) {
  cfg.validate();
  const ConstraintSystem sys = quartic_system();
  std::vector<Sim1Cell> out(cfg.y2_grid.size());
  parallel_for(out.size(), jobs, [&](std::size_t k) {
    const double y2 = cfg.y2_grid[k];
    Eigen::VectorXd truth(2);
    truth << std::pow(y2, 4), y2;
    Eigen::VectorXd centre = truth + cfg.beta * Eigen::VectorXd(quartic_unit_normal(y2));
    auto rng = detail::stream(cfg.seed, {1, k});
    std::normal_distribution<double> e1(0.0, std::sqrt(cfg.var1)), e2(0.0, std::sqrt(cfg.var2));
    Sim1Cell cell{y2, gaussian_curvature_quartic(y2), cfg.beta, cfg.reps, 0, 0};
    for (std::size_t r = 0; r < cfg.reps; ++r) {
      Eigen::VectorXd y_hat = centre;
      y_hat[0] += e1(rng);
      y_hat[1] += e2(rng);
      bool failed = false;
      if (detail::improves(y_hat, truth, sys, w, cfg.sqp, failed)) ++cell.improved;
      if (failed) ++cell.failures;
    }
    out[k] = cell;
  });
  return out;
}

struct Sim2Config {
  double mu2 = 100.0;
  double mu3 = 300.0;
  double var2 = 5.0;
  double var3 = 10.0;
  std::vector<double> rho{-0.8, -0.4, 0.0, 0.4, 0.8};
  std::vector<double> beta{-25.0, -10.0, 0.0, 10.0, 25.0};
  double noise_var = 100.0;
  std::vector<double> gamma{0.5, 1.0, 1.5};
  std::vector<double> m{-std::numbers::pi / 4.0, 0.0};
  std::vector<double> alpha{-50.0, -25.0, 0.0, 25.0, 50.0};
  std::size_t truths_per_rho = 1000;
  std::size_t max_redraws = 100;
  std::uint64_t seed = 1;
  SqpSettings sqp{};

  void validate() const {
    if (truths_per_rho < 1) throw std::invalid_argument("truths_per_rho must be at least 1");
    for (double g : gamma)
      if (!(g > 0.0)) throw std::invalid_argument("gamma must be positive");
    for (double r : rho)
      if (!(std::abs(r) < 1.0)) throw std::invalid_argument("|rho| must be below 1");
    if (!(var2 > 0.0) || !(var3 > 0.0) || !(noise_var > 0.0))
      throw std::invalid_argument("variances must be positive");
    if (rho.empty() || beta.empty() || gamma.empty() || m.empty() || alpha.empty())
      throw std::invalid_argument("every parameter list needs at least one value");
  }

  /// Covariance of (y2, y3) with correlation r.
  Eigen::Matrix2d sigma_b(double r) const {
    Eigen::Matrix2d S;
    const double off = r * std::sqrt(var2 * var3);
    S << var2, off, off, var3;
    return S;
  }

  /// Mean displacement of the base forecasts: length |alpha| along slope tan(m).
  static Eigen::Vector2d delta(double m, double alpha) {
    const double t = std::tan(m);
    return Eigen::Vector2d(1.0, t) * (alpha / std::sqrt(t * t + 1.0));
  }
};

struct Sim2Cell {
  double rho = 0.0;
  double beta = 0.0;
  double gamma = 0.0;
  double m = 0.0;
  double alpha = 0.0;
  std::size_t reps = 0;
  std::size_t improved = 0;
  std::size_t failures = 0;
  std::size_t redraws = 0;

  double proportion() const { return reps ? static_cast<double>(improved) / static_cast<double>(reps) : 0.0; }
  bool operator==(const Sim2Cell&) const = default;
};

class RedrawExhausted : public std::runtime_error {
 public:
  RedrawExhausted() : std::runtime_error("drawn y3 stayed non-positive after the redraw limit") {}
};

/// Truths for one rho; their stream depends on (seed, rho index) only.
/// Draws with y3 <= 0 are redrawn under the same limit as base forecasts.
inline std::vector<Eigen::VectorXd> sim2_truths(const Sim2Config& cfg, std::size_t rho_index) {
  Eigen::Matrix2d L = cfg.sigma_b(cfg.rho.at(rho_index)).llt().matrixL();
  auto rng = detail::stream(cfg.seed, {2, rho_index});
  std::normal_distribution<double> z(0.0, 1.0);
  std::vector<Eigen::VectorXd> out;
  out.reserve(cfg.truths_per_rho);
  std::size_t tries = 0;
  while (out.size() < cfg.truths_per_rho) {
    Eigen::Vector2d b = Eigen::Vector2d(cfg.mu2, cfg.mu3) + L * Eigen::Vector2d(z(rng), z(rng));
    if (!(b[1] > 0.0)) {
      if (++tries > cfg.max_redraws) throw RedrawExhausted();
      continue;
    }
    tries = 0;
    Eigen::VectorXd y(3);
    y << 100.0 * b[0] / b[1], b[0], b[1];
    out.push_back(y);
  }
  return out;
}

inline std::vector<Sim2Cell> run_sim2(const Sim2Config& cfg, const WeightMatrix& w = WeightMatrix::identity(3),
                                      unsigned jobs = 1) {
  cfg.validate();
  const ConstraintSystem sys = ratio_system();
  std::vector<std::vector<Eigen::VectorXd>> truths(cfg.rho.size());
  for (std::size_t r = 0; r < cfg.rho.size(); ++r) truths[r] = sim2_truths(cfg, r);

  struct Index {
    std::size_t rho, beta, gamma, m, alpha;
  };
  std::vector<Index> cells;
  for (std::size_t a = 0; a < cfg.rho.size(); ++a)
    for (std::size_t b = 0; b < cfg.beta.size(); ++b)
      for (std::size_t g = 0; g < cfg.gamma.size(); ++g)
        for (std::size_t m = 0; m < cfg.m.size(); ++m)
          for (std::size_t al = 0; al < cfg.alpha.size(); ++al) cells.push_back({a, b, g, m, al});

  std::vector<Sim2Cell> out(cells.size());
  parallel_for(cells.size(), jobs, [&](std::size_t k) {
    const Index ix = cells[k];
    Sim2Cell cell{cfg.rho[ix.rho], cfg.beta[ix.beta], cfg.gamma[ix.gamma], cfg.m[ix.m], cfg.alpha[ix.alpha],
                  cfg.truths_per_rho, 0, 0, 0};
    const Eigen::Vector2d mean = Eigen::Vector2d(cfg.mu2, cfg.mu3) + Sim2Config::delta(cell.m, cell.alpha);
    const Eigen::Matrix2d L = (cell.gamma * cfg.sigma_b(cell.rho)).llt().matrixL();
    // The m index is left out of the key: where delta vanishes the two m
    // cells share their draws exactly.
    auto rng = detail::stream(cfg.seed, {3, ix.rho, ix.beta, ix.gamma, ix.alpha});
    std::normal_distribution<double> z(0.0, 1.0);
    std::normal_distribution<double> eps(cell.beta, std::sqrt(cfg.noise_var));
    for (const auto& truth : truths[ix.rho]) {
      Eigen::Vector2d b;
      std::size_t tries = 0;
      for (;;) {
        b = mean + L * Eigen::Vector2d(z(rng), z(rng));
        if (b[1] > 0.0) break;
        ++cell.redraws;
        if (++tries > cfg.max_redraws) throw RedrawExhausted();
      }
      Eigen::VectorXd y_hat(3);
      y_hat << 100.0 * b[0] / b[1] + eps(rng), b[0], b[1];
      bool failed = false;
      if (detail::improves(y_hat, truth, sys, w, cfg.sqp, failed)) ++cell.improved;
      if (failed) ++cell.failures;
    }
    out[k] = cell;
  });
  return out;
}

inline void write_sim1_csv(std::ostream& os, const std::vector<Sim1Cell>& cells) {
  auto old = os.precision(17);
  os << "y2,curvature,beta,reps,improved,failures,proportion\n";
  for (const auto& c : cells)
    os << c.y2 << ',' << c.curvature << ',' << c.beta << ',' << c.reps << ',' << c.improved << ','
       << c.failures << ',' << c.proportion() << '\n';
  os.precision(old);
}

inline void write_sim2_csv(std::ostream& os, const std::vector<Sim2Cell>& cells) {
  auto old = os.precision(17);
  os << "rho,beta,gamma,m,alpha,reps,improved,failures,redraws,proportion\n";
  for (const auto& c : cells)
    os << c.rho << ',' << c.beta << ',' << c.gamma << ',' << c.m << ',' << c.alpha << ',' << c.reps << ','
       << c.improved << ',' << c.failures << ',' << c.redraws << ',' << c.proportion() << '\n';
  os.precision(old);
}

}  // namespace nlcr

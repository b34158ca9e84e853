#pragma once

// Accuracy guarantees for a reconciled forecast under W = I.
//
// The hyperplane H bisecting y_hat and y_tilde splits space into points closer
// to y_tilde and points closer to y_hat. The critical point y_breve is the
// point of M intersect H nearest to y_tilde; every coherent y strictly inside
// the ball B(y_tilde, r = |y_tilde - y_breve|) is forecast better by y_tilde.
// When M and H do not meet, r is infinite.
//
// That argument walks along M from y_tilde, so it needs B intersect M to be
// connected. A separate piece of M lying wholly on y_hat's side of H can come
// closer than the nearest crossing (the quartic's second branch does). Local
// nearest points of M on that side are searched for as well; when one wins it
// becomes y_breve with mu = 0 and the ball is flagged `detached`.
//
// Multiplier conventions:
//   hyperplane normal  J~ lambda = y_hat - y_tilde
//   critical point     2 (v - y_tilde) + J(v) kappa + mu J~ lambda = 0
//   radius (algebraic) r^2 = k'J'J k + mu k'J'(J~ lambda) + mu^2/4 |J~ lambda|^2
//                      with J = 0.5 * Jacobian at y_breve.
// The reported radius is the direct distance; the algebraic value is kept as
// a cross-check.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "nlcr/constraints.hpp"
#include "nlcr/sqp.hpp"
#include "nlcr/weights.hpp"

namespace nlcr {

class DegenerateHyperplane : public std::runtime_error {
 public:
  DegenerateHyperplane()
      : std::runtime_error("base forecast is already coherent: no separating hyperplane") {}
};

class ConventionMismatch : public std::runtime_error {
 public:
  ConventionMismatch(double algebraic, double direct)
      : std::runtime_error("radius algebra disagrees with distance to critical point (" +
                           std::to_string(algebraic) + " vs " + std::to_string(direct) + ")"),
        algebraic_(algebraic),
        direct_(direct) {}
  double algebraic() const noexcept { return algebraic_; }
  double direct() const noexcept { return direct_; }

 private:
  double algebraic_;
  double direct_;
};

struct Hyperplane {
  Eigen::VectorXd normal;    // y_hat - y_tilde
  double offset = 0.0;       // c: the plane is {v : v'normal = c}
  Eigen::VectorXd midpoint;  // (y_hat + y_tilde) / 2
  Eigen::VectorXd lambda;    // least-squares solution of J~ lambda = normal
  Eigen::VectorXd jacobian_lambda;

  double residual(const Eigen::VectorXd& v) const { return v.dot(normal) - offset; }
};

template <ConstraintModel S>
Hyperplane separating_hyperplane(const Eigen::VectorXd& y_hat, const Eigen::VectorXd& y_tilde,
                                 const S& sys) {
  Hyperplane h;
  h.normal = y_hat - y_tilde;
  if (h.normal.norm() <= 1e-12 * (1.0 + y_hat.norm())) throw DegenerateHyperplane();
  h.offset = y_tilde.dot(h.normal) + 0.5 * h.normal.squaredNorm();
  h.midpoint = 0.5 * (y_hat + y_tilde);
  Eigen::MatrixXd J = sys.jacobian(y_tilde);
  h.lambda = J.colPivHouseholderQr().solve(h.normal);
  h.jacobian_lambda = J * h.lambda;
  return h;
}

struct CriticalPoint {
  bool intersects = false;
  Eigen::VectorXd y_breve;
  Eigen::VectorXd kappa;
  double mu = 0.0;
  SqpResult solver;
};

namespace detail {

template <ConstraintModel S>
class CriticalPointModel {
 public:
  CriticalPointModel(const S& sys, const Eigen::VectorXd& center, const Hyperplane& h)
      : sys_(sys), center_(center), h_(h) {}

  double objective(const Eigen::VectorXd& v) const { return (v - center_).squaredNorm(); }
  Eigen::VectorXd gradient(const Eigen::VectorXd& v) const { return 2.0 * (v - center_); }
  Eigen::VectorXd constraints(const Eigen::VectorXd& v) const {
    Eigen::VectorXd g(static_cast<Eigen::Index>(sys_.count()) + 1);
    g.head(static_cast<Eigen::Index>(sys_.count())) = sys_.evaluate_g(v);
    g[g.size() - 1] = h_.residual(v);
    return g;
  }
  Eigen::MatrixXd jacobian(const Eigen::VectorXd& v) const {
    const auto C = static_cast<Eigen::Index>(sys_.count());
    Eigen::MatrixXd J(v.size(), C + 1);
    J.leftCols(C) = sys_.jacobian(v);
    J.col(C) = h_.normal;
    return J;
  }

 private:
  const S& sys_;
  const Eigen::VectorXd& center_;
  const Hyperplane& h_;
};

}  // namespace detail

/// Start points for the critical-point search: y_tilde, the midpoint, y_hat,
/// and steps from y_tilde along the tangent space of M (each basis direction
/// and, for two or more dimensions, their pairwise diagonals, both signs) at
/// multiples of |y_hat - y_tilde|.
template <ConstraintModel S>
std::vector<Eigen::VectorXd> critical_point_starts(const Eigen::VectorXd& y_tilde, const S& sys,
                                                   const Hyperplane& h) {
  std::vector<Eigen::VectorXd> starts{y_tilde, h.midpoint, Eigen::VectorXd(2.0 * h.midpoint - y_tilde)};
  const Eigen::MatrixXd J = sys.jacobian(y_tilde);
  const Eigen::Index n = J.rows(), C = J.cols();
  if (n <= C) return starts;
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(J);
  const Eigen::MatrixXd Q = qr.householderQ();
  const Eigen::MatrixXd T = Q.rightCols(n - C);
  std::vector<Eigen::VectorXd> dirs;
  for (Eigen::Index i = 0; i < T.cols(); ++i) {
    dirs.push_back(T.col(i));
    for (Eigen::Index j = i + 1; j < T.cols(); ++j) {
      dirs.push_back((T.col(i) + T.col(j)) / std::sqrt(2.0));
      dirs.push_back((T.col(i) - T.col(j)) / std::sqrt(2.0));
    }
  }
  const double scale = h.normal.norm();
  for (double k : {0.5, 1.0, 2.0, 4.0, 8.0})
    for (const auto& d : dirs)
      for (double sgn : {1.0, -1.0}) starts.push_back(y_tilde + sgn * k * scale * d);
  return starts;
}

/// Nearest point to y_tilde on M intersect H over a multistart search (see
/// critical_point_starts); the closest converged solution wins. No converged
/// start means the sets do not meet.
template <ConstraintModel S>
CriticalPoint critical_point(const Eigen::VectorXd& y_tilde, const S& sys, const Hyperplane& h,
                             const SqpSettings& settings = {}) {
  detail::CriticalPointModel<S> model(sys, y_tilde, h);
  const auto starts = critical_point_starts(y_tilde, sys, h);
  CriticalPoint best;
  double best_dist = std::numeric_limits<double>::infinity();
  for (const auto& y0 : starts) {
    SqpResult r;
    try {
      r = sqp_solve(model, y0, settings);
    } catch (const EvalError&) {
      continue;
    }
    if (!r.converged()) {
      if (!best.intersects) best.solver = r;
      continue;
    }
    double dist = (r.solution - y_tilde).norm();
    if (dist < best_dist) {
      best_dist = dist;
      best.intersects = true;
      best.y_breve = r.solution;
      const auto C = static_cast<Eigen::Index>(sys.count());
      best.kappa = -r.multipliers.head(C);
      best.mu = -r.multipliers[C];
      best.solver = std::move(r);
    }
  }
  return best;
}

namespace detail {

template <ConstraintModel S>
class NearestPointModel {
 public:
  NearestPointModel(const S& sys, const Eigen::VectorXd& center) : sys_(sys), center_(center) {}

  double objective(const Eigen::VectorXd& v) const { return (v - center_).squaredNorm(); }
  Eigen::VectorXd gradient(const Eigen::VectorXd& v) const { return 2.0 * (v - center_); }
  Eigen::VectorXd constraints(const Eigen::VectorXd& v) const { return sys_.evaluate_g(v); }
  Eigen::MatrixXd jacobian(const Eigen::VectorXd& v) const { return sys_.jacobian(v); }

 private:
  const S& sys_;
  const Eigen::VectorXd& center_;
};

}  // namespace detail

/// Nearest local minimiser of |v - y_tilde| on M lying strictly on y_hat's
/// side of H, from starts y_tilde + s * reach * d with d ranging over the
/// coordinate axes, the tangent basis and the hyperplane normal (both signs)
/// and s in {1/4, 1/2, 1}. intersects = false when none is found.
template <ConstraintModel S>
CriticalPoint detached_point(const Eigen::VectorXd& y_tilde, const S& sys, const Hyperplane& h, double reach,
                             const SqpSettings& settings = {}) {
  detail::NearestPointModel<S> model(sys, y_tilde);
  const Eigen::Index n = y_tilde.size();
  const Eigen::MatrixXd J = sys.jacobian(y_tilde);
  const Eigen::Index C = J.cols();
  std::vector<Eigen::VectorXd> dirs;
  for (Eigen::Index i = 0; i < n; ++i) dirs.push_back(Eigen::VectorXd::Unit(n, i));
  if (n > C) {
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(J);
    const Eigen::MatrixXd Q = qr.householderQ();
    for (Eigen::Index i = C; i < n; ++i) dirs.push_back(Q.col(i));
  }
  dirs.push_back(h.normal.normalized());
  CriticalPoint best;
  double best_dist = std::numeric_limits<double>::infinity();
  for (double s : {0.25, 0.5, 1.0})
    for (const auto& d : dirs)
      for (double sgn : {1.0, -1.0}) {
        SqpResult r;
        try {
          r = sqp_solve(model, Eigen::VectorXd(y_tilde + sgn * s * reach * d), settings);
        } catch (const EvalError&) {
          continue;
        }
        if (!r.converged() || !(h.residual(r.solution) > 0.0)) continue;
        double dist = (r.solution - y_tilde).norm();
        if (dist < best_dist) {
          best_dist = dist;
          best.intersects = true;
          best.y_breve = r.solution;
          best.kappa = -r.multipliers.head(C);
          best.mu = 0.0;
          best.solver = std::move(r);
        }
      }
  return best;
}

struct GuaranteeBall {
  Eigen::VectorXd center;
  double radius = std::numeric_limits<double>::infinity();
  double radius_algebraic = std::numeric_limits<double>::infinity();
  std::optional<Eigen::VectorXd> y_breve;
  Eigen::VectorXd kappa;
  double mu = 0.0;
  double hyperplane_c = 0.0;
  Hyperplane hyperplane;
  bool detached = false;  // y_breve is off H: a separate piece of M on y_hat's side

  bool finite() const noexcept { return std::isfinite(radius); }
  bool contains(const Eigen::VectorXd& y) const { return (y - center).norm() < radius; }
};

/// r from the multipliers, with the Jacobian at y_breve scaled by 1/2.
inline double radius_from_multipliers(const Eigen::MatrixXd& jacobian_breve,
                                      const Eigen::VectorXd& kappa, double mu,
                                      const Eigen::VectorXd& jacobian_lambda) {
  Eigen::VectorXd Jk = 0.5 * jacobian_breve * kappa;
  double r2 = Jk.squaredNorm() + mu * Jk.dot(jacobian_lambda) +
              0.25 * mu * mu * jacobian_lambda.squaredNorm();
  return std::sqrt(std::max(0.0, r2));
}

/// Single-constraint form with scalar multipliers and inner products;
/// j_breve is the gradient at y_breve scaled by 1/2, j_tilde the unscaled
/// gradient at y_tilde.
inline double radius_one_constraint(double kappa, double mu, double lambda,
                                    const Eigen::VectorXd& j_breve, const Eigen::VectorXd& j_tilde) {
  double r2 = kappa * kappa * j_breve.dot(j_breve) + mu * kappa * lambda * j_breve.dot(j_tilde) +
              0.25 * mu * mu * lambda * lambda * j_tilde.dot(j_tilde);
  return std::sqrt(std::max(0.0, r2));
}

/// Builds the guarantee ball around y_tilde. Throws DegenerateHyperplane for
/// a coherent y_hat and ConventionMismatch when the multiplier algebra and
/// the direct distance disagree by more than `mismatch_tol`.
template <ConstraintModel S>
GuaranteeBall guarantee_ball(const Eigen::VectorXd& y_hat, const Eigen::VectorXd& y_tilde,
                             const S& sys, const SqpSettings& settings = {},
                             double mismatch_tol = 1e-4) {
  GuaranteeBall ball;
  ball.center = y_tilde;
  ball.hyperplane = separating_hyperplane(y_hat, y_tilde, sys);
  ball.hyperplane_c = ball.hyperplane.offset;
  CriticalPoint cp = critical_point(y_tilde, sys, ball.hyperplane, settings);
  const double reach = cp.intersects ? (y_tilde - cp.y_breve).norm()
                                     : 4.0 * std::max({1.0, y_tilde.norm(), ball.hyperplane.normal.norm()});
  CriticalPoint off = detached_point(y_tilde, sys, ball.hyperplane, reach, settings);
  if (off.intersects && (!cp.intersects || (y_tilde - off.y_breve).norm() < reach)) {
    cp = std::move(off);
    ball.detached = true;
  }
  if (!cp.intersects) return ball;
  ball.y_breve = cp.y_breve;
  ball.kappa = cp.kappa;
  ball.mu = cp.mu;
  ball.radius = (y_tilde - cp.y_breve).norm();
  // The second problem constrains v'normal = c, so its stationarity
  // condition carries the normal itself; J~ lambda equals it only when
  // y_tilde is an exact projection of y_hat.
  ball.radius_algebraic = radius_from_multipliers(sys.jacobian(cp.y_breve), cp.kappa, cp.mu,
                                                  ball.hyperplane.normal);
  if (std::abs(ball.radius_algebraic - ball.radius) > mismatch_tol)
    throw ConventionMismatch(ball.radius_algebraic, ball.radius);
  return ball;
}

/// d(y_tilde, y) < d(y_hat, y).
inline bool improvement_holds(const Eigen::VectorXd& y, const Eigen::VectorXd& y_hat,
                              const Eigen::VectorXd& y_tilde) {
  return (y - y_tilde).squaredNorm() < (y - y_hat).squaredNorm();
}

/// Caller-supplied shape of each constraint function g_c.
enum class Curvature { convex, concave };

/// True when y_hat lies strictly in the hypograph {h_c > 0} of every
/// constraint written in its convex orientation h_c = g_c (convex) or
/// h_c = -g_c (concave). Under that condition reconciliation improves on
/// y_hat for every coherent y.
inline bool hypograph_guarantee(const Eigen::VectorXd& y_hat, const ConstraintSystem& sys,
                                std::span<const Curvature> shape) {
  if (shape.size() != sys.count())
    throw std::invalid_argument("need one curvature tag per constraint");
  Eigen::VectorXd g = sys.evaluate_g(y_hat);
  for (std::size_t c = 0; c < sys.count(); ++c) {
    double oriented = shape[c] == Curvature::convex ? g[static_cast<Eigen::Index>(c)]
                                                    : -g[static_cast<Eigen::Index>(c)];
    if (!(oriented > sys.tolerance())) return false;
  }
  return true;
}

/// Draws coherent points: the free coordinates are uniform in the box
/// center +/- half_width, the `dependent` coordinates (one per constraint) are
/// solved by Newton's method. Only points with |y - center| < radius are kept.
template <class Rng>
std::vector<Eigen::VectorXd> sample_coherent_points(const ConstraintSystem& sys,
                                                    const Eigen::VectorXd& center, double half_width,
                                                    const std::vector<std::size_t>& dependent,
                                                    std::size_t count, Rng& rng,
                                                    double radius = std::numeric_limits<double>::infinity(),
                                                    std::size_t max_tries = 1000000) {
  if (dependent.size() != sys.count())
    throw std::invalid_argument("need one dependent coordinate per constraint");
  const auto n = static_cast<Eigen::Index>(sys.size());
  const auto C = static_cast<Eigen::Index>(sys.count());
  std::vector<bool> is_dep(sys.size(), false);
  for (auto d : dependent) is_dep.at(d) = true;
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::vector<Eigen::VectorXd> out;
  for (std::size_t tries = 0; out.size() < count && tries < max_tries; ++tries) {
    Eigen::VectorXd y = center;
    for (Eigen::Index i = 0; i < n; ++i)
      if (!is_dep[static_cast<std::size_t>(i)]) y[i] = center[i] + half_width * unit(rng);
    bool ok = false;
    try {
      for (int it = 0; it < 60; ++it) {
        Eigen::VectorXd g = sys.evaluate_g(y);
        if (g.lpNorm<Eigen::Infinity>() <= 1e-13 * (1.0 + y.lpNorm<Eigen::Infinity>())) {
          ok = true;
          break;
        }
        Eigen::MatrixXd J = sys.jacobian(y);
        Eigen::MatrixXd Jd(C, C);
        for (Eigen::Index c = 0; c < C; ++c)
          Jd.col(c) = J.row(static_cast<Eigen::Index>(dependent[static_cast<std::size_t>(c)])).transpose();
        // Jd(k, c) = d g_k / d y_dep[c]
        Eigen::VectorXd step = Jd.fullPivLu().solve(g);
        if (!step.allFinite()) break;
        for (Eigen::Index c = 0; c < C; ++c)
          y[static_cast<Eigen::Index>(dependent[static_cast<std::size_t>(c)])] -= step[c];
      }
    } catch (const EvalError&) {
      ok = false;
    }
    if (ok && (y - center).norm() < radius) out.push_back(y);
  }
  return out;
}

}  // namespace nlcr

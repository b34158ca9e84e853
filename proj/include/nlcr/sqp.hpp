#pragma once

// Equality-constrained SQP with a damped-BFGS Hessian approximation and an
// L1 exact-penalty backtracking line search.
//
// Each iteration solves the QP subproblem
//   min_d  0.5 d'B d + grad'd   s.t.  g + A d = 0      (A = J', C x n)
// whose KKT conditions are  B d + grad = A' lambda,  A d = -g.  The iterate
// is accepted as optimal when ||grad - J lambda||_2 <= eps_kkt and
// ||g||_inf <= eps_feas.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <concepts>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "nlcr/expr.hpp"

namespace nlcr {

struct SqpSettings {
  double eps_kkt = 1e-8;
  double eps_feas = 1e-8;
  int max_iter = 500;
  double armijo = 1e-4;
  double backtrack = 0.5;
  double min_step = 1e-12;
  double damping = 0.2;     // Powell damping threshold on s'Bs
  double rank_tol = 1e-12;  // relative pivot threshold for rank(J)
  bool record_trace = false;

  void validate() const {
    if (!(eps_kkt > 0.0) || !(eps_feas > 0.0)) throw std::invalid_argument("SQP tolerances must be positive");
    if (max_iter < 1) throw std::invalid_argument("SQP max_iter must be >= 1");
    if (!(armijo > 0.0 && armijo < 0.5)) throw std::invalid_argument("armijo constant must be in (0, 0.5)");
    if (!(backtrack > 0.0 && backtrack < 1.0)) throw std::invalid_argument("backtrack factor must be in (0, 1)");
    if (!(min_step > 0.0 && min_step < 1.0)) throw std::invalid_argument("min_step must be in (0, 1)");
    if (!(damping > 0.0 && damping < 1.0)) throw std::invalid_argument("damping must be in (0, 1)");
  }
};

enum class SqpStatus { converged, max_iterations, qp_failure, line_search_failure };

inline const char* to_string(SqpStatus s) {
  switch (s) {
    case SqpStatus::converged: return "converged";
    case SqpStatus::max_iterations: return "max-iterations";
    case SqpStatus::qp_failure: return "qp-failure";
    case SqpStatus::line_search_failure: return "line-search-failure";
  }
  return "?";
}

/// One accepted line-search step: merit before/after under the same penalty.
struct MeritStep {
  double penalty;
  double before;
  double after;
  double step;
  double slack;  // roundoff allowance in the acceptance test
};

struct SqpResult {
  Eigen::VectorXd solution;
  Eigen::VectorXd multipliers;
  int iterations = 0;
  SqpStatus status = SqpStatus::max_iterations;
  double kkt_norm = std::numeric_limits<double>::infinity();
  double feas_norm = std::numeric_limits<double>::infinity();
  std::string message;
  std::vector<MeritStep> trace;

  bool converged() const noexcept { return status == SqpStatus::converged; }
};

class QpFailure : public std::runtime_error {
 public:
  QpFailure(const std::string& what, std::size_t constraint)
      : std::runtime_error(what), constraint_(constraint) {}
  std::size_t constraint() const noexcept { return constraint_; }

 private:
  std::size_t constraint_;
};

struct QpSolution {
  Eigen::VectorXd d;
  Eigen::VectorXd lambda;
};

/// Solves the equality QP through its KKT system. `A` is C x n (rows are
/// constraint gradients). Throws QpFailure when A is rank deficient or B is
/// not positive definite.
inline QpSolution solve_qp_subproblem(const Eigen::MatrixXd& B, const Eigen::VectorXd& grad,
                                      const Eigen::VectorXd& g, const Eigen::MatrixXd& A,
                                      double rank_tol = 1e-12) {
  const Eigen::Index n = B.rows();
  const Eigen::Index C = A.rows();
  if (B.cols() != n || grad.size() != n || A.cols() != n || g.size() != C)
    throw std::invalid_argument("QP subproblem dimension mismatch");

  if (C > 0) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A.transpose());
    const auto& R = qr.matrixQR();
    double scale = std::abs(R(0, 0));
    for (Eigen::Index k = 0; k < C; ++k) {
      if (!(std::abs(R(k, k)) > rank_tol * scale) || scale == 0.0) {
        auto c = static_cast<std::size_t>(qr.colsPermutation().indices()[k]);
        throw QpFailure("constraint Jacobian is rank deficient at constraint " + std::to_string(c), c);
      }
    }
  }

  Eigen::LLT<Eigen::MatrixXd> Bf(B);
  if (Bf.info() != Eigen::Success)
    throw QpFailure("Hessian approximation is not positive definite", 0);

  QpSolution out;
  if (C == 0) {
    out.d = -Bf.solve(grad);
    out.lambda = Eigen::VectorXd(0);
    return out;
  }

  // Range-space elimination: (A B^-1 A') lambda = A B^-1 grad - g.
  Eigen::MatrixXd BinvAt = Bf.solve(A.transpose());
  Eigen::MatrixXd S = A * BinvAt;
  Eigen::LLT<Eigen::MatrixXd> Sf(S);
  if (Sf.info() != Eigen::Success) throw QpFailure("reduced KKT matrix is singular", 0);

  auto solve = [&](const Eigen::VectorXd& rg, const Eigen::VectorXd& rc, Eigen::VectorXd& d,
                   Eigen::VectorXd& lam) {
    // B d - A' lam = -rg ;  A d = -rc
    Eigen::VectorXd Binv_rg = Bf.solve(rg);
    lam = Sf.solve(A * Binv_rg - rc);
    d = BinvAt * lam - Binv_rg;
  };

  solve(grad, g, out.d, out.lambda);

  auto residual = [&](const Eigen::VectorXd& d, const Eigen::VectorXd& lam, Eigen::VectorXd& r1,
                      Eigen::VectorXd& r2) {
    r1 = B * d + grad - A.transpose() * lam;
    r2 = A * d + g;
  };
  Eigen::VectorXd r1, r2;
  residual(out.d, out.lambda, r1, r2);
  const double rhs = 1.0 + grad.norm() + g.norm();
  if (std::sqrt(r1.squaredNorm() + r2.squaredNorm()) > 1e-12 * rhs) {
    Eigen::VectorXd dd, dl;
    solve(r1, r2, dd, dl);
    out.d += dd;
    out.lambda += dl;
    residual(out.d, out.lambda, r1, r2);
  }
  if (std::sqrt(r1.squaredNorm() + r2.squaredNorm()) > 1e-8 * rhs)
    throw QpFailure("KKT solve residual too large", 0);
  return out;
}

/// Objective f, its gradient, constraints g and the n x C Jacobian.
template <class M>
concept SqpModel = requires(const M& m, const Eigen::VectorXd& y) {
  { m.objective(y) } -> std::convertible_to<double>;
  { m.gradient(y) } -> std::convertible_to<Eigen::VectorXd>;
  { m.constraints(y) } -> std::convertible_to<Eigen::VectorXd>;
  { m.jacobian(y) } -> std::convertible_to<Eigen::MatrixXd>;
};

namespace detail {

struct SqpPoint {
  Eigen::VectorXd y;
  double f = 0.0;
  Eigen::VectorXd grad;
  Eigen::VectorXd g;
  Eigen::MatrixXd J;  // n x C
};

template <SqpModel M>
SqpPoint evaluate_point(const M& m, Eigen::VectorXd y) {
  SqpPoint p;
  p.f = m.objective(y);
  p.grad = m.gradient(y);
  p.g = m.constraints(y);
  p.J = m.jacobian(y);
  p.y = std::move(y);
  if (!std::isfinite(p.f) || !p.grad.allFinite() || !p.g.allFinite() || !p.J.allFinite())
    throw EvalError(EvalError::Kind::domain, "non-finite objective or constraint value");
  return p;
}

}  // namespace detail

template <SqpModel M>
SqpResult sqp_solve(const M& model, const Eigen::VectorXd& y0, const SqpSettings& settings = {}) {
  settings.validate();
  using detail::SqpPoint;
  const Eigen::Index n = y0.size();

  SqpPoint cur = detail::evaluate_point(model, y0);
  Eigen::MatrixXd B = Eigen::MatrixXd::Identity(n, n);
  double rho = 0.0;
  SqpResult res;

  auto finish = [&](SqpStatus st, int k, const std::string& msg) {
    res.status = st;
    res.iterations = k;
    res.solution = cur.y;
    res.feas_norm = cur.g.size() ? cur.g.template lpNorm<Eigen::Infinity>() : 0.0;
    res.message = msg;
    return res;
  };

  // Tries a trial point; a singular or non-finite evaluation counts as +inf merit.
  auto try_point = [&](const Eigen::VectorXd& y, SqpPoint& out, double& merit) {
    try {
      out = detail::evaluate_point(model, y);
      merit = out.f + rho * out.g.template lpNorm<1>();
      return std::isfinite(merit);
    } catch (const EvalError&) {
      merit = std::numeric_limits<double>::infinity();
      return false;
    }
  };

  for (int k = 0;; ++k) {
    QpSolution qp;
    if (Eigen::LLT<Eigen::MatrixXd>(B).info() != Eigen::Success)
      B = Eigen::MatrixXd::Identity(n, n);
    try {
      qp = solve_qp_subproblem(B, cur.grad, cur.g, cur.J.transpose(), settings.rank_tol);
    } catch (const QpFailure& e) {
      if (res.multipliers.size() == 0) res.multipliers = Eigen::VectorXd::Zero(cur.g.size());
      return finish(SqpStatus::qp_failure, k, e.what());
    }
    res.multipliers = qp.lambda;
    res.kkt_norm = (cur.grad - cur.J * qp.lambda).norm();
    const double feas = cur.g.size() ? cur.g.template lpNorm<Eigen::Infinity>() : 0.0;
    if (res.kkt_norm <= settings.eps_kkt && feas <= settings.eps_feas)
      return finish(SqpStatus::converged, k, "");
    if (k >= settings.max_iter) return finish(SqpStatus::max_iterations, k, "iteration limit reached");

    rho = std::max(rho, 2.0 * (qp.lambda.size() ? qp.lambda.template lpNorm<Eigen::Infinity>() : 0.0));
    const double g1 = cur.g.template lpNorm<1>();
    const double phi0 = cur.f + rho * g1;
    const double slope = cur.grad.dot(qp.d) - rho * g1;
    // Roundoff allowance: f plus the penalty times the size of the terms in
    // each g_c, estimated from the linearisation |J|'|y|. Near feasibility
    // the penalty term is pure evaluation noise and would otherwise stall
    // the line search.
    double g_scale = 0.0;
    if (cur.g.size())
      g_scale = (cur.J.cwiseAbs().transpose() * cur.y.cwiseAbs()).cwiseMax(1.0).sum();
    const double slack = 1e-14 * (std::max(1.0, std::abs(cur.f)) + rho * g_scale);

    SqpPoint trial;
    double merit = 0.0;
    double alpha = 1.0;
    bool accepted = false;
    if (try_point(cur.y + qp.d, trial, merit) && merit <= phi0 + settings.armijo * slope + slack) {
      accepted = true;
    } else if (merit < std::numeric_limits<double>::infinity() && cur.g.size() > 0) {
      // Second-order correction against the Maratos effect: pull the full
      // step back onto the linearized constraints at the trial point.
      const Eigen::MatrixXd A = cur.J.transpose();
      Eigen::VectorXd corr = -A.transpose() * (A * A.transpose()).ldlt().solve(trial.g);
      SqpPoint soc;
      double soc_merit;
      if (try_point(cur.y + qp.d + corr, soc, soc_merit) &&
          soc_merit <= phi0 + settings.armijo * slope + slack) {
        trial = std::move(soc);
        merit = soc_merit;
        accepted = true;
      }
    }
    while (!accepted) {
      alpha *= settings.backtrack;
      if (alpha < settings.min_step) break;
      if (try_point(cur.y + alpha * qp.d, trial, merit) &&
          merit <= phi0 + settings.armijo * alpha * slope + slack)
        accepted = true;
    }
    if (!accepted) return finish(SqpStatus::line_search_failure, k, "step length below minimum");
    if (settings.record_trace) res.trace.push_back({rho, phi0, merit, alpha, slack});

    // Damped BFGS on the Lagrangian gradient.
    Eigen::VectorXd s = trial.y - cur.y;
    Eigen::VectorXd yv = (trial.grad - trial.J * qp.lambda) - (cur.grad - cur.J * qp.lambda);
    Eigen::VectorXd Bs = B * s;
    const double sBs = s.dot(Bs);
    if (sBs > 1e-300) {
      const double sy = s.dot(yv);
      double theta = 1.0;
      if (sy < settings.damping * sBs) theta = (1.0 - settings.damping) * sBs / (sBs - sy);
      Eigen::VectorXd r = theta * yv + (1.0 - theta) * Bs;
      const double sr = s.dot(r);
      if (sr > 1e-300) {
        B += r * r.transpose() / sr - Bs * Bs.transpose() / sBs;
        B = 0.5 * (B + B.transpose());
      }
    }
    cur = std::move(trial);
  }
}

}  // namespace nlcr

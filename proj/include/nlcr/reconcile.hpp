#pragma once

// Non-linearly constrained reconciliation: the W-metric projection of a base
// forecast onto the coherent manifold {y : g(y) = 0}.

#include <Eigen/Dense>

#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "nlcr/constraints.hpp"
#include "nlcr/parallel.hpp"
#include "nlcr/sqp.hpp"
#include "nlcr/weights.hpp"

namespace nlcr {

struct ReconcileOptions {
  SqpSettings sqp{};
  /// Start point for the solver; defaults to the base forecast.
  std::optional<Eigen::VectorXd> start;
};

struct ReconciliationResult {
  Eigen::VectorXd y_hat;
  Eigen::VectorXd y_tilde;
  /// Multipliers in the convention y_tilde = y_hat + W J lambda, J the
  /// (unscaled) n x C Jacobian at y_tilde.
  Eigen::VectorXd lambda;
  double lambda_residual = 0.0;
  SqpResult solver;
  CoherenceReport coherence;

  bool coherent() const noexcept { return solver.converged() && coherence.coherent; }
};

/// f(z) = (z - target)' W^{-1} (z - target) subject to the model's g(z) = 0.
template <ConstraintModel S>
class ProjectionModel {
 public:
  ProjectionModel(const S& sys, const WeightMatrix& w, Eigen::VectorXd target)
      : sys_(sys), w_(w), target_(std::move(target)) {}

  double objective(const Eigen::VectorXd& z) const {
    Eigen::VectorXd e = z - target_;
    return e.dot(w_.solve(e));
  }
  Eigen::VectorXd gradient(const Eigen::VectorXd& z) const { return 2.0 * w_.solve(Eigen::VectorXd(z - target_)); }
  Eigen::VectorXd constraints(const Eigen::VectorXd& z) const { return sys_.evaluate_g(z); }
  Eigen::MatrixXd jacobian(const Eigen::VectorXd& z) const { return sys_.jacobian(z); }

 private:
  const S& sys_;
  const WeightMatrix& w_;
  Eigen::VectorXd target_;
};

/// Solves min (z - y_hat)' W^{-1} (z - y_hat) s.t. g(z) = 0 from z0 = y_hat.
/// Throws EvalError when g or its Jacobian is singular at the start point.
template <ConstraintModel S>
ReconciliationResult reconcile(const Eigen::VectorXd& y_hat, const S& sys, const WeightMatrix& w,
                               const ReconcileOptions& opts = {}) {
  if (static_cast<std::size_t>(y_hat.size()) != sys.size() || w.size() != y_hat.size())
    throw std::invalid_argument("forecast, constraint system and W dimensions differ");
  if (!y_hat.allFinite()) throw std::invalid_argument("base forecast is not finite");

  ProjectionModel<S> model(sys, w, y_hat);
  ReconciliationResult r;
  r.y_hat = y_hat;
  r.solver = sqp_solve(model, opts.start.value_or(y_hat), opts.sqp);
  r.y_tilde = r.solver.solution;

  r.coherence.residuals = sys.evaluate_g(r.y_tilde);
  r.coherence.max_abs_residual = r.coherence.residuals.template lpNorm<Eigen::Infinity>();
  r.coherence.coherent = r.coherence.max_abs_residual <= opts.sqp.eps_feas;

  // Recover lambda from y_tilde - y_hat = W J lambda by least squares.
  Eigen::VectorXd delta = r.y_tilde - y_hat;
  try {
    Eigen::MatrixXd WJ = w.matrix() * sys.jacobian(r.y_tilde);
    r.lambda = WJ.colPivHouseholderQr().solve(delta);
    r.lambda_residual = (WJ * r.lambda - delta).norm();
  } catch (const EvalError&) {
    r.lambda = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(sys.count()),
                                         std::numeric_limits<double>::quiet_NaN());
    r.lambda_residual = std::numeric_limits<double>::infinity();
  }
  return r;
}

struct BatchItem {
  std::optional<ReconciliationResult> result;
  std::string error;

  bool ok() const noexcept { return result.has_value(); }
};

/// Reconciles each vector independently; per-item errors are recorded and the
/// batch continues. Output order equals input order for any `jobs`.
template <ConstraintModel S>
std::vector<BatchItem> reconcile_batch(const std::vector<Eigen::VectorXd>& batch, const S& sys,
                                       const WeightMatrix& w, const ReconcileOptions& opts = {},
                                       unsigned jobs = 1) {
  for (const auto& y : batch)
    if (static_cast<std::size_t>(y.size()) != sys.size())
      throw std::invalid_argument("batch vector has wrong dimension");
  std::vector<BatchItem> out(batch.size());
  parallel_for(batch.size(), jobs, [&](std::size_t i) {
    try {
      ReconcileOptions item_opts = opts;
      item_opts.start.reset();
      out[i].result = reconcile(batch[i], sys, w, item_opts);
    } catch (const std::exception& e) {
      out[i].error = e.what();
    }
  });
  return out;
}

/// Bottom-up benchmark: keeps the bottom series of y_hat and derives every
/// other series by solving, one unknown at a time, the constraints that
/// contain a single undetermined series (linear constraints first).
inline Eigen::VectorXd bottom_up(const Eigen::VectorXd& y_hat, const ConstraintSystem& sys,
                                 const std::vector<std::string>& bottom_set) {
  const std::size_t n = sys.size();
  if (static_cast<std::size_t>(y_hat.size()) != n)
    throw std::invalid_argument("forecast dimension does not match the constraint system");
  std::vector<bool> known(n, false);
  for (const auto& name : bottom_set) known[sys.index_of(name)] = true;
  std::vector<bool> used(sys.count(), false);
  Eigen::VectorXd y = y_hat;

  auto unknown_in = [&](std::size_t c, std::size_t& which) {
    std::size_t cnt = 0;
    for (const auto& v : sys.constraint(c).variables()) {
      std::size_t i = sys.index_of(v);
      if (!known[i]) {
        ++cnt;
        which = i;
      }
    }
    return cnt;
  };

  for (;;) {
    bool progressed = false;
    for (int pass = 0; pass < 2 && !progressed; ++pass) {
      for (std::size_t c = 0; c < sys.count() && !progressed; ++c) {
        if (used[c] || sys.is_linear(c) != (pass == 0)) continue;
        std::size_t i = 0;
        if (unknown_in(c, i) != 1) continue;
        // Newton on the single unknown; exact in one step when g is affine in y_i.
        const Expression& g = sys.constraint(c);
        const Expression& dg = sys.jacobian_expr(i, c);
        auto ei = static_cast<Eigen::Index>(i);
        for (int it = 0; it < 100; ++it) {
          std::span<const double> v(y.data(), n);
          double val = g.evaluate(v);
          double der = dg.evaluate(v);
          if (der == 0.0)
            throw std::runtime_error("series '" + sys.series()[i] +
                                     "' cannot be solved from its constraint (zero derivative)");
          double step = val / der;
          y[ei] -= step;
          if (std::abs(step) <= 1e-15 * std::max(1.0, std::abs(y[ei]))) break;
        }
        known[i] = true;
        used[c] = true;
        progressed = true;
      }
    }
    if (!progressed) break;
  }
  for (std::size_t i = 0; i < n; ++i)
    if (!known[i])
      throw std::runtime_error("series '" + sys.series()[i] + "' cannot be derived from the bottom set");
  return y;
}

}  // namespace nlcr

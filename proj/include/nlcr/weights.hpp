#pragma once

// Metric matrix W for the reconciliation objective, estimated from one-step
// in-sample residuals: identity (ols), diagonal (wls) or shrinkage towards the
// diagonal (shr).

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace nlcr {

enum class WeightTag { ols, wls, shr };

inline const char* to_string(WeightTag t) {
  switch (t) {
    case WeightTag::ols: return "ols";
    case WeightTag::wls: return "wls";
    case WeightTag::shr: return "shr";
  }
  return "?";
}

inline WeightTag parse_weight_tag(std::string_view s) {
  if (s == "ols") return WeightTag::ols;
  if (s == "wls") return WeightTag::wls;
  if (s == "shr") return WeightTag::shr;
  throw std::invalid_argument("unknown weights '" + std::string(s) + "' (expected ols, wls or shr)");
}

class ZeroVarianceError : public std::runtime_error {
 public:
  explicit ZeroVarianceError(const std::string& series)
      : std::runtime_error("series '" + series + "' has zero residual variance"), series_(series) {}
  const std::string& series() const noexcept { return series_; }

 private:
  std::string series_;
};

/// T x n residual matrix: rows are time points, columns follow the series
/// order of the constraint system.
class ResidualSample {
 public:
  explicit ResidualSample(Eigen::MatrixXd values, std::vector<std::string> names = {})
      : values_(std::move(values)), names_(std::move(names)) {
    if (values_.rows() < 2) throw std::invalid_argument("need at least 2 residual rows");
    if (!values_.allFinite()) throw std::invalid_argument("residuals contain non-finite values");
    if (!names_.empty() && names_.size() != static_cast<std::size_t>(values_.cols()))
      throw std::invalid_argument("residual names do not match column count");
    if (names_.empty())
      for (Eigen::Index j = 0; j < values_.cols(); ++j) names_.push_back("#" + std::to_string(j));
  }

  const Eigen::MatrixXd& values() const noexcept { return values_; }
  const std::vector<std::string>& names() const noexcept { return names_; }
  Eigen::Index periods() const noexcept { return values_.rows(); }
  Eigen::Index series() const noexcept { return values_.cols(); }

 private:
  Eigen::MatrixXd values_;
  std::vector<std::string> names_;
};

/// (1/T) sum_t e_t e_t', uncentered.
inline Eigen::MatrixXd estimate_full_cov(const ResidualSample& r) {
  const auto& E = r.values();
  Eigen::MatrixXd S = (E.transpose() * E) / static_cast<double>(E.rows());
  return 0.5 * (S + S.transpose());
}

/// Correlation-target shrinkage intensity on standardized residuals:
/// sum_{i!=j} Var(r_ij) / sum_{i!=j} r_ij^2, clamped to [0, 1]; 1 when the
/// denominator vanishes.
inline double shrinkage_intensity(const ResidualSample& r) {
  const auto& E = r.values();
  const double T = static_cast<double>(E.rows());
  Eigen::MatrixXd S = estimate_full_cov(r);
  Eigen::VectorXd sd = S.diagonal().cwiseSqrt();
  for (Eigen::Index j = 0; j < sd.size(); ++j)
    if (!(sd[j] > 0.0)) throw ZeroVarianceError(r.names()[static_cast<std::size_t>(j)]);
  Eigen::MatrixXd X = E * sd.cwiseInverse().asDiagonal();
  Eigen::MatrixXd X2 = X.cwiseProduct(X);
  Eigen::MatrixXd cross = X.transpose() * X;
  Eigen::MatrixXd v = (X2.transpose() * X2 - cross.cwiseProduct(cross) / T) / (T * (T - 1.0));
  Eigen::MatrixXd corr = cross / T;
  double num = 0.0, den = 0.0;
  for (Eigen::Index i = 0; i < v.rows(); ++i)
    for (Eigen::Index j = 0; j < v.cols(); ++j)
      if (i != j) {
        num += v(i, j);
        den += corr(i, j) * corr(i, j);
      }
  if (den == 0.0) return 1.0;
  return std::clamp(num / den, 0.0, 1.0);
}

class WeightMatrix {
 public:
  static WeightMatrix identity(Eigen::Index n) {
    return WeightMatrix(WeightTag::ols, Eigen::MatrixXd::Identity(n, n), std::nullopt, {});
  }

  /// Wraps an arbitrary SPD matrix (tagged shr with no estimated intensity).
  static WeightMatrix from_matrix(Eigen::MatrixXd W, WeightTag tag = WeightTag::shr,
                                  std::optional<double> lambda = std::nullopt) {
    return WeightMatrix(tag, std::move(W), lambda, {});
  }

  WeightTag tag() const noexcept { return tag_; }
  const Eigen::MatrixXd& matrix() const noexcept { return W_; }
  std::optional<double> shrinkage_lambda() const noexcept { return lambda_; }
  Eigen::Index size() const noexcept { return W_.rows(); }
  bool is_identity() const noexcept { return tag_ == WeightTag::ols; }

  /// W^{-1} b.
  Eigen::VectorXd solve(const Eigen::VectorXd& b) const {
    if (is_identity()) return b;
    return llt_.solve(b);
  }
  Eigen::MatrixXd solve(const Eigen::MatrixXd& B) const {
    if (is_identity()) return B;
    return llt_.solve(B);
  }

  /// Lower Cholesky factor L with W = L L'.
  Eigen::MatrixXd lower_factor() const {
    if (is_identity()) return Eigen::MatrixXd::Identity(size(), size());
    return llt_.matrixL();
  }

 private:
  friend WeightMatrix build_weight(const ResidualSample&, WeightTag, std::optional<double>);

  WeightMatrix(WeightTag tag, Eigen::MatrixXd W, std::optional<double> lambda,
               const std::vector<std::string>& names)
      : tag_(tag), W_(std::move(W)), lambda_(lambda) {
    if (W_.rows() != W_.cols() || W_.rows() == 0) throw std::invalid_argument("W must be square");
    if (!W_.isApprox(W_.transpose(), 1e-12)) throw std::invalid_argument("W must be symmetric");
    if (tag_ != WeightTag::ols) {
      for (Eigen::Index j = 0; j < W_.rows(); ++j)
        if (!(W_(j, j) > 0.0))
          throw ZeroVarianceError(names.empty() ? "#" + std::to_string(j)
                                                : names[static_cast<std::size_t>(j)]);
      llt_.compute(W_);
      if (llt_.info() != Eigen::Success) throw std::invalid_argument("W is not positive definite");
    }
  }

  WeightTag tag_;
  Eigen::MatrixXd W_;
  std::optional<double> lambda_;
  Eigen::LLT<Eigen::MatrixXd> llt_;
};

/// Builds W for the given estimator. `forced_lambda` overrides the estimated
/// shrinkage intensity (shr only).
inline WeightMatrix build_weight(const ResidualSample& r, WeightTag tag,
                                 std::optional<double> forced_lambda = std::nullopt) {
  const Eigen::Index n = r.series();
  if (tag == WeightTag::ols) return WeightMatrix::identity(n);
  Eigen::MatrixXd S = estimate_full_cov(r);
  for (Eigen::Index j = 0; j < n; ++j)
    if (!(S(j, j) > 0.0)) throw ZeroVarianceError(r.names()[static_cast<std::size_t>(j)]);
  Eigen::MatrixXd D = S.diagonal().asDiagonal();
  if (tag == WeightTag::wls) return WeightMatrix(tag, D, std::nullopt, r.names());
  double lambda = forced_lambda ? std::clamp(*forced_lambda, 0.0, 1.0) : shrinkage_intensity(r);
  Eigen::MatrixXd W = lambda * D + (1.0 - lambda) * S;
  return WeightMatrix(tag, W, lambda, r.names());
}

}  // namespace nlcr

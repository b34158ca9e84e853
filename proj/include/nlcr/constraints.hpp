#pragma once

// A system of C implicit constraints g_c(y) = 0 over an ordered vocabulary of
// n series, with pre-differentiated Jacobian entries. The Jacobian is n x C:
// one column per constraint.

#include <Eigen/Dense>

#include <algorithm>
#include <concepts>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "nlcr/expr.hpp"

namespace nlcr {

inline constexpr double default_feasibility_tolerance = 1e-8;

class JacobianSingularity : public EvalError {
 public:
  JacobianSingularity(std::size_t series, std::size_t constraint, const std::string& why)
      : EvalError(Kind::division_by_zero,
                  "jacobian singular at (" + std::to_string(series) + ", " +
                      std::to_string(constraint) + "): " + why),
        series_(series),
        constraint_(constraint) {}
  std::size_t series() const noexcept { return series_; }
  std::size_t constraint() const noexcept { return constraint_; }

 private:
  std::size_t series_;
  std::size_t constraint_;
};

enum class Region { epigraph, hypograph, on_manifold };

inline const char* to_string(Region r) {
  switch (r) {
    case Region::epigraph: return "epigraph";
    case Region::hypograph: return "hypograph";
    case Region::on_manifold: return "on-manifold";
  }
  return "?";
}

struct CoherenceReport {
  Eigen::VectorXd residuals;
  double max_abs_residual = 0.0;
  bool coherent = false;
};

/// Parses constraint-file text: one `<expr> = <expr>` per line, '#' starts a
/// comment, blank lines ignored. Each line becomes `lhs - rhs`.
inline std::vector<Expression> parse_constraints(std::string_view text) {
  std::vector<Expression> out;
  std::size_t line_no = 0;
  std::size_t begin = 0;
  while (begin <= text.size()) {
    std::size_t end = text.find('\n', begin);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(begin, end - begin);
    ++line_no;
    begin = end + 1;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) {
      if (end == text.size()) break;
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string_view::npos || line.find('=', eq + 1) != std::string_view::npos)
      throw ParseError("line " + std::to_string(line_no) + ": expected exactly one '='", 0);
    try {
      Expression lhs = parse_expression(line.substr(0, eq));
      Expression rhs = parse_expression(line.substr(eq + 1));
      out.push_back(rhs.is_constant(0.0)
                        ? lhs
                        : Expression::binary(Expression::Kind::sub, lhs, rhs));
    } catch (const ParseError& e) {
      throw ParseError("line " + std::to_string(line_no) + ": " + e.what(), e.offset());
    }
    if (end == text.size()) break;
  }
  return out;
}

inline std::vector<Expression> load_constraints(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open constraint file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_constraints(ss.str());
}

class ConstraintSystem {
 public:
  ConstraintSystem(std::vector<std::string> series, std::vector<Expression> constraints,
                   double tolerance = default_feasibility_tolerance)
      : series_(std::move(series)), tolerance_(tolerance) {
    if (constraints.empty()) throw std::invalid_argument("constraint system is empty");
    if (constraints.size() >= series_.size())
      throw std::invalid_argument("need fewer constraints (" + std::to_string(constraints.size()) +
                                  ") than series (" + std::to_string(series_.size()) + ")");
    if (!(tolerance_ > 0.0)) throw std::invalid_argument("feasibility tolerance must be positive");
    for (std::size_t i = 0; i < series_.size(); ++i) {
      if (!is_identifier(series_[i]))
        throw std::invalid_argument("invalid series name '" + series_[i] + "'");
      for (std::size_t j = 0; j < i; ++j)
        if (series_[j] == series_[i])
          throw std::invalid_argument("duplicate series name '" + series_[i] + "'");
    }
    const std::size_t n = series_.size();
    for (auto& g : constraints) {
      constraints_.push_back(g.bind(series_));
      std::vector<Expression> column(n);
      std::vector<Entry> nz;
      bool linear = true;
      for (std::size_t i = 0; i < n; ++i) {
        column[i] = differentiate(constraints_.back(), series_[i]);
        if (!column[i].is_constant()) linear = false;
        if (!column[i].is_constant(0.0)) nz.push_back({i, column[i]});
      }
      jacobian_exprs_.push_back(std::move(column));
      nonzero_.push_back(std::move(nz));
      linear_.push_back(linear);
    }
  }

  std::size_t size() const noexcept { return series_.size(); }
  std::size_t count() const noexcept { return constraints_.size(); }
  const std::vector<std::string>& series() const noexcept { return series_; }
  const std::vector<Expression>& constraints() const noexcept { return constraints_; }
  const Expression& constraint(std::size_t c) const { return constraints_.at(c); }
  /// d g_c / d y_i.
  const Expression& jacobian_expr(std::size_t i, std::size_t c) const {
    return jacobian_exprs_.at(c).at(i);
  }
  bool is_linear(std::size_t c) const { return linear_.at(c); }
  bool all_linear() const {
    return std::all_of(linear_.begin(), linear_.end(), [](bool b) { return b; });
  }
  double tolerance() const noexcept { return tolerance_; }

  std::size_t index_of(std::string_view name) const {
    auto it = std::find(series_.begin(), series_.end(), name);
    if (it == series_.end()) throw std::out_of_range("unknown series '" + std::string(name) + "'");
    return static_cast<std::size_t>(it - series_.begin());
  }

  Eigen::VectorXd evaluate_g(const Eigen::VectorXd& y) const {
    check_dim(y);
    std::span<const double> v(y.data(), static_cast<std::size_t>(y.size()));
    Eigen::VectorXd g(static_cast<Eigen::Index>(count()));
    for (std::size_t c = 0; c < count(); ++c) g[static_cast<Eigen::Index>(c)] = constraints_[c].evaluate(v);
    return g;
  }

  Eigen::MatrixXd jacobian(const Eigen::VectorXd& y) const {
    check_dim(y);
    std::span<const double> v(y.data(), static_cast<std::size_t>(y.size()));
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(size()),
                                              static_cast<Eigen::Index>(count()));
    for (std::size_t c = 0; c < count(); ++c) {
      for (const auto& [i, e] : nonzero_[c]) {
        double d;
        try {
          d = e.evaluate(v);
        } catch (const EvalError& err) {
          throw JacobianSingularity(i, c, err.what());
        }
        J(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = d;
      }
    }
    return J;
  }

  CoherenceReport coherence(const Eigen::VectorXd& y) const { return coherence(y, tolerance_); }

  CoherenceReport coherence(const Eigen::VectorXd& y, double tol) const {
    CoherenceReport r;
    r.residuals = evaluate_g(y);
    r.max_abs_residual = r.residuals.lpNorm<Eigen::Infinity>();
    r.coherent = r.max_abs_residual <= tol;
    return r;
  }

  /// Sign of g_c(y) per constraint: negative is epigraph, positive is
  /// hypograph, |g_c| within tolerance is on the manifold.
  std::vector<Region> classify_region(const Eigen::VectorXd& y) const {
    Eigen::VectorXd g = evaluate_g(y);
    std::vector<Region> out;
    out.reserve(count());
    for (Eigen::Index c = 0; c < g.size(); ++c) {
      if (std::abs(g[c]) <= tolerance_) out.push_back(Region::on_manifold);
      else out.push_back(g[c] > 0 ? Region::hypograph : Region::epigraph);
    }
    return out;
  }

 private:
  struct Entry {
    std::size_t index;
    Expression expr;
  };

  void check_dim(const Eigen::VectorXd& y) const {
    if (static_cast<std::size_t>(y.size()) != size())
      throw std::invalid_argument("vector has " + std::to_string(y.size()) +
                                  " entries, system has " + std::to_string(size()) + " series");
  }

  std::vector<std::string> series_;
  std::vector<Expression> constraints_;
  std::vector<std::vector<Expression>> jacobian_exprs_;  // [c][i]
  std::vector<std::vector<Entry>> nonzero_;
  std::vector<bool> linear_;
  double tolerance_;
};

/// Any type exposing n, C, g(y) and the n x C Jacobian.
template <class S>
concept ConstraintModel = requires(const S& s, const Eigen::VectorXd& y) {
  { s.size() } -> std::convertible_to<std::size_t>;
  { s.count() } -> std::convertible_to<std::size_t>;
  { s.evaluate_g(y) } -> std::convertible_to<Eigen::VectorXd>;
  { s.jacobian(y) } -> std::convertible_to<Eigen::MatrixXd>;
};

/// g expressed in whitened coordinates u = L^{-1} y, where W = L L'.
/// Euclidean projection in u-space is W-metric projection in y-space.
template <ConstraintModel S>
class WhitenedConstraints {
 public:
  WhitenedConstraints(const S& base, Eigen::MatrixXd lower) : base_(base), L_(std::move(lower)) {}

  std::size_t size() const { return base_.size(); }
  std::size_t count() const { return base_.count(); }
  Eigen::VectorXd evaluate_g(const Eigen::VectorXd& u) const { return base_.evaluate_g(L_ * u); }
  Eigen::MatrixXd jacobian(const Eigen::VectorXd& u) const {
    return L_.transpose() * base_.jacobian(L_ * u);
  }
  Eigen::VectorXd to_whitened(const Eigen::VectorXd& y) const {
    return L_.template triangularView<Eigen::Lower>().solve(y);
  }
  Eigen::VectorXd from_whitened(const Eigen::VectorXd& u) const { return L_ * u; }
  const Eigen::MatrixXd& factor() const { return L_; }

 private:
  const S& base_;
  Eigen::MatrixXd L_;
};

}  // namespace nlcr

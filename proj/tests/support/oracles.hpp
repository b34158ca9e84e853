#pragma once

// Independent reference computations used by the tests. None of these touch
// the SQP engine: projections are found by exhaustive grids with local
// refinement, derivatives by central differences.

#include <Eigen/Dense>

#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

namespace oracle {

/// Golden-section minimisation of f on [a, b].
inline double golden(const std::function<double(double)>& f, double a, double b, int iters = 200) {
  const double r = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - r * (b - a), d = a + r * (b - a);
  double fc = f(c), fd = f(d);
  for (int i = 0; i < iters && b - a > 1e-15 * (1.0 + std::abs(a)); ++i) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - r * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + r * (b - a);
      fd = f(d);
    }
  }
  return 0.5 * (a + b);
}

struct Projection {
  Eigen::VectorXd point;
  double distance = std::numeric_limits<double>::infinity();
};

/// Nearest point of the curve (t^4, t) to y: dense grid over t, then golden
/// refinement of every grid-local minimum. The optimum lies within |g(y)|
/// of y2 because (y2^4, y2) is itself at distance |g(y)|.
inline Projection quartic_projection(const Eigen::Vector2d& y) {
  auto d2 = [&](double t) {
    double a = t * t * t * t - y[0], b = t - y[1];
    return a * a + b * b;
  };
  const double reach = std::abs(y[0] - std::pow(y[1], 4)) + 1e-3;
  const double lo = y[1] - reach, hi = y[1] + reach;
  const int N = 200000;
  const double h = (hi - lo) / N;
  std::vector<double> v(N + 1);
  for (int i = 0; i <= N; ++i) v[i] = d2(lo + i * h);
  Projection best;
  for (int i = 0; i <= N; ++i) {
    bool local = (i == 0 || v[i] <= v[i - 1]) && (i == N || v[i] <= v[i + 1]);
    if (!local) continue;
    double t = golden(d2, lo + std::max(0, i - 1) * h, lo + std::min(N, i + 1) * h);
    double dist = std::sqrt(d2(t));
    if (dist < best.distance) {
      best.distance = dist;
      best.point = Eigen::Vector2d(t * t * t * t, t);
    }
  }
  return best;
}

/// Nearest point of {y1 = 100 y2 / y3} to y with y1 eliminated: 2-D grid over
/// (y2, y3) in a box of half-width |g(y)|, then repeated grid shrinking around
/// the incumbent.
inline Projection ratio_projection(const Eigen::Vector3d& y) {
  auto d2 = [&](double a, double b) {
    double r = 100.0 * a / b - y[0];
    return r * r + (a - y[1]) * (a - y[1]) + (b - y[2]) * (b - y[2]);
  };
  double reach = std::abs(y[0] - 100.0 * y[1] / y[2]) + 1e-3;
  double ca = y[1], cb = y[2];
  double best = d2(ca, cb);
  const int M = 200;
  for (int round = 0; round < 60; ++round) {
    const double h = reach / (M / 2);
    double na = ca, nb = cb;
    for (int i = 0; i <= M; ++i)
      for (int j = 0; j <= M; ++j) {
        double a = ca - reach + i * h, b = cb - reach + j * h;
        if (b <= 1e-9) continue;
        double v = d2(a, b);
        if (v < best) best = v, na = a, nb = b;
      }
    ca = na;
    cb = nb;
    reach = 4.0 * h;
    if (reach < 1e-13 * (1.0 + std::abs(cb))) break;
  }
  Projection p;
  p.point = Eigen::Vector3d(100.0 * ca / cb, ca, cb);
  p.distance = std::sqrt(best);
  return p;
}

/// Central difference of the vector map f along every coordinate; column c of
/// the result is d f_c / d y (n x C), matching the Jacobian layout.
inline Eigen::MatrixXd central_jacobian(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& f,
                                        const Eigen::VectorXd& y, double rel_step = 1e-6) {
  Eigen::VectorXd f0 = f(y);
  Eigen::MatrixXd J(y.size(), f0.size());
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    double h = rel_step * std::max(1.0, std::abs(y[i]));
    Eigen::VectorXd yp = y, ym = y;
    yp[i] += h;
    ym[i] -= h;
    J.row(i) = ((f(yp) - f(ym)) / (2.0 * h)).transpose();
  }
  return J;
}

/// W-metric projection onto the affine set {A'y = b}: y - W A (A'WA)^{-1} (A'y - b).
inline Eigen::VectorXd oblique_projection(const Eigen::VectorXd& y, const Eigen::MatrixXd& A,
                                          const Eigen::VectorXd& b, const Eigen::MatrixXd& W) {
  Eigen::VectorXd g = A.transpose() * y - b;
  Eigen::MatrixXd M = A.transpose() * W * A;
  return y - W * A * M.ldlt().solve(g);
}

/// Random SPD matrix with eigenvalues in [lo, hi].
template <class Rng>
Eigen::MatrixXd random_spd(Eigen::Index n, Rng& rng, double lo = 0.2, double hi = 5.0) {
  std::normal_distribution<double> z;
  std::uniform_real_distribution<double> u(lo, hi);
  Eigen::MatrixXd G(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) G(i, j) = z(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(G);
  Eigen::MatrixXd Q = qr.householderQ();
  Eigen::VectorXd ev(n);
  for (Eigen::Index i = 0; i < n; ++i) ev[i] = u(rng);
  Eigen::MatrixXd W = Q * ev.asDiagonal() * Q.transpose();
  return 0.5 * (W + W.transpose());
}

/// "(a1)*y1 + (a2)*y2 + ... = b" with 17-digit coefficients.
inline std::string linear_text(const Eigen::VectorXd& a, double b, const std::vector<std::string>& names) {
  std::string s;
  char buf[64];
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%s(%.17g)*%s", i ? " + " : "", a[i], names[static_cast<std::size_t>(i)].c_str());
    s += buf;
  }
  std::snprintf(buf, sizeof buf, " = %.17g", b);
  return s + buf;
}

}  // namespace oracle

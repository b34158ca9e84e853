#pragma once

// Forecast accuracy evaluation: RMSE averaged over horizons and origins,
// geometric-mean relative RMSE, Diebold-Mariano tests and MCB/Nemenyi mean
// ranks with the Friedman test.

#include <Eigen/Dense>
#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace nlcr {

/// Forecast/actual pairs indexed by (series, horizon, origin). The number of
/// origins may differ between horizons.
class ForecastPanel {
 public:
  struct Cell {
    double forecast = 0.0;
    double actual = 0.0;
    double error() const { return actual - forecast; }
  };
  using Origins = std::map<int, Cell>;
  using Horizons = std::map<int, Origins>;

  void add(const std::string& series, int horizon, int origin, double forecast, double actual) {
    if (horizon < 1) throw std::invalid_argument("horizon must be at least 1");
    auto [it, fresh] = data_[series][horizon].try_emplace(origin, Cell{forecast, actual});
    if (!fresh)
      throw std::invalid_argument("duplicate entry for " + series + " h=" + std::to_string(horizon) +
                                  " origin=" + std::to_string(origin));
  }

  bool has_series(const std::string& s) const { return data_.count(s) != 0; }
  const Horizons& series(const std::string& s) const {
    auto it = data_.find(s);
    if (it == data_.end()) throw std::out_of_range("panel has no series '" + s + "'");
    return it->second;
  }
  std::vector<std::string> series_names() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : data_) out.push_back(k);
    return out;
  }
  bool empty() const noexcept { return data_.empty(); }

  /// True when both panels contain exactly the same (series, horizon, origin) keys.
  bool same_index(const ForecastPanel& other) const {
    if (data_.size() != other.data_.size()) return false;
    for (auto a = data_.begin(), b = other.data_.begin(); a != data_.end(); ++a, ++b) {
      if (a->first != b->first || a->second.size() != b->second.size()) return false;
      for (auto ha = a->second.begin(), hb = b->second.begin(); ha != a->second.end(); ++ha, ++hb) {
        if (ha->first != hb->first || ha->second.size() != hb->second.size()) return false;
        for (auto oa = ha->second.begin(), ob = hb->second.begin(); oa != ha->second.end(); ++oa, ++ob)
          if (oa->first != ob->first) return false;
      }
    }
    return true;
  }

 private:
  std::map<std::string, Horizons> data_;
};

/// sqrt( (1/H) sum_h (1/L_h) sum_l e_{h,l}^2 ) over horizons 1..H; H = 0
/// means every horizon present for the series.
inline double rmse_combined(const ForecastPanel& p, const std::string& series, int H = 0) {
  const auto& hs = p.series(series);
  std::vector<const ForecastPanel::Origins*> sel;
  if (H <= 0) {
    for (const auto& [h, o] : hs) sel.push_back(&o);
  } else {
    for (int h = 1; h <= H; ++h) {
      auto it = hs.find(h);
      if (it == hs.end())
        throw std::invalid_argument("series '" + series + "' has no horizon " + std::to_string(h));
      sel.push_back(&it->second);
    }
  }
  if (sel.empty()) throw std::invalid_argument("empty selection for series '" + series + "'");
  double outer = 0.0;
  for (const auto* o : sel) {
    if (o->empty()) throw std::invalid_argument("horizon with no origins in series '" + series + "'");
    double inner = 0.0;
    for (const auto& [l, c] : *o) inner += c.error() * c.error();
    outer += inner / static_cast<double>(o->size());
  }
  return std::sqrt(outer / static_cast<double>(sel.size()));
}

/// Geometric mean over `series` of RMSE(method) / RMSE(base).
inline double gm_rmse(const ForecastPanel& method, const ForecastPanel& base,
                      const std::vector<std::string>& series, int H = 0) {
  if (series.empty()) throw std::invalid_argument("empty series set");
  double log_sum = 0.0;
  for (const auto& s : series) {
    double rb = rmse_combined(base, s, H);
    if (!(rb > 0.0)) throw std::domain_error("base RMSE is zero for series '" + s + "'");
    double rm = rmse_combined(method, s, H);
    if (rm == 0.0) return 0.0;
    log_sum += std::log(rm / rb);
  }
  return std::exp(log_sum / static_cast<double>(series.size()));
}

struct DmResult {
  double statistic = 0.0;
  double p_value = 1.0;
  bool degenerate = false;  // loss differential has zero variance but nonzero mean
};

/// Two-sided Diebold-Mariano test of equal expected loss with the
/// Harvey-Leybourne-Newbold small-sample factor and a Normal reference.
inline DmResult diebold_mariano(const std::vector<double>& loss_a, const std::vector<double>& loss_b,
                                int h = 1) {
  if (loss_a.size() != loss_b.size()) throw std::invalid_argument("loss sequences differ in length");
  const std::size_t n = loss_a.size();
  if (n < 5) throw std::invalid_argument("need at least 5 losses");
  if (h < 1 || static_cast<std::size_t>(h) >= n) throw std::invalid_argument("bad forecast horizon");
  std::vector<double> d(n);
  for (std::size_t t = 0; t < n; ++t) d[t] = loss_a[t] - loss_b[t];
  const double nn = static_cast<double>(n);
  const double mean = std::accumulate(d.begin(), d.end(), 0.0) / nn;

  double spread = 0.0;
  for (double v : d) spread = std::max(spread, std::abs(v - mean));
  DmResult res;
  if (spread <= 1e-14 * std::max(1.0, std::abs(mean))) {
    if (mean == 0.0) return res;
    res.statistic = mean > 0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
    res.p_value = 0.0;
    res.degenerate = true;
    return res;
  }

  auto autocov = [&](std::size_t k) {
    double s = 0.0;
    for (std::size_t t = k; t < n; ++t) s += (d[t] - mean) * (d[t - k] - mean);
    return s / nn;
  };
  const double g0 = autocov(0);
  double V = g0;
  for (int k = 1; k < h; ++k) V += 2.0 * autocov(static_cast<std::size_t>(k));
  if (!(V > 0.0)) V = g0;

  const double hh = static_cast<double>(h);
  const double hln = std::sqrt((nn + 1.0 - 2.0 * hh + hh * (hh - 1.0) / nn) / nn);
  res.statistic = hln * mean / std::sqrt(V / nn);
  boost::math::normal_distribution<double> N01;
  res.p_value = std::clamp(2.0 * boost::math::cdf(boost::math::complement(N01, std::abs(res.statistic))), 0.0, 1.0);
  return res;
}

/// Average ranks (1-based), ties share the mean of their positions.
inline std::vector<double> average_ranks(const std::vector<double>& x) {
  const std::size_t n = x.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> r(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && x[idx[j + 1]] == x[idx[i]]) ++j;
    double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

/// Spearman rank correlation (Pearson correlation of average ranks).
inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("spearman needs two equal-length samples");
  auto rx = average_ranks(x), ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return sxy / std::sqrt(sxx * syy);
}

/// Upper 5% point of the studentized range with infinite degrees of freedom,
/// for k = 2..20 groups.
inline double studentized_range_q05(std::size_t k) {
  static constexpr std::array<double, 19> q{2.771808, 3.314493, 3.633160, 3.857656, 4.030092,
                                            4.169554, 4.286309, 4.386509, 4.474124, 4.551864,
                                            4.621655, 4.684920, 4.742732, 4.795924, 4.845154,
                                            4.890951, 4.933745, 4.973892, 5.011689};
  if (k < 2 || k > 20) throw std::out_of_range("critical values are tabulated for 2..20 methods");
  return q[k - 2];
}

struct McbResult {
  std::vector<double> mean_ranks;
  double critical_distance = 0.0;
  std::vector<std::pair<double, double>> intervals;  // mean rank -/+ CD/2
  double friedman_statistic = 0.0;
  double friedman_p_value = 1.0;
  bool friedman_degenerate = false;  // every case fully tied
};

/// `loss` is methods x cases; lower is better.
inline McbResult mcb_nemenyi(const Eigen::MatrixXd& loss) {
  const auto k = static_cast<std::size_t>(loss.rows());
  const auto N = static_cast<std::size_t>(loss.cols());
  if (k < 2 || N < 2) throw std::invalid_argument("need at least 2 methods and 2 cases");
  Eigen::MatrixXd R(loss.rows(), loss.cols());
  for (Eigen::Index c = 0; c < loss.cols(); ++c) {
    std::vector<double> col(k);
    for (std::size_t m = 0; m < k; ++m) col[m] = loss(static_cast<Eigen::Index>(m), c);
    auto r = average_ranks(col);
    for (std::size_t m = 0; m < k; ++m) R(static_cast<Eigen::Index>(m), c) = r[m];
  }
  McbResult res;
  const double kk = static_cast<double>(k), NN = static_cast<double>(N);
  for (std::size_t m = 0; m < k; ++m) res.mean_ranks.push_back(R.row(static_cast<Eigen::Index>(m)).mean());
  res.critical_distance = studentized_range_q05(k) * std::sqrt(kk * (kk + 1.0) / (12.0 * NN));
  for (double r : res.mean_ranks)
    res.intervals.emplace_back(r - 0.5 * res.critical_distance, r + 0.5 * res.critical_distance);

  // Friedman statistic with the tie correction.
  double num = 0.0;
  const double centre = NN * (kk + 1.0) / 2.0;
  for (std::size_t m = 0; m < k; ++m) {
    double s = R.row(static_cast<Eigen::Index>(m)).sum() - centre;
    num += s * s;
  }
  const double den = R.array().square().sum() - NN * kk * (kk + 1.0) * (kk + 1.0) / 4.0;
  if (den <= 1e-12 * NN * kk * kk) {
    res.friedman_degenerate = true;
    return res;
  }
  res.friedman_statistic = (kk - 1.0) * num / den;
  boost::math::chi_squared_distribution<double> chi(kk - 1.0);
  res.friedman_p_value = boost::math::cdf(boost::math::complement(chi, res.friedman_statistic));
  return res;
}

}  // namespace nlcr

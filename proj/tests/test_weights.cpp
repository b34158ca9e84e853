#include <gtest/gtest.h>

#include <random>

#include "nlcr/weights.hpp"
#include "support/oracles.hpp"

using namespace nlcr;

namespace {

ResidualSample sample(std::initializer_list<std::initializer_list<double>> rows) {
  Eigen::MatrixXd E(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
  Eigen::Index i = 0;
  for (const auto& r : rows) {
    Eigen::Index j = 0;
    for (double v : r) E(i, j++) = v;
    ++i;
  }
  return ResidualSample(E);
}

ResidualSample correlated(std::size_t T, std::size_t n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z;
  Eigen::MatrixXd E(static_cast<Eigen::Index>(T), static_cast<Eigen::Index>(n));
  for (Eigen::Index t = 0; t < E.rows(); ++t) {
    double common = z(rng);
    for (Eigen::Index j = 0; j < E.cols(); ++j) E(t, j) = (1.0 + j) * (0.6 * common + z(rng));
  }
  return ResidualSample(E);
}

// Shrinkage intensity written out with scalar loops over the definition.
double lambda_oracle(const Eigen::MatrixXd& E) {
  const int T = static_cast<int>(E.rows()), n = static_cast<int>(E.cols());
  std::vector<double> sd(n);
  for (int j = 0; j < n; ++j) {
    double s = 0;
    for (int t = 0; t < T; ++t) s += E(t, j) * E(t, j);
    sd[j] = std::sqrt(s / T);
  }
  double num = 0, den = 0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      std::vector<double> w(T);
      double mean = 0;
      for (int t = 0; t < T; ++t) {
        w[t] = (E(t, i) / sd[i]) * (E(t, j) / sd[j]);
        mean += w[t];
      }
      mean /= T;
      double var = 0;
      for (int t = 0; t < T; ++t) var += (w[t] - mean) * (w[t] - mean);
      // Var(r_ij): unbiased sample variance of the products, over T.
      num += var / (T - 1.0) / T;
      den += mean * mean;
    }
  if (den == 0) return 1.0;
  return std::clamp(num / den, 0.0, 1.0);
}

}  // namespace

TEST(FullCov, HandExamples) {
  Eigen::MatrixXd S = estimate_full_cov(sample({{1, 2}, {-1, -2}}));
  Eigen::Matrix2d expect;
  expect << 1, 2, 2, 4;
  EXPECT_LE((S - expect).norm(), 1e-15);

  Eigen::MatrixXd R = estimate_full_cov(sample({{1, -3, 2}, {1, -3, 2}, {1, -3, 2}}));
  Eigen::Vector3d r(1, -3, 2);
  EXPECT_LE((R - r * r.transpose()).norm(), 1e-14);

  Eigen::MatrixXd H = estimate_full_cov(sample({{1, 0}, {0, 1}}));
  EXPECT_LE((H - 0.5 * Eigen::Matrix2d::Identity()).norm(), 1e-15);
}

TEST(ResidualSample, Validation) {
  EXPECT_THROW(sample({{1, 2}}), std::invalid_argument);
  EXPECT_THROW(sample({{1, 2}, {std::nan(""), 1}}), std::invalid_argument);
  EXPECT_THROW(ResidualSample(Eigen::MatrixXd::Ones(3, 2), {"a"}), std::invalid_argument);
}

TEST(BuildWeight, Tags) {
  auto r = sample({{1, 2}, {-1, -2}});
  auto ols = build_weight(r, WeightTag::ols);
  EXPECT_TRUE(ols.matrix().isIdentity());
  EXPECT_FALSE(ols.shrinkage_lambda().has_value());
  auto wls = build_weight(r, WeightTag::wls);
  Eigen::Matrix2d d = Eigen::Vector2d(1, 4).asDiagonal();
  EXPECT_LE((wls.matrix() - d).norm(), 1e-15);
}

TEST(BuildWeight, ShrinkageWithUncorrelatedResidualsIsDiagonal) {
  auto r = sample({{1, 0}, {0, 2}, {-1, 0}, {0, -2}});
  auto shr = build_weight(r, WeightTag::shr);
  Eigen::Matrix2d d = Eigen::Vector2d(0.5, 2.0).asDiagonal();
  EXPECT_LE((shr.matrix() - d).norm(), 1e-15);
  EXPECT_EQ(*shr.shrinkage_lambda(), 1.0);  // zero denominator
}

TEST(BuildWeight, ShrinkageIntensityMatchesLoopOracle) {
  for (unsigned seed : {1u, 2u, 3u, 4u}) {
    auto r = correlated(30 + 10 * seed, 2 + seed, seed);
    EXPECT_NEAR(shrinkage_intensity(r), lambda_oracle(r.values()), 1e-12) << seed;
  }
}

TEST(BuildWeight, ShrinkageEndpoints) {
  auto r = correlated(40, 4, 9);
  auto wls = build_weight(r, WeightTag::wls);
  auto one = build_weight(r, WeightTag::shr, 1.0);
  auto zero = build_weight(r, WeightTag::shr, 0.0);
  EXPECT_EQ(one.matrix(), wls.matrix());
  EXPECT_LE((zero.matrix() - estimate_full_cov(r)).norm(), 1e-15);
  auto shr = build_weight(r, WeightTag::shr);
  double l = *shr.shrinkage_lambda();
  EXPECT_GE(l, 0.0);
  EXPECT_LE(l, 1.0);
  EXPECT_LE((shr.matrix() - (l * wls.matrix() + (1 - l) * zero.matrix())).norm(), 1e-12);
}

TEST(BuildWeight, ZeroVarianceNamesTheSeries) {
  Eigen::MatrixXd E(3, 2);
  E << 1, 0, -1, 0, 2, 0;
  ResidualSample r(E, {"alpha", "beta"});
  for (auto tag : {WeightTag::wls, WeightTag::shr}) {
    try {
      build_weight(r, tag);
      FAIL();
    } catch (const ZeroVarianceError& e) {
      EXPECT_EQ(e.series(), "beta");
    }
  }
  EXPECT_NO_THROW(build_weight(r, WeightTag::ols));
}

TEST(WeightMatrix, SolveRoundTripAndFactor) {
  std::mt19937_64 rng(4);
  for (int rep = 0; rep < 20; ++rep) {
    Eigen::MatrixXd W = oracle::random_spd(6, rng);
    auto w = WeightMatrix::from_matrix(W);
    Eigen::VectorXd b = Eigen::VectorXd::Random(6);
    EXPECT_LE((W * w.solve(b) - b).norm() / b.norm(), 1e-10);
    Eigen::MatrixXd L = w.lower_factor();
    EXPECT_LE((L * L.transpose() - W).norm() / W.norm(), 1e-12);
  }
  Eigen::Matrix2d bad;
  bad << 1, 2, 2, 1;
  EXPECT_THROW(WeightMatrix::from_matrix(bad), std::invalid_argument);
  Eigen::Matrix2d asym;
  asym << 1, 0.5, 0, 1;
  EXPECT_THROW(WeightMatrix::from_matrix(asym), std::invalid_argument);
}

TEST(WeightTag, Parse) {
  EXPECT_EQ(parse_weight_tag("ols"), WeightTag::ols);
  EXPECT_EQ(parse_weight_tag("wls"), WeightTag::wls);
  EXPECT_EQ(parse_weight_tag("shr"), WeightTag::shr);
  EXPECT_THROW(parse_weight_tag("mint"), std::invalid_argument);
}

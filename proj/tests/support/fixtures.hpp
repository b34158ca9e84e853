#pragma once

// Constraint systems shipped in fixtures/, plus helpers that build coherent
// vectors and random evaluation points for them.

#include <Eigen/Dense>

#include <functional>
#include <random>
#include <string>
#include <tuple>
#include <vector>

#include "nlcr/constraints.hpp"

#ifndef NLCR_FIXTURE_DIR
#error "NLCR_FIXTURE_DIR must point at the fixtures directory"
#endif

namespace fixtures {

inline std::string path(const std::string& file) { return std::string(NLCR_FIXTURE_DIR) + "/" + file; }

inline const std::vector<std::string> mortality_names{"D_USA", "D_A", "D_B", "P_USA", "P_A",
                                                      "P_B",   "R_USA", "R_A", "R_B"};
inline const std::vector<std::string> unemployment_names{"E_Aus", "E_S1", "E_S2", "U_Aus", "U_S1", "U_S2",
                                                         "T_Aus", "T_S1", "T_S2", "R_Aus", "R_S1", "R_S2"};

inline nlcr::ConstraintSystem quartic() {
  return nlcr::ConstraintSystem({"y1", "y2"}, nlcr::load_constraints(path("quartic.txt")));
}
inline nlcr::ConstraintSystem ratio() {
  return nlcr::ConstraintSystem({"y1", "y2", "y3"}, nlcr::load_constraints(path("ratio.txt")));
}
inline nlcr::ConstraintSystem mortality() {
  return nlcr::ConstraintSystem(mortality_names, nlcr::load_constraints(path("mortality.txt")));
}
inline nlcr::ConstraintSystem unemployment() {
  return nlcr::ConstraintSystem(unemployment_names, nlcr::load_constraints(path("unemployment.txt")));
}

/// Coherent mortality vector from the bottom-level deaths and populations.
inline Eigen::VectorXd mortality_point(double DA, double DB, double PA, double PB) {
  Eigen::VectorXd y(9);
  y << DA + DB, DA, DB, PA + PB, PA, PB, (DA + DB) / (PA + PB), DA / PA, DB / PB;
  return y;
}

/// Coherent labour-force vector from state employment and unemployment.
inline Eigen::VectorXd unemployment_point(double E1, double E2, double U1, double U2) {
  const double E = E1 + E2, U = U1 + U2;
  Eigen::VectorXd y(12);
  y << E, E1, E2, U, U1, U2, E + U, E1 + U1, E2 + U2, 100 * U / (E + U), 100 * U1 / (E1 + U1),
      100 * U2 / (E2 + U2);
  return y;
}

using Sampler = std::function<Eigen::VectorXd(std::mt19937_64&)>;

/// Uniform box sampler; denominators stay well away from zero.
inline Sampler box(std::vector<std::pair<double, double>> ranges) {
  return [ranges](std::mt19937_64& rng) {
    Eigen::VectorXd y(static_cast<Eigen::Index>(ranges.size()));
    for (std::size_t i = 0; i < ranges.size(); ++i)
      y[static_cast<Eigen::Index>(i)] = std::uniform_real_distribution<double>(ranges[i].first, ranges[i].second)(rng);
    return y;
  };
}

inline std::vector<std::tuple<std::string, nlcr::ConstraintSystem, Sampler>> all_with_samplers() {
  std::vector<std::tuple<std::string, nlcr::ConstraintSystem, Sampler>> out;
  out.emplace_back("quartic", quartic(), box({{-2, 2}, {-2, 2}}));
  out.emplace_back("ratio", ratio(), box({{10, 60}, {80, 120}, {250, 350}}));
  out.emplace_back("mortality", mortality(),
                   box({{200, 350}, {80, 120}, {150, 220}, {25, 40}, {9, 12}, {18, 24}, {6, 12}, {6, 12}, {6, 12}}));
  out.emplace_back("unemployment", unemployment(),
                   box({{6, 8}, {3.5, 4.5}, {2.5, 3.5}, {0.2, 0.5}, {0.1, 0.3}, {0.1, 0.2}, {6, 9}, {3.6, 4.8},
                        {2.6, 3.7}, {3, 7}, {3, 7}, {3, 7}}));
  return out;
}

}  // namespace fixtures

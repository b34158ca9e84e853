// Reconciles a few base forecasts onto y1 = y2^4 and prints the guarantee
// ball for each.

#include <iostream>

#include "nlcr/guarantee.hpp"
#include "nlcr/reconcile.hpp"
#include "nlcr/simlab.hpp"

int main() {
  const nlcr::ConstraintSystem sys = nlcr::quartic_system();
  const auto w = nlcr::WeightMatrix::identity(2);
  const double points[][2] = {{-1.0, 0.0}, {0.5, 0.8}, {1.0, 0.3}, {2.0, -1.0}};
  std::cout.precision(6);
  for (const auto& p : points) {
    Eigen::VectorXd y_hat(2);
    y_hat << p[0], p[1];
    auto r = nlcr::reconcile(y_hat, sys, w);
    std::cout << "y_hat (" << p[0] << ", " << p[1] << ")  region " << nlcr::to_string(sys.classify_region(y_hat)[0])
              << "\n  y_tilde (" << r.y_tilde[0] << ", " << r.y_tilde[1] << ")  " << nlcr::to_string(r.solver.status)
              << " in " << r.solver.iterations << " iterations\n";
    auto ball = nlcr::guarantee_ball(y_hat, r.y_tilde, sys);
    if (ball.finite())
      std::cout << "  radius " << ball.radius << "  y_breve (" << (*ball.y_breve)[0] << ", " << (*ball.y_breve)[1]
                << ")\n";
    else
      std::cout << "  radius infinite: every coherent point is forecast better\n";
  }
}

#pragma once

#include <vector>

#include "mmfn/model.hpp"

namespace mmfn {

// Stationary distribution of an irreducible generator, computed with the
// Grassmann-Taksar-Heyman elimination (subtraction free, so pi >= 0 exactly).
// Throws StructuralError when Q is not a generator.
Vec stationary_background(const Mat& Q);

struct TrafficSolution {
  Mat alpha;       // linear traffic, d x m
  Mat alpha_star;  // maximal nonlinear solution, d x m
  Vec pi;
  Vec alpha_bar, alpha_star_bar, lambda_bar, mu_bar, v_bar;
  int nonlinear_sweeps = 0;
};

// Per background state, solves (I - P^t) alpha(i) = lambda(i).
Mat linear_traffic(const Network& net);

struct NonlinearTraffic {
  Mat alpha_star;
  int sweeps = 0;
  double last_change = 0.0;
};

// Maximal solution of alpha = lambda + P^t min(alpha, mu), by monotone
// descent from the linear solution. Throws ConvergenceError past max_sweeps.
NonlinearTraffic nonlinear_traffic(const Network& net, double tol = 1e-12,
                                   int max_sweeps = 1'000'000);

TrafficSolution solve_traffic(const Network& net);

enum class Stability { Stable, Marginal, Unstable };

struct StabilityReport {
  Stability status = Stability::Unstable;
  Vec drift;           // R^-1 v_bar
  Vec alpha_minus_mu;  // alpha_bar - mu_bar
  double tolerance = 0.0;
  double agreement = 0.0;  // ||drift - alpha_minus_mu||_inf

  bool stable() const { return status == Stability::Stable; }
};

// Stable iff every entry of R^-1 v_bar is below -1e-12 * rate scale. Entries
// inside the band make the model "marginal".
StabilityReport is_stable(const Network& net);

struct StationVerdicts {
  std::vector<int> stable;  // 0-based station indices
  Vec gap;                  // alpha*_bar - mu_bar, negative on stable stations
};

StationVerdicts stable_stations(const Network& net);

const char* to_string(Stability s);

}  // namespace mmfn

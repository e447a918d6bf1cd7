#pragma once

#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace mmfn {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Primitive parameters of a Markov-modulated fluid network. Rows of lambda
// and mu are stations, columns are background states. P(k, l) is the
// fraction of station k's output routed to station l.
struct MmfnModel {
  int d = 0;
  int m = 0;
  Mat lambda;
  Mat mu;
  Mat P;
  Mat Q;

  bool operator==(const MmfnModel&) const = default;
};

struct InvariantCheck {
  std::string name;
  bool passed = true;
  std::string witness;  // empty when passed
};

struct ValidationReport {
  std::vector<InvariantCheck> checks;

  bool ok() const;
  // First failing check, or nullptr.
  const InvariantCheck* first_failure() const;
};

// Throws StructuralError when the dimensions disagree; otherwise reports
// every invariant, failed ones with a witness.
ValidationReport validate_model(const MmfnModel& model);

struct DerivedModel {
  Mat R;      // I - P^t
  Mat R_inv;  // cached inverse
  Mat v;      // v(k, i), net flow rate of station k in background state i
  double inverse_residual = 0.0;  // ||R R^-1 - I||_inf
};

DerivedModel derive(const MmfnModel& model);

// (d+1)x(d+1) matrix with index 0 standing for the outside world.
Mat augmented_routing(const MmfnModel& model);

// Perron root of a nonnegative square matrix, estimated by power iteration
// on A + I with Collatz-Wielandt bounds. Returns the upper bound. Stops
// early once the upper bound drops below stop_below.
double nonnegative_spectral_radius(
    const Mat& A, double tol = 1e-10,
    double stop_below = -std::numeric_limits<double>::infinity());

// Strongly connected components of the directed graph with an edge i -> j
// whenever adj(i, j) > 0 and i != j. Components are returned in order of
// their smallest member, members sorted.
std::vector<std::vector<int>> strongly_connected_components(const Mat& adj);

// Largest absolute rate in lambda and mu (at least 1e-300).
double rate_scale(const MmfnModel& model);
// Largest |q_ii|.
double generator_scale(const MmfnModel& model);

// A validated model bundled with its derived quantities. Every analysis
// entry point takes a Network so validation happens exactly once.
class Network {
 public:
  // Validates and derives; throws ValidationError carrying the first failed
  // check when the model is invalid.
  explicit Network(MmfnModel model);

  const MmfnModel& model() const { return model_; }
  const DerivedModel& derived() const { return derived_; }
  int d() const { return model_.d; }
  int m() const { return model_.m; }
  const Mat& R() const { return derived_.R; }
  const Mat& R_inv() const { return derived_.R_inv; }
  const Mat& v() const { return derived_.v; }
  const Mat& Q() const { return model_.Q; }
  const Vec& pi() const { return pi_; }
  const Vec& v_bar() const { return v_bar_; }

 private:
  MmfnModel model_;
  DerivedModel derived_;
  Vec pi_;
  Vec v_bar_;
};

}  // namespace mmfn

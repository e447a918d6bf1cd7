#pragma once

#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "mmfn/lattice.hpp"
#include "mmfn/model.hpp"

namespace mmfn {

// Three-valued set membership; Boundary means within the tolerance band.
enum class Tri { No, Boundary, Yes };

struct Membership {
  double gamma = 0.0;
  Vec gk;  // gamma_k(theta)
  Tri gamma_minus = Tri::No;    // {gamma < 0}
  Tri gamma_plus = Tri::No;     // {gamma > 0}
  Tri gamma_minus_A = Tri::No;  // gamma < 0 and gamma_k < 0 on A
  Tri gamma_plus_A = Tri::No;   // gamma > 0 and gamma_k >= 0 on A
};

// Widths of the boundary bands at theta: 1e-12 times the magnitude of the
// diagonal perturbation plus the generator scale (for gamma), and 1e-12
// times ||theta|| ||R|| (for gamma_k).
struct Tolerance {
  double gamma = 0.0;
  double gk = 0.0;
};
Tolerance boundary_tolerance(const Network& net, const Vec& theta);

// A holds 0-based station indices.
Membership classify(const Network& net, const Vec& theta, const std::vector<int>& A);
Membership classify_values(double gamma, const Vec& gk, const std::vector<int>& A, Tolerance tol);

struct BoundingBox {
  Vec lo, hi;
  int resolution = 200;  // cells per axis
  std::vector<bool> truncated;     // Gamma^- extends past hi in +e_k
  std::vector<bool> lo_truncated;  // Gamma^- extends past lo in -e_k
};

struct AutoBoxOptions {
  // Cap on |theta_k| in units of generator scale / rate scale.
  double cap_factor = 50.0;
  // Default resolution: 200 for d = 2, then chosen so the lattice has at
  // most max_points points.
  int resolution = 0;
  std::size_t max_points = 250'000;
  // solve_domain: how many times an axis may double when D^(max) reaches
  // the top of the box.
  int max_growth = 6;
};

int default_resolution(int d, std::size_t max_points = 250'000);

// Per axis: positive root of gamma(t e_k) when it exists, and the extents of
// Gamma^- along +-e_k within the cap. Throws PreconditionError when the
// model is not stable.
BoundingBox auto_box(const Network& net, const AutoBoxOptions& opt = {});

struct AxisScan {
  double root = std::numeric_limits<double>::quiet_NaN();  // NaN if none
  double extent_hi = 0.0;  // sup theta_k over Gamma^-
  double extent_lo = 0.0;  // inf theta_k over Gamma^-
  bool hi_capped = false, lo_capped = false;
};
AxisScan scan_axis(const Network& net, int k, double cap);

// Lattice matching a box: the origin is an exact lattice point.
Lattice make_lattice(const BoundingBox& box);

struct FixedPointOptions {
  int max_sweeps = 200;
  int threads = 0;
};

struct DomainGrid {
  BoundingBox box;
  Lattice lattice;
  std::vector<double> gamma;  // gamma at each lattice point
  Mask gamma_minus;           // strict Gamma^- (boundary band excluded)
  Mask down_gamma_minus;      // lattice down-closure of gamma_minus
  std::vector<Lattice> dk_lattice;
  std::vector<Mask> Dk;
  Mask dmax;
  int iterations = 0;
  std::vector<int> truncated_axes;
  // growth[n][k] = |D_k^(n)|; row 0 is the initial generation.
  std::vector<std::vector<std::size_t>> growth;
  bool nontrivial = false;
  bool monotone = true;  // D^(n-1) subset of D^(n) held before the union step
  int box_growths = 0;   // rounds of box growth in solve_domain
};

DomainGrid fixed_point_iteration(const Network& net, const BoundingBox& box,
                                 const FixedPointOptions& opt = {});

// auto_box, then fixed_point_iteration, doubling every axis whose top face
// D^(max) still touches, as long as Gamma^- ends along that axis (up to
// twice its extent). Axes still touching at the end are flagged truncated.
DomainGrid solve_domain(const Network& net, const AutoBoxOptions& box_opt = {},
                        const FixedPointOptions& opt = {});

// CSV: theta_1..theta_d, gamma, gamma_minus, down_gamma_minus, dmax.
std::string grid_csv(const DomainGrid& grid);
// Maximal lattice points of D^(max) (no successor along any axis inside it).
std::vector<Vec> dmax_boundary(const DomainGrid& grid);
std::string boundary_csv(const DomainGrid& grid);

// ---------------------------------------------------------------------------
// d = 2 reference solution.

struct TwoDExact {
  double alpha1 = 0.0, alpha2 = 0.0;
  int iterations = 0;
  std::vector<std::pair<double, double>> trace;
  bool box_limited = false;
};

struct TwoDOptions {
  double tol = 1e-9;
  int max_iterations = 10'000;
};

// Alternating solution of the two coupled sup problems, searching theta
// inside the given box (auto_box when omitted).
TwoDExact two_d_exact(const Network& net, const BoundingBox& box, const TwoDOptions& opt = {});
TwoDExact two_d_exact(const Network& net, const TwoDOptions& opt = {});

// theta lies strictly below a point of Gamma^- (2-d only; uses the box cap
// for the search).
bool in_down_gamma_minus_2d(const Network& net, const Vec& theta, double cap);
// Region {theta in down(Gamma^-), theta < alpha}.
bool in_two_d_region(const Network& net, const TwoDExact& sol, const Vec& theta, double cap);

// ---------------------------------------------------------------------------
// Decay-rate bounds. Orientation: rates are exponents r in
// P(<c, Z> > x) ~ exp(-r x). The domain D^(max) yields a lower bound r_lo
// on the rate; the change-of-measure construction yields an upper bound.

struct UpperDecayRate {
  Vec c;
  double ray = 0.0;        // sup{a >= 0 : a c in D^(max)}
  double ray_error = 0.0;  // grid-resolution error bar
  double hyperplane = 0.0; // sup{<theta, c> : theta in D^(max)}
  double hyperplane_error = 0.0;
  Vec ray_point, hyperplane_point;
  bool ray_box_limited = false;
  bool hyperplane_box_limited = false;
};

// Bounds from the moment-generating-function domain. c must be nonnegative
// and nonzero; it is normalized to unit length.
UpperDecayRate upper_decay_rate(const Network& net, const Vec& c, const DomainGrid& grid);

struct CoordinateLowerBound {
  int k = 0;
  double value = std::numeric_limits<double>::infinity();
  bool empty = true;  // G_k had no feasible lattice point
  Vec theta;          // witness point
  double cell = 0.0;  // step along axis k
};

// inf{theta_k >= 0 : theta in G_k} by lattice scan then bisection along
// axis k.
CoordinateLowerBound lower_decay_rate_coordinate(const Network& net, int k, const DomainGrid& grid);
// Checks every G_k condition at theta.
bool in_G(const Network& net, int k, const Vec& theta);

struct DirectionLowerBound {
  Vec c;
  double value = 0.0;  // first positive root u* of gamma(u c)
  Vec exit_point;      // u* c
  Vec exit_gradient;
};

// Throws PreconditionError ("direction outside Corn") when the ray does not
// leave Gamma^- through its north-east boundary.
DirectionLowerBound lower_decay_rate_direction(const Network& net, const Vec& c);

// Positive root of u -> gamma(u c) for unit c with <v_bar, c> < 0, or NaN
// when gamma stays negative up to cap.
double first_positive_root(const std::function<double(double)>& f, double cap, double rel_tol = 1e-14);

}  // namespace mmfn

#include <cmath>

#include "mmfn/error.hpp"
#include "mmfn/geometry.hpp"
#include "mmfn/spectral.hpp"
#include "mmfn/traffic.hpp"
#include "optimize.hpp"

namespace mmfn {

namespace {

// One half-step: sup{x >= 0 : gamma(x, t) < 0 for some t in
// [t_lo, min(other_cap, slope * x)]}, coordinates ordered (own, other).
double half_step(const Network& net, int own, double x_hi, double t_lo, double other_cap,
                 double slope, double warm) {
  const int other = 1 - own;
  auto gamma_at = [&](double x, double t) {
    Vec th(2);
    th(own) = x;
    th(other) = t;
    return gamma_value(net, th);
  };
  auto M = [&](double x) {
    double ub = std::min(other_cap, slope * x);
    if (!(ub > t_lo)) return std::numeric_limits<double>::infinity();
    auto f = [&](double t) { return gamma_at(x, t); };
    return detail::golden_min(f, t_lo, ub, 1e-13 * std::max(1.0, ub - t_lo)).f;
  };
  auto inside = [&](double x) {
    return M(x) < -1e-12 * (std::abs(x) * net.v().cwiseAbs().maxCoeff() +
                            generator_scale(net.model()));
  };

  double in = -1.0;
  if (warm > 0.0 && inside(warm)) in = warm;
  if (in < 0.0) {
    auto r = detail::golden_min(M, 0.0, x_hi, 1e-12 * x_hi);
    if (r.x >= 0.0 && inside(r.x)) in = r.x;
  }
  if (in < 0.0) return 0.0;
  if (inside(x_hi)) return x_hi;
  return detail::bisect_boundary(inside, in, x_hi, 1e-13 * x_hi);
}

}  // namespace

TwoDExact two_d_exact(const Network& net, const BoundingBox& box, const TwoDOptions& opt) {
  if (net.d() != 2) throw PreconditionError("two_d_exact needs d = 2");
  if (!is_stable(net).stable()) throw PreconditionError("two_d_exact needs a stable model");
  const Mat& P = net.model().P;
  // gamma_2 < 0  <=>  theta_2 < p21 theta_1 / (1 - p22), and symmetrically.
  const double s1 = P(1, 0) / (1.0 - P(1, 1));
  const double s2 = P(0, 1) / (1.0 - P(0, 0));
  TwoDExact out;
  double a1 = 0.0, a2 = 0.0;
  for (int it = 1; it <= opt.max_iterations; ++it) {
    double n1 = half_step(net, 0, box.hi(0), box.lo(1), a2, s1, a1);
    double n2 = half_step(net, 1, box.hi(1), box.lo(0), n1, s2, a2);
    // The sup is over growing constraint sets; rounding in the bisection
    // must not make the sequence decrease.
    n1 = std::max(n1, a1);
    n2 = std::max(n2, a2);
    out.trace.emplace_back(n1, n2);
    out.iterations = it;
    bool done = std::abs(n1 - a1) <= opt.tol && std::abs(n2 - a2) <= opt.tol;
    a1 = n1;
    a2 = n2;
    if (done) break;
  }
  out.alpha1 = a1;
  out.alpha2 = a2;
  out.box_limited = a1 >= box.hi(0) || a2 >= box.hi(1);
  if (!out.box_limited) {
    // The lower face binds when widening it lets either sup move.
    double w1 = half_step(net, 0, box.hi(0), 2.0 * box.lo(1), a2, s1, a1);
    double w2 = half_step(net, 1, box.hi(1), 2.0 * box.lo(0), a1, s2, a2);
    out.box_limited = w1 > a1 + 1e-6 * box.hi(0) || w2 > a2 + 1e-6 * box.hi(1);
  }
  return out;
}

TwoDExact two_d_exact(const Network& net, const TwoDOptions& opt) {
  return two_d_exact(net, auto_box(net), opt);
}

bool in_down_gamma_minus_2d(const Network& net, const Vec& theta, double cap) {
  if (net.d() != 2) throw PreconditionError("2-d membership test needs d = 2");
  // For a stable model the origin is dominated by a point of Gamma^-, so
  // every nonpositive theta qualifies.
  if (theta(0) <= 0.0 && theta(1) <= 0.0) return true;
  if (gamma_value(net, theta) < 0.0) return true;
  // Otherwise Gamma^- meets the quadrant above theta only through one of its
  // two edges.
  for (int j = 0; j < 2; ++j) {
    auto f = [&](double s) {
      Vec th = theta;
      th(j) += s;
      return gamma_value(net, th);
    };
    if (detail::golden_min(f, 0.0, cap, 1e-12 * cap).f < 0.0) return true;
  }
  return false;
}

bool in_two_d_region(const Network& net, const TwoDExact& sol, const Vec& theta, double cap) {
  return theta(0) < sol.alpha1 && theta(1) < sol.alpha2 && in_down_gamma_minus_2d(net, theta, cap);
}

}  // namespace mmfn

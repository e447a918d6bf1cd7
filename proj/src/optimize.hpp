#pragma once

// Small derivative-free helpers for convex one-dimensional problems.

#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include "mmfn/model.hpp"

namespace mmfn::detail {

struct Min1d {
  double x;
  double f;
};

// Golden-section search for a convex function on [a, b].
inline Min1d golden_min(const std::function<double(double)>& f, double a, double b, double tol) {
  constexpr double g = 0.6180339887498949;
  if (b < a) std::swap(a, b);
  double c = b - g * (b - a), d = a + g * (b - a);
  double fc = f(c), fd = f(d);
  while (b - a > tol) {
    if (fc <= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - g * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + g * (b - a);
      fd = f(d);
    }
  }
  // Endpoints matter for monotone pieces; compare them too.
  Min1d best{fc <= fd ? c : d, std::min(fc, fd)};
  double fa = f(a), fb = f(b);
  if (fa < best.f) best = {a, fa};
  if (fb < best.f) best = {b, fb};
  return best;
}

// Cyclic coordinate descent with golden-section line searches for a convex
// function over the box lo <= x <= hi. x is the warm start and is updated.
inline double box_min(const std::function<double(const Vec&)>& f, Vec& x, const Vec& lo,
                      const Vec& hi, double tol, int max_sweeps = 60) {
  double fx = f(x);
  if (x.size() == 0) return fx;
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double before = fx;
    for (int j = 0; j < x.size(); ++j) {
      Vec y = x;
      auto line = [&](double t) {
        y(j) = t;
        return f(y);
      };
      Min1d r = golden_min(line, lo(j), hi(j), tol * std::max(1.0, hi(j) - lo(j)));
      if (r.f < fx) {
        x(j) = r.x;
        fx = r.f;
      }
    }
    if (x.size() == 1 || before - fx <= 1e-15 * std::max(1.0, std::abs(fx))) break;
  }
  return fx;
}

// Largest x in [inside, outside] with pred(x) true, given pred(inside) is
// true and pred(outside) is false; works for either ordering of the ends.
inline double bisect_boundary(const std::function<bool(double)>& pred, double inside,
                              double outside, double tol, int max_iter = 200) {
  for (int it = 0; it < max_iter && std::abs(outside - inside) > tol; ++it) {
    double mid = 0.5 * (inside + outside);
    if (mid == inside || mid == outside) break;
    if (pred(mid))
      inside = mid;
    else
      outside = mid;
  }
  return inside;
}

}  // namespace mmfn::detail

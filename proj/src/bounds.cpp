#include <algorithm>
#include <cmath>

#include "mmfn/error.hpp"
#include "mmfn/geometry.hpp"
#include "mmfn/spectral.hpp"
#include "mmfn/traffic.hpp"
#include "optimize.hpp"

namespace mmfn {

namespace {

Vec unit_direction(const Vec& c, int d) {
  if (c.size() != d) throw StructuralError("direction must have d entries");
  if ((c.array() < 0.0).any()) throw PreconditionError("direction has a negative entry");
  double n = c.norm();
  if (!(n > 0.0) || !std::isfinite(n)) throw PreconditionError("direction must be nonzero");
  return c / n;
}

// A maximizer sitting on a face the box cut short may move once the box
// grows.
bool on_truncated_face(const DomainGrid& grid, std::size_t p) {
  const Lattice& L = grid.lattice;
  for (int a = 0; a < L.dim(); ++a) {
    int i = L.axis_index(p, a);
    if (a < static_cast<int>(grid.box.truncated.size()) && grid.box.truncated[a] &&
        i + 2 >= L.count(a))
      return true;
    if (a < static_cast<int>(grid.box.lo_truncated.size()) && grid.box.lo_truncated[a] && i <= 1)
      return true;
  }
  return false;
}

}  // namespace

UpperDecayRate upper_decay_rate(const Network& net, const Vec& c_in, const DomainGrid& grid) {
  const int d = net.d();
  UpperDecayRate out;
  out.c = unit_direction(c_in, d);
  const Vec& c = out.c;
  const Lattice& L = grid.lattice;
  const double floor_c = 1.0 / std::sqrt(static_cast<double>(d));

  out.ray = 0.0;
  out.hyperplane = -std::numeric_limits<double>::infinity();
  std::size_t ray_arg = L.size(), hyp_arg = L.size();
  for (std::size_t p = 0; p < L.size(); ++p) {
    if (!grid.dmax[p]) continue;
    Vec th = L.point(p);
    double h = th.dot(c);
    if (h > out.hyperplane) {
      out.hyperplane = h;
      hyp_arg = p;
    }
    double r = std::numeric_limits<double>::infinity();
    bool ok = true;
    for (int k = 0; k < d && ok; ++k) {
      if (c(k) > 0.0)
        r = std::min(r, th(k) / c(k));
      else
        ok = th(k) >= 0.0;
    }
    if (ok && r > out.ray) {
      out.ray = r;
      ray_arg = p;
    }
  }
  out.ray_error = 0.0;
  out.hyperplane_error = 0.0;
  for (int k = 0; k < d; ++k) {
    if (c(k) > 0.0) out.ray_error = std::max(out.ray_error, L.step(k) / std::max(c(k), floor_c));
    out.hyperplane_error += c(k) * L.step(k);
  }
  if (ray_arg < L.size()) {
    out.ray_point = L.point(ray_arg);
    out.ray_box_limited = on_truncated_face(grid, ray_arg);
  } else {
    out.ray_point = Vec::Zero(d);
  }
  // The origin lies in the closure of D^(max) even when no lattice point
  // with <theta, c> >= 0 survives.
  if (hyp_arg < L.size() && out.hyperplane >= 0.0) {
    out.hyperplane_point = L.point(hyp_arg);
    out.hyperplane_box_limited = on_truncated_face(grid, hyp_arg);
  } else {
    out.hyperplane = 0.0;
    out.hyperplane_point = Vec::Zero(d);
  }
  return out;
}

bool in_G(const Network& net, int k, const Vec& theta) {
  const int d = net.d();
  Tolerance tol = boundary_tolerance(net, theta);
  SpectralPoint sp = perron(net, theta);
  if (!(sp.gamma > tol.gamma)) return false;
  Vec gk = gamma_k(net, theta);
  for (int l = 0; l < d; ++l) {
    if (l == k) continue;
    if (gk(l) < -tol.gk) return false;
    if (!(sp.grad(l) < 0.0)) return false;
  }
  return (net.R_inv() * sp.grad)(k) > 0.0;
}

CoordinateLowerBound lower_decay_rate_coordinate(const Network& net, int k, const DomainGrid& grid) {
  if (!is_stable(net).stable()) throw PreconditionError("lower bounds need a stable model");
  const int d = net.d();
  if (k < 0 || k >= d) throw StructuralError("station index out of range");
  const Lattice& L = grid.lattice;
  CoordinateLowerBound out;
  out.k = k;
  out.cell = L.step(k);

  // Walk the layers theta_k = 0, s, 2s, ... and stop at the first layer with
  // a feasible point; cheap filters run before the eigenvector solve.
  const int zero = L.zero_index(k);
  std::size_t found = L.size();
  for (int layer = zero; layer < L.count(k) && found == L.size(); ++layer) {
    for (std::size_t p = 0; p < L.size(); ++p) {
      if (L.axis_index(p, k) != layer) continue;
      Vec th = L.point(p);
      Tolerance tol = boundary_tolerance(net, th);
      if (!(grid.gamma[p] > tol.gamma)) continue;
      Vec gk = gamma_k(net, th);
      bool ok = true;
      for (int l = 0; l < d && ok; ++l)
        if (l != k) ok = gk(l) >= -tol.gk;
      if (!ok || !in_G(net, k, th)) continue;
      found = p;
      break;
    }
  }
  if (found == L.size()) return out;

  out.empty = false;
  Vec th = L.point(found);
  double hi = th(k);
  double lo = std::max(0.0, hi - L.step(k));
  Vec probe = th;
  auto feasible = [&](double x) {
    probe(k) = x;
    return in_G(net, k, probe);
  };
  if (hi > 0.0 && feasible(lo)) {
    out.value = lo;
  } else if (hi > 0.0) {
    out.value = detail::bisect_boundary(feasible, hi, lo, 1e-12 * std::max(1.0, hi));
  } else {
    out.value = 0.0;
  }
  out.theta = th;
  out.theta(k) = out.value;
  return out;
}

DirectionLowerBound lower_decay_rate_direction(const Network& net, const Vec& c_in) {
  if (!is_stable(net).stable()) throw PreconditionError("lower bounds need a stable model");
  DirectionLowerBound out;
  out.c = unit_direction(c_in, net.d());
  const Vec& c = out.c;
  if (!(net.v_bar().dot(c) < 0.0))
    throw PreconditionError("direction outside Corn: mean drift along c is not negative");
  const double cap = 50.0 * generator_scale(net.model()) / rate_scale(net.model()) *
                     std::sqrt(static_cast<double>(net.d()));
  double u = first_positive_root([&](double t) { return gamma_value(net, t * c); }, cap);
  if (std::isnan(u))
    throw PreconditionError("direction outside Corn: the ray never leaves Gamma^-");
  out.value = u;
  out.exit_point = u * c;
  SpectralPoint sp = perron(net, out.exit_point);
  out.exit_gradient = sp.grad;
  const double tol = 1e-9 * std::max(1.0, sp.grad.cwiseAbs().maxCoeff());
  if ((sp.grad.array() < -tol).any())
    throw PreconditionError(
        "direction outside Corn: the ray leaves Gamma^- where the gradient has a negative entry");
  return out;
}

}  // namespace mmfn

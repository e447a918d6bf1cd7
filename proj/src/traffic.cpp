#include "mmfn/traffic.hpp"

#include <cmath>
#include <sstream>

#include "mmfn/error.hpp"

namespace mmfn {

Vec stationary_background(const Mat& Q) {
  const int m = static_cast<int>(Q.rows());
  if (m == 0 || Q.cols() != m) throw StructuralError("Q must be square and nonempty");
  double scale = 1e-300;
  for (int i = 0; i < m; ++i) scale = std::max(scale, std::abs(Q(i, i)));
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < m; ++j)
      if (i != j && (Q(i, j) < 0.0 || !std::isfinite(Q(i, j))))
        throw StructuralError("Q has a negative off-diagonal entry");
    if (std::abs(Q.row(i).sum()) > 1e-12 * std::max(1.0, scale))
      throw StructuralError("Q rows must sum to zero");
  }
  if (m == 1) return Vec::Ones(1);

  // GTH: censor states m-1, ..., 1 in turn, working only with off-diagonal
  // rates.
  Mat A = Q;
  for (int n = m - 1; n > 0; --n) {
    double s = 0.0;
    for (int j = 0; j < n; ++j) s += A(n, j);
    if (!(s > 0.0)) throw StructuralError("Q is reducible");
    for (int i = 0; i < n; ++i) {
      double f = A(i, n) / s;
      if (f == 0.0) continue;
      for (int j = 0; j < n; ++j)
        if (j != i) A(i, j) += f * A(n, j);
    }
  }
  Vec pi = Vec::Zero(m);
  pi(0) = 1.0;
  for (int n = 1; n < m; ++n) {
    double num = 0.0, den = 0.0;
    for (int i = 0; i < n; ++i) num += pi(i) * A(i, n);
    for (int j = 0; j < n; ++j) den += A(n, j);
    pi(n) = num / den;
  }
  return pi / pi.sum();
}

Mat linear_traffic(const Network& net) {
  // R alpha(i) = lambda(i) for every background state i.
  return net.R_inv() * net.model().lambda;
}

NonlinearTraffic nonlinear_traffic(const Network& net, double tol, int max_sweeps) {
  const MmfnModel& md = net.model();
  const Mat Pt = md.P.transpose();
  NonlinearTraffic out;
  out.alpha_star = linear_traffic(net);
  const double abs_tol = tol * std::max(1.0, rate_scale(md));
  for (int sweep = 1; sweep <= max_sweeps; ++sweep) {
    Mat next = md.lambda + Pt * out.alpha_star.cwiseMin(md.mu);
    // Rounding can push the iterate up by an ulp; keep the descent monotone.
    next = next.cwiseMin(out.alpha_star);
    out.last_change = (next - out.alpha_star).cwiseAbs().maxCoeff();
    out.alpha_star = std::move(next);
    out.sweeps = sweep;
    if (out.last_change <= abs_tol) return out;
  }
  std::ostringstream os;
  os << "nonlinear traffic did not converge in " << max_sweeps
     << " sweeps (last change " << out.last_change << ")";
  throw ConvergenceError(os.str());
}

TrafficSolution solve_traffic(const Network& net) {
  TrafficSolution s;
  const MmfnModel& md = net.model();
  s.pi = net.pi();
  s.alpha = linear_traffic(net);
  auto nl = nonlinear_traffic(net);
  s.alpha_star = nl.alpha_star;
  s.nonlinear_sweeps = nl.sweeps;
  s.alpha_bar = s.alpha * s.pi;
  s.alpha_star_bar = s.alpha_star * s.pi;
  s.lambda_bar = md.lambda * s.pi;
  s.mu_bar = md.mu * s.pi;
  s.v_bar = net.v_bar();
  return s;
}

StabilityReport is_stable(const Network& net) {
  const MmfnModel& md = net.model();
  StabilityReport r;
  r.drift = net.R_inv() * net.v_bar();
  r.alpha_minus_mu = net.R_inv() * (md.lambda * net.pi()) - md.mu * net.pi();
  r.tolerance = 1e-12 * rate_scale(md);
  r.agreement = (r.drift - r.alpha_minus_mu).cwiseAbs().maxCoeff();
  if (r.agreement > 1e-10 * std::max(1.0, rate_scale(md)))
    throw ConvergenceError("drift identity R^-1 v = alpha - mu violated numerically");
  double worst = r.drift.maxCoeff();
  if (worst < -r.tolerance)
    r.status = Stability::Stable;
  else if (worst <= r.tolerance)
    r.status = Stability::Marginal;
  else
    r.status = Stability::Unstable;
  return r;
}

StationVerdicts stable_stations(const Network& net) {
  const MmfnModel& md = net.model();
  StationVerdicts out;
  Mat as = nonlinear_traffic(net).alpha_star;
  out.gap = as * net.pi() - md.mu * net.pi();
  const double tol = 1e-12 * rate_scale(md);
  for (int k = 0; k < md.d; ++k)
    if (out.gap(k) < -tol) out.stable.push_back(k);
  return out;
}

const char* to_string(Stability s) {
  switch (s) {
    case Stability::Stable: return "stable";
    case Stability::Marginal: return "marginal";
    case Stability::Unstable: return "unstable";
  }
  return "?";
}

}  // namespace mmfn

#include <algorithm>
#include <cmath>

#include "mmfn/error.hpp"
#include "mmfn/parallel.hpp"
#include "mmfn/simulator.hpp"
#include "mmfn/spectral.hpp"
#include "mmfn/traffic.hpp"

namespace mmfn {

namespace {

struct MeanSe {
  double mean = 0.0, se = 0.0;
};

MeanSe mean_se(const std::vector<double>& x) {
  const std::size_t n = x.size();
  MeanSe r;
  if (n == 0) return r;
  r.mean = pairwise_sum(x) / n;
  if (n < 2) return r;
  std::vector<double> sq(n);
  for (std::size_t i = 0; i < n; ++i) sq[i] = (x[i] - r.mean) * (x[i] - r.mean);
  r.se = std::sqrt(pairwise_sum(sq) / (n - 1) / n);
  return r;
}

// Time during [s0, s1] that f0 + slope (t - s0) exceeds x.
double time_above(double f0, double slope, double s0, double s1, double x) {
  const double len = s1 - s0;
  double f1 = f0 + slope * len;
  if (f0 > x && f1 > x) return len;
  if (f0 <= x && f1 <= x) return 0.0;
  double cross = (x - f0) / slope;
  return f0 > x ? cross : len - cross;
}

// expm1(u) / u, continuous at 0.
double phi1(double u) { return std::abs(u) < 1e-8 ? 1.0 + 0.5 * u : std::expm1(u) / u; }

void check_mc(const MonteCarloOptions& opt) {
  if (opt.reps < 1) throw PreconditionError("reps must be positive");
  if (!(opt.horizon > 0.0)) throw PreconditionError("horizon must be positive");
}

double resolve_burn_in(const Network& net, const MonteCarloOptions& opt) {
  double b = opt.burn_in >= 0.0 ? opt.burn_in : default_burn_in(net);
  if (!(b < opt.horizon)) throw PreconditionError("burn-in must be shorter than the horizon");
  return b;
}

// Weighted least squares slope of y on x.
double wls_slope(const std::vector<double>& x, const std::vector<double>& y,
                 const std::vector<double>& w) {
  double sw = 0, sx = 0, sy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sw += w[i];
    sx += w[i] * x[i];
    sy += w[i] * y[i];
  }
  double mx = sx / sw, my = sy / sw, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += w[i] * (x[i] - mx) * (x[i] - mx);
    sxy += w[i] * (x[i] - mx) * (y[i] - my);
  }
  return sxy / sxx;
}

}  // namespace

double relaxation_time(const Network& net) {
  const MmfnModel& md = net.model();
  double min_exit = std::numeric_limits<double>::infinity();
  for (int i = 0; i < md.m; ++i) min_exit = std::min(min_exit, -md.Q(i, i));
  Vec drift = net.R_inv() * net.v_bar();
  double t = 1.0 / min_exit;
  for (int k = 0; k < md.d; ++k) {
    double excursion = net.v().row(k).cwiseAbs().maxCoeff() / min_exit;
    double drain = std::abs(drift(k));
    if (drain > 0.0) t = std::max(t, excursion / drain);
  }
  return t;
}

double default_burn_in(const Network& net) { return 20.0 * relaxation_time(net); }

std::vector<TailEstimate> estimate_tail(const Network& net, const std::vector<Vec>& directions,
                                        const std::vector<double>& levels,
                                        const MonteCarloOptions& opt) {
  check_mc(opt);
  if (!is_stable(net).stable()) throw PreconditionError("tail estimation needs a stable model");
  if (levels.empty()) throw PreconditionError("at least one level is required");
  for (std::size_t j = 1; j < levels.size(); ++j)
    if (!(levels[j] > levels[j - 1])) throw PreconditionError("levels must be increasing");
  const int d = net.d();
  std::vector<Vec> dirs;
  for (const Vec& c : directions) {
    if (c.size() != d) throw StructuralError("direction must have d entries");
    if ((c.array() < 0.0).any() || !(c.norm() > 0.0))
      throw PreconditionError("direction must be nonnegative and nonzero");
    dirs.push_back(c / c.norm());
  }
  const double burn = resolve_burn_in(net, opt);
  const double window = opt.horizon - burn;
  const std::size_t nd = dirs.size(), nl = levels.size();

  // frac[r][dir * nl + j]
  std::vector<std::vector<double>> frac(opt.reps, std::vector<double>(nd * nl, 0.0));
  parallel_for(opt.reps, opt.threads, [&](std::size_t b, std::size_t e) {
    for (std::size_t r = b; r < e; ++r) {
      Simulator sim(net, opt.seed, r, SimOptions{{}, {}, -1, false});
      std::vector<KahanSum> acc(nd * nl);
      sim.run(opt.horizon, [&](const Segment& s) {
        double s0 = std::max(s.t_start, burn), s1 = s.t_end;
        if (!(s1 > s0)) return;
        for (std::size_t q = 0; q < nd; ++q) {
          double f0 = dirs[q].dot(s.Z_start) + (s0 - s.t_start) * dirs[q].dot(s.slope);
          double sl = dirs[q].dot(s.slope);
          for (std::size_t j = 0; j < nl; ++j) {
            double ta = time_above(f0, sl, s0, s1, levels[j]);
            if (ta > 0.0) acc[q * nl + j].add(ta);
          }
        }
      });
      for (std::size_t i = 0; i < nd * nl; ++i) frac[r][i] = acc[i].value() / window;
    }
  });

  const double eff = window / relaxation_time(net);
  std::vector<TailEstimate> out(nd);
  for (std::size_t q = 0; q < nd; ++q) {
    TailEstimate& te = out[q];
    te.c = dirs[q];
    te.levels = levels;
    te.reps = opt.reps;
    te.horizon = opt.horizon;
    te.burn_in = burn;
    te.threshold = 25.0 / (opt.reps * eff);
    std::vector<double> col(opt.reps);
    for (std::size_t j = 0; j < nl; ++j) {
      for (int r = 0; r < opt.reps; ++r) col[r] = frac[r][q * nl + j];
      MeanSe ms = mean_se(col);
      te.p_hat.push_back(ms.mean);
      te.stderr_.push_back(ms.se);
      te.used.push_back(ms.mean > 0.0 && ms.mean >= te.threshold);
    }
    std::vector<double> xs, ys, ws;
    std::vector<std::size_t> idx;
    for (std::size_t j = 0; j < nl; ++j) {
      if (!te.used[j]) continue;
      double rel = te.stderr_[j] / te.p_hat[j];
      xs.push_back(levels[j]);
      ys.push_back(std::log(te.p_hat[j]));
      ws.push_back(1.0 / std::max(rel * rel, 1e-12));
      idx.push_back(j);
    }
    if (xs.size() < 2) continue;
    te.usable = true;
    te.slope = wls_slope(xs, ys, ws);
    te.rate = -te.slope;
    // Delete-one jackknife over replications with the weights held fixed.
    if (opt.reps >= 2) {
      std::vector<double> slopes(opt.reps);
      std::vector<double> sums(idx.size());
      for (std::size_t u = 0; u < idx.size(); ++u) sums[u] = te.p_hat[idx[u]] * opt.reps;
      bool ok = true;
      for (int r = 0; r < opt.reps && ok; ++r) {
        std::vector<double> yr(idx.size());
        for (std::size_t u = 0; u < idx.size(); ++u) {
          double p = (sums[u] - frac[r][q * nl + idx[u]]) / (opt.reps - 1);
          if (!(p > 0.0)) ok = false;
          yr[u] = std::log(std::max(p, 1e-300));
        }
        slopes[r] = wls_slope(xs, yr, ws);
      }
      MeanSe js = mean_se(slopes);
      // mean_se returns sd / sqrt(n); the jackknife variance is
      // (n - 1)^2 / n times the sample variance over n.
      te.rate_stderr = js.se * (opt.reps - 1);
      if (!ok) te.rate_stderr = std::numeric_limits<double>::infinity();
    }
    te.ci_lo = te.rate - 1.96 * te.rate_stderr;
    te.ci_hi = te.rate + 1.96 * te.rate_stderr;
  }
  return out;
}

TailEstimate estimate_tail(const Network& net, const Vec& c, const std::vector<double>& levels,
                           const MonteCarloOptions& opt) {
  return estimate_tail(net, std::vector<Vec>{c}, levels, opt).front();
}

BarResidual estimate_bar_residual(const Network& net, const Vec& theta, const MonteCarloOptions& opt) {
  check_mc(opt);
  if (!is_stable(net).stable()) throw PreconditionError("BAR check needs a stable model");
  const int d = net.d();
  if (theta.size() != d) throw StructuralError("theta must have d entries");
  const double burn = resolve_burn_in(net, opt);
  const double window = opt.horizon - burn;
  SpectralPoint sp = perron(net, theta);
  BarResidual out;
  out.theta = theta;
  out.gamma = sp.gamma;
  out.gk = gamma_k(net, theta);
  out.reps = opt.reps;

  std::vector<double> psi(opt.reps), res(opt.reps);
  std::vector<std::vector<double>> psik(d, std::vector<double>(opt.reps));
  parallel_for(opt.reps, opt.threads, [&](std::size_t b, std::size_t e) {
    for (std::size_t r = b; r < e; ++r) {
      Simulator sim(net, opt.seed, r, SimOptions{{}, {}, -1, false});
      KahanSum p;
      std::vector<KahanSum> pk(d);
      sim.run(opt.horizon, [&](const Segment& s) {
        double s0 = std::max(s.t_start, burn), s1 = s.t_end;
        if (!(s1 > s0)) return;
        double len = s1 - s0;
        double a = theta.dot(s.Z_start) + (s0 - s.t_start) * theta.dot(s.slope);
        double bslope = theta.dot(s.slope);
        double integral = sp.h(s.J) * std::exp(a) * len * phi1(bslope * len);
        p.add(integral);
        for (int k = 0; k < d; ++k)
          if (s.y_rate(k) > 0.0) pk[k].add(s.y_rate(k) * integral);
      });
      psi[r] = p.value() / window;
      double rr = out.gamma * psi[r];
      for (int k = 0; k < d; ++k) {
        psik[k][r] = pk[k].value() / window;
        rr += out.gk(k) * psik[k][r];
      }
      res[r] = rr;
    }
  });
  MeanSe mp = mean_se(psi), mr = mean_se(res);
  out.psi = mp.mean;
  out.psi_k.resize(d);
  double boundary_scale = 0.0;
  for (int k = 0; k < d; ++k) {
    out.psi_k(k) = mean_se(psik[k]).mean;
    boundary_scale += std::abs(out.gk(k)) * out.psi_k(k);
  }
  out.residual = mr.mean;
  out.stderr_ = mr.se;
  out.scale = std::abs(out.gamma) * out.psi;
  if (!(out.scale > 0.0)) out.scale = boundary_scale;
  if (out.scale > 0.0) {
    out.normalized = out.residual / out.scale;
    out.normalized_stderr = out.stderr_ / out.scale;
  }
  out.pass = std::abs(out.residual) <= 3.0 * out.stderr_ + 1e-12 * std::max(1.0, out.scale);
  return out;
}

MartingaleCheck martingale_check(const Network& net, const Vec& theta, double t, int reps,
                                 std::uint64_t seed, int threads) {
  if (reps < 1) throw PreconditionError("reps must be positive");
  if (!(t > 0.0)) throw PreconditionError("time must be positive");
  const int d = net.d();
  if (theta.size() != d) throw StructuralError("theta must have d entries");
  SpectralPoint sp = perron(net, theta);
  Vec gk = gamma_k(net, theta);
  std::vector<double> val(reps, 0.0);
  std::vector<char> rejected(reps, 0);
  parallel_for(reps, threads, [&](std::size_t b, std::size_t e) {
    for (std::size_t r = b; r < e; ++r) {
      Simulator sim(net, seed, r, SimOptions{{}, {}, -1, false});
      sim.run(t, [](const Segment&) {});
      const PathState& st = sim.state();
      double expo = theta.dot(st.Z - sim.z0()) - sp.gamma * t - gk.dot(st.Y);
      double ratio = sp.h(st.J) / sp.h(sim.j0());
      double v = std::exp(expo) * ratio;
      if (!(expo < 700.0) || !std::isfinite(v)) {
        rejected[r] = 1;
        continue;
      }
      val[r] = v;
    }
  });
  MartingaleCheck out;
  out.theta = theta;
  out.t = t;
  out.reps = reps;
  std::vector<double> kept;
  for (int r = 0; r < reps; ++r) {
    if (rejected[r])
      ++out.rejected;
    else
      kept.push_back(val[r]);
  }
  MeanSe ms = mean_se(kept);
  out.mean = ms.mean;
  out.stderr_ = ms.se;
  out.valid = out.rejected <= 0.01 * reps;
  out.pass = out.valid && std::abs(out.mean - 1.0) <= 3.0 * out.stderr_ + 1e-12;
  return out;
}

SlopeEstimate estimate_slopes(const Network& net, const std::vector<bool>& reflect,
                              double horizon, int reps, std::uint64_t seed, int threads) {
  if (reps < 1) throw PreconditionError("reps must be positive");
  const int d = net.d();
  std::vector<std::vector<double>> z(d, std::vector<double>(reps));
  std::vector<AuditCounters> audits(reps);
  parallel_for(reps, threads, [&](std::size_t b, std::size_t e) {
    for (std::size_t r = b; r < e; ++r) {
      SimOptions so;
      so.reflect = reflect;
      Simulator sim(net, seed, r, so);
      sim.run(horizon, [](const Segment&) {});
      for (int k = 0; k < d; ++k) z[k][r] = sim.state().Z(k) / horizon;
      audits[r] = sim.audit();
    }
  });
  SlopeEstimate out;
  out.mean.resize(d);
  out.stderr_.resize(d);
  for (int k = 0; k < d; ++k) {
    MeanSe ms = mean_se(z[k]);
    out.mean(k) = ms.mean;
    out.stderr_(k) = ms.se;
  }
  for (const auto& a : audits) out.audit.merge(a);
  return out;
}

Vec fluid_slopes(const Network& net, const std::vector<bool>& reflect) {
  const int d = net.d();
  const Mat& P = net.model().P;
  const Vec& v = net.v_bar();
  // Least y >= 0 with y_k = max(0, [P^t y]_k - v_k) on regulated k: the
  // regulator rates of the fluid Skorokhod problem, by monotone iteration.
  Vec y = Vec::Zero(d);
  for (int it = 0; it < 1'000'000; ++it) {
    Vec inflow = P.transpose() * y;
    Vec next = Vec::Zero(d);
    for (int k = 0; k < d; ++k)
      if (reflect[k]) next(k) = std::max(0.0, inflow(k) - v(k));
    double change = (next - y).cwiseAbs().maxCoeff();
    y = next;
    if (change <= 1e-15 * std::max(1.0, y.cwiseAbs().maxCoeff())) break;
  }
  return v + net.R() * y;
}

Vec fluid_slopes_closed_form(const Network& net, const std::vector<bool>& reflect) {
  const int d = net.d();
  std::vector<int> A;
  for (int k = 0; k < d; ++k)
    if (reflect[k]) A.push_back(k);
  Vec y = Vec::Zero(d);
  if (!A.empty()) {
    const int a = static_cast<int>(A.size());
    Mat RA(a, a);
    Vec vA(a);
    for (int i = 0; i < a; ++i) {
      vA(i) = net.v_bar()(A[i]);
      for (int j = 0; j < a; ++j) RA(i, j) = net.R()(A[i], A[j]);
    }
    Vec yA = -RA.lu().solve(vA);
    for (int i = 0; i < a; ++i) y(A[i]) = yA(i);
  }
  return net.v_bar() + net.R() * y;
}

}  // namespace mmfn

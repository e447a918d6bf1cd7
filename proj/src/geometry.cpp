#include "mmfn/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "mmfn/error.hpp"
#include "mmfn/parallel.hpp"
#include "mmfn/spectral.hpp"
#include "mmfn/traffic.hpp"
#include "optimize.hpp"

namespace mmfn {

namespace {

Tri strict_negative(double x, double tol) {
  if (x < -tol) return Tri::Yes;
  if (x <= tol) return Tri::Boundary;
  return Tri::No;
}

Tri strict_positive(double x, double tol) { return strict_negative(-x, tol); }

// Logical and with Boundary absorbing Yes.
Tri both(Tri a, Tri b) {
  if (a == Tri::No || b == Tri::No) return Tri::No;
  if (a == Tri::Boundary || b == Tri::Boundary) return Tri::Boundary;
  return Tri::Yes;
}

double max_abs_v(const Network& net) {
  return std::max(net.v().cwiseAbs().maxCoeff(), 1e-300);
}

}  // namespace

Tolerance boundary_tolerance(const Network& net, const Vec& theta) {
  double t = theta.cwiseAbs().maxCoeff();
  Tolerance tol;
  tol.gamma = 1e-12 * (t * net.d() * max_abs_v(net) + generator_scale(net.model()));
  tol.gk = 1e-12 * std::max(t * net.R().cwiseAbs().maxCoeff() * net.d(), 1e-300);
  return tol;
}

Membership classify_values(double gamma, const Vec& gk, const std::vector<int>& A, Tolerance tol) {
  Membership m;
  m.gamma = gamma;
  m.gk = gk;
  m.gamma_minus = strict_negative(gamma, tol.gamma);
  m.gamma_plus = strict_positive(gamma, tol.gamma);
  m.gamma_minus_A = m.gamma_minus;
  // Gamma^+_A uses >= on gamma_k, so the band counts as inside there.
  m.gamma_plus_A = m.gamma_plus;
  for (int k : A) {
    m.gamma_minus_A = both(m.gamma_minus_A, strict_negative(gk(k), tol.gk));
    Tri nonneg = gk(k) >= -tol.gk ? Tri::Yes : Tri::No;
    m.gamma_plus_A = both(m.gamma_plus_A, nonneg);
  }
  return m;
}

Membership classify(const Network& net, const Vec& theta, const std::vector<int>& A) {
  for (int k : A)
    if (k < 0 || k >= net.d()) throw StructuralError("station index out of range");
  return classify_values(gamma_value(net, theta), gamma_k(net, theta), A,
                         boundary_tolerance(net, theta));
}

int default_resolution(int d, std::size_t max_points) {
  if (d <= 2) return 200;
  int n = static_cast<int>(std::floor(std::pow(static_cast<double>(max_points), 1.0 / d))) - 2;
  return std::max(n, 4);
}

double first_positive_root(const std::function<double(double)>& f, double cap, double rel_tol) {
  // Find a point where f < 0 close to the origin.
  double neg = -1.0;
  for (int j = 1; j <= 60; ++j) {
    double t = cap * std::ldexp(1.0, -j);
    if (f(t) < 0.0) {
      neg = t;
      break;
    }
  }
  if (neg < 0.0) return std::numeric_limits<double>::quiet_NaN();
  // March outward to bracket the crossing.
  double pos = neg;
  while (true) {
    pos = std::min(2.0 * pos, cap);
    if (f(pos) >= 0.0) break;
    neg = pos;
    if (pos >= cap) return std::numeric_limits<double>::quiet_NaN();
  }
  return detail::bisect_boundary([&](double t) { return f(t) < 0.0; }, neg, pos,
                                 rel_tol * pos);
}

AxisScan scan_axis(const Network& net, int k, double cap) {
  const int d = net.d();
  AxisScan s;
  Vec e = Vec::Zero(d);
  e(k) = 1.0;
  if (net.v_bar()(k) < 0.0)
    s.root = first_positive_root([&](double t) { return gamma_value(net, t * e); }, cap);

  Vec lo = Vec::Constant(d - 1, -cap), hi = Vec::Constant(d - 1, cap);
  Vec warm = Vec::Zero(d - 1);
  auto M = [&](double x) {
    auto f = [&](const Vec& rest) {
      Vec th(d);
      for (int a = 0, b = 0; a < d; ++a) th(a) = a == k ? x : rest(b++);
      return gamma_value(net, th);
    };
    return detail::box_min(f, warm, lo, hi, 1e-12);
  };
  auto tol_at = [&](double x) {
    Vec th = Vec::Zero(d);
    th(k) = x;
    return boundary_tolerance(net, th).gamma;
  };
  auto inside = [&](double x) { return M(x) < -tol_at(x); };

  for (int side : {+1, -1}) {
    double in = std::numeric_limits<double>::quiet_NaN();
    warm.setZero();
    if (inside(0.0)) in = 0.0;
    for (int j = 1; j <= 50 && std::isnan(in); ++j) {
      warm.setZero();
      double x = side * cap * std::ldexp(1.0, -j);
      if (inside(x)) in = x;
    }
    double extent = 0.0;
    bool capped = false;
    if (!std::isnan(in)) {
      if (inside(side * cap)) {
        extent = side * cap;
        capped = true;
      } else {
        extent = detail::bisect_boundary(inside, in, side * cap, 1e-10 * cap);
      }
    }
    if (side > 0) {
      s.extent_hi = std::max(extent, 0.0);
      s.hi_capped = capped;
    } else {
      s.extent_lo = std::min(extent, 0.0);
      s.lo_capped = capped;
    }
  }
  return s;
}

namespace {

double box_cap(const Network& net, const AutoBoxOptions& opt) {
  return opt.cap_factor * generator_scale(net.model()) / rate_scale(net.model());
}

// Negative sides follow the positive ones, so this runs after any change
// to hi.
void place_lo(BoundingBox& box, const std::vector<AxisScan>& scans) {
  const int d = static_cast<int>(scans.size());
  const double max_hi = box.hi.maxCoeff();
  for (int k = 0; k < d; ++k) {
    if (box.hi(k) < 0.05 * max_hi) box.hi(k) = 0.05 * max_hi;
    // The negative side only holds lift points. Tie it to this axis's own
    // positive side: a long axis elsewhere must not coarsen this one.
    double lo = 2.0 * scans[k].extent_lo;
    double floor_lo = -4.0 * box.hi(k);
    box.lo_truncated[k] = scans[k].lo_capped || lo < floor_lo;
    if (box.lo_truncated[k]) lo = floor_lo;
    box.lo(k) = std::min(lo, -0.05 * max_hi);
  }
}

BoundingBox box_from_scans(const std::vector<AxisScan>& scans, double cap, int resolution) {
  const int d = static_cast<int>(scans.size());
  BoundingBox box;
  box.lo.resize(d);
  box.hi.resize(d);
  box.truncated.assign(d, false);
  box.lo_truncated.assign(d, false);
  box.resolution = resolution;

  double max_root = 0.0;
  for (const AxisScan& s : scans)
    if (!std::isnan(s.root)) max_root = std::max(max_root, s.root);
  for (int k = 0; k < d; ++k) {
    // The axis root sets the scale of the decay rates. Without one, fall
    // back to how far Gamma^- reaches; when that never ends, borrow the
    // scale of the other axes, and the cap only as a last resort.
    if (!std::isnan(scans[k].root)) {
      box.hi(k) = 2.0 * scans[k].root;
    } else if (!scans[k].hi_capped && scans[k].extent_hi > 0.0) {
      box.hi(k) = 2.0 * scans[k].extent_hi;
    } else if (max_root > 0.0) {
      box.hi(k) = std::min(cap, 2.0 * max_root);
    } else {
      box.hi(k) = cap;
    }
    box.truncated[k] = scans[k].hi_capped || scans[k].extent_hi > box.hi(k);
  }
  place_lo(box, scans);
  return box;
}

std::vector<AxisScan> scan_all(const Network& net, double cap) {
  std::vector<AxisScan> scans;
  for (int k = 0; k < net.d(); ++k) scans.push_back(scan_axis(net, k, cap));
  return scans;
}

}  // namespace

BoundingBox auto_box(const Network& net, const AutoBoxOptions& opt) {
  if (!is_stable(net).stable())
    throw PreconditionError("domains are defined only for stable models");
  const double cap = box_cap(net, opt);
  int res = opt.resolution > 0 ? opt.resolution : default_resolution(net.d(), opt.max_points);
  return box_from_scans(scan_all(net, cap), cap, res);
}

namespace {

// Searches one lattice column (axis k varies, the other coordinates fixed)
// for Gamma^-_A, including pieces of it that fall strictly between two
// lattice values. gamma is convex along the column and the gamma_l are
// linear, so the column meets Gamma^-_A in an interval.
class ColumnSearch {
 public:
  ColumnSearch(const Network& net, const Lattice& lat, const std::vector<double>& gamma)
      : net_(net), lat_(lat), gamma_(gamma) {}

  std::size_t flat(int k, std::size_t q, int i) const {
    const std::size_t s = lat_.stride(k);
    return (q / s) * s * lat_.count(k) + static_cast<std::size_t>(i) * s + q % s;
  }

  // Lowest index i with x_i above some point of Gamma^-_A on the column, or -1.
  // A lattice point of Gamma^-_A is its own answer; otherwise the answer is
  // the first lattice value past the sub-cell minimizer.
  int first(int k, std::size_t q, unsigned A, const Mask& in_A) const {
    const int n = lat_.count(k);
    for (int i = 0; i < n; ++i)
      if (in_A[flat(k, q, i)]) return i;
    if (n < 2) return -1;

    Vec theta = lat_.point(flat(k, q, 0));
    const double x0 = lat_.coord(k, 0), h = lat_.step(k);
    double lo = x0, hi = lat_.coord(k, n - 1);
    Vec far = theta;
    far(k) = std::abs(lo) > std::abs(hi) ? lo : hi;
    const Tolerance tol = boundary_tolerance(net_, far);
    const Mat& R = net_.R();
    for (int l = 0; l < net_.d(); ++l) {
      if (!((A >> l) & 1u)) continue;
      const double c = R(k, l), r = theta.dot(R.col(l)) - theta(k) * c;
      if (c > 0.0)
        hi = std::min(hi, (-tol.gk - r) / c);
      else if (c < 0.0)
        lo = std::max(lo, (-tol.gk - r) / c);
      else if (!(r < -tol.gk))
        return -1;
    }
    if (!(lo < hi)) return -1;

    auto g = [&](int i) { return gamma_[flat(k, q, i)]; };
    auto x = [&](int i) { return lat_.coord(k, i); };
    int j = -1;
    for (int i = 0; i < n; ++i)
      if (x(i) >= lo && x(i) <= hi && (j < 0 || g(i) < g(j))) j = i;
    int c0, c1;
    if (j < 0) {
      c0 = c1 = std::clamp(static_cast<int>(std::floor((lo - x0) / h)), 0, n - 2);
    } else {
      c0 = std::max(j - 1, 0);
      c1 = std::min(j, n - 2);
    }
    auto f = [&](double t) {
      theta(k) = t;
      return gamma_value(net_, theta);
    };
    for (int c = c0; c <= c1; ++c) {
      const double a = std::max(lo, x(c)), b = std::min(hi, x(c + 1));
      if (!(a < b)) continue;
      if (c >= 1 && c + 2 <= n - 1) {
        // Convexity: the secants on either side bound the tangents at the
        // cell ends, hence gamma from below on the cell.
        const double sl = (g(c) - g(c - 1)) / h, sr = (g(c + 2) - g(c + 1)) / h;
        auto bound = [&](double t) { return std::max(g(c) + sl * (t - x(c)), g(c + 1) + sr * (t - x(c + 1))); };
        double lb = std::min(bound(a), bound(b));
        if (sr != sl) {
          double t = (g(c + 1) - sr * x(c + 1) - g(c) + sl * x(c)) / (sl - sr);
          if (t > a && t < b) lb = std::min(lb, bound(t));
        }
        if (lb >= -tol.gamma) continue;
      }
      const double ratio = 0.5 * (std::sqrt(5.0) - 1.0);
      double u = a, v = b;
      double t1 = v - ratio * (v - u), t2 = u + ratio * (v - u);
      double f1 = f(t1), f2 = f(t2);
      for (int it = 0; it < 100 && v - u > 1e-14 * (1.0 + std::abs(u) + std::abs(v)); ++it) {
        if (f1 < f2) {
          v = t2;
          t2 = t1;
          f2 = f1;
          t1 = v - ratio * (v - u);
          f1 = f(t1);
        } else {
          u = t1;
          t1 = t2;
          f1 = f2;
          t2 = u + ratio * (v - u);
          f2 = f(t2);
        }
      }
      const double best = f1 < f2 ? t1 : t2;
      if (std::min(f1, f2) < -tol.gamma) {
        for (int i = 0; i < n; ++i)
          if (x(i) > best) return i;
        return -1;
      }
    }
    return -1;
  }

 private:
  const Network& net_;
  const Lattice& lat_;
  const std::vector<double>& gamma_;
};

}  // namespace

Lattice make_lattice(const BoundingBox& box) {
  const int d = static_cast<int>(box.lo.size());
  if (box.hi.size() != d) throw StructuralError("box corners disagree in dimension");
  if (box.resolution < 1) throw PreconditionError("resolution must be positive");
  std::vector<int> lo(d), cnt(d);
  Vec step(d);
  for (int k = 0; k < d; ++k) {
    if (!(box.lo(k) < 0.0 && box.hi(k) > 0.0))
      throw PreconditionError("box must contain the origin in its interior");
    step(k) = (box.hi(k) - box.lo(k)) / box.resolution;
    int jlo = static_cast<int>(std::floor(box.lo(k) / step(k) + 1e-9));
    int jhi = static_cast<int>(std::ceil(box.hi(k) / step(k) - 1e-9));
    lo[k] = jlo;
    cnt[k] = jhi - jlo + 1;
  }
  return Lattice(lo, cnt, step);
}

DomainGrid fixed_point_iteration(const Network& net, const BoundingBox& box,
                                 const FixedPointOptions& opt) {
  if (!is_stable(net).stable())
    throw PreconditionError("fixed-point iteration needs a stable model");
  const int d = net.d();
  if (d > 16) throw PreconditionError("lift search over subsets needs d <= 16");
  DomainGrid g;
  g.box = box;
  g.lattice = make_lattice(box);
  const Lattice& L = g.lattice;
  const std::size_t n = L.size();
  for (int k = 0; k < d; ++k)
    if (k < static_cast<int>(box.truncated.size()) && (box.truncated[k] || box.lo_truncated[k]))
      g.truncated_axes.push_back(k);

  g.gamma.resize(n);
  const unsigned subsets = 1u << d;
  // in_A[A][p]: lattice point p lies in Gamma^-_A (strictly).
  std::vector<Mask> in_A(subsets, Mask(n, 0));
  parallel_for(n, opt.threads, [&](std::size_t b, std::size_t e) {
    for (std::size_t p = b; p < e; ++p) {
      Vec th = L.point(p);
      double gm = gamma_value(net, th);
      g.gamma[p] = gm;
      Vec gk = gamma_k(net, th);
      Tolerance tol = boundary_tolerance(net, th);
      if (!(gm < -tol.gamma)) continue;
      for (unsigned A = 0; A < subsets; ++A) {
        bool ok = true;
        for (int k = 0; k < d && ok; ++k)
          if ((A >> k) & 1u) ok = gk(k) < -tol.gk;
        in_A[A][p] = ok;
      }
    }
  });
  g.gamma_minus = in_A[0];
  g.down_gamma_minus = g.gamma_minus;
  // Thin parts of Gamma^- can slip between lattice values; the column search
  // marks the lattice point just below any such piece.
  const ColumnSearch columns(net, L, g.gamma);
  for (int k = 0; k < d; ++k) {
    const std::size_t cols = L.size() / L.count(k);
    Mask below(cols, 0);
    std::vector<int> hit(cols, -1);
    parallel_for(cols, opt.threads, [&](std::size_t b, std::size_t e) {
      for (std::size_t q = b; q < e; ++q) hit[q] = columns.first(k, q, 0u, in_A[0]);
    });
    for (std::size_t q = 0; q < cols; ++q)
      if (hit[q] > 0) g.down_gamma_minus[columns.flat(k, q, hit[q] - 1)] = 1;
  }
  down_close(L, g.down_gamma_minus);

  // first[k][A][q]: lowest index along axis k in column q at or above a point
  // of Gamma^-_A (A containing k), -1 if none. Fixed across sweeps.
  std::vector<std::vector<std::vector<int>>> first(d, std::vector<std::vector<int>>(subsets));
  for (int k = 0; k < d; ++k) {
    const std::size_t cols = L.size() / L.count(k);
    for (unsigned A = 1; A < subsets; ++A) {
      if (!((A >> k) & 1u)) continue;
      auto& out = first[k][A];
      out.assign(cols, -1);
      parallel_for(cols, opt.threads, [&](std::size_t b, std::size_t e) {
        for (std::size_t q = b; q < e; ++q) out[q] = columns.first(k, q, A, in_A[A]);
      });
    }
  }

  g.dk_lattice.resize(d);
  g.Dk.resize(d);
  for (int k = 0; k < d; ++k) {
    g.dk_lattice[k] = L.drop_axis(k);
    const Lattice& Lk = g.dk_lattice[k];
    g.Dk[k].assign(Lk.size(), 0);
    for (std::size_t q = 0; q < Lk.size(); ++q) {
      bool neg = true;
      for (int a = 0; a < Lk.dim() && neg; ++a) neg = Lk.axis_index(q, a) < Lk.zero_index(a);
      g.Dk[k][q] = neg;
    }
  }
  auto counts = [&](const std::vector<Mask>& D) {
    std::vector<std::size_t> c;
    for (const auto& m : D) {
      std::size_t s = 0;
      for (auto b : m) s += b;
      c.push_back(s);
    }
    return c;
  };
  g.growth.push_back(counts(g.Dk));

  for (int sweep = 1;; ++sweep) {
    if (sweep > opt.max_sweeps) {
      std::ostringstream os;
      os << "fixed-point iteration did not settle in " << opt.max_sweeps << " sweeps; growth";
      for (const auto& row : g.growth) {
        os << " [";
        for (std::size_t k = 0; k < row.size(); ++k) os << (k ? "," : "") << row[k];
        os << ']';
      }
      throw ConvergenceError(os.str());
    }
    std::vector<Mask> next(d);
    std::vector<char> mono(d, 1);
    parallel_for(static_cast<std::size_t>(d), opt.threads, [&](std::size_t b, std::size_t e) {
      for (std::size_t kk = b; kk < e; ++kk) {
        const int k = static_cast<int>(kk);
        Mask fresh(g.dk_lattice[k].size(), 0);
        for (unsigned A = 1; A < subsets; ++A) {
          if (!((A >> k) & 1u)) continue;
          // The D_l are down-closed along axis k, so the lowest admissible
          // lift point of each column is the only one worth testing.
          for (std::size_t q = 0; q < fresh.size(); ++q) {
            const int i = first[k][A][q];
            if (i < 0) continue;
            const std::size_t p = columns.flat(k, q, i);
            bool ok = true;
            for (int l = 0; l < d && ok; ++l)
              if (!((A >> l) & 1u)) ok = g.Dk[l][L.project(p, l)];
            if (ok) fresh[q] = 1;
          }
        }
        down_close(g.dk_lattice[k], fresh);
        Mask merged = g.Dk[k];
        for (std::size_t q = 0; q < merged.size(); ++q) {
          if (merged[q] && !fresh[q]) mono[k] = 0;
          merged[q] |= fresh[q];
        }
        next[k] = std::move(merged);
      }
    });
    for (int k = 0; k < d; ++k) g.monotone = g.monotone && mono[k];
    bool changed = next != g.Dk;
    if (sweep == 1) g.nontrivial = changed;
    g.Dk = std::move(next);
    if (!changed) break;
    g.iterations = sweep;
    g.growth.push_back(counts(g.Dk));
  }

  g.dmax = g.down_gamma_minus;
  for (std::size_t p = 0; p < n; ++p) {
    if (!g.dmax[p]) continue;
    for (int k = 0; k < d; ++k)
      if (!g.Dk[k][L.project(p, k)]) {
        g.dmax[p] = 0;
        break;
      }
  }
  return g;
}

DomainGrid solve_domain(const Network& net, const AutoBoxOptions& box_opt,
                        const FixedPointOptions& opt) {
  if (!is_stable(net).stable())
    throw PreconditionError("domains are defined only for stable models");
  const int d = net.d();
  const double cap = box_cap(net, box_opt);
  const std::vector<AxisScan> scans = scan_all(net, cap);
  int res = box_opt.resolution > 0 ? box_opt.resolution : default_resolution(d, box_opt.max_points);
  BoundingBox box = box_from_scans(scans, cap, res);

  for (int round = 0;; ++round) {
    DomainGrid g = fixed_point_iteration(net, box, opt);
    const Lattice& L = g.lattice;
    std::vector<bool> touches(d, false);
    for (std::size_t p = 0; p < L.size(); ++p) {
      if (!g.dmax[p]) continue;
      for (int k = 0; k < d; ++k)
        if (L.axis_index(p, k) == L.count(k) - 1) touches[k] = true;
    }
    bool grew = false;
    if (round < box_opt.max_growth) {
      for (int k = 0; k < d; ++k) {
        // Growing only pays while Gamma^- itself ends; an axis along which
        // it reaches the cap would just get coarser.
        const double limit = scans[k].hi_capped ? 0.0 : std::min(cap, 2.0 * scans[k].extent_hi);
        if (!touches[k] || box.hi(k) >= limit) continue;
        box.hi(k) = std::min(limit, 2.0 * box.hi(k));
        box.truncated[k] = scans[k].hi_capped || scans[k].extent_hi > box.hi(k);
        grew = true;
      }
    }
    if (grew) {
      place_lo(box, scans);
      continue;
    }
    // Whatever still presses against the top face is cut short by the box.
    for (int k = 0; k < d; ++k)
      if (touches[k] && !g.box.truncated[k]) g.box.truncated[k] = true;
    g.truncated_axes.clear();
    for (int k = 0; k < d; ++k)
      if (g.box.truncated[k] || g.box.lo_truncated[k]) g.truncated_axes.push_back(k);
    g.box_growths = round;
    return g;
  }
}

std::vector<Vec> dmax_boundary(const DomainGrid& grid) {
  const Lattice& L = grid.lattice;
  std::vector<Vec> out;
  for (std::size_t p = 0; p < L.size(); ++p) {
    if (!grid.dmax[p]) continue;
    bool maximal = true;
    for (int a = 0; a < L.dim() && maximal; ++a)
      if (L.axis_index(p, a) + 1 < L.count(a) && grid.dmax[p + L.stride(a)]) maximal = false;
    if (maximal) out.push_back(L.point(p));
  }
  return out;
}

namespace {

void put(std::ostringstream& os, double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  os << buf;
}

std::string theta_header(int d) {
  std::string h;
  for (int k = 0; k < d; ++k) h += (k ? ",theta_" : "theta_") + std::to_string(k + 1);
  return h;
}

}  // namespace

std::string grid_csv(const DomainGrid& grid) {
  const Lattice& L = grid.lattice;
  std::ostringstream os;
  os << theta_header(L.dim()) << ",gamma,gamma_minus,down_gamma_minus,dmax\n";
  for (std::size_t p = 0; p < L.size(); ++p) {
    Vec th = L.point(p);
    for (int a = 0; a < L.dim(); ++a) {
      put(os, th(a));
      os << ',';
    }
    put(os, grid.gamma[p]);
    os << ',' << int(grid.gamma_minus[p]) << ',' << int(grid.down_gamma_minus[p]) << ','
       << int(grid.dmax[p]) << '\n';
  }
  return os.str();
}

std::string boundary_csv(const DomainGrid& grid) {
  std::ostringstream os;
  os << theta_header(grid.lattice.dim()) << '\n';
  for (const Vec& th : dmax_boundary(grid)) {
    for (int a = 0; a < th.size(); ++a) {
      if (a) os << ',';
      put(os, th(a));
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace mmfn

#include "mmfn/simulator.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "mmfn/error.hpp"

namespace mmfn {

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

Rng::Rng(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t s = seed;
  std::uint64_t a = splitmix64(s);
  s = a ^ (stream * 0xd1342543de82ef95ULL + 0x2545f4914f6cdd1dULL);
  engine_.seed(splitmix64(s));
}

double Rng::uniform() {
  return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
}

int Rng::discrete(const double* weights, int n, double total) {
  double u = uniform() * total;
  double acc = 0.0;
  int last = -1;
  for (int i = 0; i < n; ++i) {
    if (!(weights[i] > 0.0)) continue;
    last = i;
    acc += weights[i];
    if (u < acc) return i;
  }
  return last;
}

double pairwise_sum(const double* x, std::size_t n) {
  if (n <= 8) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += x[i];
    return s;
  }
  std::size_t h = n / 2;
  return pairwise_sum(x, h) + pairwise_sum(x + h, n - h);
}

void AuditCounters::merge(const AuditCounters& o) {
  events += o.events;
  conservation += o.conservation;
  complementarity += o.complementarity;
  monotonicity += o.monotonicity;
  negative_release += o.negative_release;
  negative_buffer += o.negative_buffer;
  worst_conservation = std::max(worst_conservation, o.worst_conservation);
}

ReleaseRates release_rates(const Network& net, int J, const std::vector<bool>& positive) {
  const MmfnModel& md = net.model();
  const int d = md.d;
  ReleaseRates rr;
  rr.b = md.mu.col(J);
  const Vec lam = md.lambda.col(J);
  const Vec mu = md.mu.col(J);
  const double tol = 1e-12 * std::max(1.0, rate_scale(md));
  bool any_empty = false;
  for (int k = 0; k < d; ++k) any_empty = any_empty || !positive[k];
  if (any_empty) {
    // Monotone Picard iteration from b = mu: the map is order preserving
    // and maps mu below itself, so the iterates decrease to the fixed point.
    for (int it = 1;; ++it) {
      if (it > 100'000) throw ConvergenceError("release-rate iteration did not converge");
      Vec a = lam + md.P.transpose() * rr.b;
      double change = 0.0;
      Vec next = rr.b;
      for (int k = 0; k < d; ++k) {
        if (positive[k]) continue;
        next(k) = std::min(mu(k), a(k));
        change = std::max(change, std::abs(next(k) - rr.b(k)));
      }
      rr.b = next;
      rr.iterations = it;
      if (change <= tol) break;
    }
    // The iteration only identifies which empty buffers pass on less than
    // mu. On that set b = lambda + P^t b holds exactly; solving it directly
    // keeps the iteration tolerance from integrating into Z over long runs.
    std::vector<int> bind;
    for (int k = 0; k < d; ++k)
      if (!positive[k] && rr.b(k) < mu(k)) bind.push_back(k);
    while (!bind.empty()) {
      const int n = bind.size();
      Mat A = Mat::Identity(n, n);
      Vec rhs(n);
      for (int i = 0; i < n; ++i) {
        const int k = bind[i];
        rhs(i) = lam(k);
        for (int l = 0; l < d; ++l) {
          auto at = std::find(bind.begin(), bind.end(), l);
          if (at == bind.end())
            rhs(i) += md.P(l, k) * rr.b(l);
          else
            A(i, at - bind.begin()) -= md.P(l, k);
        }
      }
      Vec x = A.partialPivLu().solve(rhs);
      std::vector<int> keep;
      for (int i = 0; i < n; ++i)
        if (x(i) < mu(bind[i])) keep.push_back(bind[i]);
      if (keep.size() == bind.size()) {
        for (int i = 0; i < n; ++i) rr.b(bind[i]) = std::max(x(i), 0.0);
        break;
      }
      for (int k : bind) rr.b(k) = mu(k);
      bind = keep;
    }
  }
  rr.a = lam + md.P.transpose() * rr.b;
  return rr;
}

Simulator::Simulator(const Network& net, std::uint64_t seed, std::uint64_t stream, SimOptions opt)
    : net_(net), rng_(seed, stream), audit_enabled_(opt.audit) {
  const int d = net.d(), m = net.m();
  reflect_ = opt.reflect.empty() ? std::vector<bool>(d, true) : opt.reflect;
  if (static_cast<int>(reflect_.size()) != d) throw StructuralError("reflect mask must have d entries");
  state_.Z = opt.z0.size() ? opt.z0 : Vec::Zero(d);
  if (state_.Z.size() != d) throw StructuralError("initial content must have d entries");
  for (int k = 0; k < d; ++k)
    if (reflect_[k] && state_.Z(k) < 0.0) throw PreconditionError("regulated buffers start nonnegative");
  state_.Y = Vec::Zero(d);
  state_.empty.assign(d, false);
  if (opt.j0 >= 0) {
    if (opt.j0 >= m) throw StructuralError("initial background state out of range");
    state_.J = opt.j0;
  } else {
    state_.J = rng_.discrete(net.pi().data(), m, net.pi().sum());
  }
  j0_ = state_.J;
  z0_ = state_.Z;
  hold_ = rng_.exponential(-net.Q()(state_.J, state_.J));
  V_acc_.assign(d, {});
  Y_acc_.assign(d, {});
  running_max_ = state_.Z.cwiseMax(0.0);
}

Vec Simulator::V() const {
  Vec v(V_acc_.size());
  for (std::size_t k = 0; k < V_acc_.size(); ++k) v(k) = V_acc_[k].value();
  return v;
}

Segment Simulator::step(double horizon) {
  const MmfnModel& md = net_.model();
  const int d = md.d;
  const int J = state_.J;
  Vec& Z = state_.Z;

  std::vector<bool> positive(d, true);
  for (int k = 0; k < d; ++k) {
    state_.empty[k] = false;
    if (!reflect_[k]) continue;
    if (Z(k) <= 1e-12 * (1.0 + running_max_(k))) {
      Z(k) = 0.0;
      positive[k] = false;
      state_.empty[k] = true;
    }
  }
  ReleaseRates rr = release_rates(net_, J, positive);

  Segment seg;
  seg.t_start = state_.t;
  seg.J = J;
  seg.Z_start = Z;
  seg.slope.resize(d);
  seg.y_rate = Vec::Zero(d);
  for (int k = 0; k < d; ++k) {
    double mu = md.mu(k, J);
    if (positive[k]) {
      seg.slope(k) = rr.a(k) - mu;
    } else if (rr.b(k) < mu) {
      // The min binds at a_k: the buffer stays empty and loses mu - a_k.
      seg.slope(k) = 0.0;
      seg.y_rate(k) = mu - rr.b(k);
    } else {
      // a_k >= mu_k: the buffer leaves the empty set at once.
      seg.slope(k) = std::max(0.0, rr.a(k) - mu);
      state_.empty[k] = false;
    }
  }

  double tau = std::min(hold_, horizon - state_.t);
  bool jump = hold_ <= horizon - state_.t;
  for (int k = 0; k < d; ++k) {
    if (!reflect_[k] || !positive[k] || !(seg.slope(k) < 0.0)) continue;
    double hit = Z(k) / -seg.slope(k);
    if (hit < tau) {
      tau = hit;
      jump = false;
    }
  }
  tau = std::max(tau, 0.0);
  if (tau == hold_) jump = true;

  // Coordinates reaching zero in the same window are snapped together.
  const double window = tau * (1.0 + 1e-15) + 1e-300;
  for (int k = 0; k < d; ++k) {
    double zk = Z(k) + tau * seg.slope(k);
    if (reflect_[k] && positive[k] && seg.slope(k) < 0.0 && Z(k) / -seg.slope(k) <= window) zk = 0.0;
    Z(k) = zk;
    V_acc_[k].add(tau * net_.v()(k, J));
    Y_acc_[k].add(tau * seg.y_rate(k));
    running_max_(k) = std::max(running_max_(k), zk);
  }
  for (int k = 0; k < d; ++k) state_.Y(k) = Y_acc_[k].value();
  state_.t += tau;
  hold_ -= tau;
  seg.t_end = state_.t;

  if (jump) {
    const int m = md.m;
    std::vector<double> w(m);
    double total = 0.0;
    for (int j = 0; j < m; ++j) {
      w[j] = j == J ? 0.0 : md.Q(J, j);
      total += w[j];
    }
    state_.J = rng_.discrete(w.data(), m, total);
    hold_ = rng_.exponential(-md.Q(state_.J, state_.J));
  }

  if (tau > 0.0 || jump) {
    zero_streak_ = 0;
  } else if (++zero_streak_ > 10 * d) {
    throw ConvergenceError("livelock: too many zero-length sub-events");
  }
  if (audit_enabled_) check(seg, rr);
  return seg;
}

void Simulator::check(const Segment& s, const ReleaseRates& rr) {
  const int d = net_.d();
  ++audit_.events;
  const Vec& Z = state_.Z;
  Vec expected = z0_ + V() + net_.R() * state_.Y;
  double scale = 1.0 + Z.cwiseAbs().maxCoeff();
  double err = (Z - expected).cwiseAbs().maxCoeff() / scale;
  audit_.worst_conservation = std::max(audit_.worst_conservation, err);
  if (err > 1e-9) ++audit_.conservation;
  for (int k = 0; k < d; ++k) {
    if (s.y_rate(k) < 0.0) ++audit_.monotonicity;
    if (s.y_rate(k) > 0.0 && (!reflect_[k] || s.Z_start(k) != 0.0 || s.slope(k) != 0.0))
      ++audit_.complementarity;
    if (rr.b(k) < 0.0) ++audit_.negative_release;
    if (reflect_[k] && Z(k) < -1e-12) ++audit_.negative_buffer;
  }
}

Trajectory simulate(const Network& net, double horizon, std::uint64_t seed, const SimOptions& opt) {
  if (!(horizon > 0.0)) throw PreconditionError("horizon must be positive");
  Simulator sim(net, seed, 0, opt);
  Trajectory tr;
  sim.run(horizon, [&](const Segment& s) { tr.segments.push_back(s); });
  tr.final_state = sim.state();
  tr.audit = sim.audit();
  return tr;
}

Trajectory simulate_partial(const Network& net, const std::vector<int>& A, double horizon,
                            std::uint64_t seed) {
  SimOptions opt;
  opt.reflect.assign(net.d(), false);
  for (int k : A) {
    if (k < 0 || k >= net.d()) throw StructuralError("station index out of range");
    opt.reflect[k] = true;
  }
  return simulate(net, horizon, seed, opt);
}

std::string trajectory_csv(const Trajectory& traj) {
  std::ostringstream os;
  int d = traj.final_state.Z.size();
  os << "t_start,t_end,J";
  for (int k = 1; k <= d; ++k) os << ",Z_" << k;
  for (int k = 1; k <= d; ++k) os << ",slope_" << k;
  os << '\n';
  char buf[32];
  auto put = [&](double x) {
    std::snprintf(buf, sizeof buf, "%.17g", x);
    os << buf;
  };
  for (const auto& s : traj.segments) {
    put(s.t_start);
    os << ',';
    put(s.t_end);
    os << ',' << s.J + 1;
    for (int k = 0; k < d; ++k) {
      os << ',';
      put(s.Z_start(k));
    }
    for (int k = 0; k < d; ++k) {
      os << ',';
      put(s.slope(k));
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace mmfn

#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "mmfn/model.hpp"

namespace mmfn {

// Per-replication random stream: mt19937_64 seeded through splitmix64 from
// (seed, stream). Uniforms are open on both ends.
class Rng {
 public:
  Rng(std::uint64_t seed, std::uint64_t stream);
  double uniform();
  double exponential(double rate) { return -std::log(uniform()) / rate; }
  // Index drawn from nonnegative weights by inverse CDF.
  int discrete(const double* weights, int n, double total);

 private:
  std::mt19937_64 engine_;
};

std::uint64_t splitmix64(std::uint64_t& state);

// Compensated (Neumaier) running sum.
struct KahanSum {
  double sum = 0.0, comp = 0.0;
  void add(double x) {
    double t = sum + x;
    if (std::abs(sum) >= std::abs(x))
      comp += (sum - t) + x;
    else
      comp += (x - t) + sum;
    sum = t;
  }
  double value() const { return sum + comp; }
};

double pairwise_sum(const double* x, std::size_t n);
inline double pairwise_sum(const std::vector<double>& x) { return pairwise_sum(x.data(), x.size()); }

struct ReleaseRates {
  Vec b;  // actual release rates
  Vec a;  // total arrival rates lambda + P^t b
  int iterations = 0;
};

// positive[k] marks buffers with Z_k > 0 (and unregulated coordinates).
ReleaseRates release_rates(const Network& net, int J, const std::vector<bool>& positive);

struct PathState {
  double t = 0.0;
  Vec Z, Y;
  int J = 0;
  std::vector<bool> empty;  // regulated and empty during the last segment
};

struct Segment {
  double t_start = 0.0, t_end = 0.0;
  int J = 0;
  Vec Z_start, slope, y_rate;
};

struct AuditCounters {
  std::uint64_t events = 0;
  std::uint64_t conservation = 0;
  std::uint64_t complementarity = 0;
  std::uint64_t monotonicity = 0;
  std::uint64_t negative_release = 0;
  std::uint64_t negative_buffer = 0;
  double worst_conservation = 0.0;  // relative error

  std::uint64_t violations() const {
    return conservation + complementarity + monotonicity + negative_release + negative_buffer;
  }
  void merge(const AuditCounters& o);
};

struct SimOptions {
  // reflect[k]: coordinate k is regulated. Empty means all.
  std::vector<bool> reflect;
  Vec z0;       // initial content, zero when empty
  int j0 = -1;  // initial background state; -1 draws from pi
  bool audit = true;
};

// Event-driven Skorokhod reflection of the piecewise-linear free path.
class Simulator {
 public:
  Simulator(const Network& net, std::uint64_t seed, std::uint64_t stream, SimOptions opt = {});

  const PathState& state() const { return state_; }
  const AuditCounters& audit() const { return audit_; }
  Vec V() const;  // free path increment, integrated independently of Z
  const Vec& z0() const { return z0_; }
  int j0() const { return j0_; }

  // Advances to the next sub-event or to the horizon, whichever comes first.
  Segment step(double horizon);

  // Runs to the horizon calling on_segment for every segment of positive
  // length.
  template <class F>
  void run(double horizon, F&& on_segment) {
    while (state_.t < horizon) {
      Segment s = step(horizon);
      if (s.t_end > s.t_start) on_segment(s);
    }
  }

 private:
  void check(const Segment& s, const ReleaseRates& rr);

  const Network& net_;
  Rng rng_;
  std::vector<bool> reflect_;
  bool audit_enabled_;
  PathState state_;
  Vec z0_;
  int j0_ = 0;
  double hold_ = 0.0;  // time left until the next background jump
  std::vector<KahanSum> V_acc_, Y_acc_;
  Vec running_max_;
  int zero_streak_ = 0;
  AuditCounters audit_;
};

struct Trajectory {
  std::vector<Segment> segments;
  PathState final_state;
  AuditCounters audit;
};

Trajectory simulate(const Network& net, double horizon, std::uint64_t seed, const SimOptions& opt = {});
// Reflection only on the 0-based stations in A.
Trajectory simulate_partial(const Network& net, const std::vector<int>& A, double horizon,
                            std::uint64_t seed);

// CSV: t_start, t_end, J (1-based), Z_start_k..., slope_k...
std::string trajectory_csv(const Trajectory& traj);

// ---------------------------------------------------------------------------
// Monte-Carlo estimators. Replication r uses stream r of the root seed, so
// results do not depend on the thread count.

struct MonteCarloOptions {
  int reps = 100;
  double horizon = 1e4;
  double burn_in = -1.0;  // negative: default from relaxation_time
  std::uint64_t seed = 0;
  int threads = 0;
};

// Excursion size over net drain rate, maximized over stations.
double relaxation_time(const Network& net);
double default_burn_in(const Network& net);

struct TailEstimate {
  Vec c;
  std::vector<double> levels, p_hat, stderr_;
  std::vector<bool> used;
  double slope = 0.0;  // of log p_hat against x
  double rate = 0.0;   // -slope
  double rate_stderr = 0.0;
  double ci_lo = 0.0, ci_hi = 0.0;  // 95% band on the rate
  bool usable = false;
  int reps = 0;
  double horizon = 0.0, burn_in = 0.0;
  double threshold = 0.0;  // minimum p_hat admitted to the fit
};

// One pass per replication serves every direction.
std::vector<TailEstimate> estimate_tail(const Network& net, const std::vector<Vec>& directions,
                                        const std::vector<double>& levels,
                                        const MonteCarloOptions& opt);
TailEstimate estimate_tail(const Network& net, const Vec& c, const std::vector<double>& levels,
                           const MonteCarloOptions& opt);

struct BarResidual {
  Vec theta;
  double gamma = 0.0;
  Vec gk;
  double psi = 0.0;
  Vec psi_k;
  double residual = 0.0, stderr_ = 0.0;
  double scale = 0.0;  // |gamma| psi, or the boundary-term scale when gamma = 0
  double normalized = 0.0, normalized_stderr = 0.0;
  bool pass = false;  // |residual| <= 3 stderr
  int reps = 0;
};

BarResidual estimate_bar_residual(const Network& net, const Vec& theta, const MonteCarloOptions& opt);

struct MartingaleCheck {
  Vec theta;
  double t = 0.0;
  double mean = 0.0, stderr_ = 0.0;
  int reps = 0, rejected = 0;
  bool valid = false;  // rejections at most 1%
  bool pass = false;
};

MartingaleCheck martingale_check(const Network& net, const Vec& theta, double t, int reps,
                                 std::uint64_t seed, int threads = 0);

struct SlopeEstimate {
  Vec mean, stderr_;
  AuditCounters audit;
};

// Z(T)/T across replications, started from Z = 0 with J drawn from pi.
SlopeEstimate estimate_slopes(const Network& net, const std::vector<bool>& reflect,
                              double horizon, int reps, std::uint64_t seed, int threads = 0);

// Fluid-limit slopes of the partially reflected process: regulated
// coordinates follow the Skorokhod problem for the mean drift.
Vec fluid_slopes(const Network& net, const std::vector<bool>& reflect);
// The closed form -R_A^-1 v_A substitution, valid when the A-subnetwork is
// stable.
Vec fluid_slopes_closed_form(const Network& net, const std::vector<bool>& reflect);

}  // namespace mmfn

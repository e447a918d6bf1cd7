#include <doctest.h>

#include <chrono>

#include "mmfn/error.hpp"
#include "mmfn/geometry.hpp"
#include "mmfn/spectral.hpp"
#include "mmfn/traffic.hpp"
#include "support.hpp"

using namespace mmfn;
using testing::mat;

namespace {

// Mirror-image stations: swapping the stations and the two background
// states leaves the model unchanged.
Network symmetric_pair() {
  return Network(testing::two_state(mat(2, 2, {2.0, 0.2, 0.2, 2.0}), Mat::Constant(2, 2, 2.2),
                                    mat(2, 2, {0, 0.3, 0.3, 0}), 1.0, 1.0));
}

// Station 1 drains in every state, so Gamma^- never ends along +e_1.
Network draining_first() {
  return Network(testing::two_state(mat(2, 2, {0.5, 0.5, 3.0, 0.1}), mat(2, 2, {2.0, 2.0, 2.0, 2.0}),
                                    Mat::Zero(2, 2), 1.0, 1.0));
}

// Both stations fill in one state and drain in the other.
Network tandem2() {
  return Network(testing::two_state(mat(2, 2, {2.5, 0.2, 0, 0}), mat(2, 2, {2.0, 1.5, 1.6, 1.6}),
                                    mat(2, 2, {0, 1, 0, 0}), 0.5, 0.5));
}

double bisect_root(const std::function<double(double)>& f, double lo, double hi) {
  for (int i = 0; i < 200; ++i) {
    double mid = 0.5 * (lo + hi);
    (f(mid) < 0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

BoundingBox small_box(const Network& net, int res) {
  BoundingBox b = auto_box(net);
  b.resolution = res;
  return b;
}

bool in_mask_dominating(const DomainGrid& g, const Vec& x) {
  for (std::size_t p = 0; p < g.lattice.size(); ++p)
    if (g.dmax[p] && (g.lattice.point(p) - x).minCoeff() >= 0) return true;
  return false;
}

}  // namespace

TEST_CASE("lattice indexing round trip") {
  Lattice L({-3, -2, -1}, {5, 4, 3}, (Vec(3) << 0.5, 1.0, 2.0).finished());
  CHECK(L.size() == 60);
  for (std::size_t p = 0; p < L.size(); ++p) {
    std::vector<int> idx = {L.axis_index(p, 0), L.axis_index(p, 1), L.axis_index(p, 2)};
    CHECK(L.flatten(idx) == p);
    Vec x = L.point(p);
    for (int a = 0; a < 3; ++a) CHECK(x(a) == L.coord(a, idx[a]));
  }
  CHECK(L.point(L.flatten({3, 2, 1})).isZero());
  CHECK(L.stride(2) == 1);
  CHECK(L.stride(0) == 12);
}

TEST_CASE("lattice projection drops one index") {
  Lattice L({-3, -2, -1}, {5, 4, 3}, Vec::Ones(3));
  for (int k = 0; k < 3; ++k) {
    Lattice Lk = L.drop_axis(k);
    CHECK(Lk.dim() == 2);
    for (std::size_t p = 0; p < L.size(); ++p) {
      std::vector<int> idx;
      for (int a = 0; a < 3; ++a)
        if (a != k) idx.push_back(L.axis_index(p, a));
      CHECK(L.project(p, k) == Lk.flatten(idx));
    }
  }
}

TEST_CASE("down closure against a brute-force oracle") {
  testing::Gen g(21);
  Lattice L({-2, -3}, {6, 7}, Vec::Ones(2));
  for (int trial = 0; trial < 50; ++trial) {
    Mask m(L.size(), 0);
    for (auto& b : m) b = g.coin(0.05);
    Mask closed = m;
    down_close(L, closed);
    CHECK(is_down_set(L, closed));
    for (std::size_t p = 0; p < L.size(); ++p) {
      bool oracle = false;
      for (std::size_t q = 0; q < L.size() && !oracle; ++q)
        oracle = m[q] && (L.point(q) - L.point(p)).minCoeff() >= 0;
      CHECK(bool(closed[p]) == oracle);
    }
  }
}

TEST_CASE("classification of values") {
  Tolerance tol{1e-10, 1e-10};
  Vec gk = (Vec(2) << -1.0, 0.5).finished();
  Membership a = classify_values(-0.3, gk, {0}, tol);
  CHECK(a.gamma_minus == Tri::Yes);
  CHECK(a.gamma_plus == Tri::No);
  CHECK(a.gamma_minus_A == Tri::Yes);
  CHECK(a.gamma_plus_A == Tri::No);
  Membership b = classify_values(-0.3, gk, {0, 1}, tol);
  CHECK(b.gamma_minus_A == Tri::No);
  Membership c = classify_values(0.2, gk, {1}, tol);
  CHECK(c.gamma_plus == Tri::Yes);
  CHECK(c.gamma_plus_A == Tri::Yes);
  CHECK(classify_values(0.2, gk, {0}, tol).gamma_plus_A == Tri::No);
  Membership e = classify_values(1e-12, gk, {}, tol);
  CHECK(e.gamma_minus == Tri::Boundary);
  CHECK(e.gamma_plus == Tri::Boundary);
  CHECK(e.gamma_minus_A == Tri::Boundary);
  Membership f = classify_values(-0.3, (Vec(2) << -1e-12, 1.0).finished(), {0}, tol);
  CHECK(f.gamma_minus_A == Tri::Boundary);
}

TEST_CASE("classify agrees with the eigenvalue sign") {
  Network net = tandem2();
  Membership at0 = classify(net, Vec::Zero(2), {});
  CHECK(at0.gamma_minus == Tri::Boundary);
  Membership inside = classify(net, (-0.1 * net.v_bar()).eval(), {});
  CHECK(inside.gamma_minus == Tri::Yes);
  Membership outside = classify(net, (Vec(2) << 5.0, 5.0).finished(), {0, 1});
  CHECK(outside.gamma_plus == Tri::Yes);
}

TEST_CASE("default resolution") {
  CHECK(default_resolution(2) == 200);
  CHECK(default_resolution(3) == 60);
  for (int d = 3; d <= 6; ++d) {
    int r = default_resolution(d);
    CHECK(std::pow(r + 1.0, d) <= 250000);
  }
}

TEST_CASE("first positive root") {
  auto f = [](double u) { return u * (u - 2.0); };
  CHECK(first_positive_root(f, 100.0) == doctest::Approx(2.0).epsilon(1e-13));
  CHECK(std::isnan(first_positive_root([](double u) { return -u; }, 100.0)));
}

TEST_CASE("axis roots agree with bisection on the two-state formula") {
  testing::Gen g(22);
  int checked = 0;
  while (checked < 30) {
    Network net(testing::random_stable_model(g, 2, 2));
    for (int k = 0; k < 2; ++k) {
      AxisScan s = scan_axis(net, k, 1e3);
      auto f = [&](double t) {
        Vec th = Vec::Zero(2);
        th(k) = t;
        return testing::gamma_2x2(k_matrix(net, th));
      };
      // A positive root needs a negative initial slope and some positive rate.
      if (!(net.v_bar()(k) < 0) || net.v().row(k).maxCoeff() <= 0) {
        CHECK(std::isnan(s.root));
        continue;
      }
      REQUIRE_FALSE(std::isnan(s.root));
      double oracle = bisect_root(f, 1e-9, 1e3);
      CHECK(std::abs(s.root - oracle) <= 1e-9 * oracle);
      CHECK(s.extent_hi >= s.root * (1 - 1e-9));
      CHECK(s.extent_lo < 0);
      ++checked;
    }
  }
}

TEST_CASE("symmetric model gives a symmetric box and a symmetric exact region") {
  Network net = symmetric_pair();
  BoundingBox b = auto_box(net);
  CHECK(b.hi(0) == doctest::Approx(b.hi(1)).epsilon(1e-9));
  CHECK(b.lo(0) == doctest::Approx(b.lo(1)).epsilon(1e-9));
  CHECK(b.resolution == 200);
  TwoDExact ex = two_d_exact(net);
  CHECK(ex.alpha1 == doctest::Approx(ex.alpha2).epsilon(1e-8));
  CHECK(ex.alpha1 > 0);
}

TEST_CASE("an axis with negative net rates in every state is truncated") {
  Network net = draining_first();
  BoundingBox b = auto_box(net);
  CHECK(b.truncated[0]);
  CHECK(std::isnan(scan_axis(net, 0, 100.0).root));
}

TEST_CASE("auto_box rejects unstable models") {
  Network net(testing::two_state(Mat::Constant(2, 2, 3.0), Mat::Ones(2, 2), Mat::Zero(2, 2), 1, 1));
  CHECK_THROWS_AS(auto_box(net), PreconditionError);
}

TEST_CASE("make_lattice puts the origin on the lattice") {
  Network net = tandem2();
  BoundingBox b = small_box(net, 37);
  Lattice L = make_lattice(b);
  for (int k = 0; k < 2; ++k) {
    CHECK(L.coord(k, L.zero_index(k)) == 0.0);
    CHECK(L.coord(k, 0) <= b.lo(k) + 1e-12);
    CHECK(L.coord(k, L.count(k) - 1) >= b.hi(k) - L.step(k));
  }
}

TEST_CASE("fixed point sets are down-sets and grow monotonically") {
  testing::Gen g(23);
  for (int trial = 0; trial < 20; ++trial) {
    int d = trial < 14 ? 2 : 3;
    Network net(testing::random_stable_model(g, d, g.integer(2, 3)));
    DomainGrid grid = fixed_point_iteration(net, small_box(net, d == 2 ? 40 : 14));
    for (std::size_t n = 1; n < grid.growth.size(); ++n)
      for (int k = 0; k < d; ++k) CHECK(grid.growth[n][k] >= grid.growth[n - 1][k]);
    for (int k = 0; k < d; ++k) CHECK(is_down_set(grid.dk_lattice[k], grid.Dk[k]));
    CHECK(is_down_set(grid.lattice, grid.dmax));
    CHECK(is_down_set(grid.lattice, grid.down_gamma_minus));
    const Lattice& L = grid.lattice;
    for (std::size_t p = 0; p < L.size(); ++p) {
      if (grid.dmax[p]) {
        CHECK(grid.down_gamma_minus[p]);
        for (int k = 0; k < d; ++k) CHECK(grid.Dk[k][L.project(p, k)]);
      }
      bool neg = true;
      for (int k = 0; k < d; ++k) neg = neg && L.axis_index(p, k) < L.zero_index(k);
      if (neg) CHECK(grid.dmax[p]);
    }
  }
}

TEST_CASE("fixed point reaches past the origin for a stable tandem") {
  Network net = tandem2();
  DomainGrid grid = fixed_point_iteration(net, small_box(net, 60));
  CHECK(grid.nontrivial);
  CHECK(grid.iterations >= 1);
  bool positive = false;
  for (std::size_t p = 0; p < grid.lattice.size(); ++p)
    positive = positive || (grid.dmax[p] && grid.lattice.point(p).minCoeff() > 0);
  CHECK(positive);
}

TEST_CASE("fixed point is thread-count independent") {
  testing::Gen g(24);
  Network net(testing::random_stable_model(g, 3, 2));
  FixedPointOptions one, four;
  one.threads = 1;
  four.threads = 4;
  BoundingBox b = small_box(net, 16);
  DomainGrid a = fixed_point_iteration(net, b, one), c = fixed_point_iteration(net, b, four);
  CHECK(a.dmax == c.dmax);
  CHECK(a.Dk == c.Dk);
  CHECK(grid_csv(a) == grid_csv(c));
}

TEST_CASE("strict lattice Gamma^- is midpoint convex") {
  Network net = tandem2();
  DomainGrid grid = fixed_point_iteration(net, small_box(net, 40));
  const Lattice& L = grid.lattice;
  testing::Gen g(25);
  int checked = 0;
  for (int trial = 0; trial < 20000 && checked < 500; ++trial) {
    std::size_t p = g.integer(0, int(L.size()) - 1), q = g.integer(0, int(L.size()) - 1);
    if (!grid.gamma_minus[p] || !grid.gamma_minus[q]) continue;
    std::vector<int> mid(2);
    bool ok = true;
    for (int k = 0; k < 2; ++k) {
      int s = L.axis_index(p, k) + L.axis_index(q, k);
      ok = ok && s % 2 == 0;
      mid[k] = s / 2;
    }
    if (!ok) continue;
    CHECK(gamma_value(net, L.point(L.flatten(mid))) < 1e-12);
    ++checked;
  }
  CHECK(checked > 50);
}

TEST_CASE("two_d_exact trace is monotone and converges") {
  testing::Gen g(26);
  for (int trial = 0; trial < 10; ++trial) {
    Network net(testing::random_stable_model(g, 2, 3));
    TwoDExact ex = two_d_exact(net);
    for (std::size_t i = 1; i < ex.trace.size(); ++i) {
      CHECK(ex.trace[i].first >= ex.trace[i - 1].first);
      CHECK(ex.trace[i].second >= ex.trace[i - 1].second);
    }
    CHECK(ex.iterations < 10000);
    CHECK(ex.alpha1 >= 0);
    CHECK(ex.alpha2 >= 0);
  }
}

TEST_CASE("two_d_exact agrees with a grid-search oracle") {
  testing::Gen g(27);
  for (int trial = 0; trial < 4; ++trial) {
    Network net(testing::random_stable_model(g, 2, 2));
    BoundingBox box = auto_box(net);
    TwoDExact ex = two_d_exact(net, box);
    const Mat& P = net.model().P;
    const double s1 = P(1, 0) / (1 - P(1, 1)), s2 = P(0, 1) / (1 - P(0, 0));
    const int n = 800;
    Vec h = (box.hi - box.lo) / n;
    auto gam = [&](double x, double y) {
      return testing::gamma_2x2(k_matrix(net, (Vec(2) << x, y).finished()));
    };
    // Same alternating sup, evaluated on a uniform grid.
    double a1 = 0, a2 = 0;
    for (int it = 0; it < 200; ++it) {
      double n1 = 0, n2 = 0;
      for (int i = 0; i <= n; ++i) {
        double x = box.lo(0) + i * h(0);
        if (x < 0) continue;
        double top = std::min(a2, s1 * x);
        for (double t = box.lo(1); t <= top; t += h(1))
          if (gam(x, t) < 0) { n1 = std::max(n1, x); break; }
      }
      for (int i = 0; i <= n; ++i) {
        double y = box.lo(1) + i * h(1);
        if (y < 0) continue;
        double top = std::min(n1, s2 * y);
        for (double t = box.lo(0); t <= top; t += h(0))
          if (gam(t, y) < 0) { n2 = std::max(n2, y); break; }
      }
      bool same = n1 == a1 && n2 == a2;
      a1 = std::max(a1, n1);
      a2 = std::max(a2, n2);
      if (same) break;
    }
    CHECK(std::abs(ex.alpha1 - a1) <= 3 * h.maxCoeff());
    CHECK(std::abs(ex.alpha2 - a2) <= 3 * h.maxCoeff());
  }
}

TEST_CASE("a sliver of Gamma^- narrower than one cell still lifts D_1") {
  // gamma_1 = (1 - p11) theta_1, so Gamma^-_1 needs theta_1 < 0, where Gamma^-
  // is a lens a few hundredths wide, far below the theta_1 step of the
  // default box.
  Network net(testing::two_state(mat(2, 2, {1.8509217308, 0.9055153683, 0.5490970197, 1.3344280332}),
                                 mat(2, 2, {2.3714233218, 3.1265927614, 1.3269661169, 1.4611003083}),
                                 mat(2, 2, {0.2273477309, 0, 0.0468708988, 0.3011916763}), 1.8358428250,
                                 1.9877612817));
  BoundingBox box = auto_box(net);
  DomainGrid grid = fixed_point_iteration(net, box);
  TwoDExact ex = two_d_exact(net, box);
  const Lattice& L = grid.lattice;
  const double h1 = L.step(0), h2 = L.step(1);
  REQUIRE(ex.alpha2 > 10 * h2);
  const double mid = 0.5 * ex.alpha2;
  CHECK(gamma_value(net, (Vec(2) << -h1, mid).finished()) > 0.0);
  CHECK(gamma_value(net, (Vec(2) << -0.01, mid).finished()) < 0.0);
  // Every lattice point of the exact region two cells clear of its top edge
  // belongs to D^(max).
  int checked = 0;
  for (std::size_t p = 0; p < L.size(); ++p) {
    Vec th = L.point(p);
    if (th(0) > -h1 || th(1) < 0.0 || th(1) > ex.alpha2 - 2 * h2) continue;
    if (!in_two_d_region(net, ex, (Vec(2) << th(0) + 2 * h1, th(1) + 2 * h2).finished(), 100.0)) continue;
    CHECK(grid.dmax[p]);
    ++checked;
  }
  CHECK(checked > 100);
}

TEST_CASE("2-d down-closure membership") {
  Network net = tandem2();
  double cap = 100;
  CHECK(in_down_gamma_minus_2d(net, (Vec(2) << -1.0, -2.0).finished(), cap));
  CHECK_FALSE(in_down_gamma_minus_2d(net, (Vec(2) << 50.0, 50.0).finished(), cap));
  testing::Gen g(28);
  for (int i = 0; i < 200; ++i) {
    Vec th = g.vec(2, -2, 2);
    if (gamma_value(net, th) < 0) CHECK(in_down_gamma_minus_2d(net, th, cap));
  }
}

TEST_CASE("upper decay rate: ray below hyperplane and matches a dominance scan") {
  Network net(testing::two_state(mat(3, 2, {1.4, 0.6, 0, 0, 0, 0}), mat(3, 2, {2.0, 1.2, 1.5, 1.5, 1.3, 1.8}),
                                 mat(3, 3, {0, 1, 0, 0, 0, 1, 0, 0, 0}), 0.7, 0.7));
  REQUIRE(is_stable(net).stable());
  DomainGrid grid = fixed_point_iteration(net, small_box(net, 30));
  testing::Gen g(29);
  for (int trial = 0; trial < 6; ++trial) {
    Vec c = trial < 3 ? Vec(Vec::Unit(3, trial)) : Vec(g.vec(3, 0.1, 1.0));
    UpperDecayRate ub = upper_decay_rate(net, c, grid);
    Vec cu = c.normalized();
    CHECK(ub.ray <= ub.hyperplane + 1e-12);
    CHECK(ub.hyperplane == doctest::Approx(ub.hyperplane_point.dot(cu)).epsilon(1e-12));
    // Oracle: bisection for the largest a with a c dominated by D^(max).
    double a = 0, b = 2 * grid.box.hi.maxCoeff() + 1;
    for (int i = 0; i < 60; ++i) {
      double mid = 0.5 * (a + b);
      (in_mask_dominating(grid, mid * cu) ? a : b) = mid;
    }
    CHECK(std::abs(ub.ray - a) <= 1e-9 * std::max(1.0, a));
    double hp = 0.0;  // the origin is in the closure of D^(max)
    for (std::size_t p = 0; p < grid.lattice.size(); ++p)
      if (grid.dmax[p]) hp = std::max(hp, grid.lattice.point(p).dot(cu));
    CHECK(ub.hyperplane == doctest::Approx(hp).epsilon(1e-12));
    CHECK(ub.ray > 0);
  }
  CHECK_THROWS_AS(upper_decay_rate(net, (Vec(3) << 1, -1, 0).finished(), grid), PreconditionError);
}

TEST_CASE("upper decay rate is stable under refinement") {
  Network net = tandem2();
  DomainGrid coarse = fixed_point_iteration(net, small_box(net, 50));
  DomainGrid fine = fixed_point_iteration(net, small_box(net, 100));
  for (Vec c : {Vec(Vec::Unit(2, 0)), Vec(Vec::Unit(2, 1)), Vec(Vec::Ones(2))}) {
    UpperDecayRate a = upper_decay_rate(net, c, coarse), b = upper_decay_rate(net, c, fine);
    CHECK(std::abs(a.ray - b.ray) <= a.ray_error + b.ray_error + 1e-12);
    CHECK(std::abs(a.hyperplane - b.hyperplane) <= a.hyperplane_error + b.hyperplane_error + 1e-12);
  }
}

TEST_CASE("coordinate lower bound satisfies G_k and is tight") {
  Network net = tandem2();
  DomainGrid grid = fixed_point_iteration(net, small_box(net, 80));
  for (int k = 0; k < 2; ++k) {
    CoordinateLowerBound lb = lower_decay_rate_coordinate(net, k, grid);
    if (lb.empty) {
      CHECK(std::isinf(lb.value));
      continue;
    }
    CHECK(lb.value >= 0);
    if (lb.value > 0) {
      Vec below = lb.theta;
      below(k) -= 1e-9 * std::max(1.0, lb.value);
      CHECK_FALSE(in_G(net, k, below));
    }
    Vec above = lb.theta;
    above(k) += 1e-9 * std::max(1.0, lb.value);
    CHECK(in_G(net, k, above));
  }
}

TEST_CASE("coordinate lower bound is infinite when G_k is empty") {
  // Station 2 receives more than it serves in every state, so grad_2 > 0
  // everywhere and G_1 has no point.
  Network net(testing::two_state(mat(2, 2, {1.0, 1.0, 0, 0}), mat(2, 2, {3.0, 3.0, 2.0, 2.0}),
                                 mat(2, 2, {0, 1, 0, 0}), 1, 1));
  REQUIRE(is_stable(net).stable());
  DomainGrid grid = fixed_point_iteration(net, small_box(net, 40));
  CoordinateLowerBound lb = lower_decay_rate_coordinate(net, 0, grid);
  CHECK(lb.empty);
  CHECK(std::isinf(lb.value));
}

TEST_CASE("direction lower bound agrees with bisection") {
  testing::Gen g(30);
  int checked = 0;
  for (int trial = 0; trial < 200 && checked < 20; ++trial) {
    Network net(testing::random_stable_model(g, 2, 2));
    Vec c = g.vec(2, 0.05, 1.0);
    DirectionLowerBound lb;
    try {
      lb = lower_decay_rate_direction(net, c);
    } catch (const PreconditionError&) {
      continue;
    }
    Vec cu = c.normalized();
    double oracle = bisect_root([&](double u) { return testing::gamma_2x2(k_matrix(net, u * cu)); },
                                1e-9 * lb.value, 4 * lb.value);
    CHECK(std::abs(lb.value - oracle) <= 1e-9 * oracle);
    CHECK(lb.exit_gradient.minCoeff() >= -1e-9);
    ++checked;
  }
  CHECK(checked >= 10);
}

TEST_CASE("direction lower bound rejects directions with nonnegative drift") {
  Network net = draining_first();
  CHECK_THROWS_AS(lower_decay_rate_direction(net, (Vec(2) << 0.0, -1.0).finished()), PreconditionError);
  CHECK_THROWS_AS(lower_decay_rate_direction(net, Vec::Zero(2)), PreconditionError);
}

TEST_CASE("fixed point on the default 2-d grid stays fast") {
  Network net = tandem2();
  auto t0 = std::chrono::steady_clock::now();
  DomainGrid grid = fixed_point_iteration(net, auto_box(net));
  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  CHECK(grid.lattice.size() >= 200 * 200);
  MESSAGE("default grid: " << secs << " s, " << grid.iterations << " sweeps");
  CHECK(secs < 30);
}

TEST_CASE("solve_domain frees the top faces or flags them") {
  testing::Gen g(31);
  for (int trial = 0; trial < 10; ++trial) {
    Network net(testing::random_stable_model(g, 2, 3));
    AutoBoxOptions o;
    o.resolution = 60;
    DomainGrid grid = solve_domain(net, o);
    const Lattice& L = grid.lattice;
    for (int k = 0; k < 2; ++k) {
      bool touches = false;
      for (std::size_t p = 0; p < L.size(); ++p)
        touches = touches || (grid.dmax[p] && L.axis_index(p, k) == L.count(k) - 1);
      if (touches) CHECK(grid.box.truncated[k]);
    }
    CHECK(grid.box_growths <= o.max_growth);
  }
}

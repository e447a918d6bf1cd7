#include <doctest.h>

#include <thread>

#include "mmfn/error.hpp"
#include "mmfn/geometry.hpp"
#include "mmfn/spectral.hpp"
#include "mmfn/traffic.hpp"
#include "support.hpp"

using namespace mmfn;
using testing::mat;

namespace {

double inf_norm(const Mat& a) { return a.cwiseAbs().rowwise().sum().maxCoeff(); }

Vec fd_gradient(const Network& net, const Vec& theta, double h = 1e-5) {
  Vec g(theta.size());
  for (int k = 0; k < theta.size(); ++k) {
    Vec a = theta, b = theta;
    a(k) += h;
    b(k) -= h;
    g(k) = (gamma_value(net, a) - gamma_value(net, b)) / (2 * h);
  }
  return g;
}

Network sample(int seed, int d = 2, int m = 3) {
  testing::Gen g(seed);
  return Network(testing::random_model(g, d, m));
}

}  // namespace

TEST_CASE("K at the origin is Q") {
  Network net = sample(1);
  CHECK(k_matrix(net, Vec::Zero(2)) == net.Q());
}

TEST_CASE("K along the first axis") {
  Network net = sample(2, 2, 2);
  Mat K = k_matrix(net, (Vec(2) << 1, 0).finished());
  Mat expected = net.Q();
  expected(0, 0) += net.v()(0, 0);
  expected(1, 1) += net.v()(0, 1);
  CHECK(K == expected);
}

TEST_CASE("Perron data at the origin") {
  Network net = sample(3, 3, 4);
  SpectralPoint sp = perron(net, Vec::Zero(3));
  CHECK(std::abs(sp.gamma) <= 1e-12);
  CHECK((sp.h - Vec::Ones(4)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((sp.xi - net.pi()).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((sp.grad - net.v_bar()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("two-state Perron root matches the quadratic formula") {
  testing::Gen g(4);
  for (int trial = 0; trial < 200; ++trial) {
    Network net(testing::random_model(g, 2, 2));
    Vec th = g.vec(2, -3, 3);
    double oracle = testing::gamma_2x2(k_matrix(net, th));
    CHECK(std::abs(perron(net, th).gamma - oracle) <= 1e-12 * std::max(1.0, std::abs(oracle)));
    CHECK(std::abs(gamma_value(net, th) - oracle) <= 1e-12 * std::max(1.0, std::abs(oracle)));
  }
}

TEST_CASE("normalization removes the eigenvector scale") {
  Network net = sample(5, 2, 4);
  Vec th = (Vec(2) << 0.3, -0.2).finished();
  SpectralPoint sp = perron(net, th);
  Vec h = 10.0 * sp.h, xi = -3.0 * sp.xi;
  normalize_eigenpair(h, xi);
  CHECK((h - sp.h).cwiseAbs().maxCoeff() < 1e-14);
  CHECK((xi - sp.xi).cwiseAbs().maxCoeff() < 1e-14);
  CHECK(std::abs(sp.xi.sum() - 1.0) < 1e-14);
  CHECK(std::abs(sp.xi.dot(sp.h) - 1.0) < 1e-14);
}

TEST_CASE("eigenpairs are positive with small residual") {
  testing::Gen g(6);
  for (int trial = 0; trial < 40; ++trial) {
    int d = g.integer(2, 4), m = g.integer(2, 6);
    Network net(testing::random_model(g, d, m));
    for (int p = 0; p < 20; ++p) {
      Vec th = g.vec(d, -2, 2);
      SpectralPoint sp = perron(net, th);
      Mat K = k_matrix(net, th);
      CHECK((K * sp.h - sp.gamma * sp.h).cwiseAbs().maxCoeff() <= 1e-10 * inf_norm(K));
      CHECK((K.transpose() * sp.xi - sp.gamma * sp.xi).cwiseAbs().maxCoeff() <= 1e-10 * inf_norm(K));
      CHECK(sp.h.minCoeff() > 0);
      CHECK(sp.xi.minCoeff() > 0);
      CHECK(sp.gap > 0);
    }
  }
}

TEST_CASE("iterative eigensolver agrees with the dense one") {
  testing::Gen g(7);
  SpectralOptions iterative;
  iterative.dense_limit = 0;
  for (int trial = 0; trial < 20; ++trial) {
    Network net(testing::random_model(g, 3, g.integer(2, 8)));
    Vec th = g.vec(3, -1, 1);
    SpectralPoint a = perron(net, th), b = perron(net, th, iterative);
    CHECK(std::abs(a.gamma - b.gamma) < 1e-10);
    CHECK((a.h - b.h).cwiseAbs().maxCoeff() < 1e-8);
    CHECK((a.xi - b.xi).cwiseAbs().maxCoeff() < 1e-8);
  }
}

TEST_CASE("gradient matches central differences") {
  testing::Gen g(8);
  for (int trial = 0; trial < 30; ++trial) {
    Network net(testing::random_model(g, 3, 4));
    Vec th = g.vec(3, -1, 1);
    Vec grad = gamma_gradient(net, th), fd = fd_gradient(net, th);
    for (int k = 0; k < 3; ++k)
      CHECK(std::abs(grad(k) - fd(k)) <= 1e-6 * std::max(1.0, std::abs(grad(k))));
  }
}

TEST_CASE("state-independent net rates give a constant gradient") {
  MmfnModel md = testing::two_state(mat(2, 2, {1, 1, 2, 2}), mat(2, 2, {3, 3, 1, 1}), Mat::Zero(2, 2), 1, 3);
  Network net(md);
  Vec th = (Vec(2) << 0.7, -1.3).finished();
  SpectralPoint sp = perron(net, th);
  CHECK((sp.grad - net.v().col(0)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(std::abs(sp.gamma - th.dot(net.v().col(0))) < 1e-12);
}

TEST_CASE("gamma_k is theta^t R") {
  Network star(testing::two_state(Mat::Ones(2, 2), Mat::Constant(2, 2, 3), Mat::Zero(2, 2), 1, 1));
  Vec th = (Vec(2) << 0.4, -0.9).finished();
  CHECK(gamma_k(star, th) == th);
  Network tandem(testing::two_state(mat(2, 2, {1, 1, 0, 0}), Mat::Constant(2, 2, 3), mat(2, 2, {0, 1, 0, 0}), 1, 1));
  Vec gk = gamma_k(tandem, th);
  CHECK(gk(0) == doctest::Approx(th(0) - th(1)));
  CHECK(gk(1) == doctest::Approx(th(1)));
  CHECK(gamma_k(tandem, Vec::Zero(2)).isZero());
}

TEST_CASE("twisted generator at the origin is Q") {
  Network net = sample(9, 2, 4);
  TwistedGenerator tg = twisted_generator(net, Vec::Zero(2));
  CHECK((tg.Q_theta - net.Q()).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((tg.pi_theta - net.pi()).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(twisted_model(net, Vec::Zero(2)).Q.isApprox(net.Q(), 1e-12));
}

TEST_CASE("twisted generator rows and mean drift") {
  testing::Gen g(10);
  for (int trial = 0; trial < 50; ++trial) {
    int d = g.integer(2, 3), m = g.integer(2, 5);
    Network net(testing::random_model(g, d, m));
    Vec th = g.vec(d, -1.5, 1.5);
    TwistedGenerator tg = twisted_generator(net, th);
    CHECK(tg.Q_theta.rowwise().sum().cwiseAbs().maxCoeff() <= 1e-12);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < m; ++j)
        if (i != j) CHECK(tg.Q_theta(i, j) >= 0);
    CHECK((tg.v_bar_theta - gamma_gradient(net, th)).cwiseAbs().maxCoeff() <= 1e-8);
  }
}

TEST_CASE("shift identity for the twisted model") {
  testing::Gen g(11);
  for (int trial = 0; trial < 20; ++trial) {
    Network net(testing::random_model(g, 2, 3));
    Vec th = g.vec(2, -1, 1), eta = g.vec(2, -1, 1);
    Network tw(twisted_model(net, th));
    double lhs = gamma_value(tw, eta);
    double rhs = gamma_value(net, eta + th) - gamma_value(net, th);
    CHECK(std::abs(lhs - rhs) <= 1e-9);
  }
}

TEST_CASE("twist at a north-east boundary point is unstable") {
  testing::Gen g(12);
  int checked = 0;
  while (checked < 10) {
    Network net(testing::random_stable_model(g, 2, 3));
    try {
      DirectionLowerBound lb = lower_decay_rate_direction(net, Vec::Ones(2));
      Network tw(twisted_model(net, lb.exit_point));
      CHECK((tw.R_inv() * gamma_gradient(net, lb.exit_point)).maxCoeff() > 0);
      CHECK_FALSE(is_stable(tw).stable());
      ++checked;
    } catch (const PreconditionError&) {
    }
  }
}

TEST_CASE("gamma is convex") {
  testing::Gen g(13);
  Network net(testing::random_model(g, 3, 4));
  for (int trial = 0; trial < 500; ++trial) {
    Vec a = g.vec(3, -2, 2), b = g.vec(3, -2, 2);
    CHECK(gamma_value(net, 0.5 * (a + b)) <= 0.5 * (gamma_value(net, a) + gamma_value(net, b)) + 1e-10);
  }
}

TEST_CASE("mean drift supports the negative set") {
  testing::Gen g(14);
  for (int trial = 0; trial < 5; ++trial) {
    Network net(testing::random_stable_model(g, 2, 3));
    for (int p = 0; p < 400; ++p) {
      Vec th = g.vec(2, -2, 2);
      if (gamma_value(net, th) < 0) CHECK(net.v_bar().dot(th) <= 1e-10);
    }
  }
}

TEST_CASE("negative twisted drift means a stable station after the twist") {
  testing::Gen g(15);
  for (int trial = 0; trial < 40; ++trial) {
    Network net(testing::random_model(g, 3, 3));
    Vec th = g.vec(3, -1, 1);
    Network tw(twisted_model(net, th));
    Vec vt = twisted_generator(net, th).v_bar_theta;
    auto st = stable_stations(tw).stable;
    for (int k = 0; k < 3; ++k)
      if (vt(k) < -1e-9) CHECK(std::find(st.begin(), st.end(), k) != st.end());
  }
}

TEST_CASE("spectral cache under concurrent readers") {
  Network net = sample(16, 2, 3);
  SpectralCache cache(net);
  std::vector<std::thread> pool;
  std::vector<double> out(4 * 50);
  for (int t = 0; t < 4; ++t)
    pool.emplace_back([&, t] {
      for (int i = 0; i < 50; ++i) {
        Vec th = (Vec(2) << 0.01 * i, -0.02 * i).finished();
        out[t * 50 + i] = cache.get(th).gamma;
      }
    });
  for (auto& th : pool) th.join();
  CHECK(cache.size() == 50);
  for (int i = 0; i < 50; ++i)
    for (int t = 1; t < 4; ++t) CHECK(out[t * 50 + i] == out[i]);
}

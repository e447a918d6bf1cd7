#pragma once

// Generators and independent oracles shared by the test binaries.

#include <cmath>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "mmfn/model.hpp"
#include "mmfn/traffic.hpp"

namespace testing {

using mmfn::Mat;
using mmfn::MmfnModel;
using mmfn::Vec;

struct Gen {
  std::mt19937_64 eng;
  explicit Gen(std::uint64_t seed) : eng(seed) {}
  double uni(double a, double b) { return std::uniform_real_distribution<double>(a, b)(eng); }
  int integer(int a, int b) { return std::uniform_int_distribution<int>(a, b)(eng); }
  bool coin(double p) { return uni(0.0, 1.0) < p; }
  Vec vec(int n, double a, double b) {
    Vec v(n);
    for (int i = 0; i < n; ++i) v(i) = uni(a, b);
    return v;
  }
};

// Irreducible generator: a directed cycle plus random extra rates.
inline Mat random_generator(Gen& g, int m) {
  Mat Q = Mat::Zero(m, m);
  for (int i = 0; i < m; ++i) {
    Q(i, (i + 1) % m) = g.uni(0.3, 2.0);
    for (int j = 0; j < m; ++j)
      if (j != i && j != (i + 1) % m && g.coin(0.5)) Q(i, j) = g.uni(0.0, 1.5);
  }
  for (int i = 0; i < m; ++i) Q(i, i) = -(Q.row(i).sum() - Q(i, i));
  return Q;
}

inline Mat random_routing(Gen& g, int d, double max_row = 0.9) {
  Mat P = Mat::Zero(d, d);
  for (int k = 0; k < d; ++k) {
    for (int l = 0; l < d; ++l)
      if (g.coin(0.6)) P(k, l) = g.uni(0.0, 1.0);
    double s = P.row(k).sum();
    if (s > 0) P.row(k) *= g.uni(0.1, max_row) / s;
  }
  return P;
}

// Every station has exogenous input in some state, so the augmented
// routing is irreducible.
inline MmfnModel random_model(Gen& g, int d, int m) {
  MmfnModel md;
  md.d = d;
  md.m = m;
  md.lambda = Mat(d, m);
  md.mu = Mat(d, m);
  for (int k = 0; k < d; ++k)
    for (int i = 0; i < m; ++i) {
      md.lambda(k, i) = g.coin(0.8) ? g.uni(0.0, 3.0) : 0.0;
      md.mu(k, i) = g.uni(0.5, 4.0);
    }
  for (int k = 0; k < d; ++k) md.lambda(k, g.integer(0, m - 1)) += g.uni(0.1, 1.0);
  md.P = random_routing(g, d);
  md.Q = random_generator(g, m);
  return md;
}

inline MmfnModel random_stable_model(Gen& g, int d, int m) {
  for (;;) {
    MmfnModel md = random_model(g, d, m);
    mmfn::Network net(md);
    auto st = mmfn::is_stable(net);
    if (st.stable() && st.drift.maxCoeff() < -0.02) return md;
  }
}

inline Mat neumann_inverse(const Mat& P, int terms = 200) {
  const int d = P.rows();
  Mat sum = Mat::Identity(d, d), term = Mat::Identity(d, d);
  Mat Pt = P.transpose();
  for (int n = 1; n <= terms; ++n) {
    term = term * Pt;
    sum += term;
  }
  return sum;
}

// Null-space oracle: least-squares solve of [Q^t; 1^t] pi = (0, 1).
inline Vec null_space_pi(const Mat& Q) {
  const int m = Q.rows();
  Mat A(m + 1, m);
  A.topRows(m) = Q.transpose();
  A.row(m) = Vec::Ones(m).transpose();
  Vec b = Vec::Zero(m + 1);
  b(m) = 1.0;
  return A.colPivHouseholderQr().solve(b);
}

inline double gamma_2x2(const Mat& K) {
  double a = K(0, 0), d = K(1, 1);
  return 0.5 * (a + d) + std::sqrt(0.25 * (a - d) * (a - d) + K(0, 1) * K(1, 0));
}

// Plain Picard sweeps of alpha = lambda + P^t min(alpha, mu).
inline Mat picard_traffic(const MmfnModel& md, const Mat& start, int sweeps) {
  Mat a = start;
  for (int s = 0; s < sweeps; ++s) a = md.lambda + md.P.transpose() * a.cwiseMin(md.mu);
  return a;
}

inline MmfnModel two_state(const Mat& lambda, const Mat& mu, const Mat& P, double q1, double q2) {
  MmfnModel md;
  md.d = lambda.rows();
  md.m = 2;
  md.lambda = lambda;
  md.mu = mu;
  md.P = P;
  md.Q.resize(2, 2);
  md.Q << -q1, q1, q2, -q2;
  return md;
}

inline Mat mat(int r, int c, std::initializer_list<double> v) {
  Mat a(r, c);
  auto it = v.begin();
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) a(i, j) = *it++;
  return a;
}

}  // namespace testing

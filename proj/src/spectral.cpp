#include "mmfn/spectral.hpp"

#include <cmath>
#include <mutex>

#include <Eigen/Eigenvalues>

#include "mmfn/error.hpp"
#include "mmfn/traffic.hpp"

namespace mmfn {

namespace {

double inf_norm(const Mat& a) { return a.cwiseAbs().rowwise().sum().maxCoeff(); }

struct Dominant {
  double value;
  double gap;
  Vec vec;
};

// Eigenpair of maximal real part from a dense decomposition.
Dominant dense_dominant(const Mat& A, bool vectors) {
  Eigen::EigenSolver<Mat> es(A, vectors);
  if (es.info() != Eigen::Success) throw ConvergenceError("eigen decomposition failed");
  const auto& ev = es.eigenvalues();
  int best = 0;
  for (int i = 1; i < ev.size(); ++i)
    if (ev(i).real() > ev(best).real()) best = i;
  double second = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < ev.size(); ++i)
    if (i != best) second = std::max(second, ev(i).real());
  Dominant d{ev(best).real(), ev(best).real() - second, {}};
  if (vectors) d.vec = es.eigenvectors().col(best).real();
  return d;
}

// Shifted power iteration followed by inverse-iteration polishing. The
// shift makes A + sI nonnegative with a positive diagonal, hence primitive.
Dominant iterative_dominant(const Mat& A) {
  const int n = static_cast<int>(A.rows());
  double s = 0.0;
  for (int i = 0; i < n; ++i) s = std::max(s, -A(i, i));
  s += 1.0;
  Mat B = A + s * Mat::Identity(n, n);
  Vec x = Vec::Constant(n, 1.0 / n);
  double lam = 0.0;
  for (int it = 0; it < 2000; ++it) {
    Vec y = B * x;
    double nrm = y.sum();
    double change = (y / nrm - x).cwiseAbs().maxCoeff();
    x = y / nrm;
    lam = nrm - s;
    if (change < 1e-10) break;
  }
  const double scale = std::max(1.0, inf_norm(A));
  for (int it = 0; it < 50; ++it) {
    double sigma = lam + 1e-10 * scale;
    Eigen::PartialPivLU<Mat> lu(A - sigma * Mat::Identity(n, n));
    Vec y = lu.solve(x);
    y /= y.sum();
    lam = (y.dot(A * y)) / y.dot(y);
    double change = (y - x).cwiseAbs().maxCoeff();
    x = y;
    if (change < 1e-15) break;
  }
  // Rayleigh quotient for a nonsymmetric matrix is only approximate; use the
  // componentwise ratio on the dominant entry instead.
  int j;
  x.cwiseAbs().maxCoeff(&j);
  lam = (A.row(j) * x)(0) / x(j);
  return {lam, std::numeric_limits<double>::quiet_NaN(), x};
}

}  // namespace

Mat k_matrix(const Network& net, const Vec& theta) {
  if (theta.size() != net.d()) throw StructuralError("theta must have d entries");
  Mat K = net.Q();
  Vec diag = net.v().transpose() * theta;
  K.diagonal() += diag;
  return K;
}

void normalize_eigenpair(Vec& h, Vec& xi) {
  int j;
  h.cwiseAbs().maxCoeff(&j);
  if (h(j) < 0) h = -h;
  xi.cwiseAbs().maxCoeff(&j);
  if (xi(j) < 0) xi = -xi;
  xi /= xi.sum();
  h /= xi.dot(h);
}

SpectralPoint perron(const Network& net, const Vec& theta, const SpectralOptions& opt) {
  Mat K = k_matrix(net, theta);
  SpectralPoint sp;
  sp.theta = theta;
  Dominant right, left;
  if (net.m() <= opt.dense_limit) {
    right = dense_dominant(K, true);
    left = dense_dominant(K.transpose(), true);
  } else {
    right = iterative_dominant(K);
    left = iterative_dominant(K.transpose());
  }
  if (right.gap < 1e-12)
    throw ConvergenceError("degenerate spectral gap at the Perron eigenvalue");
  sp.gamma = right.value;
  sp.gap = right.gap;
  sp.small_gap = right.gap < 1e-8;
  sp.h = right.vec;
  sp.xi = left.vec;
  normalize_eigenpair(sp.h, sp.xi);

  const double kn = std::max(inf_norm(K), 1e-300);
  double rr = (K * sp.h - sp.gamma * sp.h).cwiseAbs().maxCoeff() / sp.h.cwiseAbs().maxCoeff();
  double rl = (K.transpose() * sp.xi - sp.gamma * sp.xi).cwiseAbs().maxCoeff() /
              sp.xi.cwiseAbs().maxCoeff();
  sp.residual = std::max(rr, rl) / kn;

  sp.grad.resize(net.d());
  for (int k = 0; k < net.d(); ++k)
    sp.grad(k) = (sp.xi.array() * net.v().row(k).transpose().array() * sp.h.array()).sum();
  return sp;
}

double gamma_value(const Network& net, const Vec& theta) {
  Mat K = k_matrix(net, theta);
  if (net.m() == 2) {
    // Closed form avoids the general solver in the hottest loop.
    double a = K(0, 0), b = K(1, 1);
    double half = 0.5 * (a - b);
    return 0.5 * (a + b) + std::sqrt(half * half + K(0, 1) * K(1, 0));
  }
  if (net.m() <= 64) return dense_dominant(K, false).value;
  return iterative_dominant(K).value;
}

Vec gamma_gradient(const Network& net, const Vec& theta) { return perron(net, theta).grad; }

Vec gamma_k(const Network& net, const Vec& theta) {
  return net.R().transpose() * theta;
}

TwistedGenerator twisted_generator(const Network& net, const Vec& theta) {
  SpectralPoint sp = perron(net, theta);
  const int m = net.m();
  Mat K = k_matrix(net, theta);
  TwistedGenerator tg;
  tg.theta = theta;
  tg.Q_theta.resize(m, m);
  for (int i = 0; i < m; ++i) {
    double off = 0.0;
    for (int j = 0; j < m; ++j) {
      if (i == j) continue;
      tg.Q_theta(i, j) = net.Q()(i, j) * sp.h(j) / sp.h(i);
      off += tg.Q_theta(i, j);
    }
    // Analytically K(i,i) - gamma; pinning it to -off keeps row sums at
    // rounding level, and the difference is bounded by the eigen-residual.
    double diag = K(i, i) - sp.gamma;
    tg.Q_theta(i, i) = std::abs(diag + off) <= 1e-9 * std::max(1.0, std::abs(diag)) ? -off : diag;
  }
  tg.pi_theta = stationary_background(tg.Q_theta);
  tg.v_bar_theta = net.v() * tg.pi_theta;
  return tg;
}

MmfnModel twisted_model(const Network& net, const Vec& theta) {
  MmfnModel out = net.model();
  out.Q = twisted_generator(net, theta).Q_theta;
  return out;
}

SpectralPoint SpectralCache::get(const Vec& theta) {
  std::vector<double> key(theta.data(), theta.data() + theta.size());
  {
    std::shared_lock lock(mutex_);
    auto it = entries_.find(key);
    if (it != entries_.end()) return it->second;
  }
  SpectralPoint sp = perron(net_, theta);
  std::unique_lock lock(mutex_);
  return entries_.emplace(std::move(key), std::move(sp)).first->second;
}

std::size_t SpectralCache::size() const {
  std::shared_lock lock(mutex_);
  return entries_.size();
}

}  // namespace mmfn

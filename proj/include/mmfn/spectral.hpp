#pragma once

#include <map>
#include <shared_mutex>
#include <vector>

#include "mmfn/model.hpp"

namespace mmfn {

// Perron-Frobenius data of K(theta) = diag(sum_k theta_k v_k) + Q.
struct SpectralPoint {
  Vec theta;
  double gamma = 0.0;
  Vec h;     // right eigenvector, <xi, h> = 1
  Vec xi;    // left eigenvector, <xi, 1> = 1
  Vec grad;  // gradient of gamma
  double gap = 0.0;       // gamma minus the next largest real part
  double residual = 0.0;  // max of the right/left residuals over ||K||_inf
  bool small_gap = false;  // gap below 1e-8
};

struct SpectralOptions {
  // Dense full-spectrum solve up to this size, iterative above.
  int dense_limit = 64;
};

Mat k_matrix(const Network& net, const Vec& theta);

SpectralPoint perron(const Network& net, const Vec& theta,
                     const SpectralOptions& opt = {});

// gamma only, skipping eigenvectors (used for dense lattice sweeps).
double gamma_value(const Network& net, const Vec& theta);

Vec gamma_gradient(const Network& net, const Vec& theta);

// [theta^t R]_k for every k.
Vec gamma_k(const Network& net, const Vec& theta);

// Scales a raw eigenpair so that <xi, 1> = 1 and <xi, h> = 1, with the
// dominant entry of each vector positive.
void normalize_eigenpair(Vec& h, Vec& xi);

struct TwistedGenerator {
  Vec theta;
  Mat Q_theta;
  Vec pi_theta;
  Vec v_bar_theta;
};

TwistedGenerator twisted_generator(const Network& net, const Vec& theta);

// Same lambda, mu and P with background generator Q^theta.
MmfnModel twisted_model(const Network& net, const Vec& theta);

// Thread-safe memo of SpectralPoint keyed by the exact bits of theta.
class SpectralCache {
 public:
  explicit SpectralCache(const Network& net) : net_(net) {}
  SpectralPoint get(const Vec& theta);
  std::size_t size() const;

 private:
  const Network& net_;
  mutable std::shared_mutex mutex_;
  std::map<std::vector<double>, SpectralPoint> entries_;
};

}  // namespace mmfn

#include "mmfn/model.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>

#include "mmfn/error.hpp"
#include "mmfn/traffic.hpp"

namespace mmfn {

namespace {

std::string format_classes(const std::vector<std::vector<int>>& classes,
                           int offset) {
  std::ostringstream os;
  for (std::size_t c = 0; c < classes.size(); ++c) {
    if (c) os << ", ";
    os << '{';
    for (std::size_t j = 0; j < classes[c].size(); ++j) {
      if (j) os << ',';
      os << classes[c][j] + offset;
    }
    os << '}';
  }
  return os.str();
}

// Closed classes: components with no edge leaving them.
std::vector<std::vector<int>> closed_classes(
    const Mat& adj, const std::vector<std::vector<int>>& comps) {
  std::vector<int> comp_of(adj.rows());
  for (std::size_t c = 0; c < comps.size(); ++c)
    for (int v : comps[c]) comp_of[v] = static_cast<int>(c);
  std::vector<std::vector<int>> out;
  for (std::size_t c = 0; c < comps.size(); ++c) {
    bool closed = true;
    for (int v : comps[c])
      for (int w = 0; w < adj.cols(); ++w)
        if (w != v && adj(v, w) > 0.0 && comp_of[w] != static_cast<int>(c))
          closed = false;
    if (closed) out.push_back(comps[c]);
  }
  return out;
}

bool all_finite(const Mat& a) { return a.allFinite(); }

}  // namespace

bool ValidationReport::ok() const { return first_failure() == nullptr; }

const InvariantCheck* ValidationReport::first_failure() const {
  for (const auto& c : checks)
    if (!c.passed) return &c;
  return nullptr;
}

std::vector<std::vector<int>> strongly_connected_components(const Mat& adj) {
  // Iterative Tarjan.
  const int n = static_cast<int>(adj.rows());
  std::vector<int> index(n, -1), low(n, 0), comp(n, -1);
  std::vector<bool> on_stack(n, false);
  std::vector<int> stack;
  std::vector<std::vector<int>> comps;
  int counter = 0;

  for (int root = 0; root < n; ++root) {
    if (index[root] >= 0) continue;
    std::vector<std::pair<int, int>> work{{root, 0}};
    while (!work.empty()) {
      auto& [v, next] = work.back();
      if (next == 0 && index[v] < 0) {
        index[v] = low[v] = counter++;
        stack.push_back(v);
        on_stack[v] = true;
      }
      bool descended = false;
      while (next < n) {
        int w = next++;
        if (w == v || !(adj(v, w) > 0.0)) continue;
        if (index[w] < 0) {
          work.emplace_back(w, 0);
          descended = true;
          break;
        }
        if (on_stack[w]) low[v] = std::min(low[v], index[w]);
      }
      if (descended) continue;
      if (low[v] == index[v]) {
        std::vector<int> c;
        int w;
        do {
          w = stack.back();
          stack.pop_back();
          on_stack[w] = false;
          c.push_back(w);
        } while (w != v);
        std::sort(c.begin(), c.end());
        comps.push_back(std::move(c));
      }
      int finished = v;
      work.pop_back();
      if (!work.empty()) {
        int parent = work.back().first;
        low[parent] = std::min(low[parent], low[finished]);
      }
    }
  }
  std::sort(comps.begin(), comps.end(),
            [](const auto& a, const auto& b) { return a.front() < b.front(); });
  return comps;
}

double nonnegative_spectral_radius(const Mat& A, double tol, double stop_below) {
  const int n = static_cast<int>(A.rows());
  if (n == 0) return 0.0;
  Mat B = A + Mat::Identity(n, n);
  Vec x = Vec::Ones(n);
  double upper = std::numeric_limits<double>::infinity();
  for (int it = 0; it < 200000; ++it) {
    Vec y = B * x;
    double hi = 0.0, lo = std::numeric_limits<double>::infinity();
    for (int i = 0; i < n; ++i) {
      double r = y(i) / x(i);
      hi = std::max(hi, r);
      lo = std::min(lo, r);
    }
    upper = std::min(upper, hi);
    if (hi - lo <= tol || upper - 1.0 < stop_below) break;
    // Keep x strictly positive so the Collatz-Wielandt bound stays valid.
    x = y / y.maxCoeff();
    for (int i = 0; i < n; ++i) x(i) = std::max(x(i), 1e-300);
  }
  return upper - 1.0;
}

double rate_scale(const MmfnModel& model) {
  double s = 1e-300;
  if (model.lambda.size()) s = std::max(s, model.lambda.cwiseAbs().maxCoeff());
  if (model.mu.size()) s = std::max(s, model.mu.cwiseAbs().maxCoeff());
  return s;
}

double generator_scale(const MmfnModel& model) {
  double s = 1e-300;
  for (int i = 0; i < model.Q.rows(); ++i)
    s = std::max(s, std::abs(model.Q(i, i)));
  return s;
}

ValidationReport validate_model(const MmfnModel& model) {
  const int d = model.d, m = model.m;
  if (d < 1 || m < 1) throw StructuralError("d and m must be positive");
  auto dims = [](const Mat& a, int r, int c) {
    return a.rows() == r && a.cols() == c;
  };
  if (!dims(model.lambda, d, m)) throw StructuralError("lambda must be d x m");
  if (!dims(model.mu, d, m)) throw StructuralError("mu must be d x m");
  if (!dims(model.P, d, d)) throw StructuralError("P must be d x d");
  if (!dims(model.Q, m, m)) throw StructuralError("Q must be m x m");

  ValidationReport rep;
  auto add = [&](std::string name, bool ok, std::string witness = {}) {
    rep.checks.push_back({std::move(name), ok, ok ? std::string{} : witness});
  };

  add("station count d >= 2", d >= 2, "d = " + std::to_string(d));
  add("background state count m >= 2", m >= 2, "m = " + std::to_string(m));

  bool finite = all_finite(model.lambda) && all_finite(model.mu) &&
                all_finite(model.P) && all_finite(model.Q);
  add("all entries finite", finite, "non-finite entry present");
  if (!finite) return rep;

  {
    std::ostringstream w;
    bool ok = true;
    for (int k = 0; k < d && ok; ++k)
      for (int i = 0; i < m && ok; ++i)
        if (model.lambda(k, i) < 0.0 || model.mu(k, i) < 0.0) {
          ok = false;
          w << "negative rate at station " << k + 1 << ", state " << i + 1;
        }
    add("rates nonnegative", ok, w.str());
  }
  {
    std::ostringstream w;
    bool ok = true;
    for (int k = 0; k < d && ok; ++k)
      for (int l = 0; l < d && ok; ++l)
        if (model.P(k, l) < 0.0 || model.P(k, l) > 1.0) {
          ok = false;
          w << "P(" << k + 1 << "," << l + 1 << ") = " << model.P(k, l);
        }
    add("routing entries in [0,1]", ok, w.str());
  }
  {
    std::ostringstream w;
    bool ok = true;
    for (int k = 0; k < d && ok; ++k) {
      double s = model.P.row(k).sum();
      if (s > 1.0 + 1e-12) {
        ok = false;
        w << "row " << k + 1 << " of P sums to " << s;
      }
    }
    add("routing rows substochastic", ok, w.str());
  }
  {
    double rho = nonnegative_spectral_radius(model.P.cwiseMax(0.0), 1e-10, 1.0 - 1e-10);
    std::ostringstream w;
    w << "spectral radius of P is " << rho;
    add("spectral radius of P < 1", rho < 1.0 - 1e-10, w.str());
  }
  {
    std::ostringstream w;
    bool ok = true;
    for (int i = 0; i < m && ok; ++i)
      for (int j = 0; j < m && ok; ++j)
        if (i != j && model.Q(i, j) < 0.0) {
          ok = false;
          w << "Q(" << i + 1 << "," << j + 1 << ") = " << model.Q(i, j);
        }
    add("Q off-diagonals nonnegative", ok, w.str());
  }
  {
    const double tol = 1e-12 * std::max(1.0, generator_scale(model));
    std::ostringstream w;
    bool ok = true;
    for (int i = 0; i < m && ok; ++i) {
      double s = model.Q.row(i).sum();
      if (std::abs(s) > tol) {
        ok = false;
        w << "row " << i + 1 << " of Q sums to " << s;
      }
    }
    add("Q rows sum to zero", ok, w.str());
  }
  {
    auto comps = strongly_connected_components(model.Q);
    std::string w;
    if (comps.size() > 1) {
      auto closed = closed_classes(model.Q, comps);
      w = "communicating classes " + format_classes(comps, 1) +
          "; closed " + format_classes(closed, 1);
    }
    add("Q irreducible", comps.size() == 1, w);
  }
  {
    double total = model.lambda.sum();
    if (!(total > 0.0)) {
      add("augmented routing irreducible", false,
          "no exogenous input: all lambda are zero");
    } else {
      Mat Pbar = augmented_routing(model);
      auto comps = strongly_connected_components(Pbar);
      std::string w;
      if (comps.size() > 1)
        w = "classes over {0 = outside, 1..d} " + format_classes(comps, 0);
      add("augmented routing irreducible", comps.size() == 1, w);
    }
  }
  return rep;
}

DerivedModel derive(const MmfnModel& model) {
  const int d = model.d, m = model.m;
  DerivedModel out;
  out.R = Mat::Identity(d, d) - model.P.transpose();
  Eigen::FullPivLU<Mat> lu(out.R);
  if (!lu.isInvertible())
    throw ValidationError("reflection matrix I - P^t is singular");
  out.R_inv = lu.inverse();
  // One step of iterative refinement keeps the residual at rounding level.
  Mat E = Mat::Identity(d, d) - out.R * out.R_inv;
  out.R_inv += lu.solve(E);
  out.inverse_residual =
      (out.R * out.R_inv - Mat::Identity(d, d)).cwiseAbs().rowwise().sum().maxCoeff();
  if (out.inverse_residual > 1e-12)
    throw ValidationError("reflection matrix inverse residual too large");

  out.v.resize(d, m);
  for (int i = 0; i < m; ++i)
    for (int k = 0; k < d; ++k) {
      double inflow = model.lambda(k, i);
      for (int l = 0; l < d; ++l) inflow += model.mu(l, i) * model.P(l, k);
      out.v(k, i) = inflow - model.mu(k, i);
    }
  return out;
}

Mat augmented_routing(const MmfnModel& model) {
  const int d = model.d;
  double total = model.lambda.sum();
  if (!(total > 0.0))
    throw PreconditionError("augmented routing needs some positive exogenous input");
  Mat Pbar = Mat::Zero(d + 1, d + 1);
  for (int l = 0; l < d; ++l) Pbar(0, l + 1) = model.lambda.row(l).sum() / total;
  for (int k = 0; k < d; ++k) {
    Pbar.block(k + 1, 1, 1, d) = model.P.row(k);
    Pbar(k + 1, 0) = std::max(0.0, 1.0 - model.P.row(k).sum());
  }
  return Pbar;
}

Network::Network(MmfnModel model) : model_(std::move(model)) {
  ValidationReport rep = validate_model(model_);
  if (const InvariantCheck* f = rep.first_failure())
    throw ValidationError("invalid model: " + f->name +
                          (f->witness.empty() ? "" : " (" + f->witness + ")"));
  derived_ = derive(model_);
  pi_ = stationary_background(model_.Q);
  v_bar_ = derived_.v * pi_;
}

}  // namespace mmfn

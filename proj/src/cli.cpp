#include "mmfn/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "mmfn/error.hpp"
#include "mmfn/geometry.hpp"
#include "mmfn/model_io.hpp"
#include "mmfn/simulator.hpp"
#include "mmfn/spectral.hpp"
#include "mmfn/traffic.hpp"

namespace mmfn::cli {

namespace {

using ojson = nlohmann::ordered_json;
constexpr double kInf = std::numeric_limits<double>::infinity();

struct RunConfig {
  std::string command;
  std::string model_path;
  std::vector<std::string> directions;
  std::vector<std::string> thetas;
  int station = 0;  // 1-based, 0 when unset
  int resolution = 0;
  std::string box;
  int reps = 100;
  double horizon = 1e4;
  double burn_in = -1.0;
  std::string levels;
  std::uint64_t seed = kDefaultSeed;
  std::string out_dir;
  std::string format = "json";
  int threads = 0;
  double martingale_t = 10.0;
  int martingale_reps = 10'000;
};

struct Output {
  ojson report;
  std::string csv;  // command-specific CSV, or empty for key,value
  std::vector<std::pair<std::string, std::string>> files;
  int code = kOk;
};

// ---------------------------------------------------------------------------
// Formatting

std::string fmt(double x, int digits) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.*g", digits, x);
  return buf;
}

// JSON has no infinity; unbounded rates are written as null.
ojson num(double x) {
  if (!std::isfinite(x)) return nullptr;
  return x;
}

ojson vec(const Vec& v) {
  ojson a = ojson::array();
  for (int i = 0; i < v.size(); ++i) a.push_back(num(v(i)));
  return a;
}

ojson flags(const std::vector<bool>& b) {
  ojson a = ojson::array();
  for (bool x : b) a.push_back(x);
  return a;
}

ojson stations(const std::vector<int>& ks) {
  ojson a = ojson::array();
  for (int k : ks) a.push_back(k + 1);
  return a;
}

std::string scalar_text(const ojson& j, int digits) {
  if (j.is_number_float()) return fmt(j.get<double>(), digits);
  if (j.is_null()) return "-";
  if (j.is_string()) return j.get<std::string>();
  return j.dump();
}

bool flat_array(const ojson& j) {
  return std::all_of(j.begin(), j.end(), [](const ojson& e) { return e.is_primitive(); });
}

void flatten(const ojson& j, const std::string& prefix, int digits,
             std::vector<std::pair<std::string, std::string>>& rows) {
  if (j.is_object()) {
    for (auto it = j.begin(); it != j.end(); ++it)
      flatten(it.value(), prefix.empty() ? it.key() : prefix + "." + it.key(), digits, rows);
  } else if (j.is_array() && flat_array(j)) {
    std::string s;
    for (std::size_t i = 0; i < j.size(); ++i) s += (i ? " " : "") + scalar_text(j[i], digits);
    rows.emplace_back(prefix, s);
  } else if (j.is_array()) {
    for (std::size_t i = 0; i < j.size(); ++i)
      flatten(j[i], prefix + "[" + std::to_string(i + 1) + "]", digits, rows);
  } else {
    rows.emplace_back(prefix, scalar_text(j, digits));
  }
}

std::string render_table(const ojson& report) {
  std::vector<std::pair<std::string, std::string>> rows;
  flatten(report, "", 6, rows);
  std::size_t w = 0;
  for (auto& r : rows) w = std::max(w, r.first.size());
  std::ostringstream os;
  for (auto& r : rows) os << r.first << std::string(w - r.first.size() + 2, ' ') << r.second << '\n';
  return os.str();
}

std::string render_kv_csv(const ojson& report) {
  std::vector<std::pair<std::string, std::string>> rows;
  flatten(report, "", 17, rows);
  std::ostringstream os;
  os << "key,value\n";
  for (auto& r : rows) os << r.first << ",\"" << r.second << "\"\n";
  return os.str();
}

std::string csv_number(double x) { return fmt(x, 17); }

// ---------------------------------------------------------------------------
// Argument parsing helpers

std::vector<double> parse_list(const std::string& text, const char* what) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    std::size_t used = 0;
    double x = 0.0;
    try {
      x = std::stod(tok, &used);
    } catch (const std::exception&) {
      throw PreconditionError(std::string("cannot read ") + what + " entry '" + tok + "'");
    }
    while (used < tok.size() && std::isspace(static_cast<unsigned char>(tok[used]))) ++used;
    if (used != tok.size() || !std::isfinite(x))
      throw PreconditionError(std::string("cannot read ") + what + " entry '" + tok + "'");
    out.push_back(x);
  }
  if (out.empty()) throw PreconditionError(std::string("empty ") + what);
  return out;
}

Vec to_vec(const std::vector<double>& x) {
  Vec v(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) v(i) = x[i];
  return v;
}

Vec parse_direction(const std::string& text, int d) {
  Vec c = to_vec(parse_list(text, "direction"));
  if (c.size() != d)
    throw PreconditionError("direction has " + std::to_string(c.size()) + " entries, model has d = " +
                            std::to_string(d));
  if ((c.array() < 0.0).any() || !(c.norm() > 0.0))
    throw PreconditionError("direction must be nonnegative and nonzero");
  return c / c.norm();
}

// "lo..hi" per axis, comma separated; a single range applies to every axis.
BoundingBox parse_box(const std::string& text, int d, int resolution) {
  std::vector<std::string> parts;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) parts.push_back(tok);
  if (parts.size() == 1) parts.assign(d, parts.front());
  if (static_cast<int>(parts.size()) != d)
    throw PreconditionError("--box needs one lo..hi range per axis");
  BoundingBox box;
  box.lo.resize(d);
  box.hi.resize(d);
  for (int k = 0; k < d; ++k) {
    auto sep = parts[k].find("..");
    if (sep == std::string::npos) throw PreconditionError("--box range '" + parts[k] + "' lacks '..'");
    box.lo(k) = parse_list(parts[k].substr(0, sep), "box").front();
    box.hi(k) = parse_list(parts[k].substr(sep + 2), "box").front();
    if (!(box.lo(k) < 0.0 && box.hi(k) > 0.0))
      throw PreconditionError("--box ranges must satisfy lo < 0 < hi");
  }
  box.resolution = resolution > 0 ? resolution : default_resolution(d);
  box.truncated.assign(d, false);
  box.lo_truncated.assign(d, false);
  return box;
}

std::vector<Vec> directions(const RunConfig& cfg, int d) {
  std::vector<Vec> out;
  for (const auto& s : cfg.directions) out.push_back(parse_direction(s, d));
  if (cfg.station > 0) {
    if (cfg.station > d) throw PreconditionError("--station out of range");
    out.push_back(Vec::Unit(d, cfg.station - 1));
  }
  if (out.empty()) {
    for (int k = 0; k < d; ++k) out.push_back(Vec::Unit(d, k));
    out.push_back(Vec::Ones(d) / std::sqrt(static_cast<double>(d)));
  }
  return out;
}

// Station index when c is a coordinate direction, else -1.
int axis_of(const Vec& c) {
  int k = -1;
  for (int i = 0; i < c.size(); ++i) {
    if (c(i) == 0.0) continue;
    if (k >= 0) return -1;
    k = i;
  }
  return k;
}

Network load_network(const RunConfig& cfg) {
  if (cfg.model_path.empty()) throw PreconditionError("--model is required");
  return Network(load_model(cfg.model_path));
}

void require_stable(const Network& net) {
  StabilityReport st = is_stable(net);
  if (!st.stable())
    throw PreconditionError(std::string("model is ") + to_string(st.status) +
                            ": max_k [R^-1 v_bar]_k = " + fmt(st.drift.maxCoeff(), 6));
}

DomainGrid domain_for(const Network& net, const RunConfig& cfg) {
  FixedPointOptions fp;
  fp.threads = cfg.threads;
  if (!cfg.box.empty()) return fixed_point_iteration(net, parse_box(cfg.box, net.d(), cfg.resolution), fp);
  AutoBoxOptions ab;
  ab.resolution = cfg.resolution;
  return solve_domain(net, ab, fp);
}

MonteCarloOptions mc_options(const RunConfig& cfg) {
  MonteCarloOptions mc;
  mc.reps = cfg.reps;
  mc.horizon = cfg.horizon;
  mc.burn_in = cfg.burn_in;
  mc.seed = cfg.seed;
  mc.threads = cfg.threads;
  return mc;
}

ojson box_json(const BoundingBox& box) {
  ojson j;
  j["lo"] = vec(box.lo);
  j["hi"] = vec(box.hi);
  j["resolution"] = box.resolution;
  j["truncated"] = flags(box.truncated);
  j["lo_truncated"] = flags(box.lo_truncated);
  return j;
}

std::size_t count(const Mask& m) { return static_cast<std::size_t>(std::count(m.begin(), m.end(), true)); }

// ---------------------------------------------------------------------------
// Bounds shared by `bounds` and `verify`

struct DirectionBounds {
  Vec c;
  UpperDecayRate mgf;
  std::optional<DirectionLowerBound> root;
  std::string root_note;
  std::optional<CoordinateLowerBound> coord;
  double rate_lower = 0.0, rate_upper = kInf;
  std::string upper_source = "none";
};

DirectionBounds bounds_for(const Network& net, const Vec& c, const DomainGrid& grid,
                           const std::vector<CoordinateLowerBound>& coords) {
  DirectionBounds b;
  b.c = c;
  b.mgf = upper_decay_rate(net, c, grid);
  b.rate_lower = b.mgf.ray;
  try {
    b.root = lower_decay_rate_direction(net, c);
    b.rate_upper = b.root->value;
    b.upper_source = "direction";
  } catch (const PreconditionError& e) {
    b.root_note = e.what();
  }
  int k = axis_of(c);
  if (k >= 0) {
    b.coord = coords[k];
    if (!coords[k].empty && coords[k].value < b.rate_upper) {
      b.rate_upper = coords[k].value;
      b.upper_source = "coordinate";
    }
  }
  return b;
}

ojson bounds_json(const DirectionBounds& b) {
  ojson j;
  j["direction"] = vec(b.c);
  j["rate_lower"] = num(b.rate_lower);
  j["rate_upper"] = num(b.rate_upper);
  j["upper_source"] = b.upper_source;
  ojson m;
  m["ray"] = num(b.mgf.ray);
  m["ray_error"] = num(b.mgf.ray_error);
  m["ray_point"] = vec(b.mgf.ray_point);
  m["ray_box_limited"] = b.mgf.ray_box_limited;
  m["hyperplane"] = num(b.mgf.hyperplane);
  m["hyperplane_error"] = num(b.mgf.hyperplane_error);
  m["hyperplane_point"] = vec(b.mgf.hyperplane_point);
  m["hyperplane_box_limited"] = b.mgf.hyperplane_box_limited;
  j["domain_bound"] = m;
  ojson r;
  r["in_corn"] = b.root.has_value();
  if (b.root) {
    r["value"] = num(b.root->value);
    r["exit_point"] = vec(b.root->exit_point);
    r["exit_gradient"] = vec(b.root->exit_gradient);
  } else {
    r["value"] = nullptr;
    r["note"] = b.root_note;
  }
  j["direction_bound"] = r;
  if (b.coord) {
    ojson c;
    c["station"] = b.coord->k + 1;
    c["value"] = num(b.coord->value);
    c["empty"] = b.coord->empty;
    c["cell"] = num(b.coord->cell);
    j["coordinate_bound"] = c;
  }
  if (b.root && std::isfinite(b.rate_upper)) {
    j["gap"] = num(b.rate_upper - b.rate_lower);
    j["gap_cells"] = num((b.rate_upper - b.rate_lower) / std::max(b.mgf.ray_error, 1e-300));
  }
  return j;
}

std::vector<CoordinateLowerBound> coordinate_bounds(const Network& net, const DomainGrid& grid) {
  std::vector<CoordinateLowerBound> out;
  for (int k = 0; k < net.d(); ++k) out.push_back(lower_decay_rate_coordinate(net, k, grid));
  return out;
}

ojson domain_summary(const DomainGrid& grid) {
  ojson j;
  j["box"] = box_json(grid.box);
  j["iterations"] = grid.iterations;
  j["box_growths"] = grid.box_growths;
  j["nontrivial"] = grid.nontrivial;
  j["monotone"] = grid.monotone;
  j["truncated_axes"] = stations(grid.truncated_axes);
  j["points"] = grid.lattice.size();
  j["gamma_minus"] = count(grid.gamma_minus);
  j["down_gamma_minus"] = count(grid.down_gamma_minus);
  j["dmax"] = count(grid.dmax);
  return j;
}

// ---------------------------------------------------------------------------
// Commands

Output cmd_validate(const RunConfig& cfg) {
  if (cfg.model_path.empty()) throw PreconditionError("--model is required");
  MmfnModel md = load_model(cfg.model_path);
  Output o;
  ojson checks = ojson::array();
  bool ok = true;
  std::string witness;
  try {
    ValidationReport rep = validate_model(md);
    for (const auto& c : rep.checks) {
      ojson x;
      x["name"] = c.name;
      x["passed"] = c.passed;
      if (!c.passed) x["witness"] = c.witness;
      checks.push_back(x);
    }
    ok = rep.ok();
    if (!ok) witness = rep.first_failure()->name + ": " + rep.first_failure()->witness;
  } catch (const StructuralError& e) {
    ok = false;
    witness = e.what();
    ojson x;
    x["name"] = "dimensions";
    x["passed"] = false;
    x["witness"] = witness;
    checks.push_back(x);
  }
  o.report["command"] = "validate";
  o.report["d"] = md.d;
  o.report["m"] = md.m;
  o.report["valid"] = ok;
  o.report["checks"] = checks;
  if (!ok) {
    o.report["witness"] = witness;
    o.code = kValidationFailed;
  }
  return o;
}

Output cmd_stability(const RunConfig& cfg) {
  Network net = load_network(cfg);
  TrafficSolution tr = solve_traffic(net);
  StabilityReport st = is_stable(net);
  StationVerdicts sv = stable_stations(net);
  Output o;
  ojson& r = o.report;
  r["command"] = "stability";
  r["pi"] = vec(tr.pi);
  r["v_bar"] = vec(tr.v_bar);
  r["drift"] = vec(st.drift);
  r["alpha_bar"] = vec(tr.alpha_bar);
  r["alpha_star_bar"] = vec(tr.alpha_star_bar);
  r["lambda_bar"] = vec(tr.lambda_bar);
  r["mu_bar"] = vec(tr.mu_bar);
  r["status"] = to_string(st.status);
  r["stable"] = st.stable();
  r["tolerance"] = num(st.tolerance);
  ojson per = ojson::array();
  for (int k = 0; k < net.d(); ++k) {
    ojson s;
    s["station"] = k + 1;
    s["alpha_star_bar"] = num(tr.alpha_star_bar(k));
    s["mu_bar"] = num(tr.mu_bar(k));
    s["gap"] = num(sv.gap(k));
    s["stable"] = std::find(sv.stable.begin(), sv.stable.end(), k) != sv.stable.end();
    per.push_back(s);
  }
  r["stations"] = per;
  r["stable_stations"] = stations(sv.stable);

  std::ostringstream os;
  os << "station,alpha_bar,alpha_star_bar,mu_bar,v_bar,drift,gap,stable\n";
  for (int k = 0; k < net.d(); ++k)
    os << k + 1 << ',' << csv_number(tr.alpha_bar(k)) << ',' << csv_number(tr.alpha_star_bar(k)) << ','
       << csv_number(tr.mu_bar(k)) << ',' << csv_number(tr.v_bar(k)) << ',' << csv_number(st.drift(k))
       << ',' << csv_number(sv.gap(k)) << ',' << (per[k]["stable"].get<bool>() ? 1 : 0) << '\n';
  o.csv = os.str();
  return o;
}

Output cmd_gamma(const RunConfig& cfg) {
  Network net = load_network(cfg);
  const int d = net.d();
  std::vector<Vec> pts;
  for (const auto& s : cfg.thetas) {
    Vec th = to_vec(parse_list(s, "theta"));
    if (th.size() != d) throw PreconditionError("--theta needs d entries");
    pts.push_back(th);
  }
  std::optional<BoundingBox> box;
  if (pts.empty()) {
    int res = cfg.resolution > 0 ? cfg.resolution : 20;
    if (!cfg.box.empty()) {
      box = parse_box(cfg.box, d, res);
    } else {
      AutoBoxOptions ab;
      ab.resolution = res;
      box = auto_box(net, ab);
    }
    box->resolution = res;
    Lattice L = make_lattice(*box);
    if (L.size() > 1'000'000) throw PreconditionError("gamma grid exceeds 10^6 points");
    for (std::size_t p = 0; p < L.size(); ++p) pts.push_back(L.point(p));
  }
  Output o;
  o.report["command"] = "gamma";
  if (box) o.report["box"] = box_json(*box);
  ojson arr = ojson::array();
  std::ostringstream os;
  for (int k = 1; k <= d; ++k) os << "theta_" << k << ',';
  os << "gamma";
  for (int k = 1; k <= d; ++k) os << ",grad_" << k;
  for (int k = 1; k <= d; ++k) os << ",gamma_" << k;
  os << '\n';
  for (const Vec& th : pts) {
    SpectralPoint sp = perron(net, th);
    Vec gk = gamma_k(net, th);
    ojson x;
    x["theta"] = vec(th);
    x["gamma"] = num(sp.gamma);
    x["grad"] = vec(sp.grad);
    x["gamma_k"] = vec(gk);
    arr.push_back(x);
    for (int k = 0; k < d; ++k) os << csv_number(th(k)) << ',';
    os << csv_number(sp.gamma);
    for (int k = 0; k < d; ++k) os << ',' << csv_number(sp.grad(k));
    for (int k = 0; k < d; ++k) os << ',' << csv_number(gk(k));
    os << '\n';
  }
  o.report["points"] = arr;
  o.csv = os.str();
  return o;
}

Output cmd_domain(const RunConfig& cfg) {
  Network net = load_network(cfg);
  require_stable(net);
  DomainGrid grid = domain_for(net, cfg);
  Output o;
  o.report["command"] = "domain";
  o.report["domain"] = domain_summary(grid);
  ojson growth = ojson::array();
  for (const auto& row : grid.growth) growth.push_back(row);
  o.report["growth"] = growth;
  ojson bd = ojson::array();
  for (const Vec& p : dmax_boundary(grid)) bd.push_back(vec(p));
  o.report["dmax_boundary"] = bd;
  o.csv = boundary_csv(grid);
  o.files.emplace_back("grid.csv", grid_csv(grid));
  o.files.emplace_back("boundary.csv", o.csv);
  return o;
}

Output cmd_bounds(const RunConfig& cfg) {
  Network net = load_network(cfg);
  require_stable(net);
  std::vector<Vec> dirs = directions(cfg, net.d());
  DomainGrid grid = domain_for(net, cfg);
  std::vector<CoordinateLowerBound> coords = coordinate_bounds(net, grid);
  Output o;
  o.report["command"] = "bounds";
  o.report["orientation"] = "rates r in P(<c,Z> > x) ~ exp(-r x); rate_lower <= r <= rate_upper";
  o.report["domain"] = domain_summary(grid);
  ojson arr = ojson::array();
  std::ostringstream os;
  os << "direction,rate_lower,ray_error,hyperplane,rate_upper,upper_source,box_limited\n";
  for (const Vec& c : dirs) {
    DirectionBounds b = bounds_for(net, c, grid, coords);
    arr.push_back(bounds_json(b));
    std::string cs;
    for (int k = 0; k < c.size(); ++k) cs += (k ? " " : "") + csv_number(c(k));
    os << '"' << cs << "\"," << csv_number(b.rate_lower) << ',' << csv_number(b.mgf.ray_error) << ','
       << csv_number(b.mgf.hyperplane) << ',' << csv_number(b.rate_upper) << ',' << b.upper_source << ','
       << (b.mgf.ray_box_limited || b.mgf.hyperplane_box_limited ? 1 : 0) << '\n';
  }
  o.report["directions"] = arr;
  ojson cb = ojson::array();
  for (const auto& c : coords) {
    ojson x;
    x["station"] = c.k + 1;
    x["value"] = num(c.value);
    x["empty"] = c.empty;
    x["theta"] = c.empty ? ojson(nullptr) : vec(c.theta);
    cb.push_back(x);
  }
  o.report["coordinate_bounds"] = cb;
  o.csv = os.str();
  return o;
}

ojson audit_json(const AuditCounters& a) {
  ojson j;
  j["events"] = a.events;
  j["violations"] = a.violations();
  j["conservation"] = a.conservation;
  j["complementarity"] = a.complementarity;
  j["monotonicity"] = a.monotonicity;
  j["negative_release"] = a.negative_release;
  j["negative_buffer"] = a.negative_buffer;
  j["worst_conservation"] = num(a.worst_conservation);
  return j;
}

Output cmd_simulate(const RunConfig& cfg) {
  Network net = load_network(cfg);
  Trajectory tr = simulate(net, cfg.horizon, cfg.seed);
  Output o;
  ojson& r = o.report;
  r["command"] = "simulate";
  r["seed"] = cfg.seed;
  r["horizon"] = num(cfg.horizon);
  r["segments"] = tr.segments.size();
  r["final_Z"] = vec(tr.final_state.Z);
  r["final_Y"] = vec(tr.final_state.Y);
  r["final_J"] = tr.final_state.J + 1;
  r["audit"] = audit_json(tr.audit);
  o.csv = trajectory_csv(tr);
  o.files.emplace_back("trajectory.csv", o.csv);
  return o;
}

// Levels over the far part of the tail, from about 10^-1.4 down to 10^-4 at
// the expected rate: the local slope settles slowly, so the near tail biases
// the fit upward.
std::vector<double> default_levels(const DirectionBounds& b, const Network& net) {
  double g = 0.0;
  if (std::isfinite(b.rate_upper) && b.rate_lower > 0.0)
    g = 0.5 * (b.rate_lower + b.rate_upper);
  else if (std::isfinite(b.rate_upper))
    g = b.rate_upper;
  else if (b.rate_lower > 0.0)
    g = b.rate_lower;
  double top = g > 0.0 ? std::log(1e4) / g : 10.0 * relaxation_time(net) * rate_scale(net.model());
  std::vector<double> lv;
  for (int j = 0; j <= 10; ++j) lv.push_back(top * (0.35 + 0.065 * j));
  return lv;
}

// The bracket verdict: "violated" when the estimate sits more than three
// standard errors outside [lower, upper]; "inconclusive" when the estimate
// is unusable or its three-sigma band is wider than half the estimate, so
// a bound could lie anywhere inside it.
std::string bracket_verdict(const TailEstimate& te, double lower, double upper) {
  if (!te.usable || !std::isfinite(te.rate_stderr)) return "inconclusive";
  double tol = 3.0 * te.rate_stderr;
  if (te.rate < lower - tol || te.rate > upper + tol) return "violated";
  if (tol > 0.5 * std::abs(te.rate)) return "inconclusive";
  return "holds";
}

Output cmd_verify(const RunConfig& cfg) {
  Network net = load_network(cfg);
  require_stable(net);
  const int d = net.d();
  std::vector<Vec> dirs = directions(cfg, d);
  DomainGrid grid = domain_for(net, cfg);
  std::vector<CoordinateLowerBound> coords = coordinate_bounds(net, grid);
  MonteCarloOptions mc = mc_options(cfg);
  std::optional<std::vector<double>> fixed_levels;
  if (!cfg.levels.empty()) fixed_levels = parse_list(cfg.levels, "levels");

  Output o;
  ojson& r = o.report;
  r["command"] = "verify";
  r["seed"] = cfg.seed;
  r["reps"] = cfg.reps;
  r["horizon"] = num(cfg.horizon);
  r["domain"] = domain_summary(grid);
  ojson arr = ojson::array();
  bool violated = false;
  std::ostringstream os;
  os << "direction,rate_lower,rate_upper,rate_hat,rate_stderr,verdict\n";
  for (const Vec& c : dirs) {
    DirectionBounds b = bounds_for(net, c, grid, coords);
    std::vector<double> lv = fixed_levels ? *fixed_levels : default_levels(b, net);
    TailEstimate te = estimate_tail(net, c, lv, mc);
    std::string verdict = bracket_verdict(te, b.rate_lower, b.rate_upper);
    violated = violated || verdict == "violated";
    ojson x = bounds_json(b);
    ojson t;
    t["levels"] = lv;
    t["p_hat"] = te.p_hat;
    t["stderr"] = te.stderr_;
    t["used"] = te.used;
    t["threshold"] = num(te.threshold);
    t["burn_in"] = num(te.burn_in);
    t["usable"] = te.usable;
    t["rate"] = num(te.rate);
    t["rate_stderr"] = num(te.rate_stderr);
    t["ci"] = ojson::array({num(te.ci_lo), num(te.ci_hi)});
    x["empirical"] = t;
    x["verdict"] = verdict;
    arr.push_back(x);
    std::string cs;
    for (int k = 0; k < d; ++k) cs += (k ? " " : "") + csv_number(c(k));
    os << '"' << cs << "\"," << csv_number(b.rate_lower) << ',' << csv_number(b.rate_upper) << ','
       << csv_number(te.rate) << ',' << csv_number(te.rate_stderr) << ',' << verdict << '\n';
  }
  r["directions"] = arr;

  // A point inside D^(max): half way to the farthest lattice point along the
  // diagonal.
  UpperDecayRate diag = upper_decay_rate(net, Vec::Ones(d), grid);
  Vec theta = 0.5 * diag.hyperplane_point;
  BarResidual bar = estimate_bar_residual(net, theta, mc);
  ojson bj;
  bj["theta"] = vec(bar.theta);
  bj["gamma"] = num(bar.gamma);
  bj["psi"] = num(bar.psi);
  bj["psi_k"] = vec(bar.psi_k);
  bj["residual"] = num(bar.residual);
  bj["stderr"] = num(bar.stderr_);
  bj["normalized"] = num(bar.normalized);
  bj["normalized_stderr"] = num(bar.normalized_stderr);
  bj["pass"] = bar.pass;
  r["bar"] = bj;

  MartingaleCheck mg = martingale_check(net, theta, cfg.martingale_t, cfg.martingale_reps, cfg.seed, cfg.threads);
  ojson mj;
  mj["theta"] = vec(mg.theta);
  mj["t"] = num(mg.t);
  mj["reps"] = mg.reps;
  mj["mean"] = num(mg.mean);
  mj["stderr"] = num(mg.stderr_);
  mj["rejected"] = mg.rejected;
  mj["valid"] = mg.valid;
  mj["pass"] = mg.pass;
  r["martingale"] = mj;

  r["bracket"] = violated ? "violated" : "not violated";
  if (violated) o.code = kBracketViolated;
  o.csv = os.str();
  return o;
}

// ---------------------------------------------------------------------------

std::string render(const Output& o, const std::string& format) {
  if (format == "json") return o.report.dump(2) + "\n";
  if (format == "table") return render_table(o.report);
  return o.csv.empty() ? render_kv_csv(o.report) : o.csv;
}

void write_files(const RunConfig& cfg, const Output& o) {
  namespace fs = std::filesystem;
  fs::path dir(cfg.out_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw PreconditionError("cannot create output directory '" + cfg.out_dir + "'");
  auto put = [&](const std::string& name, const std::string& text) {
    std::ofstream f(dir / name, std::ios::binary);
    if (!f) throw PreconditionError("cannot write '" + (dir / name).string() + "'");
    f << text;
  };
  put(cfg.command + ".json", o.report.dump(2) + "\n");
  for (const auto& [name, text] : o.files) put(name, text);
  if (o.files.empty() && !o.csv.empty()) put(cfg.command + ".csv", o.csv);
}

Output dispatch(const RunConfig& cfg) {
  if (cfg.command == "validate") return cmd_validate(cfg);
  if (cfg.command == "stability") return cmd_stability(cfg);
  if (cfg.command == "gamma") return cmd_gamma(cfg);
  if (cfg.command == "domain") return cmd_domain(cfg);
  if (cfg.command == "bounds") return cmd_bounds(cfg);
  if (cfg.command == "simulate") return cmd_simulate(cfg);
  return cmd_verify(cfg);
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  RunConfig cfg;
  CLI::App app{"Tail-decay bounds and simulation for Markov-modulated fluid networks", "mmfn"};
  app.require_subcommand(1);

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--model", cfg.model_path, "Model file (JSON)")->required();
    sub->add_option("--format", cfg.format, "Output format")
        ->check(CLI::IsMember({"json", "csv", "table"}));
    sub->add_option("--out", cfg.out_dir, "Also write reports and CSV files to this directory");
    sub->add_option("--threads", cfg.threads, "Worker threads (0: hardware concurrency)")
        ->check(CLI::NonNegativeNumber);
  };
  auto add_domain = [&](CLI::App* sub) {
    sub->add_option("--resolution", cfg.resolution, "Cells per axis")->check(CLI::PositiveNumber);
    sub->add_option("--box", cfg.box, "Search box, lo..hi per axis, comma separated");
  };
  auto add_directions = [&](CLI::App* sub) {
    sub->add_option("--direction", cfg.directions, "Direction x,y,... (repeatable)");
    sub->add_option("--station", cfg.station, "Coordinate direction e_K (1-based)")
        ->check(CLI::PositiveNumber);
  };
  auto add_sim = [&](CLI::App* sub) {
    sub->add_option("--horizon", cfg.horizon, "Simulated time per replication")
        ->check(CLI::PositiveNumber);
    sub->add_option("--seed", cfg.seed, "Root seed (default " + std::to_string(kDefaultSeed) + ")");
  };

  CLI::App* v = app.add_subcommand("validate", "Check the model invariants");
  add_common(v);
  CLI::App* s = app.add_subcommand("stability", "Traffic equations and stability verdicts");
  add_common(s);
  CLI::App* g = app.add_subcommand("gamma", "Evaluate gamma and its gradient at points or on a grid");
  add_common(g);
  add_domain(g);
  g->add_option("--theta", cfg.thetas, "Point x,y,... (repeatable)");
  CLI::App* dm = app.add_subcommand("domain", "Fixed-point iteration for D^(max)");
  add_common(dm);
  add_domain(dm);
  CLI::App* b = app.add_subcommand("bounds", "Decay-rate bounds per direction");
  add_common(b);
  add_domain(b);
  add_directions(b);
  CLI::App* sm = app.add_subcommand("simulate", "One reflected trajectory");
  add_common(sm);
  add_sim(sm);
  CLI::App* vf = app.add_subcommand("verify", "Bounds against simulation, BAR and martingale checks");
  add_common(vf);
  add_domain(vf);
  add_directions(vf);
  add_sim(vf);
  vf->add_option("--reps", cfg.reps, "Replications")->check(CLI::Range(2, 100'000'000));
  vf->add_option("--burn-in", cfg.burn_in, "Discarded initial time (default from the relaxation time)");
  vf->add_option("--levels", cfg.levels, "Tail levels x_1,x_2,... (default from the bounds)");

  std::vector<std::string> rev(args.rbegin(), args.rend());
  if (!rev.empty()) rev.pop_back();  // program name
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "mmfn: " << e.what() << '\n';
    return kParseFailed;
  }
  for (CLI::App* sub : app.get_subcommands()) cfg.command = sub->get_name();

  try {
    Output o = dispatch(cfg);
    out << render(o, cfg.format);
    if (!cfg.out_dir.empty()) write_files(cfg, o);
    if (o.code == kValidationFailed) err << "mmfn: validation failed: " << o.report["witness"].get<std::string>() << '\n';
    if (o.code == kBracketViolated) err << "mmfn: bracket violated\n";
    return o.code;
  } catch (const ParseError& e) {
    err << "mmfn: parse error: " << e.what() << '\n';
    return kParseFailed;
  } catch (const ValidationError& e) {
    err << "mmfn: validation failed: " << e.what() << '\n';
    return kValidationFailed;
  } catch (const StructuralError& e) {
    err << "mmfn: validation failed: " << e.what() << '\n';
    return kValidationFailed;
  } catch (const PreconditionError& e) {
    err << "mmfn: " << e.what() << '\n';
    return kPrecondition;
  } catch (const ConvergenceError& e) {
    err << "mmfn: no convergence: " << e.what() << '\n';
    return kNoConvergence;
  }
}

}  // namespace mmfn::cli

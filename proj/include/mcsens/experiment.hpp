#pragma once

// Config-driven experiments.  A config is a JSON document whose "kind" selects
// the computation; every object is checked against a fixed key set before any
// work starts, and outputs are held in memory until the run succeeds, so a
// failed run leaves nothing on disk.
//
// CSV bodies are deterministic functions of (config, seed); wall time goes to
// run.json and the summary only.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <boost/math/distributions/normal.hpp>
#include <json.hpp>

#include "mcsens/builtin_families.hpp"
#include "mcsens/csv_io.hpp"
#include "mcsens/errors.hpp"
#include "mcsens/gg1.hpp"
#include "mcsens/kernel_algebra.hpp"
#include "mcsens/param_family.hpp"
#include "mcsens/random_horizon.hpp"
#include "mcsens/simulation.hpp"
#include "mcsens/stationary.hpp"

namespace mcsens {

inline constexpr const char* kArtifactVersion = "0.1.0";

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Delta-method interval: alpha_hat +- z_{1 - delta/2} sqrt(grad^2 C) / sqrt(n)

struct ConfidenceInterval {
  double lower;
  double upper;
  double half_width;
  double z;
};

inline ConfidenceInterval delta_ci(double alpha_hat, double grad_hat, double c_hat, double n, double delta) {
  if (!(c_hat >= 0.0)) throw SchemaError("covariance C must be nonnegative");
  if (!(n > 0.0)) throw SchemaError("sample size n must be positive");
  if (!(delta > 0.0 && delta < 1.0)) throw SchemaError("level delta must lie in (0, 1)");
  const double var = grad_hat * grad_hat * c_hat;
  if (!(var > 0.0)) {
    throw RefusalError("delta-method interval needs grad^2 * C > 0 (positive asymptotic variance proviso); got " +
                       csv::format_double(var));
  }
  const double z = boost::math::quantile(boost::math::complement(boost::math::normal(), delta / 2.0));
  const double hw = z * std::sqrt(var) / std::sqrt(n);
  return {alpha_hat - hw, alpha_hat + hw, hw, z};
}

// ---------------------------------------------------------------------------
// Outputs

struct OutputFile {
  std::string name;
  std::string content;
};

// Plain two-or-more column CSV with a header; empty columns give a header-only file.
inline std::string plot_csv(const std::vector<std::string>& header, const std::vector<std::vector<double>>& columns) {
  std::ostringstream os;
  for (std::size_t i = 0; i < header.size(); ++i) os << (i ? "," : "") << header[i];
  os << '\n';
  const std::size_t rows = columns.empty() ? 0 : columns.front().size();
  for (const auto& c : columns)
    if (c.size() != rows) throw DimensionError("plot columns differ in length");
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < columns.size(); ++c) os << (c ? "," : "") << csv::format_double(columns[c][r]);
    os << '\n';
  }
  return os.str();
}

class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

  CsvTable& row(const std::vector<std::string>& cells) {
    if (cells.size() != header_.size()) throw DimensionError("csv row width");
    rows_.push_back(cells);
    return *this;
  }

  std::string str() const {
    std::ostringstream os;
    auto line = [&](const std::vector<std::string>& cells) {
      for (std::size_t i = 0; i < cells.size(); ++i) os << (i ? "," : "") << cells[i];
      os << '\n';
    };
    line(header_);
    for (const auto& r : rows_) line(r);
    return os.str();
  }

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

inline std::string num(double v) { return csv::format_double(v); }
inline std::string num(std::size_t v) { return std::to_string(v); }

struct RunRecord {
  std::string kind;
  std::string config_hash;
  std::string version = kArtifactVersion;
  double wall_time = 0.0;
  std::uint64_t seed = 0;
  std::string out_dir;
  std::vector<OutputFile> outputs;  // CSV bodies and summary.txt
  std::vector<std::string> summary;

  std::vector<std::string> manifest() const {
    std::vector<std::string> names;
    for (const auto& o : outputs) names.push_back(o.name);
    return names;
  }
};

// 64-bit FNV-1a of the canonical (sorted-key) dump.
inline std::string config_hash(const json& config) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : config.dump()) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------------------
// Schema

namespace schema {

inline const std::set<std::string>& common_keys() {
  static const std::set<std::string> k{"kind", "seed", "out_dir", "workers", "name"};
  return k;
}

inline const std::map<std::string, std::set<std::string>>& kind_keys() {
  static const std::map<std::string, std::set<std::string>> k{
      {"norm", {"kernel", "weight", "m_max"}},
      {"rh-solve", {"model", "interior", "reward", "discount", "weight", "theta", "m_max"}},
      {"rh-deriv", {"model", "interior", "reward", "discount", "weight", "order", "m_max", "sweep"}},
      {"stat-deriv", {"model", "f", "order", "sweep"}},
      {"lyapunov-check",
       {"model", "mode", "interior", "reward", "discount", "certificate", "order", "theta_points", "q", "small_set",
        "kappa_power", "f"}},
      {"minorization", {"model", "small_set", "power_max", "theta_points"}},
      {"mc-estimate",
       {"model", "estimator", "interior", "reward", "discount", "f", "x0", "regen_state", "n_paths", "n_cycles",
        "n_outer", "warmup", "pi_cycles", "budgets"}},
      {"gg1", {"model", "budget", "h_fd", "probe", "drift"}},
      {"delta-ci", {"alpha_hat", "grad", "C", "n", "delta"}},
  };
  return k;
}

inline const std::map<std::string, std::set<std::string>>& family_keys() {
  static const std::map<std::string, std::set<std::string>> k{
      {"two-state", {"family", "theta0", "q", "eps"}},
      {"symmetric-two-state", {"family", "theta0", "eps"}},
      {"constant", {"family", "kernel", "theta0", "eps"}},
      {"scaled", {"family", "kernel", "theta0", "eps"}},
      {"polynomial", {"family", "kernel", "coefficients", "theta0", "eps"}},
      {"tabulated", {"family", "thetas", "kernels", "theta0", "eps", "interval"}},
      {"exponential-tilt", {"family", "kernel", "tilt", "theta0", "eps"}},
      {"pareto-scale", {"family", "alpha", "theta0", "p", "eps", "interarrival", "delta", "states"}},
  };
  return k;
}

inline const std::set<std::string>& gg1_model_keys() {
  static const std::set<std::string> k{"alpha", "theta0", "p", "eps", "interarrival", "score_off"};
  return k;
}

inline void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw SchemaError(where + " must be an object");
  for (const auto& [key, _] : j.items()) {
    if (!allowed.count(key)) throw SchemaError("unknown key '" + key + "' in " + where);
  }
}

inline void check_interarrival(const json& j, const std::string& where) {
  if (!j.is_object() || !j.contains("type") || !j["type"].is_string()) {
    throw SchemaError(where + " needs a string 'type'");
  }
  const std::string t = j["type"];
  if (t == "exponential") check_keys(j, {"type", "rate"}, where);
  else if (t == "deterministic") check_keys(j, {"type", "value"}, where);
  else if (t == "tabulated") check_keys(j, {"type", "values", "probs"}, where);
  else throw SchemaError("unknown interarrival type '" + t + "' in " + where);
}

inline void check_family(const json& j) {
  if (!j.is_object() || !j.contains("family") || !j["family"].is_string()) {
    throw SchemaError("model needs a string 'family'");
  }
  const std::string name = j["family"];
  const auto it = family_keys().find(name);
  if (it == family_keys().end()) throw SchemaError("unknown family '" + name + "'");
  check_keys(j, it->second, "model");
  if (j.contains("interarrival")) check_interarrival(j["interarrival"], "model.interarrival");
}

inline void validate(const json& config) {
  if (!config.is_object()) throw SchemaError("config must be a JSON object");
  if (!config.contains("kind") || !config["kind"].is_string()) throw SchemaError("config needs a string 'kind'");
  const std::string kind = config["kind"];
  const auto it = kind_keys().find(kind);
  if (it == kind_keys().end()) throw SchemaError("unknown kind '" + kind + "'");
  std::set<std::string> allowed = common_keys();
  allowed.insert(it->second.begin(), it->second.end());
  check_keys(config, allowed, "config");
  if (kind == "gg1") {
    if (!config.contains("model")) throw SchemaError("gg1 needs a model block");
    check_keys(config["model"], gg1_model_keys(), "model");
    if (config["model"].contains("interarrival")) check_interarrival(config["model"]["interarrival"], "model.interarrival");
    if (config.contains("budget")) {
      check_keys(config["budget"],
                 {"n_outer", "n_cycles", "warmup", "pi_cycles", "fd_replications", "fd_length", "fd_warmup"}, "budget");
    }
    if (config.contains("probe")) {
      check_keys(config["probe"], {"h", "x", "n_mc", "pilot_cycles", "pi_cycles", "truncation"}, "probe");
    }
    if (config.contains("drift")) check_keys(config["drift"], {"a1", "a2", "r", "c", "x", "theta_points"}, "drift");
  } else if (config.contains("model")) {
    check_family(config["model"]);
  }
  if (config.contains("sweep")) check_keys(config["sweep"], {"points"}, "sweep");
  if (config.contains("certificate")) {
    check_keys(config["certificate"], {"v", "v0", "v1", "c0", "c1"}, "certificate");
  }
}

}  // namespace schema

// ---------------------------------------------------------------------------
// Typed field access

namespace cfg {

template <class T>
T get(const json& j, const std::string& key, const std::string& where) {
  if (!j.contains(key)) throw SchemaError("missing key '" + key + "' in " + where);
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw SchemaError("key '" + key + "' in " + where + " has the wrong type");
  }
}

template <class T>
T get_or(const json& j, const std::string& key, T fallback, const std::string& where) {
  return j.contains(key) ? get<T>(j, key, where) : fallback;
}

inline std::size_t count(const json& j, const std::string& key, std::size_t fallback, const std::string& where) {
  const auto v = get_or<long long>(j, key, static_cast<long long>(fallback), where);
  if (v < 0) throw SchemaError("'" + key + "' in " + where + " must be nonnegative");
  return static_cast<std::size_t>(v);
}

inline Matrix matrix(const json& j, const std::string& key, const std::string& where) {
  const auto rows = get<std::vector<std::vector<double>>>(j, key, where);
  if (rows.empty()) throw SchemaError("'" + key + "' in " + where + " is empty");
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != rows.front().size()) throw DimensionError("ragged matrix '" + key + "' in " + where);
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
    }
  }
  if (m.rows() != m.cols()) throw DimensionError("matrix '" + key + "' in " + where + " must be square");
  return m;
}

inline Vector vector(const json& j, const std::string& key, const std::string& where) {
  const auto v = get<std::vector<double>>(j, key, where);
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline std::vector<std::size_t> indices(const json& j, const std::string& key, const std::string& where) {
  const auto v = get<std::vector<long long>>(j, key, where);
  std::vector<std::size_t> out;
  for (auto x : v) {
    if (x < 0) throw DimensionError("negative state index in '" + key + "'");
    out.push_back(static_cast<std::size_t>(x));
  }
  return out;
}

inline Interarrival interarrival(const json& j) {
  const std::string t = get<std::string>(j, "type", "interarrival");
  if (t == "exponential") return Interarrival::exponential(get<double>(j, "rate", "interarrival"));
  if (t == "deterministic") return Interarrival::deterministic(get<double>(j, "value", "interarrival"));
  return Interarrival::tabulated(get<std::vector<double>>(j, "values", "interarrival"),
                                 get<std::vector<double>>(j, "probs", "interarrival"));
}

inline GG1Model gg1_model(const json& j) {
  GG1Model m;
  m.alpha = get_or<double>(j, "alpha", m.alpha, "model");
  m.theta0 = get_or<double>(j, "theta0", m.theta0, "model");
  m.p = get_or<double>(j, "p", m.p, "model");
  m.eps = get_or<double>(j, "eps", m.eps, "model");
  if (j.contains("interarrival")) m.interarrival = interarrival(j["interarrival"]);
  m.score_off = get_or<bool>(j, "score_off", false, "model");
  return m;
}

inline ParamKernelFamily family(const json& j) {
  const std::string name = get<std::string>(j, "family", "model");
  const double eps = get_or<double>(j, "eps", 0.1, "model");
  if (name == "two-state") {
    return families::two_state(get<double>(j, "theta0", "model"), get<double>(j, "q", "model"), eps);
  }
  if (name == "symmetric-two-state") return families::symmetric_two_state(get<double>(j, "theta0", "model"), eps);
  if (name == "constant") {
    return families::constant(FiniteKernel::nonnegative(matrix(j, "kernel", "model")),
                              get_or<double>(j, "theta0", 0.0, "model"), get_or<double>(j, "eps", 0.5, "model"));
  }
  if (name == "scaled") {
    return families::scaled(FiniteKernel::nonnegative(matrix(j, "kernel", "model")), get<double>(j, "theta0", "model"),
                            eps);
  }
  if (name == "polynomial") {
    std::vector<Matrix> coeffs;
    const auto raw = get<std::vector<std::vector<std::vector<double>>>>(j, "coefficients", "model");
    for (std::size_t k = 0; k < raw.size(); ++k) {
      json one;
      one["c"] = raw[k];
      coeffs.push_back(matrix(one, "c", "model.coefficients[" + std::to_string(k) + "]"));
    }
    return families::polynomial(FiniteKernel::nonnegative(matrix(j, "kernel", "model")), coeffs,
                                get<double>(j, "theta0", "model"), eps);
  }
  if (name == "tabulated") {
    std::vector<Matrix> kernels;
    const auto raw = get<std::vector<std::vector<std::vector<double>>>>(j, "kernels", "model");
    for (std::size_t k = 0; k < raw.size(); ++k) {
      json one;
      one["k"] = raw[k];
      kernels.push_back(matrix(one, "k", "model.kernels[" + std::to_string(k) + "]"));
    }
    const auto iv = get_or<std::vector<double>>(j, "interval", {-1e300, 1e300}, "model");
    if (iv.size() != 2) throw SchemaError("interval needs two endpoints");
    return families::tabulated(get<std::vector<double>>(j, "thetas", "model"), kernels,
                               get<double>(j, "theta0", "model"), eps, {iv[0], iv[1]});
  }
  if (name == "exponential-tilt") {
    return families::exponential_tilt(FiniteKernel::nonnegative(matrix(j, "kernel", "model")),
                                      matrix(j, "tilt", "model"), get<double>(j, "theta0", "model"), eps);
  }
  // pareto-scale
  return pareto_lindley_family(gg1_model(j), get_or<double>(j, "delta", 0.25, "model"), count(j, "states", 40, "model"));
}

inline TargetProblem target(const json& j, const ParamKernelFamily& fam) {
  const std::size_t n = fam.size();
  const Vector reward = vector(j, "reward", "config");
  const Vector discount = j.contains("discount") ? vector(j, "discount", "config") : Vector::Zero(static_cast<Eigen::Index>(n));
  return TargetProblem(fam, indices(j, "interior", "config"), FiniteFunction(reward), FiniteFunction(discount));
}

inline WeightFunction weight(const json& j, std::size_t n) {
  return j.contains("weight") ? WeightFunction(vector(j, "weight", "config")) : WeightFunction::ones(n);
}

}  // namespace cfg

// ---------------------------------------------------------------------------
// Runners

namespace detail {

struct RunContext {
  const json& config;
  McOptions mc;
  std::vector<OutputFile> outputs;
  std::vector<std::string> summary;

  void emit(std::string name, std::string content) { outputs.push_back({std::move(name), std::move(content)}); }
  void say(std::string line) { summary.push_back(std::move(line)); }
};

inline std::size_t position_in(const std::vector<std::size_t>& c, std::size_t x) {
  const auto it = std::find(c.begin(), c.end(), x);
  if (it == c.end()) throw ModelError("state " + std::to_string(x) + " is not in the interior set C");
  return static_cast<std::size_t>(it - c.begin());
}

inline void run_norm(RunContext& ctx) {
  const Matrix k = cfg::matrix(ctx.config, "kernel", "config");
  const auto q = FiniteKernel::signed_kernel(k);
  const auto w = cfg::weight(ctx.config, q.size());
  const double norm = operator_norm(q, w);
  const auto check = contraction_power(q, w, static_cast<int>(cfg::count(ctx.config, "m_max", kDefaultMaxPower, "config")));
  CsvTable t({"quantity", "value"});
  t.row({"operator_norm", num(norm)});
  t.row({"contraction_power", check.power ? std::to_string(*check.power) : "none"});
  ctx.emit("norm.csv", t.str());
  ctx.say("operator_norm = " + num(norm));
  ctx.say("contraction: " + check.describe());
}

inline void run_rh_solve(RunContext& ctx) {
  const auto fam = cfg::family(ctx.config["model"]);
  const auto problem = cfg::target(ctx.config, fam);
  const auto w = cfg::weight(ctx.config, problem.interior_size());
  const double theta = cfg::get_or<double>(ctx.config, "theta", fam.theta0(), "config");
  const int m_max = static_cast<int>(cfg::count(ctx.config, "m_max", kDefaultMaxPower, "config"));
  const auto u = compute_u_star(problem, theta, w, m_max);
  CsvTable t({"state", "u_star"});
  for (std::size_t i = 0; i < u.size(); ++i) t.row({num(problem.interior()[i]), num(u(i))});
  ctx.emit("u_star.csv", t.str());
  ctx.say("u_star(" + num(problem.interior()[0]) + ") = " + num(u(0)) + " at theta = " + num(theta));
}

inline void run_rh_deriv(RunContext& ctx) {
  const auto fam = cfg::family(ctx.config["model"]);
  const auto problem = cfg::target(ctx.config, fam);
  const auto w = cfg::weight(ctx.config, problem.interior_size());
  const int order = static_cast<int>(cfg::count(ctx.config, "order", 1, "config"));
  const int m_max = static_cast<int>(cfg::count(ctx.config, "m_max", kDefaultMaxPower, "config"));
  const auto d = higher_derivatives(problem, w, order, m_max);
  CsvTable t({"state", "order", "value"});
  for (int l = 0; l <= order; ++l)
    for (std::size_t i = 0; i < problem.interior_size(); ++i)
      t.row({num(problem.interior()[i]), std::to_string(l), num(d[static_cast<std::size_t>(l)](i))});
  ctx.emit("derivatives.csv", t.str());
  for (int l = 1; l <= order; ++l) {
    ctx.say("u_star^(" + std::to_string(l) + ")(" + num(problem.interior()[0]) + ") = " +
            num(d[static_cast<std::size_t>(l)](0)));
  }
  if (ctx.config.contains("sweep")) {
    const int points = static_cast<int>(cfg::count(ctx.config["sweep"], "points", 21, "sweep"));
    std::vector<double> thetas = fam.band_grid(points), values;
    for (double t0 : thetas) values.push_back(compute_u_star(problem, t0, w, m_max)(0));
    ctx.emit("sweep_u_star.csv", plot_csv({"theta", "u_star"}, {thetas, values}));
  }
}

inline void run_stat_deriv(RunContext& ctx) {
  const auto fam = cfg::family(ctx.config["model"]);
  const FiniteFunction f(cfg::vector(ctx.config, "f", "config"));
  detail::require_same_size(fam.size(), f.size(), "functional f");
  const int order = static_cast<int>(cfg::count(ctx.config, "order", 1, "config"));
  const auto pis = higher_stationary_derivatives(fam, order);
  CsvTable alpha({"order", "alpha"});
  CsvTable pi({"state", "order", "value"});
  for (int l = 0; l <= order; ++l) {
    const auto& m = pis[static_cast<std::size_t>(l)];
    alpha.row({std::to_string(l), num(pair(m, f))});
    for (std::size_t x = 0; x < m.size(); ++x) pi.row({num(x), std::to_string(l), num(m(x))});
  }
  ctx.emit("alpha.csv", alpha.str());
  ctx.emit("pi.csv", pi.str());
  ctx.say("alpha = " + num(pair(pis[0], f)));
  if (order >= 1) ctx.say("alpha' = " + num(pair(pis[1], f)));
  if (ctx.config.contains("sweep")) {
    const int points = static_cast<int>(cfg::count(ctx.config["sweep"], "points", 21, "sweep"));
    std::vector<double> thetas = fam.band_grid(points), values;
    for (double t : thetas) values.push_back(pair(stationary_distribution(fam.eval_kernel(t)), f));
    ctx.emit("sweep_alpha.csv", plot_csv({"theta", "alpha"}, {thetas, values}));
  }
}

inline void run_lyapunov(RunContext& ctx) {
  const auto& c = ctx.config;
  const auto fam = cfg::family(c["model"]);
  const std::string mode = cfg::get_or<std::string>(c, "mode", "random-horizon", "config");
  const int theta_points = static_cast<int>(cfg::count(c, "theta_points", 21, "config"));
  if (mode == "random-horizon") {
    const auto problem = cfg::target(c, fam);
    LyapunovCertificateRH cert;
    if (c.contains("certificate")) {
      const auto vs = cfg::get<std::vector<std::vector<double>>>(c["certificate"], "v", "certificate");
      for (const auto& v : vs) cert.v.emplace_back(Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size())));
    } else {
      cert = propose_certificate(problem, static_cast<int>(cfg::count(c, "order", 1, "config")), 1e-6, theta_points);
    }
    const auto rep = verify_lyapunov_rh(problem, cert, theta_points);
    CsvTable t({"label", "order", "theta", "min_slack", "pass"});
    for (const auto& chk : rep.checks)
      t.row({chk.label, std::to_string(chk.order), num(chk.theta), num(chk.min_slack()), chk.pass ? "1" : "0"});
    ctx.emit("checks.csv", t.str());
    CsvTable b({"state", "order", "derivative", "bound", "holds"});
    for (std::size_t l = 1; l < rep.derivatives.size() && l < cert.v.size(); ++l)
      for (std::size_t i = 0; i < problem.interior_size(); ++i)
        b.row({num(problem.interior()[i]), num(l), num(rep.derivatives[l](i)), num(cert.v[l](i)),
               std::abs(rep.derivatives[l](i)) <= cert.v[l](i) * (1 + 1e-12) ? "1" : "0"});
    ctx.emit("bounds.csv", b.str());
    ctx.say(std::string("certificate ") + (rep.pass ? "passes" : "fails") + "; derivative bounds " +
            (rep.bounds_hold() ? "hold" : "do not hold"));
    if (!rep.note.empty()) ctx.say(rep.note);
    return;
  }
  if (mode != "stationary") throw SchemaError("mode must be 'random-horizon' or 'stationary'");
  const FiniteFunction q(cfg::vector(c, "q", "config"));
  const FiniteFunction f(cfg::vector(c, "f", "config"));
  const auto small = cfg::indices(c, "small_set", "config");
  const auto kappa = power_kappa(cfg::get_or<double>(c, "kappa_power", 1.5, "config"));
  StationaryCertificate cert;
  if (c.contains("certificate")) {
    const auto& cj = c["certificate"];
    cert.q = q;
    cert.v0 = FiniteFunction(cfg::vector(cj, "v0", "certificate"));
    cert.v1 = FiniteFunction(cfg::vector(cj, "v1", "certificate"));
    cert.c0 = cfg::get<double>(cj, "c0", "certificate");
    cert.c1 = cfg::get<double>(cj, "c1", "certificate");
    cert.small_set = small;
    cert.kappa = kappa;
    cert.eps = fam.eps();
  } else {
    cert = construct_stationary_certificate(fam, q, small, kappa, theta_points);
  }
  const auto rep = check_subgeometric_drift(fam, cert, f, theta_points);
  CsvTable t({"check", "value", "pass"});
  double min0 = INFINITY, min1 = INFINITY;
  for (std::size_t i = 0; i < rep.thetas.size(); ++i) {
    min0 = std::min(min0, rep.slack_v0[i].minCoeff());
    min1 = std::min(min1, rep.slack_v1[i].minCoeff());
  }
  t.row({"v0_drift_min_slack", num(min0), rep.drift_pass ? "1" : "0"});
  t.row({"v1_drift_min_slack", num(min1), rep.drift_pass ? "1" : "0"});
  t.row({"kappa_superlinear", num(rep.kappa_range_hi), rep.kappa_pass ? "1" : "0"});
  double maxq = 0.0;
  for (double v : rep.stationary_q) maxq = std::max(maxq, v);
  t.row({"max_pi_q_vs_c0", num(maxq), rep.stationary_bound_holds ? "1" : "0"});
  t.row({"alpha_prime", num(rep.alpha_prime), "1"});
  t.row({"derivative_bound_a_c1", num(rep.derivative_bound), rep.derivative_bound_holds ? "1" : "0"});
  ctx.emit("checks.csv", t.str());
  ctx.say(std::string("stationary certificate ") + (rep.pass() ? "passes" : "fails") + "; |alpha'| = " +
          num(std::abs(rep.alpha_prime)) + " <= a c1 = " + num(rep.derivative_bound) + ": " +
          (rep.derivative_bound_holds ? "yes" : "no"));
}

inline void run_minorization(RunContext& ctx) {
  const auto fam = cfg::family(ctx.config["model"]);
  const auto small = cfg::indices(ctx.config, "small_set", "config");
  const int power_max = static_cast<int>(cfg::count(ctx.config, "power_max", 10, "config"));
  const int points = static_cast<int>(cfg::count(ctx.config, "theta_points", 1, "config"));
  const auto grid = points <= 1 ? std::vector<double>{} : fam.band_grid(points);
  const auto cert = check_minorization(fam, small, power_max, grid);
  if (!cert) {
    throw RefusalError("no minorization P^n >= lambda phi on the small set for n <= " + std::to_string(power_max) +
                       " (A5 small-set condition)");
  }
  CsvTable t({"power", "lambda"});
  t.row({std::to_string(cert->power), num(cert->lambda)});
  ctx.emit("minorization.csv", t.str());
  CsvTable phi({"state", "phi"});
  for (std::size_t x = 0; x < cert->phi.size(); ++x) phi.row({num(x), num(cert->phi(x))});
  ctx.emit("phi.csv", phi.str());
  ctx.say("minorization: power " + std::to_string(cert->power) + ", lambda = " + num(cert->lambda));
}

inline void run_mc_estimate(RunContext& ctx) {
  const auto& c = ctx.config;
  const auto fam = cfg::family(c["model"]);
  const std::string est = cfg::get<std::string>(c, "estimator", "config");
  const auto rec = embed_chain(fam);
  std::vector<std::size_t> budgets;
  if (c.contains("budgets")) {
    for (auto b : cfg::get<std::vector<long long>>(c, "budgets", "config")) {
      if (b < 2) throw SchemaError("budgets must be at least 2");
      budgets.push_back(static_cast<std::size_t>(b));
    }
  }
  std::function<DerivativeEstimate(std::size_t)> run;
  double exact = 0.0;
  std::size_t primary = 0;
  if (est == "u-star" || est == "u-star-derivative") {
    const auto problem = cfg::target(c, fam);
    const std::size_t x0 = cfg::count(c, "x0", problem.interior()[0], "config");
    const std::size_t pos = position_in(problem.interior(), x0);
    const auto pay = payoff_of(problem);
    const auto w = WeightFunction::ones(problem.interior_size());
    primary = cfg::count(c, "n_paths", 100000, "config");
    if (est == "u-star") {
      exact = compute_u_star(problem, fam.theta0(), w)(pos);
      run = [&, pay, x0](std::size_t n) { return estimate_u_star(rec, pay, x0, n, ctx.mc); };
    } else {
      exact = derivative_u_star(problem, w)(pos);
      run = [&, pay, x0](std::size_t n) { return estimate_u_star_derivative(rec, pay, x0, n, ctx.mc); };
    }
  } else if (est == "stationary-mean" || est == "gamma" || est == "stationary-derivative") {
    const FiniteFunction f(cfg::vector(c, "f", "config"));
    detail::require_same_size(fam.size(), f.size(), "functional f");
    const std::size_t regen = cfg::count(c, "regen_state", 0, "config");
    if (regen >= fam.size()) throw DimensionError("regen_state out of range");
    const Predicate<std::size_t> is_regen = [regen](const std::size_t& x) { return x == regen; };
    const auto fn = function_of(f);
    const auto pi = stationary_distribution(fam.base());
    if (est == "stationary-mean") {
      primary = cfg::count(c, "n_cycles", 100000, "config");
      exact = pair(pi, f);
      run = [&, fn, is_regen, regen](std::size_t n) {
        return estimate_regenerative_mean(rec, fn, is_regen, regen, n, ctx.mc).estimate;
      };
    } else if (est == "gamma") {
      const std::size_t x0 = cfg::count(c, "x0", 0, "config");
      if (x0 >= fam.size()) throw DimensionError("x0 out of range");
      const std::size_t pi_cycles = cfg::count(c, "pi_cycles", 100000, "config");
      primary = cfg::count(c, "n_cycles", 100000, "config");
      const Vector g = poisson_solve(fam.base(), pi, f).values();
      exact = g(static_cast<Eigen::Index>(x0)) - g(static_cast<Eigen::Index>(regen));
      const auto pif = estimate_regenerative_mean(rec, fn, is_regen, regen, pi_cycles, ctx.mc).estimate;
      run = [&, fn, is_regen, pif, x0](std::size_t n) {
        return estimate_gamma_regenerative(rec, fn, is_regen, pif, x0, n, ctx.mc);
      };
    } else {
      StationaryDerivativeOptions so;
      so.n_cycles = cfg::count(c, "n_cycles", 1, "config");
      so.warmup = cfg::count(c, "warmup", 100, "config");
      so.pi_cycles = cfg::count(c, "pi_cycles", 100000, "config");
      primary = cfg::count(c, "n_outer", 100000, "config");
      exact = stationary_functional_derivative(fam, f);
      run = [&, fn, is_regen, so, regen](std::size_t n) {
        auto o = so;
        o.n_outer = n;
        return estimate_stationary_derivative(rec, fn, is_regen, regen, o, ctx.mc).estimate;
      };
    }
  } else {
    throw SchemaError("unknown estimator '" + est + "'");
  }
  if (primary < 2) throw SchemaError("sample count must be at least 2");
  const auto e = run(primary);
  CsvTable t({"method", "point", "std_error", "n", "seed", "exact", "bias_diagnostic"});
  t.row({e.method, num(e.point), num(e.std_error), std::to_string(e.n_samples), std::to_string(ctx.mc.seed), num(exact),
         num(e.bias_diagnostic)});
  ctx.emit("estimates.csv", t.str());
  const double z = e.std_error > 0 ? (e.point - exact) / e.std_error : 0.0;
  ctx.say(e.method + ": " + num(e.point) + " +- " + num(e.std_error) + " (exact " + num(exact) + ", z = " + num(z) + ")");
  if (!budgets.empty()) {
    std::vector<double> ns, points, ses;
    for (auto n : budgets) {
      const auto b = run(n);
      ns.push_back(static_cast<double>(n));
      points.push_back(b.point);
      ses.push_back(b.std_error);
    }
    ctx.emit("se_vs_budget.csv", plot_csv({"n", "point", "std_error"}, {ns, points, ses}));
  }
}

inline void run_gg1(RunContext& ctx) {
  const auto& c = ctx.config;
  const GG1Model m = cfg::gg1_model(c["model"]);
  m.validate();
  GG1Budget b;
  if (c.contains("budget")) {
    const auto& bj = c["budget"];
    b.lr.n_outer = cfg::count(bj, "n_outer", b.lr.n_outer, "budget");
    b.lr.n_cycles = cfg::count(bj, "n_cycles", b.lr.n_cycles, "budget");
    b.lr.warmup = cfg::count(bj, "warmup", b.lr.warmup, "budget");
    b.lr.pi_cycles = cfg::count(bj, "pi_cycles", b.lr.pi_cycles, "budget");
    b.fd_replications = cfg::count(bj, "fd_replications", b.fd_replications, "budget");
    b.fd_length = cfg::count(bj, "fd_length", b.fd_length, "budget");
    b.fd_warmup = cfg::count(bj, "fd_warmup", b.fd_warmup, "budget");
  }
  b.h_fd = cfg::get_or<double>(c, "h_fd", 0.0, "config");
  const auto rep = run_gg1_derivative_experiment(m, b, ctx.mc);
  CsvTable t({"method", "point", "std_error", "n", "seed"});
  const std::string seed = std::to_string(ctx.mc.seed);
  t.row({rep.estimate.method, num(rep.estimate.point), num(rep.estimate.std_error),
         std::to_string(rep.estimate.n_samples), seed});
  t.row({rep.finite_difference.method, num(rep.finite_difference.point), num(rep.finite_difference.std_error),
         std::to_string(rep.finite_difference.n_samples), seed});
  t.row({"regenerative-mean", num(rep.pi_f.point), num(rep.pi_f.std_error), std::to_string(rep.pi_f.n_samples), seed});
  if (rep.oracle) {
    t.row({"pk-oracle-derivative", num(rep.oracle->derivative), "0", "0", seed});
    t.row({"pk-oracle-mean-wait", num(rep.oracle->mean_wait), "0", "0", seed});
  }
  ctx.emit("derivative.csv", t.str());
  ctx.say("LR derivative = " + num(rep.estimate.point) + " +- " + num(rep.estimate.std_error) +
          " (inner bias diagnostic " + num(rep.estimate.bias_diagnostic) + ")");
  ctx.say("CRN finite difference (h = " + num(rep.h_fd) + ") = " + num(rep.finite_difference.point) + " +- " +
          num(rep.finite_difference.std_error) + ", z = " + num(rep.z_vs_fd));
  if (rep.oracle) {
    ctx.say("P-K derivative = " + num(rep.oracle->derivative) + ", z = " + num(rep.z_vs_oracle));
  }
  if (c.contains("probe")) {
    const auto& pj = c["probe"];
    ProbeOptions po;
    po.n_mc = cfg::count(pj, "n_mc", po.n_mc, "probe");
    po.pilot_cycles = cfg::count(pj, "pilot_cycles", po.pilot_cycles, "probe");
    po.pi_cycles = cfg::count(pj, "pi_cycles", po.pi_cycles, "probe");
    po.truncation = cfg::get_or<double>(pj, "truncation", po.truncation, "probe");
    auto hs = cfg::get_or<std::vector<double>>(pj, "h", {0.02, 0.01, 0.005}, "probe");
    for (auto& h : hs) h *= m.theta0;
    const auto xs = cfg::get_or<std::vector<double>>(pj, "x", {0.0, 5.0, 20.0, 80.0}, "probe");
    const auto pr = perturbation_bound_probe(m, hs, xs, po, ctx.mc);
    CsvTable pt({"h", "x", "lhs", "std_error", "d_cell"});
    for (const auto& cell : pr.cells)
      pt.row({num(cell.h), num(cell.x), num(cell.lhs), num(cell.std_error), num(cell.d_cell)});
    ctx.emit("probe.csv", pt.str());
    ctx.say("probe: fitted d = " + num(pr.d_fit) + ", spread across h " + num(pr.ratio_across_h) + ", across x " +
            num(pr.ratio_across_x) + (pr.stable ? " (stable within 2x)" : " (not stable within 2x)"));
  }
  if (c.contains("drift")) {
    const auto& dj = c["drift"];
    const double r = cfg::get_or<double>(dj, "r", 0.5 * (m.p + m.alpha - 2.0), "drift");
    const auto recipe = gg1_drift_recipe(m, r);
    const double a1 = cfg::get_or<double>(dj, "a1", recipe.a1, "drift");
    const double a2 = cfg::get_or<double>(dj, "a2", recipe.a2, "drift");
    std::vector<double> xs = cfg::get_or<std::vector<double>>(dj, "x", {}, "drift");
    if (xs.empty())
      for (int i = 0; i <= 40; ++i) xs.push_back(5.0 * i);
    const int tp = static_cast<int>(cfg::count(dj, "theta_points", 5, "drift"));
    auto dv = gg1_drift_verification(m, a1, a2, r, cfg::get_or<double>(dj, "c", 0.0, "drift"), xs, tp);
    if (!dj.contains("c")) {
      dv.c = std::max(dv.minimal_c_v0, dv.minimal_c_v1);
      dv.pass = dv.passes_beyond(dv.c);
    }
    std::vector<double> x, s0, s1;
    for (const auto& row : dv.rows) {
      x.push_back(row.x);
      s0.push_back(row.drift_v0);
      s1.push_back(row.drift_v1);
    }
    ctx.emit("drift_slack.csv", plot_csv({"x", "drift_v0", "drift_v1"}, {x, s0, s1}));
    ctx.say("drift: a1 = " + num(a1) + ", a2 = " + num(a2) + ", r = " + num(r) + "; minimal c (v0) = " +
            num(dv.minimal_c_v0) + ", (v1) = " + num(dv.minimal_c_v1) + (dv.pass ? "; passes" : "; fails") +
            " for x >= c = " + num(dv.c));
  }
}

inline void run_delta_ci(RunContext& ctx) {
  const auto& c = ctx.config;
  const auto ci = delta_ci(cfg::get<double>(c, "alpha_hat", "config"), cfg::get<double>(c, "grad", "config"),
                           cfg::get<double>(c, "C", "config"), cfg::get<double>(c, "n", "config"),
                           cfg::get_or<double>(c, "delta", 0.05, "config"));
  CsvTable t({"lower", "upper", "half_width", "z"});
  t.row({num(ci.lower), num(ci.upper), num(ci.half_width), num(ci.z)});
  ctx.emit("ci.csv", t.str());
  ctx.say("interval = [" + num(ci.lower) + ", " + num(ci.upper) + "]");
}

}  // namespace detail

// Effective config after overrides; seed and out_dir are part of the hash input.
struct RunOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
};

// Runs the experiment in memory; nothing is written.
inline RunRecord run(json config, const RunOverrides& ov = {}) {
  schema::validate(config);
  if (ov.seed) config["seed"] = *ov.seed;
  if (ov.out_dir) config["out_dir"] = *ov.out_dir;
  const auto start = std::chrono::steady_clock::now();
  detail::RunContext ctx{config, {}, {}, {}};
  const auto seed = cfg::get_or<long long>(config, "seed", 1, "config");
  if (seed < 0) throw SchemaError("seed must be nonnegative");
  ctx.mc.seed = static_cast<std::uint64_t>(seed);
  ctx.mc.workers = static_cast<unsigned>(cfg::count(config, "workers", 0, "config"));
  const std::string kind = config["kind"];
  if (kind == "norm") detail::run_norm(ctx);
  else if (kind == "rh-solve") detail::run_rh_solve(ctx);
  else if (kind == "rh-deriv") detail::run_rh_deriv(ctx);
  else if (kind == "stat-deriv") detail::run_stat_deriv(ctx);
  else if (kind == "lyapunov-check") detail::run_lyapunov(ctx);
  else if (kind == "minorization") detail::run_minorization(ctx);
  else if (kind == "mc-estimate") detail::run_mc_estimate(ctx);
  else if (kind == "gg1") detail::run_gg1(ctx);
  else detail::run_delta_ci(ctx);
  RunRecord rec;
  rec.kind = kind;
  rec.config_hash = config_hash(config);
  rec.seed = ctx.mc.seed;
  rec.out_dir = cfg::get_or<std::string>(config, "out_dir", "out", "config");
  rec.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  rec.outputs = std::move(ctx.outputs);
  rec.summary = std::move(ctx.summary);
  return rec;
}

inline std::string summary_text(const RunRecord& rec) {
  std::ostringstream os;
  os << "kind: " << rec.kind << "\nconfig_hash: " << rec.config_hash << "\nseed: " << rec.seed << '\n';
  for (const auto& line : rec.summary) os << line << '\n';
  return os.str();
}

// Writes every CSV plus summary.txt and run.json; returns the written paths.
inline std::vector<std::string> emit_plot_data(const RunRecord& rec) {
  namespace fs = std::filesystem;
  const fs::path dir(rec.out_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw SchemaError("cannot create output directory '" + rec.out_dir + "': " + ec.message());
  std::vector<std::string> written;
  auto put = [&](const std::string& name, const std::string& body) {
    const fs::path p = dir / name;
    std::ofstream os(p, std::ios::binary);
    os << body;
    if (!os) throw SchemaError("cannot write '" + p.string() + "'");
    written.push_back(p.string());
  };
  for (const auto& o : rec.outputs) put(o.name, o.content);
  put("summary.txt", summary_text(rec));
  json meta;
  meta["kind"] = rec.kind;
  meta["config_hash"] = rec.config_hash;
  meta["version"] = rec.version;
  meta["seed"] = rec.seed;
  meta["wall_time_s"] = rec.wall_time;
  meta["outputs"] = rec.manifest();
  put("run.json", meta.dump(2) + "\n");
  return written;
}

inline json parse_config(std::istream& is) {
  try {
    return json::parse(is, nullptr, true, true);
  } catch (const nlohmann::json::parse_error& e) {
    throw SchemaError(std::string("config is not valid JSON: ") + e.what());
  }
}

}  // namespace mcsens

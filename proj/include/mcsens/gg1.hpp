#pragma once

// Waiting times of the single-server FIFO queue,
//   W_{n+1} = [W_n + V_n - chi_{n+1}]^+,
// with Pareto service times P^theta(V > v) = (1 + theta v)^{-alpha}.  theta is
// the scale parameter; the score acts on V only.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>

#include "mcsens/errors.hpp"
#include "mcsens/param_family.hpp"
#include "mcsens/rng.hpp"
#include "mcsens/simulation.hpp"

namespace mcsens {

struct Interarrival {
  enum class Kind { exponential, deterministic, tabulated };
  Kind kind = Kind::exponential;
  double rate = 1.0;            // exponential
  double value = 1.0;           // deterministic
  std::vector<double> values;   // tabulated support
  std::vector<double> probs;    // tabulated masses

  static Interarrival exponential(double rate) {
    Interarrival a;
    a.kind = Kind::exponential;
    a.rate = rate;
    return a;
  }
  static Interarrival deterministic(double value) {
    Interarrival a;
    a.kind = Kind::deterministic;
    a.value = value;
    return a;
  }
  static Interarrival tabulated(std::vector<double> values, std::vector<double> probs) {
    Interarrival a;
    a.kind = Kind::tabulated;
    a.values = std::move(values);
    a.probs = std::move(probs);
    return a;
  }

  void validate() const {
    switch (kind) {
      case Kind::exponential:
        if (!(rate > 0.0) || !std::isfinite(rate)) throw ModelError("interarrival rate must be positive");
        break;
      case Kind::deterministic:
        if (!(value > 0.0) || !std::isfinite(value)) throw ModelError("interarrival time must be positive");
        break;
      case Kind::tabulated: {
        if (values.empty() || values.size() != probs.size()) {
          throw SchemaError("tabulated interarrivals need matching values and probs");
        }
        double total = 0.0;
        for (std::size_t i = 0; i < values.size(); ++i) {
          if (!(values[i] >= 0.0) || !(probs[i] >= 0.0)) throw ModelError("tabulated interarrivals must be nonnegative");
          total += probs[i];
        }
        if (std::abs(total - 1.0) > 1e-12) throw ModelError("tabulated interarrival masses must sum to 1");
        break;
      }
    }
  }

  double mean() const {
    switch (kind) {
      case Kind::exponential: return 1.0 / rate;
      case Kind::deterministic: return value;
      default: {
        double m = 0.0;
        for (std::size_t i = 0; i < values.size(); ++i) m += values[i] * probs[i];
        return m;
      }
    }
  }

  double sample(RngStream& rng) const {
    switch (kind) {
      case Kind::exponential: return rng.exponential(rate);
      case Kind::deterministic: return value;
      default: {
        const double u = rng.uniform();
        double acc = 0.0;
        for (std::size_t i = 0; i + 1 < values.size(); ++i) {
          acc += probs[i];
          if (u < acc) return values[i];
        }
        return values.back();
      }
    }
  }

  // E h(chi) restricted to chi < y, plus h0 * P(chi >= y).
  template <class H>
  double expect_below(double y, H&& h, double h0) const {
    switch (kind) {
      case Kind::exponential: {
        if (y <= 0.0) return h0;
        // substitute s = P(chi <= c) so the weight is flat
        const double lam = rate;
        const double s_max = -std::expm1(-lam * y);
        auto integrand = [&](double s) { return h(-std::log1p(-s) / lam); };
        const double body =
            boost::math::quadrature::gauss_kronrod<double, 31>::integrate(integrand, 0.0, s_max, 10, 1e-11);
        return body + h0 * (1.0 - s_max);
      }
      case Kind::deterministic: return value < y ? h(value) : h0;
      default: {
        double s = 0.0;
        for (std::size_t i = 0; i < values.size(); ++i) s += probs[i] * (values[i] < y ? h(values[i]) : h0);
        return s;
      }
    }
  }
};

struct GG1Model {
  double alpha = 5.0;
  double theta0 = 1.0;
  double p = 1.0;     // moment f_p(x) = x^p
  double eps = 0.1;   // score band radius
  Interarrival interarrival = Interarrival::exponential(1.0);
  bool score_off = false;  // theta-independent comparison model

  double mean_service(double theta) const { return 1.0 / (theta * (alpha - 1.0)); }

  void validate() const {
    if (!(alpha > 1.0)) throw ModelError("Pareto shape alpha must exceed 1");
    if (!(theta0 > 0.0)) throw ModelError("scale theta0 must be positive");
    if (!(eps > 0.0 && eps < theta0)) throw ModelError("band radius eps must lie in (0, theta0)");
    if (!(p >= 1.0)) throw ModelError("moment exponent p must be at least 1");
    interarrival.validate();
    if (!(mean_service(theta0) < interarrival.mean())) {
      throw ModelError("unstable queue: E V = " + std::to_string(mean_service(theta0)) +
                       " is not below E chi = " + std::to_string(interarrival.mean()) + " (stability condition)");
    }
  }
};

// ---------------------------------------------------------------------------
// Pareto service times

inline double pareto_quantile(double alpha, double theta, double one_minus_u) {
  return (std::pow(one_minus_u, -1.0 / alpha) - 1.0) / theta;
}

inline double pareto_tail(double alpha, double theta, double v) { return v <= 0.0 ? 1.0 : std::pow(1.0 + theta * v, -alpha); }

// V under theta0 by inversion.
inline double pareto_sample(const GG1Model& m, RngStream& rng) {
  return pareto_quantile(m.alpha, m.theta0, 1.0 - rng.uniform());
}

struct ParetoScore {
  double density_ratio;
  double score;
};

inline ParetoScore pareto_score(const GG1Model& m, double theta, double v) {
  if (!(theta > 0.0)) throw ModelError("theta must be positive");
  if (m.score_off) return {1.0, 0.0};
  const double ratio =
      (theta / m.theta0) * std::pow((1.0 + theta * v) / (1.0 + m.theta0 * v), -m.alpha - 1.0);
  return {ratio, ratio * (1.0 / theta - (m.alpha + 1.0) * v / (1.0 + theta * v))};
}

inline constexpr int kScoreEnvelopeGrid = 65;

// sup over the band of |p'(theta, v)|, on a uniform theta grid.
inline double pareto_score_envelope(const GG1Model& m, double v) {
  if (m.score_off) return 0.0;
  double best = 0.0;
  for (int i = 0; i < kScoreEnvelopeGrid; ++i) {
    const double t = m.theta0 - m.eps + 2.0 * m.eps * i / (kScoreEnvelopeGrid - 1);
    best = std::max(best, std::abs(pareto_score(m, t, v).score));
  }
  return best;
}

// sup over v of 1 v omega(v), on a logarithmic v grid.
inline double pareto_score_envelope_sup(const GG1Model& m) {
  double best = std::max(1.0, pareto_score_envelope(m, 0.0));
  for (int i = 0; i <= 400; ++i) best = std::max(best, pareto_score_envelope(m, std::pow(10.0, -4.0 + 10.0 * i / 400)));
  return best;
}

// ---------------------------------------------------------------------------
// Lindley recursion

struct LindleyNoise {
  double v;    // service time of the current customer
  double chi;  // time to the next arrival
};

inline StochasticRecursion<double, LindleyNoise> lindley_recursion(const GG1Model& m) {
  m.validate();
  StochasticRecursion<double, LindleyNoise> rec;
  rec.theta0 = m.theta0;
  rec.eps = m.eps;
  rec.update = [](const double& w, const LindleyNoise& z) { return std::max(0.0, w + z.v - z.chi); };
  rec.sampler = [m](const double&, RngStream& rng) {
    const double v = pareto_sample(m, rng);
    return LindleyNoise{v, m.interarrival.sample(rng)};
  };
  rec.density_ratio = [m](double theta, const double&, const LindleyNoise& z) {
    return pareto_score(m, theta, z.v).density_ratio;
  };
  rec.score = [m](double theta, const double&, const LindleyNoise& z) { return pareto_score(m, theta, z.v).score; };
  rec.score_envelope = [m](const double&, const LindleyNoise& z) { return pareto_score_envelope(m, z.v); };
  return rec;
}

inline Path<double, LindleyNoise> lindley_path(const GG1Model& m, double w0,
                                               const std::function<bool(std::size_t, const double&)>& stop,
                                               RngStream& rng, std::size_t cap = kDefaultPathCap) {
  return simulate_path(lindley_recursion(m), w0, stop, rng, cap);
}

inline std::function<double(const double&)> moment_function(double p, double m = std::numeric_limits<double>::infinity()) {
  return [p, m](const double& x) { return std::min(m, std::pow(x, p)); };
}

inline Predicate<double> empty_queue() {
  return [](const double& w) { return w == 0.0; };
}

// ---------------------------------------------------------------------------
// M/G/1 oracle (Pollaczek-Khinchine), p = 1:
//   E W = lambda E V^2 / (2 (1 - rho)),  E V^2 = 2 / (theta^2 (alpha - 1)(alpha - 2))
//       = lambda / (theta (alpha - 2) (theta (alpha - 1) - lambda)).

struct MG1Oracle {
  double mean_wait;
  double derivative;
  double rho;
};

inline MG1Oracle mg1_oracle(const GG1Model& m) {
  if (m.interarrival.kind != Interarrival::Kind::exponential) {
    throw ModelError("the closed-form oracle needs exponential interarrivals");
  }
  if (!(m.alpha > 2.0)) throw ModelError("the closed-form oracle needs E V^2 < infinity (alpha > 2)");
  const double lam = m.interarrival.rate, a = m.alpha, t = m.theta0;
  const double rho = lam * m.mean_service(t);
  if (!(rho < 1.0)) throw ModelError("traffic intensity rho = " + std::to_string(rho) + " is not below 1");
  const double c = a - 1.0;
  const double ew = lam / (t * (a - 2.0) * (t * c - lam));
  const double d = -lam * (2.0 * t * c - lam) / ((a - 2.0) * t * t * (t * c - lam) * (t * c - lam));
  return {ew, d, rho};
}

// ---------------------------------------------------------------------------
// Derivative experiment: nested regenerative LR estimate, common-random-number
// finite differences, and the closed form when available.

struct GG1Budget {
  StationaryDerivativeOptions lr{200000, 1, 50, 200000};
  std::size_t fd_replications = 400;
  std::size_t fd_length = 20000;
  std::size_t fd_warmup = 1000;
  double h_fd = 0.0;  // 0: 0.01 * theta0
};

struct GG1DerivativeReport {
  DerivativeEstimate estimate;
  DerivativeEstimate pi_f;
  DerivativeEstimate finite_difference;
  double h_fd = 0.0;
  std::optional<MG1Oracle> oracle;
  double z_vs_fd = 0.0;      // (estimate - fd) / combined SE
  double z_vs_oracle = 0.0;  // (estimate - oracle) / SE
  bool agrees_with_fd = false;
  bool agrees_with_oracle = false;
};

inline constexpr std::uint64_t kPhaseFiniteDifference = 7;
inline constexpr std::uint64_t kPhaseProbePilot = 8;
inline constexpr std::uint64_t kPhaseProbe = 9;

// Time-average of f_p over one run at theta0 + h and one at theta0 - h sharing
// the uniforms for V and chi; sample = difference quotient.
inline DerivativeEstimate crn_finite_difference(const GG1Model& m, double h, std::size_t replications,
                                                std::size_t length, std::size_t warmup, const McOptions& opt) {
  if (!(h > 0.0) || !(h < m.theta0)) throw ModelError("finite-difference step must lie in (0, theta0)");
  if (replications < 2 || length < 1) throw ModelError("finite differences need >= 2 replications of positive length");
  const auto f = moment_function(m.p);
  auto samples = parallel_samples(replications, opt.workers, [&](std::size_t i) {
    RngStream rng(opt.seed, stream_id(kPhaseFiniteDifference, i));
    double wp = 0.0, wm = 0.0;
    std::vector<double> fp(length), fm(length);
    for (std::size_t k = 0; k < warmup + length; ++k) {
      const double u = 1.0 - rng.uniform();
      const double chi = m.interarrival.sample(rng);
      if (k >= warmup) {
        fp[k - warmup] = f(wp);
        fm[k - warmup] = f(wm);
      }
      wp = std::max(0.0, wp + pareto_quantile(m.alpha, m.theta0 + h, u) - chi);
      wm = std::max(0.0, wm + pareto_quantile(m.alpha, m.theta0 - h, u) - chi);
    }
    const double n = static_cast<double>(length);
    return (pairwise_sum(fp) / n - pairwise_sum(fm) / n) / (2.0 * h);
  });
  auto e = summarize(std::move(samples), "crn-central-difference", opt.keep_samples);
  return e;
}

inline GG1DerivativeReport run_gg1_derivative_experiment(const GG1Model& m, const GG1Budget& budget,
                                                         const McOptions& opt = {}) {
  m.validate();
  if (!(m.p < m.alpha - 2.0)) {
    throw ModelError("derivative needs p < alpha - 2 (here p = " + std::to_string(m.p) +
                     ", alpha = " + std::to_string(m.alpha) + ")");
  }
  GG1DerivativeReport rep;
  const auto rec = lindley_recursion(m);
  const auto st = estimate_stationary_derivative(rec, moment_function(m.p), empty_queue(), 0.0, budget.lr, opt);
  rep.estimate = st.estimate;
  rep.pi_f = st.pi_f.estimate;
  rep.h_fd = budget.h_fd > 0.0 ? budget.h_fd : 0.01 * m.theta0;
  if (m.score_off) {
    rep.finite_difference = summarize(std::vector<double>(budget.fd_replications, 0.0), "crn-central-difference");
  } else {
    rep.finite_difference =
        crn_finite_difference(m, rep.h_fd, budget.fd_replications, budget.fd_length, budget.fd_warmup, opt);
  }
  const double se_c = std::hypot(rep.estimate.std_error, rep.finite_difference.std_error);
  const double diff_fd = rep.estimate.point - rep.finite_difference.point;
  rep.z_vs_fd = se_c > 0 ? diff_fd / se_c : (diff_fd == 0 ? 0.0 : std::copysign(INFINITY, diff_fd));
  rep.agrees_with_fd = std::abs(diff_fd) <= 3.0 * se_c;
  if (m.interarrival.kind == Interarrival::Kind::exponential && m.p == 1.0 && m.alpha > 2.0 && !m.score_off) {
    rep.oracle = mg1_oracle(m);
    const double diff = rep.estimate.point - rep.oracle->derivative;
    rep.z_vs_oracle = rep.estimate.std_error > 0 ? diff / rep.estimate.std_error : 0.0;
    rep.agrees_with_oracle = std::abs(diff) <= 3.0 * rep.estimate.std_error;
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Probe of the one-step bound |(P(theta0 + h) - P(theta0)) Gamma f_{p;m}(x)| <= h d (x^p + 1).
//
// The left side is E[(p(theta0 + h, V) - 1) Gamma f(W_1)] from W_0 = x.  Since
// E[p - 1] = 0 it does not depend on the additive normalization of Gamma f; we
// evaluate it on the representative that vanishes near x, with the constant
// estimated from independent pilot cycles, and Gamma f(W_1) from one
// regenerative cycle.  All h share the same draws.

struct ProbeCell {
  double h;
  double x;
  double lhs;
  double std_error;
  double d_cell;  // |lhs| / (h (x^p + 1))
};

struct PerturbationProbeReport {
  std::vector<ProbeCell> cells;
  double pi_f = 0.0;
  double pi_f_se = 0.0;
  double d_fit = 0.0;            // smallest d with |lhs| <= h d (x^p + 1) + 3 SE everywhere
  std::vector<double> d_by_h;    // same fit at each h
  std::vector<double> d_by_x;    // same fit at each x
  double ratio_across_h = 0.0;   // max / min of d_by_h
  double ratio_across_x = 0.0;   // max / min of d_by_x over x with a resolved signal
  bool stable = false;           // both ratios <= 2
};

struct ProbeOptions {
  std::size_t n_mc = 200000;
  std::size_t pilot_cycles = 20000;
  std::size_t pi_cycles = 200000;
  double truncation = 1e6;  // m in f_{p;m} = min(m, x^p)
};

namespace detail {

inline double fit_d(const std::vector<ProbeCell>& cells, double p, const std::function<bool(const ProbeCell&)>& use) {
  double d = 0.0;
  for (const auto& c : cells) {
    if (!use(c) || c.h == 0.0) continue;
    d = std::max(d, std::max(0.0, std::abs(c.lhs) - 3.0 * c.std_error) / (c.h * (std::pow(c.x, p) + 1.0)));
  }
  return d;
}

inline double spread(const std::vector<double>& v) {
  double lo = INFINITY, hi = 0.0;
  for (double d : v) {
    if (d <= 0.0) continue;
    lo = std::min(lo, d);
    hi = std::max(hi, d);
  }
  return hi > 0.0 ? hi / lo : INFINITY;
}

}  // namespace detail

inline PerturbationProbeReport perturbation_bound_probe(const GG1Model& m, const std::vector<double>& h_list,
                                                const std::vector<double>& x_grid, const ProbeOptions& po,
                                                const McOptions& opt = {}) {
  m.validate();
  for (double h : h_list)
    if (h < 0.0 || !(m.theta0 + h > 0.0)) throw ModelError("probe step h must be nonnegative");
  const auto rec = lindley_recursion(m);
  const auto f = moment_function(m.p, po.truncation);
  const auto regen = empty_queue();
  const auto pi = estimate_regenerative_mean(rec, f, regen, 0.0, po.pi_cycles, opt);
  PerturbationProbeReport rep;
  rep.pi_f = pi.estimate.point;
  rep.pi_f_se = pi.estimate.std_error;
  for (std::size_t k = 0; k < x_grid.size(); ++k) {
    const double x = x_grid[k];
    McOptions pilot_opt = opt;
    pilot_opt.seed = opt.seed ^ (0x9E3779B97F4A7C15ull * (k + 1));
    // constant: mean cycle sum from x, using its own streams
    std::vector<double> pilot = parallel_samples(po.pilot_cycles, opt.workers, [&](std::size_t i) {
      RngStream rng(pilot_opt.seed, stream_id(kPhaseProbePilot, i));
      std::size_t tau = 0;
      const double s = detail::regenerative_cycle(rec, f, regen, x, rng, opt.path_cap, tau);
      return s - rep.pi_f * static_cast<double>(tau);
    });
    const double c = pairwise_sum(pilot) / static_cast<double>(pilot.size());
    std::vector<std::vector<double>> per_h(h_list.size(), std::vector<double>(po.n_mc));
    parallel_samples(po.n_mc, opt.workers, [&](std::size_t i) {
      RngStream rng(opt.seed, stream_id(kPhaseProbe, (k << 40) | i));
      const LindleyNoise z = rec.sampler(x, rng);
      const double w1 = rec.update(x, z);
      std::size_t tau = 0;
      const double g = detail::regenerative_cycle(rec, f, regen, w1, rng, opt.path_cap, tau) -
                       rep.pi_f * static_cast<double>(tau) - c;
      for (std::size_t j = 0; j < h_list.size(); ++j) {
        per_h[j][i] = (pareto_score(m, m.theta0 + h_list[j], z.v).density_ratio - 1.0) * g;
      }
      return 0.0;
    });
    for (std::size_t j = 0; j < h_list.size(); ++j) {
      const auto e = summarize(std::move(per_h[j]), "probe");
      const double h = h_list[j];
      rep.cells.push_back({h, x, e.point, e.std_error, h > 0 ? std::abs(e.point) / (h * (std::pow(x, m.p) + 1.0)) : 0.0});
    }
  }
  rep.d_fit = detail::fit_d(rep.cells, m.p, [](const ProbeCell&) { return true; });
  for (double h : h_list) {
    if (h == 0.0) continue;
    rep.d_by_h.push_back(detail::fit_d(rep.cells, m.p, [h](const ProbeCell& c) { return c.h == h; }));
  }
  for (double x : x_grid) rep.d_by_x.push_back(detail::fit_d(rep.cells, m.p, [x](const ProbeCell& c) { return c.x == x; }));
  rep.ratio_across_h = detail::spread(rep.d_by_h);
  rep.ratio_across_x = detail::spread(rep.d_by_x);
  rep.stable = rep.ratio_across_h <= 2.0 && rep.ratio_across_x <= 2.0;
  return rep;
}

// ---------------------------------------------------------------------------
// Drift verification for v0 = a1 x^{p+1}, v1 = a2 x^{r+2}, kappa(x) = x^{(1+r)/(1+p)}
// with p < r < alpha - 2.  Expectations are computed by quadrature:
//   drift_v0(x) = sup_theta (P(theta) v0 - v0)(x) / (x^p v 1)            pass: <= -1
//   drift_v1(x) = sup_theta (P(theta) v1 - v1 + kappa(sup(1 v omega) P(theta)(v0 + 1)))(x) / (x^{r+1} v 1)
//                                                                       pass: <= 0
// Replacing 1 v omega by its supremum only strengthens the v1 inequality.

struct DriftRow {
  double x;
  double drift_v0;
  double drift_v1;
  bool pass_v0;
  bool pass_v1;
};

struct DriftVerificationReport {
  double a1 = 0.0, a2 = 0.0, r = 0.0, c = 0.0;
  std::vector<DriftRow> rows;
  double minimal_c_v0 = INFINITY;  // smallest grid x beyond which every row passes
  double minimal_c_v1 = INFINITY;
  bool pass = false;               // every row with x >= c passes both
  bool tail_decreasing = false;    // drift_v0 nonincreasing over the last quarter of the grid

  bool passes_beyond(double cut) const {
    if (rows.empty()) return false;
    for (const auto& row : rows)
      if (row.x >= cut && !(row.pass_v0 && row.pass_v1)) return false;
    return true;
  }
};

// E^theta h([x + V - chi]^+), V ~ Pareto(alpha, theta).
template <class H>
double expect_next(const GG1Model& m, double theta, double x, H&& h, double tol = 1e-10) {
  boost::math::quadrature::tanh_sinh<double> ts;
  auto integrand = [&](double u, double uc) {
    const double one_minus_u = uc > 0.0 ? uc : 1.0 - u;
    const double v = pareto_quantile(m.alpha, theta, one_minus_u);
    const double y = x + v;
    return m.interarrival.expect_below(y, [&](double c) { return h(y - c, v); }, h(0.0, v));
  };
  return ts.integrate(integrand, 0.0, 1.0, tol);
}

struct DriftConstants {
  double a1;
  double a2;
};

// a1 (p + 1) sup_theta (E^theta V - E chi) = -2, and a2 from the leading terms of
// the v1 inequality with a factor 2 to spare.
inline DriftConstants gg1_drift_recipe(const GG1Model& m, double r) {
  const double mu = m.mean_service(m.theta0 - m.eps) - m.interarrival.mean();
  if (!(mu < 0.0)) throw ModelError("drift needs E V < E chi across the whole band");
  const double a1 = 2.0 / ((m.p + 1.0) * -mu);
  const double kappa_lead = std::pow(a1 * pareto_score_envelope_sup(m), (1.0 + r) / (1.0 + m.p));
  return {a1, 2.0 * kappa_lead / ((r + 2.0) * -mu)};
}

inline DriftVerificationReport gg1_drift_verification(const GG1Model& m, double a1, double a2, double r, double c,
                                                      const std::vector<double>& x_grid, int theta_points = 5) {
  m.validate();
  if (!(r > m.p) || !(r < m.alpha - 2.0)) {
    throw ModelError("drift exponent r must satisfy p < r < alpha - 2");
  }
  DriftVerificationReport rep;
  rep.a1 = a1;
  rep.a2 = a2;
  rep.r = r;
  rep.c = c;
  const double pk = m.p, kexp = (1.0 + r) / (1.0 + m.p);
  const double omega_sup = pareto_score_envelope_sup(m);
  std::vector<double> thetas;
  for (int i = 0; i < theta_points; ++i) {
    thetas.push_back(theta_points == 1 ? m.theta0 : m.theta0 - m.eps + 2.0 * m.eps * i / (theta_points - 1));
  }
  for (double x : x_grid) {
    double d0 = -INFINITY, d1 = -INFINITY;
    const double v0x = a1 * std::pow(x, pk + 1.0), v1x = a2 * std::pow(x, r + 2.0);
    for (double t : thetas) {
      const double pv0 = expect_next(m, t, x, [&](double w, double) { return a1 * std::pow(w, pk + 1.0); });
      const double pv1 = expect_next(m, t, x, [&](double w, double) { return a2 * std::pow(w, r + 2.0); });
      const double arg = omega_sup * expect_next(m, t, x, [&](double w, double) { return a1 * std::pow(w, pk + 1.0) + 1.0; });
      d0 = std::max(d0, (pv0 - v0x) / std::max(std::pow(x, pk), 1.0));
      d1 = std::max(d1, (pv1 - v1x + std::pow(arg, kexp)) / std::max(std::pow(x, r + 1.0), 1.0));
    }
    rep.rows.push_back({x, d0, d1, d0 <= -1.0, d1 <= 0.0});
  }
  for (std::size_t i = rep.rows.size(); i-- > 0;) {
    if (!rep.rows[i].pass_v0) break;
    rep.minimal_c_v0 = rep.rows[i].x;
  }
  for (std::size_t i = rep.rows.size(); i-- > 0;) {
    if (!rep.rows[i].pass_v1) break;
    rep.minimal_c_v1 = rep.rows[i].x;
  }
  rep.pass = rep.passes_beyond(c);
  const std::size_t start = rep.rows.size() * 3 / 4;
  rep.tail_decreasing = rep.rows.size() >= 4;
  for (std::size_t i = start + 1; i < rep.rows.size(); ++i)
    if (rep.rows[i].drift_v0 > rep.rows[i - 1].drift_v0 + 1e-9) rep.tail_decreasing = false;
  return rep;
}

// ---------------------------------------------------------------------------
// Finite-state discretization: W_1 rounded to the grid {0, delta, ..., (N-1) delta},
// the top state collecting the tail.  k(theta, x, y) = P(theta, x, y) / P(theta0, x, y).

namespace detail {

struct ParetoLindleyTables {
  Matrix p;
  Matrix dp;
};

// P^theta(x + V - chi <= w) and its theta-derivative.
inline std::pair<double, double> lindley_cdf(const GG1Model& m, double theta, double t /* w - x */) {
  const double a = m.alpha;
  auto fv = [&](double u) { return u <= 0.0 ? 0.0 : 1.0 - std::pow(1.0 + theta * u, -a); };
  auto dfv = [&](double u) { return u <= 0.0 ? 0.0 : a * u * std::pow(1.0 + theta * u, -a - 1.0); };
  const auto& ia = m.interarrival;
  switch (ia.kind) {
    case Interarrival::Kind::exponential: {
      const double lam = ia.rate;
      const double c0 = std::max(0.0, -t);
      boost::math::quadrature::exp_sinh<double> es;
      const double scale = std::exp(-lam * c0);
      const double tail = es.integrate([&](double s) { return lam * std::exp(-lam * s) * std::pow(1.0 + theta * (t + c0 + s), -a); },
                                       1e-14);
      const double dtail = es.integrate([&](double s) { return lam * std::exp(-lam * s) * dfv(t + c0 + s); }, 1e-14);
      return {scale * (1.0 - tail), scale * dtail};
    }
    case Interarrival::Kind::deterministic: return {fv(t + ia.value), dfv(t + ia.value)};
    default: {
      double f = 0.0, d = 0.0;
      for (std::size_t i = 0; i < ia.values.size(); ++i) {
        f += ia.probs[i] * fv(t + ia.values[i]);
        d += ia.probs[i] * dfv(t + ia.values[i]);
      }
      return {f, d};
    }
  }
}

inline ParetoLindleyTables pareto_lindley_tables(const GG1Model& m, double theta, double delta, std::size_t n) {
  const auto N = static_cast<Eigen::Index>(n);
  ParetoLindleyTables t{Matrix::Zero(N, N), Matrix::Zero(N, N)};
  for (Eigen::Index x = 0; x < N; ++x) {
    double prev_f = 0.0, prev_d = 0.0;
    for (Eigen::Index y = 0; y + 1 < N; ++y) {
      const double edge = (static_cast<double>(y) + 0.5) * delta;
      const auto [f, d] = lindley_cdf(m, theta, edge - static_cast<double>(x) * delta);
      t.p(x, y) = f - prev_f;
      t.dp(x, y) = d - prev_d;
      prev_f = f;
      prev_d = d;
    }
    t.p(x, N - 1) = 1.0 - prev_f;
    t.dp(x, N - 1) = -prev_d;
  }
  return t;
}

}  // namespace detail

inline ParamKernelFamily pareto_lindley_family(const GG1Model& m, double delta, std::size_t n_states) {
  m.validate();
  if (!(delta > 0.0) || n_states < 2) throw ModelError("discretization needs delta > 0 and at least two states");
  struct Cache {
    std::mutex mu;
    std::map<double, std::shared_ptr<const detail::ParetoLindleyTables>> tables;
  };
  auto cache = std::make_shared<Cache>();
  auto lookup = [m, delta, n_states, cache](double theta) {
    {
      std::lock_guard<std::mutex> lock(cache->mu);
      auto it = cache->tables.find(theta);
      if (it != cache->tables.end()) return it->second;
    }
    auto t = std::make_shared<const detail::ParetoLindleyTables>(detail::pareto_lindley_tables(m, theta, delta, n_states));
    std::lock_guard<std::mutex> lock(cache->mu);
    return cache->tables.emplace(theta, t).first->second;
  };
  const auto base = lookup(m.theta0);
  for (Eigen::Index x = 0; x < base->p.rows(); ++x)
    for (Eigen::Index y = 0; y < base->p.cols(); ++y)
      if (!(base->p(x, y) > 0.0)) {
        throw ModelError("discretized transition (" + std::to_string(x) + ", " + std::to_string(y) +
                         ") has no mass at theta0; refine delta or shrink the grid");
      }
  DensityModel dm;
  dm.density = [lookup, base](double theta, std::size_t x, std::size_t y) {
    const auto xi = static_cast<Eigen::Index>(x), yi = static_cast<Eigen::Index>(y);
    return lookup(theta)->p(xi, yi) / base->p(xi, yi);
  };
  dm.derivative = [lookup, base](int, double theta, std::size_t x, std::size_t y) {
    const auto xi = static_cast<Eigen::Index>(x), yi = static_cast<Eigen::Index>(y);
    return lookup(theta)->dp(xi, yi) / base->p(xi, yi);
  };
  dm.max_order = 1;
  return ParamKernelFamily(FiniteKernel::nonnegative(base->p), m.theta0, m.eps, {0.0, INFINITY}, dm);
}

// Kolmogorov-Smirnov distance between samples and the Pareto CDF at theta0.
inline double pareto_ks_distance(const GG1Model& m, std::vector<double> samples) {
  std::sort(samples.begin(), samples.end());
  const double n = static_cast<double>(samples.size());
  double d = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double cdf = 1.0 - pareto_tail(m.alpha, m.theta0, samples[i]);
    d = std::max({d, cdf - static_cast<double>(i) / n, static_cast<double>(i + 1) / n - cdf});
  }
  return d;
}

}  // namespace mcsens

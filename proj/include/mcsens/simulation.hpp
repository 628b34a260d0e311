#pragma once

// Stochastic recursions X_{n+1} = r(X_n, Z_{n+1}) whose noise law depends on
// theta through a density ratio p(theta, x, z) against the theta0 law, and
// likelihood-ratio estimators built on them.
//
// The noise may depend on the current state; this covers both the G/G/1
// recursion (noise independent of x) and finite chains embedded with
// z = next state and p = k(theta, x, z).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "mcsens/errors.hpp"
#include "mcsens/kernel_algebra.hpp"
#include "mcsens/param_family.hpp"
#include "mcsens/random_horizon.hpp"
#include "mcsens/rng.hpp"

namespace mcsens {

inline constexpr std::size_t kDefaultPathCap = 10'000'000;

template <class State, class Noise>
struct StochasticRecursion {
  double theta0 = 0.0;
  double eps = 0.0;
  std::function<State(const State&, const Noise&)> update;
  std::function<Noise(const State&, RngStream&)> sampler;                  // draws under theta0
  std::function<double(double, const State&, const Noise&)> density_ratio;  // p(theta, x, z)
  std::function<double(double, const State&, const Noise&)> score;          // p'(theta, x, z)
  std::function<double(const State&, const Noise&)> score_envelope;         // sup over the band of |p'|
};

template <class State, class Noise>
struct Path {
  std::vector<State> states;  // X_0, ..., X_n
  std::vector<Noise> noises;  // Z_1, ..., Z_n
};

template <class State, class Noise>
class PathTruncated : public TruncationError {
 public:
  PathTruncated(Path<State, Noise> partial, std::size_t cap)
      : TruncationError("path reached the step cap of " + std::to_string(cap), cap), partial_(std::move(partial)) {}
  const Path<State, Noise>& partial() const noexcept { return partial_; }

 private:
  Path<State, Noise> partial_;
};

// stop(n, X_n) is checked before every transition.
template <class State, class Noise>
Path<State, Noise> simulate_path(const StochasticRecursion<State, Noise>& rec, const State& x0,
                                 const std::function<bool(std::size_t, const State&)>& stop, RngStream& rng,
                                 std::size_t cap = kDefaultPathCap) {
  Path<State, Noise> path;
  path.states.push_back(x0);
  while (!stop(path.noises.size(), path.states.back())) {
    if (path.noises.size() >= cap) throw PathTruncated<State, Noise>(std::move(path), cap);
    Noise z = rec.sampler(path.states.back(), rng);
    path.states.push_back(rec.update(path.states.back(), z));
    path.noises.push_back(std::move(z));
  }
  return path;
}

template <class State>
std::function<bool(std::size_t, const State&)> horizon(std::size_t n) {
  return [n](std::size_t step, const State&) { return step >= n; };
}

// ---------------------------------------------------------------------------
// Estimates and deterministic aggregation

struct DerivativeEstimate {
  double point = 0.0;
  double std_error = 0.0;
  std::uint64_t n_samples = 0;
  std::string method;
  double bias_diagnostic = 0.0;  // estimator-specific, see each estimator
  std::vector<double> samples;   // kept only on request
};

// Pairwise summation over a fixed tree: the result depends only on the input order.
inline double pairwise_sum(const double* x, std::size_t n) {
  if (n <= 8) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += x[i];
    return s;
  }
  const std::size_t h = n / 2;
  return pairwise_sum(x, h) + pairwise_sum(x + h, n - h);
}

inline double pairwise_sum(const std::vector<double>& x) { return pairwise_sum(x.data(), x.size()); }

inline DerivativeEstimate summarize(std::vector<double> samples, std::string method, bool keep = false) {
  DerivativeEstimate e;
  e.method = std::move(method);
  e.n_samples = samples.size();
  if (samples.empty()) throw ModelError("estimate needs at least one sample");
  const double n = static_cast<double>(samples.size());
  e.point = pairwise_sum(samples) / n;
  if (samples.size() > 1) {
    std::vector<double> sq(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) sq[i] = (samples[i] - e.point) * (samples[i] - e.point);
    e.std_error = std::sqrt(pairwise_sum(sq) / (n - 1.0) / n);
  }
  if (keep) e.samples = std::move(samples);
  return e;
}

struct McOptions {
  std::uint64_t seed = 1;
  unsigned workers = 0;  // 0: hardware concurrency
  std::size_t path_cap = kDefaultPathCap;
  bool keep_samples = false;
};

inline unsigned resolve_workers(unsigned requested) {
  if (requested > 0) return requested;
  const unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : hc;
}

// out[i] = fn(i) for i < n.  Each index is evaluated exactly once by some
// worker; the first failure by index is rethrown.
template <class Fn>
std::vector<double> parallel_samples(std::size_t n, unsigned workers, Fn&& fn) {
  std::vector<double> out(n);
  workers = std::max(1u, std::min<unsigned>(resolve_workers(workers), static_cast<unsigned>(std::max<std::size_t>(n, 1))));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) out[i] = fn(i);
    return out;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::size_t> error_index(workers, std::numeric_limits<std::size_t>::max());
  std::vector<std::thread> pool;
  const std::size_t chunk = (n + workers - 1) / workers;
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      const std::size_t lo = w * chunk, hi = std::min(n, lo + chunk);
      for (std::size_t i = lo; i < hi; ++i) {
        try {
          out[i] = fn(i);
        } catch (...) {
          errors[w] = std::current_exception();
          error_index[w] = i;
          return;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  std::size_t best = std::numeric_limits<std::size_t>::max();
  std::exception_ptr first;
  for (unsigned w = 0; w < workers; ++w)
    if (errors[w] && error_index[w] < best) {
      best = error_index[w];
      first = errors[w];
    }
  if (first) std::rethrow_exception(first);
  return out;
}

// Stream phases
inline constexpr std::uint64_t kPhaseUStar = 1;
inline constexpr std::uint64_t kPhaseUStarDerivative = 2;
inline constexpr std::uint64_t kPhaseRegenerativeMean = 3;
inline constexpr std::uint64_t kPhaseGamma = 4;
inline constexpr std::uint64_t kPhaseStationaryOuter = 5;
inline constexpr std::uint64_t kPhaseLyapunov = 6;

// ---------------------------------------------------------------------------
// Random-horizon payoffs

template <class State>
struct Payoff {
  std::function<double(const State&)> reward;    // f on S
  std::function<double(const State&)> discount;  // g on S; empty means 0
  std::function<bool(const State&)> interior;    // membership in C
};

namespace detail {

// One path of the random-horizon functional.  Returns the discounted payoff
// and, when `score_sum_out` is set, the pathwise LR derivative
//   sum_{m=1}^{T} p'(theta0, X_{m-1}, Z_m) * (payoff accrued from step m on).
template <class State, class Noise>
double random_horizon_path(const StochasticRecursion<State, Noise>& rec, const Payoff<State>& pay, State x,
                           RngStream& rng, std::size_t cap, double* derivative_out) {
  double discount = 1.0;
  double accrued = 0.0;
  double score_sum = 0.0;
  double score_weighted = 0.0;  // sum_m s_m * (payoff at X_0 .. X_{m-1})
  std::size_t steps = 0;
  while (pay.interior(x)) {
    accrued += discount * pay.reward(x);
    if (pay.discount) discount *= std::exp(pay.discount(x));
    if (steps >= cap) throw TruncationError("random-horizon path reached the step cap of " + std::to_string(cap), cap);
    Noise z = rec.sampler(x, rng);
    if (derivative_out) {
      const double s = rec.score(rec.theta0, x, z);
      score_sum += s;
      score_weighted += s * accrued;
    }
    x = rec.update(x, z);
    ++steps;
  }
  accrued += discount * pay.reward(x);
  if (derivative_out) *derivative_out = accrued * score_sum - score_weighted;
  return accrued;
}

}  // namespace detail

template <class State, class Noise>
DerivativeEstimate estimate_u_star(const StochasticRecursion<State, Noise>& rec, const Payoff<State>& pay,
                                   const State& x0, std::size_t n_paths, const McOptions& opt = {}) {
  auto samples = parallel_samples(n_paths, opt.workers, [&](std::size_t i) {
    RngStream rng(opt.seed, stream_id(kPhaseUStar, i));
    return detail::random_horizon_path(rec, pay, x0, rng, opt.path_cap, nullptr);
  });
  return summarize(std::move(samples), "lr-u-star", opt.keep_samples);
}

template <class State, class Noise>
DerivativeEstimate estimate_u_star_derivative(const StochasticRecursion<State, Noise>& rec, const Payoff<State>& pay,
                                              const State& x0, std::size_t n_paths, const McOptions& opt = {}) {
  if (!rec.score) throw ModelError("derivative estimation needs a score");
  auto samples = parallel_samples(n_paths, opt.workers, [&](std::size_t i) {
    RngStream rng(opt.seed, stream_id(kPhaseUStarDerivative, i));
    double d = 0.0;
    detail::random_horizon_path(rec, pay, x0, rng, opt.path_cap, &d);
    return d;
  });
  return summarize(std::move(samples), "lr-score-reward-to-go", opt.keep_samples);
}

// ---------------------------------------------------------------------------
// Regenerative estimation

template <class State>
using Predicate = std::function<bool(const State&)>;

struct RegenerativeMean {
  DerivativeEstimate estimate;  // pi f by ratio of cycle sums to cycle lengths
  double mean_cycle_length = 0.0;
};

namespace detail {

// Cycle from x until the first n >= 1 with X_n in the regeneration set.
// Returns sum_{j<tau} f(X_j) and writes tau.
template <class State, class Noise>
double regenerative_cycle(const StochasticRecursion<State, Noise>& rec, const std::function<double(const State&)>& f,
                          const Predicate<State>& regen, State x, RngStream& rng, std::size_t cap,
                          std::size_t& tau) {
  double sum = 0.0;
  tau = 0;
  do {
    if (tau >= cap) throw TruncationError("regeneration cycle reached the step cap of " + std::to_string(cap), cap);
    sum += f(x);
    Noise z = rec.sampler(x, rng);
    x = rec.update(x, z);
    ++tau;
  } while (!regen(x));
  return sum;
}

}  // namespace detail

// pi f = E[cycle sum] / E[tau] over n_cycles cycles from the regeneration state.
template <class State, class Noise>
RegenerativeMean estimate_regenerative_mean(const StochasticRecursion<State, Noise>& rec,
                                            const std::function<double(const State&)>& f,
                                            const Predicate<State>& regen, const State& regen_state,
                                            std::size_t n_cycles, const McOptions& opt = {}) {
  if (n_cycles < 2) throw ModelError("regenerative mean needs at least two cycles");
  std::vector<double> taus(n_cycles);
  auto sums = parallel_samples(n_cycles, opt.workers, [&](std::size_t i) {
    RngStream rng(opt.seed, stream_id(kPhaseRegenerativeMean, i));
    std::size_t tau = 0;
    const double s = detail::regenerative_cycle(rec, f, regen, regen_state, rng, opt.path_cap, tau);
    taus[i] = static_cast<double>(tau);
    return s;
  });
  const double n = static_cast<double>(n_cycles);
  const double mean_tau = pairwise_sum(taus) / n;
  const double ratio = pairwise_sum(sums) / n / mean_tau;
  std::vector<double> resid(n_cycles);
  for (std::size_t i = 0; i < n_cycles; ++i) {
    const double d = sums[i] - ratio * taus[i];
    resid[i] = d * d;
  }
  RegenerativeMean out;
  out.mean_cycle_length = mean_tau;
  out.estimate.point = ratio;
  out.estimate.std_error = std::sqrt(pairwise_sum(resid) / (n - 1.0) / n) / mean_tau;
  out.estimate.n_samples = n_cycles;
  out.estimate.method = "regenerative-ratio";
  return out;
}

// Gamma f(x) = E_x sum_{j<tau} (f(X_j) - pi f), averaged over n_cycles cycles
// from x.  bias_diagnostic = SE(pi f estimate) * mean tau, the first-order
// effect of plugging in the estimated pi f.
template <class State, class Noise>
DerivativeEstimate estimate_gamma_regenerative(const StochasticRecursion<State, Noise>& rec,
                                               const std::function<double(const State&)>& f,
                                               const Predicate<State>& regen, const DerivativeEstimate& pi_f,
                                               const State& x, std::size_t n_cycles, const McOptions& opt = {}) {
  std::vector<double> taus(n_cycles);
  auto samples = parallel_samples(n_cycles, opt.workers, [&](std::size_t i) {
    RngStream rng(opt.seed, stream_id(kPhaseGamma, i));
    std::size_t tau = 0;
    const double s = detail::regenerative_cycle(rec, f, regen, x, rng, opt.path_cap, tau);
    taus[i] = static_cast<double>(tau);
    return s - pi_f.point * static_cast<double>(tau);
  });
  auto e = summarize(std::move(samples), "regenerative-poisson", opt.keep_samples);
  e.bias_diagnostic = pi_f.std_error * pairwise_sum(taus) / static_cast<double>(n_cycles);
  return e;
}

struct StationaryDerivativeOptions {
  std::size_t n_outer = 10000;
  std::size_t n_cycles = 1;     // inner cycles per outer sample
  std::size_t warmup = 100;     // steps from the regeneration state before the scored step
  std::size_t pi_cycles = 100000;
};

struct StationaryDerivativeReport {
  DerivativeEstimate estimate;  // bias_diagnostic = SE(pi f) * |mean(s * tau)|
  RegenerativeMean pi_f;
};

// alpha'(theta0) = E_pi p'(theta0, X_0, Z_1) Gamma f(X_1), estimated in two phases:
//   1. pi f by the regenerative ratio;
//   2. each outer sample runs `warmup` steps from the regeneration state, takes
//      one scored step to Y, and estimates Gamma f(Y) from fresh cycles.
template <class State, class Noise>
StationaryDerivativeReport estimate_stationary_derivative(const StochasticRecursion<State, Noise>& rec,
                                                          const std::function<double(const State&)>& f,
                                                          const Predicate<State>& regen, const State& regen_state,
                                                          const StationaryDerivativeOptions& so,
                                                          const McOptions& opt = {}) {
  if (!rec.score) throw ModelError("derivative estimation needs a score");
  if (so.n_outer < 2 || so.n_cycles < 1) throw ModelError("need n_outer >= 2 and n_cycles >= 1");
  StationaryDerivativeReport out;
  out.pi_f = estimate_regenerative_mean(rec, f, regen, regen_state, so.pi_cycles, opt);
  const double pif = out.pi_f.estimate.point;
  std::vector<double> score_tau(so.n_outer);
  auto samples = parallel_samples(so.n_outer, opt.workers, [&](std::size_t i) {
    RngStream rng(opt.seed, stream_id(kPhaseStationaryOuter, i));
    State x = regen_state;
    for (std::size_t k = 0; k < so.warmup; ++k) x = rec.update(x, rec.sampler(x, rng));
    const Noise z = rec.sampler(x, rng);
    const double s = rec.score(rec.theta0, x, z);
    const State y = rec.update(x, z);
    double sum = 0.0, taus = 0.0;
    for (std::size_t c = 0; c < so.n_cycles; ++c) {
      std::size_t tau = 0;
      sum += detail::regenerative_cycle(rec, f, regen, y, rng, opt.path_cap, tau);
      taus += static_cast<double>(tau);
    }
    const double inv = 1.0 / static_cast<double>(so.n_cycles);
    score_tau[i] = s * taus * inv;
    return s * (sum - pif * taus) * inv;
  });
  out.estimate = summarize(std::move(samples), "nested-regenerative-lr", opt.keep_samples);
  out.estimate.bias_diagnostic =
      out.pi_f.estimate.std_error * std::abs(pairwise_sum(score_tau) / static_cast<double>(so.n_outer));
  return out;
}

// ---------------------------------------------------------------------------
// Monte Carlo check of the recursion drift conditions at probe states:
//   [v0]  exp(g(x)) E v0(Y) I(Y in C) p(theta, Z) <= v0(x) - |f~(theta, x)|
//   [v1]  exp(g(x)) E v1(Y) I_C <= v1(x) - exp(g(x)) E v0(Y) env(Z) I_C - exp(g(x)) E |f(Y)| env(Z) I_{C^c}
// with Y = r(x, Z), Z drawn under theta0.  The same draws serve every theta.

enum class ProbeVerdict { pass, fail, inconclusive };

inline const char* to_string(ProbeVerdict v) {
  switch (v) {
    case ProbeVerdict::pass: return "pass";
    case ProbeVerdict::fail: return "fail";
    default: return "inconclusive";
  }
}

struct ProbeCheck {
  std::string label;  // "recursion-v0" or "recursion-v1"
  std::size_t probe = 0;
  double theta = 0.0;
  double slack = 0.0;
  double std_error = 0.0;
  ProbeVerdict verdict = ProbeVerdict::inconclusive;
};

struct RecursionLyapunovReport {
  std::vector<ProbeCheck> checks;
  bool all_pass() const {
    return std::all_of(checks.begin(), checks.end(), [](const auto& c) { return c.verdict == ProbeVerdict::pass; });
  }
  bool any_fail() const {
    return std::any_of(checks.begin(), checks.end(), [](const auto& c) { return c.verdict == ProbeVerdict::fail; });
  }
};

namespace detail {

inline ProbeVerdict verdict(double slack, double se) {
  if (slack > 3.0 * se) return ProbeVerdict::pass;
  if (slack < -3.0 * se) return ProbeVerdict::fail;
  return ProbeVerdict::inconclusive;
}

inline double mean_of(const std::vector<double>& v) { return pairwise_sum(v) / static_cast<double>(v.size()); }

inline double se_of(const std::vector<double>& v) {
  const double m = mean_of(v);
  std::vector<double> sq(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) sq[i] = (v[i] - m) * (v[i] - m);
  const double n = static_cast<double>(v.size());
  return n > 1 ? std::sqrt(pairwise_sum(sq) / (n - 1.0) / n) : 0.0;
}

}  // namespace detail

template <class State, class Noise>
RecursionLyapunovReport check_recursion_lyapunov(const StochasticRecursion<State, Noise>& rec,
                                                 const std::function<double(const State&)>& v0,
                                                 const std::function<double(const State&)>& v1,
                                                 const Payoff<State>& pay, const std::vector<double>& theta_grid,
                                                 std::size_t n_mc, const std::vector<State>& probes,
                                                 const McOptions& opt = {}) {
  if (!rec.score_envelope) throw ModelError("recursion drift check needs a score envelope");
  if (n_mc < 2) throw ModelError("need at least two draws per probe");
  RecursionLyapunovReport rep;
  for (std::size_t k = 0; k < probes.size(); ++k) {
    const State& x = probes[k];
    if (!pay.interior(x)) throw ModelError("probe state lies outside C");
    const double eg = pay.discount ? std::exp(pay.discount(x)) : 1.0;
    RngStream rng(opt.seed, stream_id(kPhaseLyapunov, k));
    std::vector<Noise> zs;
    std::vector<State> ys;
    zs.reserve(n_mc);
    ys.reserve(n_mc);
    for (std::size_t i = 0; i < n_mc; ++i) {
      zs.push_back(rec.sampler(x, rng));
      ys.push_back(rec.update(x, zs.back()));
    }
    for (double theta : theta_grid) {
      std::vector<double> ft(n_mc), lhs(n_mc);
      for (std::size_t i = 0; i < n_mc; ++i) {
        const double p = rec.density_ratio(theta, x, zs[i]);
        const bool in_c = pay.interior(ys[i]);
        ft[i] = in_c ? 0.0 : eg * pay.reward(ys[i]) * p;
        lhs[i] = in_c ? eg * v0(ys[i]) * p : 0.0;
      }
      const double ftilde = pay.reward(x) + detail::mean_of(ft);
      const double sign = ftilde >= 0 ? 1.0 : -1.0;
      std::vector<double> comb(n_mc);
      for (std::size_t i = 0; i < n_mc; ++i) comb[i] = lhs[i] + sign * ft[i];
      ProbeCheck c{"recursion-v0", k, theta, v0(x) - std::abs(ftilde) - detail::mean_of(lhs), detail::se_of(comb)};
      c.verdict = detail::verdict(c.slack, c.std_error);
      rep.checks.push_back(c);
    }
    std::vector<double> terms(n_mc);
    for (std::size_t i = 0; i < n_mc; ++i) {
      const double env = rec.score_envelope(x, zs[i]);
      terms[i] = pay.interior(ys[i]) ? eg * (v1(ys[i]) + v0(ys[i]) * env) : eg * std::abs(pay.reward(ys[i])) * env;
    }
    ProbeCheck d{"recursion-v1", k, rec.theta0, v1(x) - detail::mean_of(terms), detail::se_of(terms)};
    d.verdict = detail::verdict(d.slack, d.std_error);
    rep.checks.push_back(d);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Finite chains as recursions: Z = next state, p(theta, x, z) = k(theta, x, z).

inline StochasticRecursion<std::size_t, std::size_t> embed_chain(const ParamKernelFamily& family,
                                                                 int envelope_points = kDefaultEnvelopeGrid) {
  auto fam = std::make_shared<ParamKernelFamily>(family);
  const Matrix& base = fam->base().entries();
  auto cdf = std::make_shared<Matrix>(base.rows(), base.cols());
  for (Eigen::Index x = 0; x < base.rows(); ++x) {
    double acc = 0.0;
    for (Eigen::Index y = 0; y < base.cols(); ++y) {
      acc += base(x, y);
      (*cdf)(x, y) = acc;
    }
  }
  auto env = std::make_shared<Matrix>(envelope(*fam, envelope_points, 1).values);
  StochasticRecursion<std::size_t, std::size_t> rec;
  rec.theta0 = fam->theta0();
  rec.eps = fam->eps();
  rec.update = [](const std::size_t&, const std::size_t& z) { return z; };
  rec.sampler = [cdf](const std::size_t& x, RngStream& rng) {
    const auto xi = static_cast<Eigen::Index>(x);
    // rows of a substochastic base are treated as normalized by their mass
    const double u = rng.uniform() * (*cdf)(xi, cdf->cols() - 1);
    Eigen::Index y = 0;
    while (y + 1 < cdf->cols() && (*cdf)(xi, y) <= u) ++y;
    while (y > 0 && (*cdf)(xi, y) == (*cdf)(xi, y - 1)) --y;  // skip zero-mass targets
    return static_cast<std::size_t>(y);
  };
  rec.density_ratio = [fam](double theta, const std::size_t& x, const std::size_t& z) {
    return fam->derivative(0, theta, x, z);
  };
  rec.score = [fam](double theta, const std::size_t& x, const std::size_t& z) {
    return fam->derivative(1, theta, x, z);
  };
  rec.score_envelope = [env](const std::size_t& x, const std::size_t& z) {
    return (*env)(static_cast<Eigen::Index>(x), static_cast<Eigen::Index>(z));
  };
  return rec;
}

inline Payoff<std::size_t> payoff_of(const TargetProblem& problem) {
  auto f = std::make_shared<Vector>(problem.reward().values());
  auto g = std::make_shared<Vector>(problem.discount_exponent().values());
  auto in_c = std::make_shared<std::vector<char>>(problem.chain().size(), 0);
  for (auto x : problem.interior()) (*in_c)[x] = 1;
  Payoff<std::size_t> p;
  p.reward = [f](const std::size_t& x) { return (*f)(static_cast<Eigen::Index>(x)); };
  p.discount = [g](const std::size_t& x) { return (*g)(static_cast<Eigen::Index>(x)); };
  p.interior = [in_c](const std::size_t& x) { return (*in_c)[x] != 0; };
  return p;
}

inline std::function<double(const std::size_t&)> function_of(const FiniteFunction& f) {
  auto v = std::make_shared<Vector>(f.values());
  return [v](const std::size_t& x) { return (*v)(static_cast<Eigen::Index>(x)); };
}

}  // namespace mcsens

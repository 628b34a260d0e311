#pragma once

// Stationary distributions, Poisson's equation and stationary derivatives on
// finite chains, plus the drift/minorization checkers.
//
// Everything goes through the fundamental matrix Z = (I - P + Pi)^{-1} with
// Pi(x, .) = pi:  Gamma f = Z (f - pi f) solves (I - P) g = f - pi f with pi g = 0,
// and pi' = pi P' Z.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mcsens/kernel_algebra.hpp"
#include "mcsens/param_family.hpp"
#include "mcsens/random_horizon.hpp"

namespace mcsens {

inline constexpr double kStationaryResidualTol = 1e-12;
inline constexpr double kPoissonResidualTol = 1e-10;

namespace detail {

// Strongly connected components of the support graph of p (Kosaraju, iterative).
inline std::vector<int> strongly_connected_components(const Matrix& p, int& count) {
  const auto n = static_cast<int>(p.rows());
  std::vector<std::vector<int>> out(static_cast<std::size_t>(n)), in(static_cast<std::size_t>(n));
  for (int x = 0; x < n; ++x)
    for (int y = 0; y < n; ++y)
      if (p(x, y) > 0.0) {
        out[static_cast<std::size_t>(x)].push_back(y);
        in[static_cast<std::size_t>(y)].push_back(x);
      }
  std::vector<int> order;
  std::vector<char> seen(static_cast<std::size_t>(n), 0);
  for (int s = 0; s < n; ++s) {
    if (seen[static_cast<std::size_t>(s)]) continue;
    std::vector<std::pair<int, std::size_t>> stack{{s, 0}};
    seen[static_cast<std::size_t>(s)] = 1;
    while (!stack.empty()) {
      auto& [v, i] = stack.back();
      const auto& nb = out[static_cast<std::size_t>(v)];
      if (i < nb.size()) {
        const int w = nb[i++];
        if (!seen[static_cast<std::size_t>(w)]) {
          seen[static_cast<std::size_t>(w)] = 1;
          stack.emplace_back(w, 0);
        }
      } else {
        order.push_back(v);
        stack.pop_back();
      }
    }
  }
  std::vector<int> comp(static_cast<std::size_t>(n), -1);
  count = 0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if (comp[static_cast<std::size_t>(*it)] >= 0) continue;
    std::vector<int> stack{*it};
    comp[static_cast<std::size_t>(*it)] = count;
    while (!stack.empty()) {
      const int v = stack.back();
      stack.pop_back();
      for (int w : in[static_cast<std::size_t>(v)]) {
        if (comp[static_cast<std::size_t>(w)] < 0) {
          comp[static_cast<std::size_t>(w)] = count;
          stack.push_back(w);
        }
      }
    }
    ++count;
  }
  return comp;
}

}  // namespace detail

// Closed communicating classes (recurrent classes of a finite chain), each sorted.
inline std::vector<std::vector<std::size_t>> recurrent_classes(const FiniteKernel& p) {
  int count = 0;
  const auto comp = detail::strongly_connected_components(p.entries(), count);
  std::vector<char> leaks(static_cast<std::size_t>(count), 0);
  const auto n = static_cast<Eigen::Index>(p.size());
  for (Eigen::Index x = 0; x < n; ++x)
    for (Eigen::Index y = 0; y < n; ++y)
      if (p.entries()(x, y) > 0.0 && comp[static_cast<std::size_t>(x)] != comp[static_cast<std::size_t>(y)]) {
        leaks[static_cast<std::size_t>(comp[static_cast<std::size_t>(x)])] = 1;
      }
  std::vector<std::vector<std::size_t>> classes(static_cast<std::size_t>(count));
  for (std::size_t x = 0; x < comp.size(); ++x) classes[static_cast<std::size_t>(comp[x])].push_back(x);
  std::vector<std::vector<std::size_t>> closed;
  for (int c = 0; c < count; ++c)
    if (!leaks[static_cast<std::size_t>(c)]) closed.push_back(classes[static_cast<std::size_t>(c)]);
  std::sort(closed.begin(), closed.end());
  return closed;
}

inline FiniteMeasure stationary_distribution(const FiniteKernel& p) {
  if (!p.is_stochastic()) throw ModelError("stationary distribution needs a stochastic kernel");
  const auto classes = recurrent_classes(p);
  if (classes.size() != 1) {
    std::ostringstream os;
    os << "chain has " << classes.size() << " recurrent classes:";
    for (const auto& c : classes) {
      os << " {";
      for (std::size_t i = 0; i < c.size(); ++i) os << (i ? "," : "") << c[i];
      os << "}";
    }
    throw ModelError(os.str());
  }
  const auto n = static_cast<Eigen::Index>(p.size());
  // pi (I - P) = 0 with the last balance equation replaced by sum pi = 1
  Matrix a = (Matrix::Identity(n, n) - p.entries()).transpose();
  a.row(n - 1).setOnes();
  Vector b = Vector::Zero(n);
  b(n - 1) = 1.0;
  Eigen::FullPivLU<Matrix> lu(a);
  if (!lu.isInvertible()) throw NumericalError("balance system is singular");
  Vector pi = lu.solve(b);
  for (int it = 0; it < 3; ++it) {
    Vector r = b - a * pi;
    if (r.cwiseAbs().maxCoeff() == 0.0) break;
    pi += lu.solve(r);
  }
  pi = pi.cwiseMax(0.0);
  pi /= pi.sum();
  const double residual = (p.entries().transpose() * pi - pi).cwiseAbs().maxCoeff();
  if (residual > kStationaryResidualTol) {
    throw NumericalError("stationary residual " + std::to_string(residual) + " exceeds tolerance");
  }
  return FiniteMeasure(std::move(pi));
}

// pi and the factorization of I - P + Pi, shared by Poisson solves and
// derivative recursions against the same chain.
class FundamentalSolver {
 public:
  explicit FundamentalSolver(const FiniteKernel& p) : p_(p.entries()), pi_(stationary_distribution(p)) {
    const auto n = p_.rows();
    Matrix a = Matrix::Identity(n, n) - p_ + Vector::Ones(n) * pi_.weights().transpose();
    lu_ = detail::factorize(a, "I - P + Pi");
    a_ = std::move(a);
  }

  const FiniteMeasure& pi() const noexcept { return pi_; }
  std::size_t size() const noexcept { return static_cast<std::size_t>(p_.rows()); }

  // Z h
  Vector solve(const Vector& h) const {
    Vector g = lu_.solve(h);
    g += lu_.solve(Vector(h - a_ * g));
    return g;
  }

  // eta Z
  Vector solve_left(const Vector& eta) const {
    Vector v = lu_.transpose().solve(eta);
    v += Vector(lu_.transpose().solve(Vector(eta - a_.transpose() * v)));
    return v;
  }

  // Gamma f: (I - P) g = f - pi f, pi g = 0.
  FiniteFunction poisson(const FiniteFunction& f) const {
    detail::require_same_size(f.size(), size(), "poisson_solve f");
    const Vector fc = f.values().array() - pair(pi_, f);
    Vector g = solve(fc);
    const double residual = (g - p_ * g - fc).cwiseAbs().maxCoeff();
    const double scale = std::max(1.0, fc.cwiseAbs().maxCoeff());
    if (!(residual <= kPoissonResidualTol * scale)) {
      throw NumericalError("Poisson residual " + std::to_string(residual) + " exceeds tolerance");
    }
    return FiniteFunction(std::move(g));
  }

 private:
  Matrix p_;
  FiniteMeasure pi_;
  Matrix a_;
  Eigen::PartialPivLU<Matrix> lu_;
};

inline FiniteFunction poisson_solve(const FiniteKernel& p, const FiniteMeasure& pi, const FiniteFunction& f) {
  detail::require_same_size(p.size(), pi.size(), "poisson_solve pi");
  detail::require_same_size(p.size(), f.size(), "poisson_solve f");
  const auto n = static_cast<Eigen::Index>(p.size());
  Matrix a = Matrix::Identity(n, n) - p.entries() + Vector::Ones(n) * pi.weights().transpose();
  Eigen::FullPivLU<Matrix> lu(a);
  if (!lu.isInvertible()) throw NumericalError("I - P + Pi is singular");
  const Vector fc = f.values().array() - pair(pi, f);
  Vector g = lu.solve(fc);
  g += lu.solve(Vector(fc - a * g));
  const double residual = (g - p.entries() * g - fc).cwiseAbs().maxCoeff();
  if (!(residual <= kPoissonResidualTol * std::max(1.0, fc.cwiseAbs().maxCoeff()))) {
    throw NumericalError("Poisson residual " + std::to_string(residual) + " exceeds tolerance");
  }
  return FiniteFunction(std::move(g));
}

namespace detail {

inline FiniteKernel stochastic_base(const ParamKernelFamily& family) {
  const FiniteKernel p = family.eval_kernel(family.theta0());
  if (!p.is_stochastic()) throw ModelError("stationary derivatives need a stochastic family");
  return p;
}

}  // namespace detail

// pi^{(0)}, ..., pi^{(n)} at theta0:  pi^{(n)} = sum_{j<n} C(n,j) pi^{(j)} P^{(n-j)} Z.
inline std::vector<FiniteMeasure> higher_stationary_derivatives(const ParamKernelFamily& family, int n) {
  if (n < 0) throw ModelError("derivative order must be nonnegative");
  if (n > family.max_order()) {
    throw ModelError("order " + std::to_string(n) + " requested but the family supplies scores up to order " +
                     std::to_string(family.max_order()));
  }
  const FundamentalSolver z(detail::stochastic_base(family));
  std::vector<Matrix> p_derivs;
  for (int l = 1; l <= n; ++l) p_derivs.push_back(family.score_kernel(l).entries());
  std::vector<FiniteMeasure> out{z.pi()};
  for (int l = 1; l <= n; ++l) {
    Vector rhs = Vector::Zero(static_cast<Eigen::Index>(family.size()));
    for (int j = 0; j < l; ++j) {
      rhs += binomial(l, j) *
             (p_derivs[static_cast<std::size_t>(l - j - 1)].transpose() * out[static_cast<std::size_t>(j)].weights());
    }
    out.emplace_back(z.solve_left(rhs));
  }
  return out;
}

inline FiniteMeasure stationary_measure_derivative(const ParamKernelFamily& family) {
  return higher_stationary_derivatives(family, 1)[1];
}

// alpha'(theta0) = sum_x pi(x) sum_y P'(theta0, x, y) (Gamma f)(y).
inline double stationary_functional_derivative(const ParamKernelFamily& family, const FiniteFunction& f) {
  detail::require_same_size(family.size(), f.size(), "stationary functional f");
  const FundamentalSolver z(detail::stochastic_base(family));
  const FiniteFunction g = z.poisson(f);
  const Vector pg = family.score_kernel(1).entries() * g.values();
  return z.pi().weights().dot(pg);
}

// ---------------------------------------------------------------------------
// Minorization and drift

struct MinorizationCertificate {
  int power = 1;
  double lambda = 0.0;
  FiniteMeasure phi;
};

// First n <= power_max with lambda_n = sum_y min_{x in A, theta} P^n(theta, x, y) > 0.
inline std::optional<MinorizationCertificate> check_minorization(const ParamKernelFamily& family,
                                                                 const std::vector<std::size_t>& small_set,
                                                                 int power_max, const std::vector<double>& theta_grid) {
  if (small_set.empty()) throw ModelError("small set must be nonempty");
  for (auto x : small_set)
    if (x >= family.size()) throw DimensionError("small-set state out of range");
  std::vector<double> grid = theta_grid.empty() ? std::vector<double>{family.theta0()} : theta_grid;
  std::vector<Matrix> base, power;
  for (double t : grid) {
    const FiniteKernel p = family.eval_kernel(t);
    if (!p.is_stochastic()) throw ModelError("minorization needs a stochastic family");
    base.push_back(p.entries());
    power.push_back(p.entries());
  }
  const auto n = static_cast<Eigen::Index>(family.size());
  for (int m = 1; m <= power_max; ++m) {
    if (m > 1)
      for (std::size_t i = 0; i < grid.size(); ++i) power[i] = power[i] * base[i];
    Vector mins = Vector::Constant(n, std::numeric_limits<double>::infinity());
    for (const auto& pm : power)
      for (auto x : small_set) mins = mins.cwiseMin(pm.row(static_cast<Eigen::Index>(x)).transpose());
    mins = mins.cwiseMax(0.0);
    const double lambda = mins.sum();
    if (lambda > 0.0) return MinorizationCertificate{m, std::min(lambda, 1.0), FiniteMeasure(mins / lambda)};
  }
  return std::nullopt;
}

struct GeometricDriftCertificate {
  WeightFunction w;
  double r = 0.5;
  double c = 0.0;
  std::vector<std::size_t> small_set;
};

struct DriftReport {
  Vector slack;
  bool pass = false;
};

// slack(x) = r w(x) + c I(x in A) - (P w)(x)
inline DriftReport check_geometric_drift(const FiniteKernel& p, const GeometricDriftCertificate& cert) {
  detail::require_same_size(p.size(), cert.w.size(), "geometric drift weight");
  if (!(cert.r > 0.0 && cert.r < 1.0)) throw ModelError("geometric drift rate r must lie in (0, 1)");
  if (cert.c < 0.0) throw ModelError("geometric drift constant c must be nonnegative");
  DriftReport out;
  out.slack = cert.r * cert.w.values() - p.entries() * cert.w.values();
  for (auto x : cert.small_set) {
    if (x >= p.size()) throw DimensionError("small-set state out of range");
    out.slack(static_cast<Eigen::Index>(x)) += cert.c;
  }
  out.pass = detail::slack_ok(out.slack, cert.w.values());
  return out;
}

struct StationaryCertificate {
  FiniteFunction q;
  FiniteFunction v0;
  FiniteFunction v1;
  std::function<double(double)> kappa;
  std::vector<std::size_t> small_set;
  double c0 = 0.0;
  double c1 = 0.0;
  double eps = 0.0;  // 0 means the family's eps
};

inline std::function<double(double)> power_kappa(double rho) {
  return [rho](double x) { return std::pow(x, rho); };
}

struct SubgeometricDriftReport {
  std::vector<double> thetas;
  std::vector<Vector> slack_v0;  // per theta: v0 - (q v 1) + c0 I_A - P v0
  std::vector<Vector> slack_v1;  // per theta: v1 - kappa(s) + c1 I_A - P v1
  bool drift_pass = false;       // over non-boundary states
  std::vector<std::size_t> boundary_states;
  Vector boundary_min_slack_v0;  // min over theta, per boundary state
  Vector boundary_min_slack_v1;
  bool boundary_pass = false;

  bool kappa_pass = false;       // kappa(x) >= x and kappa(x)/x nondecreasing on the checked range
  double kappa_range_lo = 0.0;
  double kappa_range_hi = 0.0;

  double sup_v0_on_a = 0.0;
  std::vector<double> stationary_q;  // pi(theta) q per theta
  bool stationary_bound_holds = false;  // pi(theta) q <= c0 on every theta

  double fitted_a = 0.0;         // max |Gamma f| / (v0 + 1)
  double alpha_prime = 0.0;
  double derivative_bound = 0.0;  // a * c1
  bool derivative_bound_holds = false;

  bool pass() const noexcept { return drift_pass && kappa_pass; }
};

namespace detail {

// s(theta, x) = sum_y (1 v omega(x, y)) (v0(y) + 1) P(theta, x, y)
inline Vector kappa_argument(const Matrix& p, const Matrix& omega, const Vector& v0) {
  const Matrix weight = omega.cwiseMax(1.0);
  return weight.cwiseProduct(p) * (v0.array() + 1.0).matrix();
}

}  // namespace detail

inline SubgeometricDriftReport check_subgeometric_drift(const ParamKernelFamily& family,
                                                        const StationaryCertificate& cert,
                                                        const FiniteFunction& f, int theta_points = 21,
                                                        const std::vector<std::size_t>& boundary_states = {},
                                                        int envelope_points = kDefaultEnvelopeGrid) {
  const std::size_t n = family.size();
  detail::require_same_size(cert.q.size(), n, "certificate q");
  detail::require_same_size(cert.v0.size(), n, "certificate v0");
  detail::require_same_size(cert.v1.size(), n, "certificate v1");
  detail::require_same_size(f.size(), n, "functional f");
  if (!cert.kappa) throw ModelError("certificate needs kappa");
  if (!(cert.c0 > 0.0 && cert.c1 > 0.0)) throw ModelError("certificate constants c0, c1 must be positive");
  const double eps = cert.eps > 0.0 ? cert.eps : family.eps();
  if (eps > family.eps()) throw ModelError("certificate band exceeds the family's eps");

  SubgeometricDriftReport out;
  out.thetas = detail::theta_grid(family.theta0(), eps, theta_points);
  out.boundary_states = boundary_states;
  const auto ni = static_cast<Eigen::Index>(n);
  Vector ind_a = Vector::Zero(ni);
  for (auto x : cert.small_set) {
    if (x >= n) throw DimensionError("small-set state out of range");
    ind_a(static_cast<Eigen::Index>(x)) = 1.0;
  }
  std::vector<char> is_boundary(n, 0);
  for (auto x : boundary_states) {
    if (x >= n) throw DimensionError("boundary state out of range");
    is_boundary[x] = 1;
  }
  const Vector& v0 = cert.v0.values();
  const Vector& v1 = cert.v1.values();
  const Matrix omega = envelope(family, envelope_points, 1).values;
  const Vector q1 = cert.q.values().cwiseMax(1.0);

  double s_lo = std::numeric_limits<double>::infinity(), s_hi = 0.0;
  out.drift_pass = true;
  out.boundary_min_slack_v0 = Vector::Constant(static_cast<Eigen::Index>(boundary_states.size()),
                                               std::numeric_limits<double>::infinity());
  out.boundary_min_slack_v1 = out.boundary_min_slack_v0;
  out.stationary_bound_holds = true;
  for (double theta : out.thetas) {
    const FiniteKernel pk = family.eval_kernel(theta);
    const Matrix& p = pk.entries();
    Vector s0 = v0 - q1 + cert.c0 * ind_a - p * v0;
    const Vector arg = detail::kappa_argument(p, omega, v0);
    Vector kap(ni);
    for (Eigen::Index x = 0; x < ni; ++x) {
      kap(x) = cert.kappa(arg(x));
      s_lo = std::min(s_lo, arg(x));
      s_hi = std::max(s_hi, arg(x));
    }
    Vector s1 = v1 - kap + cert.c1 * ind_a - p * v1;
    for (Eigen::Index x = 0; x < ni; ++x) {
      const double t0 = -1e-12 * (1.0 + std::abs(v0(x)));
      const double t1 = -1e-12 * (1.0 + std::abs(v1(x)));
      if (is_boundary[static_cast<std::size_t>(x)]) continue;
      if (!(s0(x) >= t0) || !(s1(x) >= t1)) out.drift_pass = false;
    }
    for (std::size_t b = 0; b < boundary_states.size(); ++b) {
      const auto x = static_cast<Eigen::Index>(boundary_states[b]);
      out.boundary_min_slack_v0(static_cast<Eigen::Index>(b)) =
          std::min(out.boundary_min_slack_v0(static_cast<Eigen::Index>(b)), s0(x));
      out.boundary_min_slack_v1(static_cast<Eigen::Index>(b)) =
          std::min(out.boundary_min_slack_v1(static_cast<Eigen::Index>(b)), s1(x));
    }
    out.slack_v0.push_back(std::move(s0));
    out.slack_v1.push_back(std::move(s1));
    if (pk.is_stochastic()) {
      const double pq = pair(stationary_distribution(pk), cert.q);
      out.stationary_q.push_back(pq);
      out.stationary_bound_holds = out.stationary_bound_holds && pq <= cert.c0 * (1.0 + 1e-12);
    }
  }
  out.boundary_pass = boundary_states.empty() ||
                      (out.boundary_min_slack_v0.minCoeff() >= 0.0 && out.boundary_min_slack_v1.minCoeff() >= 0.0);

  // kappa(x) >= x and kappa(x)/x nondecreasing on a log grid spanning the attained arguments
  out.kappa_range_lo = std::max(s_lo, 1.0);
  out.kappa_range_hi = std::max(s_hi, out.kappa_range_lo);
  out.kappa_pass = true;
  const int kappa_points = 200;
  double prev_ratio = 0.0;
  for (int i = 0; i < kappa_points; ++i) {
    const double t = static_cast<double>(i) / (kappa_points - 1);
    const double x = out.kappa_range_lo * std::pow(out.kappa_range_hi / out.kappa_range_lo, t);
    const double k = cert.kappa(x);
    const double ratio = k / x;
    if (!(k >= x * (1.0 - 1e-12)) || ratio < prev_ratio * (1.0 - 1e-12)) out.kappa_pass = false;
    prev_ratio = ratio;
  }

  for (auto x : cert.small_set) out.sup_v0_on_a = std::max(out.sup_v0_on_a, v0(static_cast<Eigen::Index>(x)));

  const FundamentalSolver z(detail::stochastic_base(family));
  const FiniteFunction g = z.poisson(f);
  out.fitted_a = (g.values().cwiseAbs().array() / (v0.array() + 1.0)).maxCoeff();
  out.alpha_prime = z.pi().weights().dot(family.score_kernel(1).entries() * g.values());
  out.derivative_bound = out.fitted_a * cert.c1;
  out.derivative_bound_holds = std::abs(out.alpha_prime) <= out.derivative_bound * (1.0 + 1e-10) + 1e-14;
  return out;
}

// Certificate built from the grid-maximal kernel P_max:  with M = P_max with the
// small-set columns removed, w = (I - M)^{-1} b solves M w = w - b; setting
// v = w off A and 0 on A gives P(theta) v <= v - b + max_A w I_A on the grid.
inline StationaryCertificate construct_stationary_certificate(const ParamKernelFamily& family, FiniteFunction q,
                                                              std::vector<std::size_t> small_set,
                                                              std::function<double(double)> kappa,
                                                              int theta_points = 21,
                                                              int envelope_points = kDefaultEnvelopeGrid) {
  const auto n = static_cast<Eigen::Index>(family.size());
  detail::require_same_size(q.size(), family.size(), "certificate q");
  if (small_set.empty()) throw ModelError("small set must be nonempty");
  const auto grid = detail::theta_grid(family.theta0(), family.eps(), theta_points);
  std::vector<Matrix> kernels;
  Matrix pmax = Matrix::Zero(n, n);
  for (double t : grid) {
    kernels.push_back(family.eval_kernel(t).entries());
    pmax = pmax.cwiseMax(kernels.back());
  }
  Matrix m = pmax;
  std::vector<char> in_a(family.size(), 0);
  for (auto x : small_set) {
    if (x >= family.size()) throw DimensionError("small-set state out of range");
    in_a[x] = 1;
    m.col(static_cast<Eigen::Index>(x)).setZero();
  }
  const Resolvent res(FiniteKernel::nonnegative(m), WeightFunction::ones(family.size()));
  auto build = [&](const Vector& b, double& c) -> Vector {
    Vector w = res.solve(FiniteFunction(b)).values();
    c = 0.0;
    for (Eigen::Index x = 0; x < n; ++x) {
      if (in_a[static_cast<std::size_t>(x)]) {
        c = std::max(c, w(x));
        w(x) = 0.0;
      }
    }
    c = c * (1.0 + 1e-9) + 1e-12;
    return w.cwiseMax(0.0);
  };
  StationaryCertificate cert;
  cert.q = std::move(q);
  cert.small_set = std::move(small_set);
  cert.kappa = std::move(kappa);
  cert.eps = family.eps();
  cert.v0 = FiniteFunction(build(cert.q.values().cwiseMax(1.0), cert.c0));
  const Matrix omega = envelope(family, envelope_points, 1).values;
  Vector b1 = Vector::Zero(n);
  for (const auto& p : kernels) {
    const Vector arg = detail::kappa_argument(p, omega, cert.v0.values());
    for (Eigen::Index x = 0; x < n; ++x) b1(x) = std::max(b1(x), cert.kappa(arg(x)));
  }
  cert.v1 = FiniteFunction(build(b1, cert.c1));
  return cert;
}

}  // namespace mcsens

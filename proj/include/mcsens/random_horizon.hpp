#pragma once

// Random-horizon discounted expectations
//
//   u*(theta, x) = E_x sum_{j<T} exp(sum_{k<j} g(X_k)) f(X_j) + exp(sum_{k<T} g(X_k)) f(X_T)
//
// on a finite chain, where T is the first exit time from the interior set C.
// With K(theta) = exp(g) P(theta) restricted to C x C and
// f~(theta) = f|_C + K_b(theta) f|_{C^c}, u* solves u = f~ + K u.  Derivatives
// of every order come from the same factorization of I - K(theta0).

#include <algorithm>
#include <cmath>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mcsens/kernel_algebra.hpp"
#include "mcsens/param_family.hpp"

namespace mcsens {

inline double binomial(int n, int k) {
  double out = 1.0;
  for (int i = 1; i <= k; ++i) out = out * (n - k + i) / i;
  return out;
}

class TargetProblem {
 public:
  TargetProblem(ParamKernelFamily chain, std::vector<std::size_t> interior, FiniteFunction reward,
                FiniteFunction discount_exponent)
      : chain_(std::move(chain)),
        interior_(std::move(interior)),
        reward_(std::move(reward)),
        discount_(std::move(discount_exponent)) {
    const std::size_t n = chain_.size();
    detail::require_same_size(reward_.size(), n, "reward over S");
    detail::require_same_size(discount_.size(), n, "discount exponent over S");
    if (interior_.empty()) throw ModelError("interior set C must be nonempty");
    std::sort(interior_.begin(), interior_.end());
    if (std::adjacent_find(interior_.begin(), interior_.end()) != interior_.end()) {
      throw ModelError("interior set has duplicate states");
    }
    if (interior_.back() >= n) throw DimensionError("interior state index out of range");
    std::vector<bool> in_c(n, false);
    for (auto x : interior_) in_c[x] = true;
    for (std::size_t x = 0; x < n; ++x)
      if (!in_c[x]) exterior_.push_back(x);
    discount_factor_ = discount_.values().array().exp();
    if (!discount_factor_.allFinite()) throw ModelError("exp(g) must be finite");
  }

  const ParamKernelFamily& chain() const noexcept { return chain_; }
  const std::vector<std::size_t>& interior() const noexcept { return interior_; }
  const std::vector<std::size_t>& exterior() const noexcept { return exterior_; }
  const FiniteFunction& reward() const noexcept { return reward_; }
  const FiniteFunction& discount_exponent() const noexcept { return discount_; }
  double theta0() const noexcept { return chain_.theta0(); }
  std::size_t interior_size() const noexcept { return interior_.size(); }

  Vector reward_interior() const { return reward_.values()(interior_); }
  Vector reward_exterior() const { return reward_.values()(exterior_); }

  // K^{(order)}(theta) on C x C.
  FiniteKernel interior_kernel(double theta, int order = 0) const {
    Matrix full = discounted(chain_.derivative_kernel(order, theta).entries());
    Matrix k = full(interior_, interior_);
    return order == 0 ? FiniteKernel::nonnegative(std::move(k)) : FiniteKernel::signed_kernel(std::move(k));
  }

  // K^{(order)}(theta) on C x C^c (possibly zero columns).
  Matrix boundary_kernel(double theta, int order = 0) const {
    Matrix full = discounted(chain_.derivative_kernel(order, theta).entries());
    return full(interior_, exterior_);
  }

  // f~^{(order)}(theta) over C; order 0 includes f itself.
  FiniteFunction tilde_f(double theta, int order = 0) const {
    Vector out = order == 0 ? reward_interior() : Vector::Zero(static_cast<Eigen::Index>(interior_.size()));
    if (!exterior_.empty()) out += boundary_kernel(theta, order) * reward_exterior();
    return FiniteFunction(std::move(out));
  }

  Matrix discounted(const Matrix& p) const { return discount_factor_.asDiagonal() * p; }

 private:
  ParamKernelFamily chain_;
  std::vector<std::size_t> interior_;
  std::vector<std::size_t> exterior_;
  FiniteFunction reward_;
  FiniteFunction discount_;
  Vector discount_factor_;
};

inline FiniteFunction build_tilde_f(const TargetProblem& problem, double theta) {
  return problem.tilde_f(theta, 0);
}

inline FiniteFunction compute_u_star(const TargetProblem& problem, double theta, const WeightFunction& w,
                                     int m_max = kDefaultMaxPower) {
  Resolvent g(problem.interior_kernel(theta), w, m_max);
  return g.solve(problem.tilde_f(theta));
}

// u*^{(0)}, ..., u*^{(n)} at theta0:
//   u^{(l)} = G (f~^{(l)} + sum_{j<l} C(l, j) K^{(l-j)} u^{(j)}).
inline std::vector<FiniteFunction> higher_derivatives(const TargetProblem& problem, const WeightFunction& w, int n,
                                                      int m_max = kDefaultMaxPower) {
  if (n < 0) throw ModelError("derivative order must be nonnegative");
  if (n > problem.chain().max_order()) {
    throw ModelError("order " + std::to_string(n) + " requested but the family supplies scores up to order " +
                     std::to_string(problem.chain().max_order()));
  }
  const double t0 = problem.theta0();
  Resolvent g(problem.interior_kernel(t0), w, m_max);
  std::vector<FiniteKernel> k_derivs;  // K^{(1)}, ..., K^{(n)}
  for (int l = 1; l <= n; ++l) k_derivs.push_back(problem.interior_kernel(t0, l));
  std::vector<FiniteFunction> u;
  u.push_back(g.solve(problem.tilde_f(t0)));
  for (int l = 1; l <= n; ++l) {
    Vector rhs = problem.tilde_f(t0, l).values();
    for (int j = 0; j < l; ++j) {
      rhs += binomial(l, j) * (k_derivs[static_cast<std::size_t>(l - j - 1)].entries() *
                               u[static_cast<std::size_t>(j)].values());
    }
    u.push_back(g.solve(FiniteFunction(std::move(rhs))));
  }
  return u;
}

inline FiniteFunction derivative_u_star(const TargetProblem& problem, const WeightFunction& w,
                                        int m_max = kDefaultMaxPower) {
  return higher_derivatives(problem, w, 1, m_max)[1];
}

// nu(theta) = mu(theta) G(theta) and its derivatives at theta0, given
// mu^{(0)}, ..., mu^{(n)} at theta0 (measures on C):
//   nu^{(n)} = (mu^{(n)} + sum_{j<n} C(n, j) nu^{(j)} K^{(n-j)}) G.
inline std::vector<FiniteMeasure> occupancy_measure_derivatives(const std::vector<FiniteMeasure>& mu_derivs,
                                                                const TargetProblem& problem,
                                                                const WeightFunction& w,
                                                                int m_max = kDefaultMaxPower) {
  if (mu_derivs.empty()) throw ModelError("need at least mu(theta0)");
  const double t0 = problem.theta0();
  Resolvent g(problem.interior_kernel(t0), w, m_max);
  std::vector<FiniteMeasure> nu;
  for (std::size_t l = 0; l < mu_derivs.size(); ++l) {
    detail::require_same_size(mu_derivs[l].size(), problem.interior_size(), "measure over C");
    Vector rhs = mu_derivs[l].weights();
    for (std::size_t j = 0; j < l; ++j) {
      const FiniteKernel k = problem.interior_kernel(t0, static_cast<int>(l - j));
      rhs += binomial(static_cast<int>(l), static_cast<int>(j)) * (k.entries().transpose() * nu[j].weights());
    }
    nu.push_back(g.solve_left(FiniteMeasure(std::move(rhs))));
  }
  return nu;
}

// nu'(theta0) = mu'(theta0) G + mu(theta0) G K' G.
inline FiniteMeasure measure_derivative(const FiniteMeasure& mu, const FiniteMeasure& mu_prime,
                                        const TargetProblem& problem, const WeightFunction& w,
                                        int m_max = kDefaultMaxPower) {
  return occupancy_measure_derivatives({mu, mu_prime}, problem, w, m_max)[1];
}

// Row x of the signed measure nu'(x, .) on S with u*'(theta0, x) = nu'(x, .) f.
// Interior part: (G K' G)(x, .); exterior part: (G K'_b + G K' G K_b)(x, .).
inline FiniteMeasure signed_measure_representation(const TargetProblem& problem, const WeightFunction& w,
                                                   std::size_t x, int m_max = kDefaultMaxPower) {
  const auto& c = problem.interior();
  auto pos = std::find(c.begin(), c.end(), x);
  if (pos == c.end()) throw ModelError("signed measure row requested for a state outside C");
  const std::size_t row = static_cast<std::size_t>(pos - c.begin());
  const double t0 = problem.theta0();
  Resolvent g(problem.interior_kernel(t0), w, m_max);
  const Matrix k1 = problem.interior_kernel(t0, 1).entries();

  FiniteMeasure gx = g.solve_left(FiniteMeasure::point_mass(c.size(), row));  // G(x, .)
  FiniteMeasure gk1g = g.solve_left(FiniteMeasure(k1.transpose() * gx.weights()));  // (G K' G)(x, .)

  Vector out = Vector::Zero(static_cast<Eigen::Index>(problem.chain().size()));
  out(c) = gk1g.weights();
  if (!problem.exterior().empty()) {
    const Matrix kb = problem.boundary_kernel(t0, 0);
    const Matrix kb1 = problem.boundary_kernel(t0, 1);
    out(problem.exterior()) = kb1.transpose() * gx.weights() + kb.transpose() * gk1g.weights();
  }
  return FiniteMeasure(std::move(out));
}

// ---------------------------------------------------------------------------
// Sufficient conditions for the operator route

struct OperatorConditionsReport {
  ContractionCheck contraction;            // |||K^m(theta0)|||_w < 1
  std::vector<double> interior_envelope;   // per order j: max_x sum_C omega^{(j)} w(y)/w(x) K(x, y)
  std::vector<double> boundary_envelope;   // per order j: max_x sum_{C^c} (1 + omega~^{(j)}) |f| / w(x) K(x, y)
  bool contraction_ok = false;
  bool interior_ok = false;
  bool boundary_ok = false;

  bool pass() const noexcept { return contraction_ok && interior_ok && boundary_ok; }
};

inline OperatorConditionsReport check_operator_conditions(const TargetProblem& problem, const WeightFunction& w, int n,
                                                      int grid_points = kDefaultEnvelopeGrid,
                                                      int m_max = kDefaultMaxPower) {
  detail::require_same_size(w.size(), problem.interior_size(), "weight over C");
  OperatorConditionsReport out;
  const double t0 = problem.theta0();
  const Matrix k = problem.interior_kernel(t0).entries();
  const Matrix kb = problem.boundary_kernel(t0);
  out.contraction = contraction_power(problem.interior_kernel(t0), w, m_max);
  out.contraction_ok = out.contraction.contracting();
  const Vector& wv = w.values();
  const Vector abs_f = problem.reward_exterior().cwiseAbs();
  out.interior_ok = true;
  out.boundary_ok = true;
  for (int j = 0; j <= n; ++j) {
    const EnvelopeMatrix env = envelope(problem.chain(), grid_points, j);
    const Matrix om = env.interior(problem.interior());
    const Vector interior = (om.cwiseProduct(k) * wv).cwiseQuotient(wv);
    out.interior_envelope.push_back(interior.maxCoeff());
    out.interior_ok = out.interior_ok && std::isfinite(interior.maxCoeff());
    double boundary = 0.0;
    if (!problem.exterior().empty()) {
      const Matrix omb = env.boundary(problem.interior(), problem.exterior());
      const Vector b = ((Matrix::Ones(omb.rows(), omb.cols()) + omb).cwiseProduct(kb) * abs_f).cwiseQuotient(wv);
      boundary = b.maxCoeff();
    }
    out.boundary_envelope.push_back(boundary);
    out.boundary_ok = out.boundary_ok && std::isfinite(boundary);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Lyapunov certificates

struct LyapunovCertificateRH {
  std::vector<FiniteFunction> v;  // v_0, ..., v_n over C
  double eps = 0.0;               // band radius; 0 means "use the family's eps"

  int order() const noexcept { return static_cast<int>(v.size()) - 1; }
};

struct InequalityCheck {
  std::string label;  // "v0-drift", "v1-drift", "v1-band", "order-l"
  int order = 0;
  double theta = 0.0;
  Vector slack;       // per interior state; >= 0 means satisfied
  bool pass = false;

  double min_slack() const { return slack.size() ? slack.minCoeff() : 0.0; }
};

struct LyapunovReportRH {
  std::vector<InequalityCheck> checks;
  std::vector<double> integrability;     // max_x sum_C omega^{(n)} v_n K, must be finite
  std::vector<FiniteFunction> derivatives;  // u*^{(l)}(theta0), computed when the resolvent exists
  std::vector<bool> bound_holds;            // |u*^{(l)}| <= v_l for l = 1..n
  bool pass = false;
  std::string note;

  bool bounds_hold() const {
    return std::all_of(bound_holds.begin(), bound_holds.end(), [](bool b) { return b; });
  }
};

namespace detail {

inline bool slack_ok(const Vector& slack, const Vector& scale) {
  for (Eigen::Index i = 0; i < slack.size(); ++i) {
    if (!(slack(i) >= -1e-12 * (1.0 + std::abs(scale(i))))) return false;
  }
  return true;
}

inline std::vector<double> theta_grid(double theta0, double eps, int points) {
  std::vector<double> grid;
  if (points < 2) return {theta0};
  for (int i = 0; i < points; ++i) grid.push_back(theta0 - eps + 2.0 * eps * i / (points - 1));
  if (points % 2 == 1) grid[static_cast<std::size_t>(points / 2)] = theta0;
  return grid;
}

}  // namespace detail

inline LyapunovReportRH verify_lyapunov_rh(const TargetProblem& problem, const LyapunovCertificateRH& cert,
                                           int theta_points = 21, int envelope_points = kDefaultEnvelopeGrid,
                                           const WeightFunction* w = nullptr) {
  LyapunovReportRH out;
  const int n = cert.order();
  if (n < 0) throw ModelError("certificate needs at least v0");
  for (const auto& v : cert.v) {
    detail::require_same_size(v.size(), problem.interior_size(), "certificate function over C");
    if ((v.values().array() < 0.0).any()) throw ModelError("Lyapunov functions must be nonnegative");
  }
  const double t0 = problem.theta0();
  const double eps = cert.eps > 0.0 ? cert.eps : problem.chain().eps();
  if (eps > problem.chain().eps()) throw ModelError("certificate band exceeds the family's eps");
  const auto grid = detail::theta_grid(t0, eps, theta_points);

  std::vector<Matrix> om, omb;  // envelopes of order 0..n
  for (int j = 0; j <= n; ++j) {
    const EnvelopeMatrix env = envelope(problem.chain(), envelope_points, j);
    om.push_back(env.interior(problem.interior()));
    omb.push_back(problem.exterior().empty() ? Matrix(problem.interior_size(), 0)
                                             : env.boundary(problem.interior(), problem.exterior()));
  }
  const Vector abs_f = problem.reward_exterior().cwiseAbs();
  const Vector& v0 = cert.v[0].values();

  for (double theta : grid) {
    const Matrix k = problem.interior_kernel(theta).entries();
    const Vector ft = problem.tilde_f(theta).values();
    InequalityCheck c{"v0-drift", 0, theta, v0 - ft.cwiseAbs() - k * v0, false};
    c.pass = detail::slack_ok(c.slack, v0);
    out.checks.push_back(std::move(c));
  }
  if (n >= 1) {
    const Matrix k = problem.interior_kernel(t0).entries();
    const Matrix kb = problem.boundary_kernel(t0);
    const Vector& v1 = cert.v[1].values();
    Vector r_tilde = omb[1].size() ? Vector(omb[1].cwiseProduct(kb) * abs_f)
                                   : Vector::Zero(static_cast<Eigen::Index>(problem.interior_size()));
    InequalityCheck c{"v1-drift", 1, t0, v1 - om[1].cwiseProduct(k) * v0 - r_tilde - k * v1, false};
    c.pass = detail::slack_ok(c.slack, v1);
    out.checks.push_back(std::move(c));
  }
  for (int l = 1; l <= n; ++l) {
    const Vector& vl = cert.v[static_cast<std::size_t>(l)].values();
    for (double theta : grid) {
      const Matrix k = problem.interior_kernel(theta).entries();
      const Matrix kb = problem.boundary_kernel(theta);
      Vector slack = vl - k * vl;
      for (int j = 0; j < l; ++j) {
        slack -= binomial(l, j) * (om[static_cast<std::size_t>(l - j)].cwiseProduct(k) *
                                   cert.v[static_cast<std::size_t>(j)].values());
      }
      if (omb[static_cast<std::size_t>(l)].size()) slack -= omb[static_cast<std::size_t>(l)].cwiseProduct(kb) * abs_f;
      InequalityCheck c{l == 1 ? "v1-band" : "order-" + std::to_string(l), l, theta, std::move(slack), false};
      c.pass = detail::slack_ok(c.slack, vl);
      out.checks.push_back(std::move(c));
    }
  }
  if (n >= 1) {
    const Matrix k = problem.interior_kernel(t0).entries();
    for (int l = 1; l <= n; ++l) {
      const Vector integ = om[static_cast<std::size_t>(l)].cwiseProduct(k) * cert.v[static_cast<std::size_t>(l)].values();
      out.integrability.push_back(integ.maxCoeff());
    }
  }
  out.pass = std::all_of(out.checks.begin(), out.checks.end(), [](const auto& c) { return c.pass; }) &&
             std::all_of(out.integrability.begin(), out.integrability.end(),
                         [](double v) { return std::isfinite(v); });

  try {
    const WeightFunction ones = WeightFunction::ones(problem.interior_size());
    out.derivatives = higher_derivatives(problem, w ? *w : ones, n);
    for (int l = 1; l <= n; ++l) {
      const Vector& d = out.derivatives[static_cast<std::size_t>(l)].values();
      const Vector& vl = cert.v[static_cast<std::size_t>(l)].values();
      bool ok = true;
      for (Eigen::Index i = 0; i < d.size(); ++i) ok = ok && std::abs(d(i)) <= vl(i) * (1.0 + 1e-10) + 1e-12;
      out.bound_holds.push_back(ok);
    }
  } catch (const RefusalError& e) {
    out.note = std::string("derivatives not computed: ") + e.what();
  }
  std::ostringstream note;
  note << "inequalities checked on " << grid.size() << " theta values over [" << t0 - eps << ", " << t0 + eps
       << "]; the continuity addendum is verified on this band only";
  out.note = out.note.empty() ? note.str() : out.note + "; " + note.str();
  return out;
}

// Heuristic certificate: with K_max the entrywise max of K(theta) over the
// checking grid, v0 = (I - K_max)^{-1}(max|f~| + slack) and
// v_l = (I - K_max)^{-1}(sum_j C(l,j) (omega^{(l-j)} K_max) v_j + omega~^{(l)} K_b,max |f| + slack).
// Satisfies every grid inequality by construction when K_max contracts.
inline LyapunovCertificateRH propose_certificate(const TargetProblem& problem, int n, double slack = 1e-6,
                                                 int theta_points = 21, int envelope_points = kDefaultEnvelopeGrid) {
  const double t0 = problem.theta0();
  const double eps = problem.chain().eps();
  const auto grid = detail::theta_grid(t0, eps, theta_points);
  const auto m = static_cast<Eigen::Index>(problem.interior_size());
  Matrix kmax = Matrix::Zero(m, m);
  Matrix kbmax = Matrix::Zero(m, static_cast<Eigen::Index>(problem.exterior().size()));
  Vector fmax = Vector::Zero(m);
  for (double theta : grid) {
    kmax = kmax.cwiseMax(problem.interior_kernel(theta).entries());
    if (kbmax.cols()) kbmax = kbmax.cwiseMax(problem.boundary_kernel(theta));
    fmax = fmax.cwiseMax(problem.tilde_f(theta).values().cwiseAbs());
  }
  Resolvent g(FiniteKernel::nonnegative(kmax), WeightFunction::ones(static_cast<std::size_t>(m)));
  const Vector abs_f = problem.reward_exterior().cwiseAbs();
  LyapunovCertificateRH cert;
  cert.eps = eps;
  auto positive = [](Vector v) { return FiniteFunction(v.cwiseMax(0.0)); };
  cert.v.push_back(positive(g.solve(FiniteFunction(Vector(fmax.array() + slack))).values()));
  for (int l = 1; l <= n; ++l) {
    const EnvelopeMatrix env_l = envelope(problem.chain(), envelope_points, l);
    Vector rhs = Vector::Constant(m, slack);
    for (int j = 0; j < l; ++j) {
      const Matrix om = envelope(problem.chain(), envelope_points, l - j).interior(problem.interior());
      rhs += binomial(l, j) * (om.cwiseProduct(kmax) * cert.v[static_cast<std::size_t>(j)].values());
    }
    if (kbmax.cols()) rhs += env_l.boundary(problem.interior(), problem.exterior()).cwiseProduct(kbmax) * abs_f;
    cert.v.push_back(positive(g.solve(FiniteFunction(std::move(rhs))).values()));
  }
  return cert;
}

// ---------------------------------------------------------------------------
// Comparison bound: Qv <= v - f implies sum_n Q^n f <= v.

struct ComparisonReport {
  bool applicable = false;   // Qv <= v - f held
  bool holds = false;        // partial sums stayed below v
  bool converged = false;    // last increment < 1e-12
  std::size_t terms = 0;
  Vector partial_sum;
  double max_excess = 0.0;   // max (partial_sum - v), <= 0 when holds
};

inline ComparisonReport comparison_bound_check(const FiniteKernel& q, const FiniteFunction& f, const FiniteFunction& v,
                                               std::size_t max_terms = 100000) {
  detail::require_same_size(q.size(), f.size(), "comparison f");
  detail::require_same_size(q.size(), v.size(), "comparison v");
  if (!q.is_nonnegative()) throw ModelError("comparison bound needs a nonnegative kernel");
  if ((f.values().array() < 0.0).any() || (v.values().array() < 0.0).any()) {
    throw ModelError("comparison bound needs nonnegative f and v");
  }
  ComparisonReport out;
  const Vector drift = v.values() - f.values() - q.entries() * v.values();
  out.applicable = detail::slack_ok(drift, v.values());
  if (!out.applicable) return out;
  Vector term = f.values();
  Vector sum = term;
  out.terms = 1;
  while (out.terms < max_terms) {
    term = q.entries() * term;
    sum += term;
    ++out.terms;
    if (term.cwiseAbs().maxCoeff() < 1e-12) {
      out.converged = true;
      break;
    }
  }
  out.partial_sum = sum;
  out.max_excess = (sum - v.values()).maxCoeff();
  out.holds = true;
  for (Eigen::Index i = 0; i < sum.size(); ++i) {
    out.holds = out.holds && sum(i) <= v.values()(i) + 1e-9 * (1.0 + v.values()(i));
  }
  return out;
}

}  // namespace mcsens

#pragma once

// Random instance generators and independent reference computations shared by
// the unit and acceptance suites.  The references deliberately avoid the
// library's solvers: Neumann sums, power iteration and finite differences.

#include <cmath>
#include <random>
#include <vector>

#include "mcsens/mcsens.hpp"

namespace mcsens::testing {

using Rng = std::mt19937_64;

inline double uniform(Rng& rng, double lo = 0.0, double hi = 1.0) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline Matrix random_signed(Rng& rng, Eigen::Index n, double scale = 1.0) {
  Matrix m(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) m(i, j) = uniform(rng, -scale, scale);
  return m;
}

inline WeightFunction random_weight(Rng& rng, Eigen::Index n, double hi = 10.0) {
  Vector w(n);
  for (Eigen::Index i = 0; i < n; ++i) w(i) = uniform(rng, 1.0, hi);
  return WeightFunction(std::move(w));
}

// Dense-ish stochastic matrix; `sparsity` is the chance an off-diagonal entry is zeroed.
inline Matrix random_stochastic(Rng& rng, Eigen::Index n, double sparsity = 0.0) {
  Matrix m(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      m(i, j) = (i != j && uniform(rng) < sparsity) ? 0.0 : uniform(rng, 0.05, 1.0);
    }
    // keep the chain irreducible through a cycle
    m(i, (i + 1) % n) = std::max(m(i, (i + 1) % n), 0.1);
    m.row(i) /= m.row(i).sum();
  }
  return m;
}

inline Matrix random_substochastic(Rng& rng, Eigen::Index n, double max_row_sum) {
  Matrix m = random_stochastic(rng, n);
  for (Eigen::Index i = 0; i < n; ++i) m.row(i) *= uniform(rng, 0.0, max_row_sum);
  return m;
}

inline Vector random_vector(Rng& rng, Eigen::Index n, double lo = -1.0, double hi = 1.0) {
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = uniform(rng, lo, hi);
  return v;
}

// Zero-row-sum perturbation supported where base > 0, |D| <= scale * base.
inline Matrix random_direction(Rng& rng, const Matrix& base, double scale) {
  const Eigen::Index n = base.rows();
  Matrix d = Matrix::Zero(n, n);
  for (Eigen::Index x = 0; x < n; ++x) {
    const double mass = base.row(x).sum();
    if (mass <= 0.0) continue;
    double mean = 0.0;
    Vector r(n);
    for (Eigen::Index y = 0; y < n; ++y) {
      r(y) = uniform(rng, -1.0, 1.0);
      mean += base(x, y) * r(y);
    }
    mean /= mass;
    for (Eigen::Index y = 0; y < n; ++y) d(x, y) = 0.5 * scale * base(x, y) * (r(y) - mean);
  }
  return d;
}

// P(theta0 + t) = sum_j t^j coeffs[j]; re-expanded around theta0 + s.
inline std::vector<Matrix> taylor_shift(const std::vector<Matrix>& coeffs, double s) {
  std::vector<Matrix> out(coeffs.size(), Matrix::Zero(coeffs[0].rows(), coeffs[0].cols()));
  for (std::size_t k = 0; k < coeffs.size(); ++k)
    for (std::size_t j = k; j < coeffs.size(); ++j)
      out[k] += binomial(static_cast<int>(j), static_cast<int>(k)) * std::pow(s, static_cast<double>(j - k)) *
                coeffs[j];
  return out;
}

inline ParamKernelFamily polynomial_family(const std::vector<Matrix>& coeffs, double theta0, double eps) {
  std::vector<Matrix> higher(coeffs.begin() + 1, coeffs.end());
  return families::polynomial(FiniteKernel::nonnegative(coeffs[0]), higher, theta0, eps);
}

// A random stochastic chain with a cubic parameter dependence.
struct RandomPolyChain {
  std::vector<Matrix> coeffs;  // base, D1, D2, D3
  double theta0 = 0.0;
  double eps = 0.5;

  ParamKernelFamily family(double shift = 0.0) const {
    return polynomial_family(shift == 0.0 ? coeffs : taylor_shift(coeffs, shift), theta0 + shift, eps);
  }
};

inline RandomPolyChain random_poly_chain(Rng& rng, Eigen::Index n, double sparsity = 0.0) {
  RandomPolyChain c;
  c.theta0 = uniform(rng, -1.0, 1.0);
  c.coeffs.push_back(random_stochastic(rng, n, sparsity));
  c.coeffs.push_back(random_direction(rng, c.coeffs[0], 0.4));
  c.coeffs.push_back(random_direction(rng, c.coeffs[0], 0.3));
  c.coeffs.push_back(random_direction(rng, c.coeffs[0], 0.2));
  return c;
}

inline std::vector<std::size_t> first_states(std::size_t k) {
  std::vector<std::size_t> out(k);
  for (std::size_t i = 0; i < k; ++i) out[i] = i;
  return out;
}

// Random random-horizon problem around a polynomial chain: C = first m states.
struct RandomTarget {
  RandomPolyChain chain;
  std::size_t interior = 0;
  Vector f;
  Vector g;

  TargetProblem problem(double shift = 0.0) const {
    return TargetProblem(chain.family(shift), first_states(interior), FiniteFunction(f), FiniteFunction(g));
  }
};

inline RandomTarget random_target(Rng& rng, Eigen::Index n) {
  RandomTarget t;
  t.chain = random_poly_chain(rng, n);
  t.interior = static_cast<std::size_t>(std::max<Eigen::Index>(1, n - std::max<Eigen::Index>(1, n / 4)));
  t.f = random_vector(rng, n, -2.0, 2.0);
  t.g = random_vector(rng, n, -0.3, 0.05);
  return t;
}

// ---------------------------------------------------------------------------
// Reference computations

// sum_{k <= terms} K^k f
inline Vector neumann_sum(const Matrix& k, const Vector& f, int terms) {
  Vector term = f;
  Vector sum = f;
  for (int i = 0; i < terms; ++i) {
    term = k * term;
    sum += term;
  }
  return sum;
}

// pi by power iteration on the lazy chain (P + I)/2.
inline Vector power_iteration_pi(const Matrix& p, int iterations = 100000, double tol = 1e-15) {
  const Eigen::Index n = p.rows();
  Matrix lazy = 0.5 * (p + Matrix::Identity(n, n));
  Vector pi = Vector::Constant(n, 1.0 / static_cast<double>(n));
  for (int i = 0; i < iterations; ++i) {
    Vector next = lazy.transpose() * pi;
    next /= next.sum();
    const double diff = (next - pi).cwiseAbs().maxCoeff();
    pi = next;
    if (diff < tol) break;
  }
  return pi;
}

template <class F>
double central_difference(F&& fn, double x, double h) {
  return (fn(x + h) - fn(x - h)) / (2.0 * h);
}

}  // namespace mcsens::testing

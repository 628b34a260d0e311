#pragma once

// Ready-made parameterized families.

#include <cmath>
#include <memory>
#include <utility>
#include <vector>

#include "mcsens/param_family.hpp"

namespace mcsens::families {

inline double falling_factorial(int j, int l) {
  double out = 1.0;
  for (int i = 0; i < l; ++i) out *= static_cast<double>(j - i);
  return out;
}

// theta-independent family: k == 1.
inline ParamKernelFamily constant(FiniteKernel base, double theta0 = 0.0, double eps = 0.5,
                                  Interval interval = {-1e300, 1e300}) {
  DensityModel m;
  m.density = [](double, std::size_t, std::size_t) { return 1.0; };
  m.derivative = [](int, double, std::size_t, std::size_t) { return 0.0; };
  m.max_order = 64;
  m.envelope = [](int order, std::size_t, std::size_t) { return order == 0 ? 1.0 : 0.0; };
  return ParamKernelFamily(std::move(base), theta0, eps, interval, std::move(m));
}

// k(theta, x, y) = theta / theta0: the whole kernel scales linearly in theta.
inline ParamKernelFamily scaled(FiniteKernel base, double theta0, double eps) {
  DensityModel m;
  m.density = [theta0](double theta, std::size_t, std::size_t) { return theta / theta0; };
  m.derivative = [theta0](int order, double, std::size_t, std::size_t) { return order == 1 ? 1.0 / theta0 : 0.0; };
  m.max_order = 64;
  return ParamKernelFamily(std::move(base), theta0, eps, Interval{0.0, 1e300}, std::move(m));
}

// P(theta) = [[1 - theta, theta], [q, 1 - q]].
inline ParamKernelFamily two_state(double theta0, double q, double eps) {
  Matrix base(2, 2);
  base << 1.0 - theta0, theta0, q, 1.0 - q;
  DensityModel m;
  m.density = [theta0](double theta, std::size_t x, std::size_t y) {
    if (x == 1) return 1.0;
    return y == 0 ? (1.0 - theta) / (1.0 - theta0) : theta / theta0;
  };
  m.derivative = [theta0](int order, double, std::size_t x, std::size_t y) {
    if (x == 1 || order > 1) return 0.0;
    return y == 0 ? -1.0 / (1.0 - theta0) : 1.0 / theta0;
  };
  m.max_order = 64;
  return ParamKernelFamily(FiniteKernel::nonnegative(std::move(base)), theta0, eps, Interval{0.0, 1.0},
                           std::move(m));
}

// P(theta) = [[1 - theta, theta], [theta, 1 - theta]].
inline ParamKernelFamily symmetric_two_state(double theta0, double eps) {
  Matrix base(2, 2);
  base << 1.0 - theta0, theta0, theta0, 1.0 - theta0;
  DensityModel m;
  m.density = [theta0](double theta, std::size_t x, std::size_t y) {
    return x == y ? (1.0 - theta) / (1.0 - theta0) : theta / theta0;
  };
  m.derivative = [theta0](int order, double, std::size_t x, std::size_t y) {
    if (order > 1) return 0.0;
    return x == y ? -1.0 / (1.0 - theta0) : 1.0 / theta0;
  };
  m.max_order = 64;
  return ParamKernelFamily(FiniteKernel::nonnegative(std::move(base)), theta0, eps, Interval{0.0, 1.0},
                           std::move(m));
}

// P(theta) = base + sum_j (theta - theta0)^j D_j.  Every D_j must vanish off the
// support of base; if all rows of every D_j sum to zero the family stays
// stochastic whenever base is.
inline ParamKernelFamily polynomial(FiniteKernel base, std::vector<Matrix> coefficients, double theta0, double eps,
                                    Interval interval = {-1e300, 1e300}) {
  const auto n = static_cast<Eigen::Index>(base.size());
  auto ratios = std::make_shared<std::vector<Matrix>>();
  for (const auto& d : coefficients) {
    if (d.rows() != n || d.cols() != n) throw DimensionError("polynomial family coefficient shape");
    Matrix r = Matrix::Zero(n, n);
    for (Eigen::Index x = 0; x < n; ++x) {
      for (Eigen::Index y = 0; y < n; ++y) {
        const double b = base.entries()(x, y);
        if (b > 0.0) {
          r(x, y) = d(x, y) / b;
        } else if (d(x, y) != 0.0) {
          throw ModelError("polynomial family coefficient is nonzero off the base support");
        }
      }
    }
    ratios->push_back(std::move(r));
  }
  DensityModel m;
  m.density = [ratios, theta0](double theta, std::size_t x, std::size_t y) {
    const double t = theta - theta0;
    double acc = 0.0;
    for (std::size_t j = ratios->size(); j-- > 0;) {
      acc = (acc + (*ratios)[j](static_cast<Eigen::Index>(x), static_cast<Eigen::Index>(y))) * t;
    }
    return 1.0 + acc;
  };
  m.derivative = [ratios, theta0](int order, double theta, std::size_t x, std::size_t y) {
    const double t = theta - theta0;
    double acc = 0.0;
    for (int j = static_cast<int>(ratios->size()); j >= order; --j) {
      const double c = (*ratios)[static_cast<std::size_t>(j - 1)](static_cast<Eigen::Index>(x),
                                                                  static_cast<Eigen::Index>(y));
      acc = acc * t + falling_factorial(j, order) * c;
    }
    return acc;
  };
  m.max_order = 64;
  return ParamKernelFamily(std::move(base), theta0, eps, interval, std::move(m));
}

// Kernels tabulated at distinct parameter values, interpolated by the unique
// polynomial through all of them.  theta0 need not be a grid point.
inline ParamKernelFamily tabulated(const std::vector<double>& thetas, const std::vector<Matrix>& kernels,
                                   double theta0, double eps, Interval interval) {
  if (thetas.size() != kernels.size() || thetas.size() < 2) {
    throw SchemaError("tabulated family needs at least two (theta, kernel) pairs");
  }
  const auto m = static_cast<Eigen::Index>(thetas.size());
  Matrix vandermonde(m, m);
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) {
      vandermonde(i, j) = std::pow(thetas[static_cast<std::size_t>(i)] - theta0, static_cast<double>(j));
    }
  }
  Eigen::FullPivLU<Matrix> lu(vandermonde);
  if (!lu.isInvertible()) throw SchemaError("tabulated family theta values must be distinct");
  const auto n = kernels.front().rows();
  // coefficient c_j(x, y) of (theta - theta0)^j
  std::vector<Matrix> coeffs(static_cast<std::size_t>(m), Matrix::Zero(n, n));
  Vector rhs(m);
  for (Eigen::Index x = 0; x < n; ++x) {
    for (Eigen::Index y = 0; y < n; ++y) {
      for (Eigen::Index i = 0; i < m; ++i) {
        const auto& k = kernels[static_cast<std::size_t>(i)];
        if (k.rows() != n || k.cols() != n) throw DimensionError("tabulated kernels differ in shape");
        rhs(i) = k(x, y);
      }
      Vector c = lu.solve(rhs);
      for (Eigen::Index j = 0; j < m; ++j) coeffs[static_cast<std::size_t>(j)](x, y) = c(j);
    }
  }
  Matrix base = coeffs.front();
  base = base.cwiseMax(0.0);  // clip interpolation roundoff below zero
  std::vector<Matrix> higher(coeffs.begin() + 1, coeffs.end());
  for (auto& d : higher) {
    for (Eigen::Index x = 0; x < n; ++x)
      for (Eigen::Index y = 0; y < n; ++y)
        if (base(x, y) <= 0.0) d(x, y) = 0.0;
  }
  return polynomial(FiniteKernel::nonnegative(std::move(base)), std::move(higher), theta0, eps, interval);
}

// Exponential tilting of each row: P(theta, x, y) proportional to
// base(x, y) exp((theta - theta0) a(x, y)) with the row mass of base preserved.
// Derivatives up to order 3 are available in closed form from the tilted
// cumulants of a(x, .).
inline ParamKernelFamily exponential_tilt(FiniteKernel base, Matrix tilt, double theta0, double eps) {
  if (tilt.rows() != base.entries().rows() || tilt.cols() != base.entries().cols()) {
    throw DimensionError("tilt matrix shape");
  }
  struct Data {
    Matrix base;
    Matrix tilt;
    double theta0;
    // log k and the centered moments of the tilt under the tilted row law
    void row_stats(double theta, std::size_t x, double& log_norm, double& mean, double& c2, double& c3) const {
      const auto xi = static_cast<Eigen::Index>(x);
      const double t = theta - theta0;
      double mass = 0.0;
      double shift = -1e300;
      for (Eigen::Index y = 0; y < base.cols(); ++y)
        if (base(xi, y) > 0.0) shift = std::max(shift, t * tilt(xi, y));
      double z = 0.0, s1 = 0.0;
      for (Eigen::Index y = 0; y < base.cols(); ++y) {
        const double b = base(xi, y);
        if (b <= 0.0) continue;
        mass += b;
        const double e = b * std::exp(t * tilt(xi, y) - shift);
        z += e;
        s1 += e * tilt(xi, y);
      }
      mean = s1 / z;
      double s2 = 0.0, s3 = 0.0;
      for (Eigen::Index y = 0; y < base.cols(); ++y) {
        const double b = base(xi, y);
        if (b <= 0.0) continue;
        const double e = b * std::exp(t * tilt(xi, y) - shift) / z;
        const double d = tilt(xi, y) - mean;
        s2 += e * d * d;
        s3 += e * d * d * d;
      }
      c2 = s2;
      c3 = s3;
      log_norm = shift + std::log(z / mass);
    }
  };
  auto data = std::make_shared<Data>(Data{base.entries(), std::move(tilt), theta0});
  DensityModel m;
  m.density = [data](double theta, std::size_t x, std::size_t y) {
    if (theta == data->theta0) return 1.0;
    double ln, mean, c2, c3;
    data->row_stats(theta, x, ln, mean, c2, c3);
    const double a = data->tilt(static_cast<Eigen::Index>(x), static_cast<Eigen::Index>(y));
    return std::exp((theta - data->theta0) * a - ln);
  };
  m.derivative = [data](int order, double theta, std::size_t x, std::size_t y) {
    double ln, mean, c2, c3;
    data->row_stats(theta, x, ln, mean, c2, c3);
    const double a = data->tilt(static_cast<Eigen::Index>(x), static_cast<Eigen::Index>(y));
    const double k = theta == data->theta0 ? 1.0 : std::exp((theta - data->theta0) * a - ln);
    const double l1 = a - mean;
    const double l2 = -c2;
    const double l3 = -c3;
    switch (order) {
      case 1: return k * l1;
      case 2: return k * (l1 * l1 + l2);
      case 3: return k * (l1 * l1 * l1 + 3.0 * l1 * l2 + l3);
      default: throw ModelError("exponential tilt family supplies derivatives up to order 3");
    }
  };
  m.max_order = 3;
  return ParamKernelFamily(std::move(base), theta0, eps, Interval{-1e300, 1e300}, std::move(m));
}

}  // namespace mcsens::families

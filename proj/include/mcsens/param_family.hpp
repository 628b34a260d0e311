#pragma once

// Parameterized kernel families K(theta, x, dy) = k(theta, x, y) K(x, dy) with a
// scalar parameter.  The density and its theta-derivatives are caller-provided
// callables; they must be pure and safe to call concurrently.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "mcsens/kernel_algebra.hpp"

namespace mcsens {

inline constexpr int kDefaultEnvelopeGrid = 65;
inline constexpr double kBaseDensityTol = 1e-12;

struct Interval {
  double lo;
  double hi;
  bool contains(double t) const noexcept { return t > lo && t < hi; }
};

struct DensityModel {
  // k(theta, x, y); only queried where base(x, y) > 0.
  std::function<double(double, std::size_t, std::size_t)> density;
  // k^{(order)}(theta, x, y) for 1 <= order <= max_order.
  std::function<double(int, double, std::size_t, std::size_t)> derivative;
  int max_order = 1;
  // Optional closed form for sup_{|theta - theta0| < eps} |k^{(order)}(theta, x, y)|.
  std::function<double(int, std::size_t, std::size_t)> envelope;
};

class ParamKernelFamily {
 public:
  ParamKernelFamily(FiniteKernel base, double theta0, double eps, Interval interval, DensityModel model,
                    int validation_grid = kDefaultEnvelopeGrid)
      : base_(std::move(base)), theta0_(theta0), eps_(eps), interval_(interval), model_(std::move(model)) {
    if (base_.is_signed() && !base_.is_nonnegative()) throw ModelError("base kernel must be nonnegative");
    if (!(eps_ > 0.0)) throw ModelError("radius eps must be positive");
    if (!interval_.contains(theta0_ - eps_) || !interval_.contains(theta0_ + eps_)) {
      throw ModelError("[theta0 - eps, theta0 + eps] must lie inside the parameter interval");
    }
    if (!model_.density || !model_.derivative || model_.max_order < 1) {
      throw ModelError("family needs a density and at least its first derivative");
    }
    validate(validation_grid);
  }

  const FiniteKernel& base() const noexcept { return base_; }
  std::size_t size() const noexcept { return base_.size(); }
  double theta0() const noexcept { return theta0_; }
  double eps() const noexcept { return eps_; }
  Interval interval() const noexcept { return interval_; }
  int max_order() const noexcept { return model_.max_order; }
  bool has_closed_form_envelope() const noexcept { return static_cast<bool>(model_.envelope); }
  const DensityModel& model() const noexcept { return model_; }

  bool on_support(std::size_t x, std::size_t y) const { return base_(x, y) > 0.0; }

  // k^{(order)}(theta, x, y); order 0 is the density itself.
  double derivative(int order, double theta, std::size_t x, std::size_t y) const {
    if (order == 0) return model_.density(theta, x, y);
    if (order > model_.max_order) {
      throw ModelError("derivative of order " + std::to_string(order) + " not supplied (max " +
                       std::to_string(model_.max_order) + ")");
    }
    return model_.derivative(order, theta, x, y);
  }

  FiniteKernel eval_kernel(double theta) const {
    if (!interval_.contains(theta)) {
      throw ModelError("theta = " + std::to_string(theta) + " outside the parameter interval");
    }
    const auto n = static_cast<Eigen::Index>(size());
    Matrix m = Matrix::Zero(n, n);
    for (Eigen::Index x = 0; x < n; ++x) {
      for (Eigen::Index y = 0; y < n; ++y) {
        const double b = base_.entries()(x, y);
        if (b <= 0.0) continue;
        const double k = model_.density(theta, static_cast<std::size_t>(x), static_cast<std::size_t>(y));
        if (!std::isfinite(k) || k < 0.0) {
          throw ModelError("density k(" + std::to_string(theta) + ", " + std::to_string(x) + ", " +
                           std::to_string(y) + ") = " + std::to_string(k) + " is not a valid density");
        }
        m(x, y) = b * k;
      }
    }
    return FiniteKernel::nonnegative(std::move(m));
  }

  // base(x, y) * k^{(order)}(theta, x, y); signed for order >= 1.
  FiniteKernel derivative_kernel(int order, double theta) const {
    if (order == 0) return eval_kernel(theta);
    const auto n = static_cast<Eigen::Index>(size());
    Matrix m = Matrix::Zero(n, n);
    for (Eigen::Index x = 0; x < n; ++x) {
      for (Eigen::Index y = 0; y < n; ++y) {
        const double b = base_.entries()(x, y);
        if (b <= 0.0) continue;
        m(x, y) = b * derivative(order, theta, static_cast<std::size_t>(x), static_cast<std::size_t>(y));
      }
    }
    return FiniteKernel::signed_kernel(std::move(m));
  }

  // K^{(order)}(theta0); order 1 is the score kernel K'.
  FiniteKernel score_kernel(int order = 1) const { return derivative_kernel(order, theta0_); }

  // Uniform grid on [theta0 - eps, theta0 + eps]; contains theta0 when points is odd.
  std::vector<double> band_grid(int points) const {
    if (points < 2) return {theta0_};
    std::vector<double> grid(static_cast<std::size_t>(points));
    for (int i = 0; i < points; ++i) {
      grid[static_cast<std::size_t>(i)] = theta0_ - eps_ + 2.0 * eps_ * i / (points - 1);
    }
    if (points % 2 == 1) grid[static_cast<std::size_t>(points / 2)] = theta0_;
    return grid;
  }

 private:
  void validate(int grid_points) const {
    const std::size_t n = size();
    for (std::size_t x = 0; x < n; ++x) {
      for (std::size_t y = 0; y < n; ++y) {
        if (!on_support(x, y)) continue;
        const double k0 = model_.density(theta0_, x, y);
        if (!(std::abs(k0 - 1.0) <= kBaseDensityTol)) {
          throw ModelError("density at theta0 must equal 1 on the support of the base kernel (entry " +
                           std::to_string(x) + "," + std::to_string(y) + " = " + std::to_string(k0) + ")");
        }
      }
    }
    for (double theta : band_grid(std::max(grid_points, 3))) {
      for (std::size_t x = 0; x < n; ++x) {
        for (std::size_t y = 0; y < n; ++y) {
          if (!on_support(x, y)) continue;
          const double k = model_.density(theta, x, y);
          if (!std::isfinite(k) || k < 0.0) {
            throw ModelError("negative or non-finite density at theta = " + std::to_string(theta) +
                             " (A1 requires a genuine density)");
          }
          if (k == 0.0) {
            throw ModelError("density vanishes at theta = " + std::to_string(theta) +
                             "; theta-dependent supports are not supported");
          }
        }
      }
    }
  }

  FiniteKernel base_;
  double theta0_;
  double eps_;
  Interval interval_;
  DensityModel model_;
};

// Entrywise sup over the eps-band of |k^{(order)}(theta, x, y)|, zero off the
// support.  interior()/boundary() split it along an interior set C.
struct EnvelopeMatrix {
  Matrix values;
  int order = 1;
  int grid_points = 0;  // 0 when taken from a closed form

  Matrix interior(const std::vector<std::size_t>& c) const { return values(c, c); }
  Matrix boundary(const std::vector<std::size_t>& c, const std::vector<std::size_t>& c_complement) const {
    return values(c, c_complement);
  }
};

inline EnvelopeMatrix envelope(const ParamKernelFamily& family, int grid_points = kDefaultEnvelopeGrid,
                               int order = 1) {
  if (grid_points < 3) throw ModelError("envelope grid needs at least 3 points");
  const auto n = static_cast<Eigen::Index>(family.size());
  EnvelopeMatrix out{Matrix::Zero(n, n), order, grid_points};
  if (family.has_closed_form_envelope()) {
    out.grid_points = 0;
    for (Eigen::Index x = 0; x < n; ++x) {
      for (Eigen::Index y = 0; y < n; ++y) {
        if (family.on_support(static_cast<std::size_t>(x), static_cast<std::size_t>(y))) {
          out.values(x, y) = family.model().envelope(order, static_cast<std::size_t>(x), static_cast<std::size_t>(y));
        }
      }
    }
    return out;
  }
  for (double theta : family.band_grid(grid_points)) {
    for (Eigen::Index x = 0; x < n; ++x) {
      for (Eigen::Index y = 0; y < n; ++y) {
        const auto xs = static_cast<std::size_t>(x);
        const auto ys = static_cast<std::size_t>(y);
        if (!family.on_support(xs, ys)) continue;
        const double v = std::abs(family.derivative(order, theta, xs, ys));
        if (!std::isfinite(v)) {
          throw ModelError("non-finite derivative of order " + std::to_string(order) + " at theta = " +
                           std::to_string(theta));
        }
        out.values(x, y) = std::max(out.values(x, y), v);
      }
    }
  }
  return out;
}

struct ScoreMeanDiagnostic {
  Vector row_sums;  // sum_y k'(theta0, x, y) base(x, y)
  double max_abs = 0.0;
  bool warning = false;  // some row departs from zero by more than the tolerance
};

// Rows of K' sum to zero for a correctly specified stochastic family.
inline ScoreMeanDiagnostic score_mean_diagnostic(const ParamKernelFamily& family, double tol = 1e-6) {
  ScoreMeanDiagnostic out;
  out.row_sums = family.score_kernel(1).row_sums();
  out.max_abs = out.row_sums.cwiseAbs().maxCoeff();
  out.warning = out.max_abs > tol;
  return out;
}

}  // namespace mcsens

#pragma once

// Finite-state weighted function, measure and kernel spaces.
//
// Functions act on the right of kernels (Qh)(x) = sum_y Q(x,y) h(y) and
// measures on the left (eta Q)(y) = sum_x eta(x) Q(x,y).  All norms are the
// w-weighted ones: ||h||_w = max |h|/w, |||Q|||_w = max_x sum_y |Q(x,y)| w(y)/w(x),
// ||eta||_w = sum |eta| w.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "mcsens/errors.hpp"

namespace mcsens {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline constexpr double kStochasticTol = 1e-12;
inline constexpr int kDefaultMaxPower = 64;

class StateSpace {
 public:
  explicit StateSpace(std::vector<std::string> labels) : labels_(std::move(labels)) {
    if (labels_.empty()) throw ModelError("state space must contain at least one state");
    std::unordered_set<std::string> seen;
    for (const auto& l : labels_) {
      if (l.empty() || l.find_first_of(",\n\r\"") != std::string::npos) {
        throw ModelError("invalid state label '" + l + "'");
      }
      if (!seen.insert(l).second) throw ModelError("duplicate state label '" + l + "'");
    }
  }

  static StateSpace indexed(std::size_t n) {
    std::vector<std::string> labels;
    labels.reserve(n);
    for (std::size_t i = 0; i < n; ++i) labels.push_back(std::to_string(i));
    return StateSpace(std::move(labels));
  }

  std::size_t size() const noexcept { return labels_.size(); }
  const std::string& label(std::size_t i) const { return labels_.at(i); }
  const std::vector<std::string>& labels() const noexcept { return labels_; }

  std::optional<std::size_t> find(std::string_view label) const {
    auto it = std::find(labels_.begin(), labels_.end(), label);
    if (it == labels_.end()) return std::nullopt;
    return static_cast<std::size_t>(it - labels_.begin());
  }

  bool operator==(const StateSpace&) const = default;

 private:
  std::vector<std::string> labels_;
};

namespace detail {

inline void require_finite(const Eigen::Ref<const Matrix>& m, const char* what) {
  if (!m.allFinite()) throw ModelError(std::string(what) + " has non-finite entries");
}

// Partial-pivoting LU; near-singular systems (reciprocal condition estimate
// below 1e-14) are reported as numerical failures.
inline Eigen::PartialPivLU<Matrix> factorize(const Matrix& a, const std::string& what) {
  Eigen::PartialPivLU<Matrix> lu(a);
  const double rc = lu.rcond();
  if (!(rc > 1e-14)) throw NumericalError(what + " is singular (rcond " + std::to_string(rc) + ")");
  return lu;
}

}  // namespace detail

class FiniteFunction {
 public:
  FiniteFunction() = default;
  explicit FiniteFunction(Vector values) : values_(std::move(values)) {
    detail::require_finite(values_, "function");
  }
  FiniteFunction(std::initializer_list<double> values)
      : FiniteFunction(Vector(Eigen::Map<const Vector>(values.begin(),
                                                       static_cast<Eigen::Index>(values.size())))) {}

  static FiniteFunction constant(std::size_t n, double c) {
    return FiniteFunction(Vector::Constant(static_cast<Eigen::Index>(n), c));
  }
  static FiniteFunction zero(std::size_t n) { return constant(n, 0.0); }

  std::size_t size() const noexcept { return static_cast<std::size_t>(values_.size()); }
  double operator()(std::size_t i) const { return values_(static_cast<Eigen::Index>(i)); }
  const Vector& values() const noexcept { return values_; }

 private:
  Vector values_;
};

class WeightFunction {
 public:
  explicit WeightFunction(Vector values) : values_(std::move(values)) {
    detail::require_finite(values_, "weight");
    if (values_.size() == 0) throw ModelError("weight over empty state space");
    if ((values_.array() < 1.0).any()) throw ModelError("weight function must be >= 1 everywhere");
  }
  WeightFunction(std::initializer_list<double> values)
      : WeightFunction(Vector(Eigen::Map<const Vector>(values.begin(),
                                                       static_cast<Eigen::Index>(values.size())))) {}

  static WeightFunction ones(std::size_t n) {
    return WeightFunction(Vector::Ones(static_cast<Eigen::Index>(n)));
  }

  std::size_t size() const noexcept { return static_cast<std::size_t>(values_.size()); }
  double operator()(std::size_t i) const { return values_(static_cast<Eigen::Index>(i)); }
  const Vector& values() const noexcept { return values_; }

 private:
  Vector values_;
};

// Stored as a column vector; semantically a row (acts on the left of kernels).
class FiniteMeasure {
 public:
  FiniteMeasure() = default;
  explicit FiniteMeasure(Vector weights) : weights_(std::move(weights)) {
    detail::require_finite(weights_, "measure");
  }
  FiniteMeasure(std::initializer_list<double> weights)
      : FiniteMeasure(Vector(Eigen::Map<const Vector>(weights.begin(),
                                                      static_cast<Eigen::Index>(weights.size())))) {}

  static FiniteMeasure zero(std::size_t n) {
    return FiniteMeasure(Vector::Zero(static_cast<Eigen::Index>(n)));
  }
  static FiniteMeasure point_mass(std::size_t n, std::size_t at) {
    Vector v = Vector::Zero(static_cast<Eigen::Index>(n));
    v(static_cast<Eigen::Index>(at)) = 1.0;
    return FiniteMeasure(std::move(v));
  }

  std::size_t size() const noexcept { return static_cast<std::size_t>(weights_.size()); }
  double operator()(std::size_t i) const { return weights_(static_cast<Eigen::Index>(i)); }
  const Vector& weights() const noexcept { return weights_; }
  double total_mass() const { return weights_.sum(); }

  bool is_probability(double tol = kStochasticTol) const {
    return (weights_.array() >= 0.0).all() && std::abs(total_mass() - 1.0) <= tol;
  }

 private:
  Vector weights_;
};

class FiniteKernel {
 public:
  FiniteKernel() = default;

  // Signed kernel; no sign restriction.
  static FiniteKernel signed_kernel(Matrix entries) { return FiniteKernel(std::move(entries), true); }

  // Nonnegative kernel; throws ModelError on negative entries.
  static FiniteKernel nonnegative(Matrix entries) { return FiniteKernel(std::move(entries), false); }

  static FiniteKernel identity(std::size_t n) {
    return nonnegative(Matrix::Identity(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n)));
  }
  static FiniteKernel zero(std::size_t n) {
    return nonnegative(Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n)));
  }

  std::size_t size() const noexcept { return static_cast<std::size_t>(entries_.rows()); }
  bool is_signed() const noexcept { return signed_; }
  double operator()(std::size_t x, std::size_t y) const {
    return entries_(static_cast<Eigen::Index>(x), static_cast<Eigen::Index>(y));
  }
  const Matrix& entries() const noexcept { return entries_; }
  Vector row_sums() const { return entries_.rowwise().sum(); }

  bool is_nonnegative() const { return (entries_.array() >= 0.0).all(); }

  bool is_stochastic(double tol = kStochasticTol) const {
    return is_nonnegative() && ((row_sums().array() - 1.0).abs() <= tol).all();
  }

 private:
  FiniteKernel(Matrix entries, bool is_signed) : entries_(std::move(entries)), signed_(is_signed) {
    if (entries_.rows() != entries_.cols()) {
      throw DimensionError("kernel must be square (" + std::to_string(entries_.rows()) + "x" +
                           std::to_string(entries_.cols()) + ")");
    }
    if (entries_.rows() == 0) throw ModelError("kernel over empty state space");
    detail::require_finite(entries_, "kernel");
    if (!signed_ && !is_nonnegative()) throw ModelError("nonnegative kernel has a negative entry");
  }

  Matrix entries_;
  bool signed_ = false;
};

// ---------------------------------------------------------------------------
// Norms

inline double weighted_sup_norm(const FiniteFunction& h, const WeightFunction& w) {
  detail::require_same_size(h.size(), w.size(), "weighted_sup_norm");
  return (h.values().array().abs() / w.values().array()).maxCoeff();
}

inline double operator_norm(const FiniteKernel& q, const WeightFunction& w) {
  detail::require_same_size(q.size(), w.size(), "operator_norm");
  Vector weighted_rows = q.entries().cwiseAbs() * w.values();
  return (weighted_rows.array() / w.values().array()).maxCoeff();
}

inline double measure_norm(const FiniteMeasure& eta, const WeightFunction& w) {
  detail::require_same_size(eta.size(), w.size(), "measure_norm");
  return eta.weights().cwiseAbs().dot(w.values());
}

// ---------------------------------------------------------------------------
// Kernel calculus

inline FiniteKernel compose(const FiniteKernel& q1, const FiniteKernel& q2) {
  detail::require_same_size(q1.size(), q2.size(), "compose");
  Matrix m = q1.entries() * q2.entries();
  if (q1.is_signed() || q2.is_signed()) return FiniteKernel::signed_kernel(std::move(m));
  return FiniteKernel::nonnegative(std::move(m));
}

inline FiniteFunction apply(const FiniteKernel& q, const FiniteFunction& h) {
  detail::require_same_size(q.size(), h.size(), "apply");
  return FiniteFunction(q.entries() * h.values());
}

inline FiniteMeasure apply_measure(const FiniteMeasure& eta, const FiniteKernel& q) {
  detail::require_same_size(eta.size(), q.size(), "apply_measure");
  return FiniteMeasure(q.entries().transpose() * eta.weights());
}

inline double pair(const FiniteMeasure& eta, const FiniteFunction& h) {
  detail::require_same_size(eta.size(), h.size(), "pair");
  return eta.weights().dot(h.values());
}

inline FiniteKernel kernel_power(const FiniteKernel& q, int m) {
  FiniteKernel out = FiniteKernel::identity(q.size());
  if (q.is_signed()) out = FiniteKernel::signed_kernel(out.entries());
  for (int i = 0; i < m; ++i) out = compose(out, q);
  return out;
}

// ---------------------------------------------------------------------------
// Contraction and resolvent

struct ContractionCheck {
  std::optional<int> power;    // smallest m with |||Q^m|||_w < 1, if found
  std::vector<double> norms;   // |||Q^m|||_w for m = 1, 2, ... (up to power or m_max)

  bool contracting() const noexcept { return power.has_value(); }

  std::string describe() const {
    std::ostringstream os;
    if (power) {
      os << "|||K^" << *power << "|||_w = " << norms.back() << " < 1";
    } else {
      os << "inconclusive: no m <= " << norms.size() << " with |||K^m|||_w < 1 (norms:";
      const std::size_t shown = std::min<std::size_t>(norms.size(), 6);
      for (std::size_t i = 0; i < shown; ++i) os << ' ' << norms[i];
      if (norms.size() > shown) os << " ... " << norms.back();
      os << ")";
    }
    return os.str();
  }
};

inline ContractionCheck contraction_power(const FiniteKernel& q, const WeightFunction& w,
                                          int m_max = kDefaultMaxPower) {
  detail::require_same_size(q.size(), w.size(), "contraction_power");
  ContractionCheck out;
  Matrix power = q.entries();
  for (int m = 1; m <= m_max; ++m) {
    if (m > 1) power = power * q.entries();
    Vector rows = power.cwiseAbs() * w.values();
    const double norm = (rows.array() / w.values().array()).maxCoeff();
    out.norms.push_back(norm);
    if (norm < 1.0) {
      out.power = m;
      break;
    }
  }
  return out;
}

// Factorized (I - K)^{-1}; one LU shared by every solve against it.
class Resolvent {
 public:
  Resolvent(const FiniteKernel& k, const WeightFunction& w, int m_max = kDefaultMaxPower)
      : n_(k.size()), check_(contraction_power(k, w, m_max)) {
    if (!check_.contracting()) {
      throw RefusalError("resolvent requires |||K^m|||_w < 1 for some m (condition (a)); " +
                         check_.describe());
    }
    Matrix a = Matrix::Identity(k.entries().rows(), k.entries().cols()) - k.entries();
    lu_ = detail::factorize(a, "I - K");
    kernel_ = k.entries();
  }

  std::size_t size() const noexcept { return n_; }
  const ContractionCheck& contraction() const noexcept { return check_; }

  // G f with G = sum_n K^n.
  FiniteFunction solve(const FiniteFunction& f) const {
    detail::require_same_size(n_, f.size(), "resolvent solve");
    Vector u = lu_.solve(f.values());
    // one step of refinement keeps residuals at roundoff for moderately conditioned K
    Vector r = f.values() - (u - kernel_ * u);
    u += lu_.solve(r);
    return FiniteFunction(std::move(u));
  }

  // eta G
  FiniteMeasure solve_left(const FiniteMeasure& eta) const {
    detail::require_same_size(n_, eta.size(), "resolvent solve_left");
    Vector v = lu_.transpose().solve(eta.weights());
    Vector r = eta.weights() - (v - kernel_.transpose() * v);
    v += Vector(lu_.transpose().solve(r));
    return FiniteMeasure(std::move(v));
  }

  Matrix dense() const {
    return lu_.inverse();
  }

 private:
  std::size_t n_;
  ContractionCheck check_;
  Eigen::PartialPivLU<Matrix> lu_;
  Matrix kernel_;
};

inline FiniteFunction resolvent_solve(const FiniteKernel& k, const FiniteFunction& f,
                                      const WeightFunction& w, int m_max = kDefaultMaxPower) {
  detail::require_same_size(k.size(), f.size(), "resolvent_solve");
  return Resolvent(k, w, m_max).solve(f);
}

}  // namespace mcsens

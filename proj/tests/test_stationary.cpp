#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace mcsens;
using namespace mcsens::testing;

TEST(StationaryDistribution, Examples) {
  EXPECT_EQ(stationary_distribution(FiniteKernel::identity(1)).weights(), Vector::Ones(1));
  for (double t : {0.1, 0.37, 0.9}) {
    const auto fam = families::symmetric_two_state(0.5, 0.45);
    const auto pi = stationary_distribution(fam.eval_kernel(t));
    EXPECT_NEAR(pi(0), 0.5, 1e-15);
    EXPECT_NEAR(pi(1), 0.5, 1e-15);
  }
  const double q = 0.3, theta = 0.6;
  const auto pi = stationary_distribution(families::two_state(theta, q, 0.1).base());
  EXPECT_NEAR(pi(0), q / (q + theta), 1e-15);
  EXPECT_NEAR(pi(1), theta / (q + theta), 1e-15);
}

TEST(StationaryDistribution, TransientStatesGetZeroMass) {
  Matrix p(3, 3);
  p << 0.2, 0.3, 0.5, 0.0, 0.4, 0.6, 0.0, 0.7, 0.3;
  const auto pi = stationary_distribution(FiniteKernel::nonnegative(p));
  EXPECT_NEAR(pi(0), 0.0, 1e-15);
  EXPECT_NEAR(pi(1), 0.7 / 1.3, 1e-14);
}

TEST(StationaryDistribution, MultipleRecurrentClassesNamed) {
  Matrix p(4, 4);
  p << 0.5, 0.5, 0, 0, 0.5, 0.5, 0, 0, 0, 0, 1, 0, 0.25, 0.25, 0.25, 0.25;
  try {
    stationary_distribution(FiniteKernel::nonnegative(p));
    FAIL();
  } catch (const ModelError& e) {
    EXPECT_NE(std::string(e.what()).find("{0,1}"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("{2}"), std::string::npos);
  }
  EXPECT_THROW(stationary_distribution(FiniteKernel::nonnegative(0.5 * Matrix::Identity(2, 2))), ModelError);
}

TEST(StationaryDistribution, MatchesPowerIterationOnRandomChains) {
  Rng rng(1);
  for (int i = 0; i < 30; ++i) {
    const Eigen::Index n = 1 + static_cast<Eigen::Index>(rng() % 25);
    const Matrix p = random_stochastic(rng, n, 0.6);
    const auto pi = stationary_distribution(FiniteKernel::nonnegative(p));
    EXPECT_LE((p.transpose() * pi.weights() - pi.weights()).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_NEAR(pi.total_mass(), 1.0, 1e-12);
    EXPECT_LE((pi.weights() - power_iteration_pi(p)).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(Poisson, Examples) {
  Rng rng(2);
  const Matrix p = random_stochastic(rng, 5);
  const auto pk = FiniteKernel::nonnegative(p);
  const auto pi = stationary_distribution(pk);
  EXPECT_LE(poisson_solve(pk, pi, FiniteFunction::constant(5, 3.0)).values().cwiseAbs().maxCoeff(), 1e-15);

  // two-state, f = (0, 1): g(0) - g(1) = -1/(q+theta) from (I - P) g = f - pi f, and pi g = 0
  const double q = 0.3, theta = 0.3;
  const auto two = families::two_state(theta, q, 0.1).base();
  const auto pi2 = stationary_distribution(two);
  const auto g = poisson_solve(two, pi2, FiniteFunction{0.0, 1.0});
  const double s = q + theta;
  EXPECT_NEAR(g(0), -theta / (s * s), 1e-15);
  EXPECT_NEAR(g(1), q / (s * s), 1e-15);
}

TEST(Poisson, ResidualAndNormalizationOnRandomChains) {
  Rng rng(3);
  for (int i = 0; i < 30; ++i) {
    const Eigen::Index n = 1 + static_cast<Eigen::Index>(rng() % 30);
    const auto pk = FiniteKernel::nonnegative(random_stochastic(rng, n, 0.5));
    const auto pi = stationary_distribution(pk);
    const FiniteFunction f(random_vector(rng, n, -5, 5));
    const auto g = poisson_solve(pk, pi, f);
    const Vector fc = f.values().array() - pair(pi, f);
    EXPECT_LE((g.values() - pk.entries() * g.values() - fc).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_NEAR(pair(pi, g), 0.0, 1e-10);
    const FundamentalSolver z(pk);
    EXPECT_LE((z.poisson(f).values() - g.values()).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(StationaryDerivative, TwoStateClosedForms) {
  const double q = 0.3, theta0 = 0.3;
  const auto fam = families::two_state(theta0, q, 0.1);
  const auto d = stationary_measure_derivative(fam);
  const double s = q + theta0;
  EXPECT_NEAR(d(0), -q / (s * s), 1e-12);
  EXPECT_NEAR(d(1), q / (s * s), 1e-12);
  EXPECT_NEAR(d(1), 0.8333333333333334, 1e-12);
  EXPECT_NEAR(stationary_functional_derivative(fam, FiniteFunction{0.0, 1.0}), q / (s * s), 1e-12);
  const auto h = higher_stationary_derivatives(fam, 2);
  EXPECT_NEAR(h[2](1), -2.0 * q / (s * s * s), 1e-11);
  EXPECT_EQ(h[1].weights(), d.weights());
}

TEST(StationaryDerivative, ConstantAndSymmetricFamiliesAreZero) {
  Rng rng(4);
  const auto c = families::constant(FiniteKernel::nonnegative(random_stochastic(rng, 5)));
  const auto hc = higher_stationary_derivatives(c, 3);
  for (int l = 1; l <= 3; ++l) EXPECT_EQ(hc[static_cast<std::size_t>(l)].weights().cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(stationary_functional_derivative(c, FiniteFunction(random_vector(rng, 5))), 0.0);
  const auto sym = stationary_measure_derivative(families::symmetric_two_state(0.4, 0.1));
  EXPECT_LE(sym.weights().cwiseAbs().maxCoeff(), 1e-15);
}

TEST(StationaryDerivative, RoutesAgreeAndMatchFiniteDifference) {
  Rng rng(5);
  const double h = 1e-4;
  for (int i = 0; i < 10; ++i) {
    const auto chain = random_poly_chain(rng, 10, 0.3);
    const auto fam = chain.family();
    const FiniteFunction f(random_vector(rng, 10, -3, 3));
    const auto d = stationary_measure_derivative(fam);
    const double alpha = stationary_functional_derivative(fam, f);
    EXPECT_NEAR(pair(d, f), alpha, 1e-10 * (1 + std::abs(alpha)));
    EXPECT_NEAR(d.total_mass(), 0.0, 1e-10);
    auto pif = [&](double t) { return pair(stationary_distribution(fam.eval_kernel(t)), f); };
    const double fd = central_difference(pif, fam.theta0(), h);
    const double fd2 = central_difference(pif, fam.theta0(), h / 2);
    EXPECT_LE(std::abs(fd - alpha), std::max(1e-6, 1e-4 * std::abs(alpha)));
    const double e1 = std::abs(fd - alpha), e2 = std::abs(fd2 - alpha);
    if (e1 > 1e-9) {
      EXPECT_GT(e1 / e2, 3.0);
      EXPECT_LT(e1 / e2, 5.0);
    }
  }
}

TEST(StationaryDerivative, PoissonConstantDoesNotMatter) {
  Rng rng(6);
  const auto fam = random_poly_chain(rng, 6).family();
  const FiniteFunction f(random_vector(rng, 6));
  const FundamentalSolver z(fam.base());
  const Vector g = z.poisson(f).values();
  const Matrix p1 = fam.score_kernel().entries();
  const double a = z.pi().weights().dot(p1 * g);
  const double b = z.pi().weights().dot(p1 * Vector(g.array() + 17.0));
  EXPECT_NEAR(a, b, 1e-12);
}

TEST(StationaryDerivative, HigherOrdersMatchFiniteDifferences) {
  Rng rng(7);
  const double h = 1e-4;
  for (int i = 0; i < 5; ++i) {
    const auto chain = random_poly_chain(rng, 6);
    const auto d = higher_stationary_derivatives(chain.family(), 3);
    for (int l = 2; l <= 3; ++l) {
      const Vector up = higher_stationary_derivatives(chain.family(h), l - 1)[static_cast<std::size_t>(l - 1)].weights();
      const Vector dn = higher_stationary_derivatives(chain.family(-h), l - 1)[static_cast<std::size_t>(l - 1)].weights();
      const Vector fd = (up - dn) / (2 * h);
      const Vector& ex = d[static_cast<std::size_t>(l)].weights();
      EXPECT_LE((fd - ex).cwiseAbs().maxCoeff(), std::max(1e-6, 1e-4 * ex.cwiseAbs().maxCoeff()));
      EXPECT_NEAR(ex.sum(), 0.0, 1e-9);
    }
  }
  EXPECT_THROW(higher_stationary_derivatives(families::exponential_tilt(FiniteKernel::identity(1),
                                                                         Matrix::Zero(1, 1), 0.0, 0.1),
                                             4),
               ModelError);
}

TEST(Minorization, Examples) {
  Matrix p(2, 2);
  p << 0.5, 0.5, 0.25, 0.75;
  const auto fam = families::constant(FiniteKernel::nonnegative(p));
  const auto c = check_minorization(fam, {0, 1}, 1, {});
  ASSERT_TRUE(c);
  EXPECT_EQ(c->power, 1);
  EXPECT_DOUBLE_EQ(c->lambda, 0.75);
  EXPECT_NEAR(c->phi(0), 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(c->phi(1), 2.0 / 3.0, 1e-15);

  Matrix cyc(2, 2);
  cyc << 0, 1, 1, 0;
  EXPECT_FALSE(check_minorization(families::constant(FiniteKernel::nonnegative(cyc)), {0, 1}, 1, {}));
  EXPECT_FALSE(check_minorization(families::constant(FiniteKernel::nonnegative(cyc)), {0, 1}, 10, {}));

  const auto one = check_minorization(families::constant(FiniteKernel::identity(1)), {0}, 1, {});
  ASSERT_TRUE(one);
  EXPECT_EQ(one->lambda, 1.0);
  EXPECT_EQ(one->phi(0), 1.0);
}

TEST(Minorization, UsesEveryGridTheta) {
  const auto fam = families::two_state(0.5, 0.5, 0.3);
  const auto c = check_minorization(fam, {0}, 1, fam.band_grid(5));
  ASSERT_TRUE(c);
  // min over theta in [0.2, 0.8] of (1 - theta, theta) = (0.2, 0.2)
  EXPECT_NEAR(c->lambda, 0.4, 1e-15);
}

TEST(GeometricDrift, Examples) {
  Rng rng(8);
  const auto p = FiniteKernel::nonnegative(random_stochastic(rng, 4));
  GeometricDriftCertificate all{WeightFunction::ones(4), 0.5, 0.5, {0, 1, 2, 3}};
  const auto r = check_geometric_drift(p, all);
  EXPECT_TRUE(r.pass);
  EXPECT_LE(r.slack.cwiseAbs().maxCoeff(), 1e-15);
  GeometricDriftCertificate none{WeightFunction::ones(4), 0.5, 0.5, {}};
  const auto r2 = check_geometric_drift(p, none);
  EXPECT_FALSE(r2.pass);
  EXPECT_TRUE((r2.slack.array() < 0).all());
}

TEST(GeometricDrift, ReflectedRandomWalk) {
  // up with probability a, down with 1 - a, reflected at 0 and N - 1
  const int n = 40;
  const double a = 0.3, z = 1.5;
  Matrix p = Matrix::Zero(n, n);
  for (int x = 0; x < n; ++x) {
    p(x, std::min(x + 1, n - 1)) += a;
    p(x, std::max(x - 1, 0)) += 1 - a;
  }
  Vector w(n);
  for (int x = 0; x < n; ++x) w(x) = std::pow(z, x);
  // P w / w = a z + (1 - a)/z away from the edges
  const double r = a * z + (1 - a) / z;
  ASSERT_LT(r, 1.0);
  const double c = a * z + (1 - a) - r + 1e-12;  // worst case at x = 0
  const auto rep = check_geometric_drift(FiniteKernel::nonnegative(p), {WeightFunction(w), r, c, {0}});
  EXPECT_TRUE(rep.pass);
}

TEST(SubgeometricDrift, ConstantFamilyWithLargeConstants) {
  Rng rng(9);
  const auto fam = families::constant(FiniteKernel::nonnegative(random_stochastic(rng, 5)));
  StationaryCertificate cert;
  cert.q = FiniteFunction::constant(5, 1.0);
  cert.v0 = FiniteFunction::constant(5, 100.0);
  cert.v1 = FiniteFunction::constant(5, 1e4);
  cert.kappa = power_kappa(2.0);
  cert.small_set = {0, 1, 2, 3, 4};
  cert.c0 = 1.0;
  cert.c1 = 101.0 * 101.0;
  const FiniteFunction f(random_vector(rng, 5));
  const auto rep = check_subgeometric_drift(fam, cert, f);
  EXPECT_TRUE(rep.pass());
  EXPECT_TRUE(rep.stationary_bound_holds);
  EXPECT_TRUE(rep.derivative_bound_holds);
  EXPECT_EQ(rep.alpha_prime, 0.0);
}

TEST(SubgeometricDrift, ConstructedCertificatesPassWithBounds) {
  Rng rng(10);
  for (int i = 0; i < 10; ++i) {
    const auto fam = random_poly_chain(rng, 8, 0.3).family();
    const FiniteFunction q(random_vector(rng, 8, 0, 4));
    auto cert = construct_stationary_certificate(fam, q, {0, 1}, power_kappa(1.5));
    const FiniteFunction f(random_vector(rng, 8, -1, 1).cwiseProduct(q.values()));
    const auto rep = check_subgeometric_drift(fam, cert, f);
    EXPECT_TRUE(rep.drift_pass);
    EXPECT_TRUE(rep.kappa_pass);
    EXPECT_TRUE(rep.stationary_bound_holds);
    EXPECT_TRUE(rep.derivative_bound_holds);
    EXPECT_NEAR(rep.alpha_prime, stationary_functional_derivative(fam, f), 1e-12);
  }
}

TEST(SubgeometricDrift, TwoStateCertificateIsExplicit) {
  // A = {0}; off A the v0 drift reads v0(1) - 1 = 0.7 v0(1), so v0(1) = 1/0.3
  const auto fam = families::two_state(0.3, 0.3, 0.1);
  const auto cert = construct_stationary_certificate(fam, FiniteFunction{1.0, 1.0}, {0}, power_kappa(1.5));
  EXPECT_EQ(cert.v0(0), 0.0);
  EXPECT_NEAR(cert.v0(1), 1.0 / 0.3, 1e-12);
  EXPECT_NEAR(cert.c0, 1.0 + 0.4 / 0.3, 1e-8);
  const auto rep = check_subgeometric_drift(fam, cert, FiniteFunction{0.0, 1.0});
  EXPECT_TRUE(rep.drift_pass);
  EXPECT_TRUE(rep.derivative_bound_holds);
}

TEST(SubgeometricDrift, KappaBelowIdentityFails) {
  Rng rng(11);
  const auto fam = random_poly_chain(rng, 4).family();
  auto cert = construct_stationary_certificate(fam, FiniteFunction::constant(4, 1.0), {0}, power_kappa(1.5));
  cert.kappa = [](double x) { return std::sqrt(x); };
  const auto rep = check_subgeometric_drift(fam, cert, FiniteFunction::constant(4, 1.0));
  EXPECT_FALSE(rep.kappa_pass);
}

#include <gtest/gtest.h>

#include <sstream>

#include "test_support.hpp"

using namespace mcsens;
using namespace mcsens::testing;

TEST(StateSpace, RejectsDuplicatesAndEmpty) {
  EXPECT_THROW(StateSpace({}), ModelError);
  EXPECT_THROW(StateSpace({"a", "a"}), ModelError);
  EXPECT_THROW(StateSpace({"a,b"}), ModelError);
  StateSpace s({"x", "y"});
  EXPECT_EQ(s.size(), 2u);
  EXPECT_EQ(*s.find("y"), 1u);
  EXPECT_FALSE(s.find("z"));
}

TEST(WeightFunction, EntriesMustBeAtLeastOne) {
  EXPECT_THROW(WeightFunction({1.0, 0.5}), ModelError);
  EXPECT_NO_THROW(WeightFunction({1.0, 3.0}));
}

TEST(FiniteKernel, NonnegativeRejectsNegativeEntries) {
  Matrix m(2, 2);
  m << 0.5, -0.1, 0.0, 1.0;
  EXPECT_THROW(FiniteKernel::nonnegative(m), ModelError);
  EXPECT_NO_THROW(FiniteKernel::signed_kernel(m));
  EXPECT_THROW(FiniteKernel::signed_kernel(Matrix(2, 3)), DimensionError);
}

TEST(WeightedSupNorm, Examples) {
  const WeightFunction w{1.0, 2.0};
  EXPECT_EQ(weighted_sup_norm(FiniteFunction::zero(2), w), 0.0);
  EXPECT_DOUBLE_EQ(weighted_sup_norm(FiniteFunction(w.values()), w), 1.0);
  EXPECT_DOUBLE_EQ(weighted_sup_norm(FiniteFunction{3.0, -4.0}, w), 3.0);
  EXPECT_THROW(weighted_sup_norm(FiniteFunction{1.0}, w), DimensionError);
}

TEST(OperatorNorm, Examples) {
  const WeightFunction w{1.0, 2.0};
  EXPECT_DOUBLE_EQ(operator_norm(FiniteKernel::identity(2), w), 1.0);
  Matrix p(2, 2);
  p << 0.3, 0.7, 0.6, 0.4;
  EXPECT_NEAR(operator_norm(FiniteKernel::nonnegative(p), WeightFunction::ones(2)), 1.0, 1e-15);
  Matrix q(2, 2);
  q << 0.5, -0.25, 0.1, 0.2;
  // rows: (0.5 + 0.25*2)/1 = 1.0, (0.1 + 0.2*2)/2 = 0.25
  EXPECT_DOUBLE_EQ(operator_norm(FiniteKernel::signed_kernel(q), w), 1.0);
}

TEST(OperatorNorm, RandomTestFunctionsNeverExceedRowSumAndSignPatternAttainsIt) {
  Rng rng(11);
  for (int inst = 0; inst < 100; ++inst) {
    const Eigen::Index n = 1 + static_cast<Eigen::Index>(rng() % 8);
    const FiniteKernel q = FiniteKernel::signed_kernel(random_signed(rng, n));
    const WeightFunction w = random_weight(rng, n);
    const double norm = operator_norm(q, w);
    double best = 0.0;
    for (int k = 0; k < 1000; ++k) {
      Vector h = random_vector(rng, n).cwiseProduct(w.values());
      h /= weighted_sup_norm(FiniteFunction(h), w);
      best = std::max(best, weighted_sup_norm(apply(q, FiniteFunction(h)), w));
    }
    EXPECT_LE(best, norm + 1e-12);
    Eigen::Index xstar = 0;
    ((q.entries().cwiseAbs() * w.values()).cwiseQuotient(w.values())).maxCoeff(&xstar);
    Vector h(n);
    for (Eigen::Index y = 0; y < n; ++y) h(y) = (q.entries()(xstar, y) >= 0 ? 1.0 : -1.0) * w.values()(y);
    EXPECT_NEAR(weighted_sup_norm(apply(q, FiniteFunction(h)), w), norm, 1e-12 * (1.0 + norm));
  }
}

TEST(MeasureNorm, Examples) {
  EXPECT_EQ(measure_norm(FiniteMeasure::zero(2), WeightFunction{1.0, 3.0}), 0.0);
  EXPECT_DOUBLE_EQ(measure_norm(FiniteMeasure{0.25, 0.75}, WeightFunction::ones(2)), 1.0);
  EXPECT_DOUBLE_EQ(measure_norm(FiniteMeasure{0.5, -0.5}, WeightFunction{1.0, 3.0}), 2.0);
}

TEST(Calculus, ComposeApplyPair) {
  Rng rng(3);
  const FiniteKernel q = FiniteKernel::signed_kernel(random_signed(rng, 3));
  EXPECT_EQ(compose(FiniteKernel::identity(3), q).entries(), q.entries());
  const FiniteFunction ones = FiniteFunction::constant(3, 1.0);
  EXPECT_TRUE(apply(q, ones).values().isApprox(q.row_sums()));
  const FiniteFunction h{2.0, 5.0, -1.0};
  EXPECT_EQ(pair(FiniteMeasure::point_mass(3, 0), h), 2.0);
  const FiniteMeasure eta{1.0, 0.0, 0.0};
  EXPECT_TRUE(apply_measure(eta, q).weights().isApprox(q.entries().row(0).transpose()));
  EXPECT_THROW(compose(q, FiniteKernel::identity(2)), DimensionError);
}

TEST(Calculus, SubmultiplicativityAndBoundChain) {
  Rng rng(5);
  for (int inst = 0; inst < 200; ++inst) {
    const Eigen::Index n = 1 + static_cast<Eigen::Index>(rng() % 10);
    const FiniteKernel q1 = FiniteKernel::signed_kernel(random_signed(rng, n));
    const FiniteKernel q2 = FiniteKernel::signed_kernel(random_signed(rng, n));
    const WeightFunction w = random_weight(rng, n);
    const FiniteFunction h(random_vector(rng, n, -5, 5));
    const FiniteMeasure eta(random_vector(rng, n, -5, 5));
    EXPECT_LE(operator_norm(compose(q1, q2), w), operator_norm(q1, w) * operator_norm(q2, w) + 1e-12);
    const double hn = weighted_sup_norm(h, w), en = measure_norm(eta, w), qn = operator_norm(q1, w);
    EXPECT_LE(weighted_sup_norm(apply(q1, h), w), qn * hn * (1 + 1e-12));
    EXPECT_LE(measure_norm(apply_measure(eta, q1), w), en * qn * (1 + 1e-12));
    EXPECT_LE(std::abs(pair(eta, h)), en * hn * (1 + 1e-12));
  }
}

TEST(ContractionPower, Examples) {
  const auto half = FiniteKernel::nonnegative(0.5 * Matrix::Identity(3, 3));
  EXPECT_EQ(contraction_power(half, WeightFunction::ones(3)).power, 1);
  const auto id = contraction_power(FiniteKernel::identity(2), WeightFunction::ones(2), 10);
  EXPECT_FALSE(id.contracting());
  EXPECT_EQ(id.norms.size(), 10u);
  EXPECT_NE(id.describe().find("inconclusive"), std::string::npos);
  Matrix q(2, 2);
  q << 0.0, 1.2, 0.4, 0.0;
  const auto c = contraction_power(FiniteKernel::nonnegative(q), WeightFunction::ones(2));
  ASSERT_TRUE(c.contracting());
  EXPECT_EQ(*c.power, 2);
  EXPECT_DOUBLE_EQ(c.norms[0], 1.2);
  EXPECT_NEAR(c.norms[1], 0.48, 1e-15);
}

TEST(Resolvent, Examples) {
  const FiniteFunction f{1.0, -2.0, 3.0};
  const auto w = WeightFunction::ones(3);
  EXPECT_TRUE(resolvent_solve(FiniteKernel::zero(3), f, w).values().isApprox(f.values()));
  const auto ci = FiniteKernel::nonnegative(0.25 * Matrix::Identity(3, 3));
  EXPECT_TRUE(resolvent_solve(ci, f, w).values().isApprox(f.values() / 0.75, 1e-15));
  EXPECT_THROW(resolvent_solve(FiniteKernel::identity(3), f, w), RefusalError);
  try {
    resolvent_solve(FiniteKernel::identity(3), f, w, 4);
  } catch (const RefusalError& e) {
    EXPECT_NE(std::string(e.what()).find("inconclusive"), std::string::npos);
  }
}

TEST(Resolvent, MatchesTruncatedNeumannAndResidual) {
  Rng rng(17);
  for (int inst = 0; inst < 100; ++inst) {
    const Eigen::Index n = 1 + static_cast<Eigen::Index>(rng() % 30);
    const Matrix k = random_substochastic(rng, n, 0.9);
    const FiniteFunction f = FiniteFunction::constant(static_cast<std::size_t>(n), 1.0);
    const auto u = resolvent_solve(FiniteKernel::nonnegative(k), f, WeightFunction::ones(static_cast<std::size_t>(n)));
    const int terms = 400;
    const Vector ref = neumann_sum(k, f.values(), terms);
    const double unorm = u.values().cwiseAbs().maxCoeff();
    EXPECT_LE((u.values() - ref).cwiseAbs().maxCoeff(), std::pow(0.9, terms + 1) * unorm + 1e-12 * unorm);
    EXPECT_LE(((u.values() - k * u.values()) - f.values()).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(Resolvent, LeftSolveIsTransposeOfRightSolve) {
  Rng rng(19);
  const Matrix k = random_substochastic(rng, 6, 0.8);
  const Resolvent g(FiniteKernel::nonnegative(k), WeightFunction::ones(6));
  const FiniteMeasure eta(random_vector(rng, 6));
  const FiniteFunction h(random_vector(rng, 6));
  EXPECT_NEAR(pair(g.solve_left(eta), h), pair(eta, g.solve(h)), 1e-13);
}

TEST(Resolvent, OneStateSpace) {
  const auto k = FiniteKernel::nonnegative(Matrix::Constant(1, 1, 0.5));
  EXPECT_DOUBLE_EQ(resolvent_solve(k, FiniteFunction{1.0}, WeightFunction::ones(1))(0), 2.0);
}

TEST(Csv, RoundTripIsBitExact) {
  Rng rng(23);
  const StateSpace s({"a", "b", "c"});
  const FiniteKernel q = FiniteKernel::signed_kernel(random_signed(rng, 3, 1e3));
  std::stringstream ks;
  csv::write(ks, s, q);
  StateSpace back = StateSpace::indexed(1);
  const FiniteKernel q2 = csv::read_kernel(ks, &back);
  EXPECT_EQ(back, s);
  EXPECT_EQ(q2.entries(), q.entries());

  const FiniteFunction h(random_vector(rng, 3, -1e-300, 1e300));
  std::stringstream hs;
  csv::write(hs, s, h);
  EXPECT_EQ(csv::read_function(hs).values(), h.values());

  std::stringstream bad("a,b\n1,2,3\n");
  EXPECT_THROW(csv::read_function(bad), DimensionError);
  std::stringstream junk("a\nx1\n");
  EXPECT_THROW(csv::read_function(junk), SchemaError);
}

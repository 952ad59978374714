#include "gmmclass/em.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace gmmclass;

namespace {

Matrix column(std::initializer_list<double> v) {
  Matrix out(static_cast<Index>(v.size()), 1);
  Index i = 0;
  for (double x : v) out(i++, 0) = x;
  return out;
}

Gmm twoComponents1d(double w0, double mu0, double mu1, double var = 1.0) {
  Gmm p;
  p.weights = Vector(2);
  p.weights << w0, 1 - w0;
  p.means = Matrix(2, 1);
  p.means << mu0, mu1;
  p.variances = Matrix::Constant(2, 1, var);
  return p;
}

Matrix sampleMixture(Index n, Index d, Index modes, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  Matrix centers(modes, d);
  for (Index i = 0; i < centers.size(); ++i) centers(i) = 3 * normal(rng);
  std::uniform_int_distribution<Index> pick(0, modes - 1);
  Matrix X(n, d);
  for (Index i = 0; i < n; ++i) {
    const Index k = pick(rng);
    for (Index j = 0; j < d; ++j) X(i, j) = centers(k, j) + 0.7 * normal(rng);
  }
  return X;
}

double entropicObjective(const Matrix& cost, const Matrix& plan, double eps) {
  double v = 0;
  for (Index i = 0; i < plan.size(); ++i) {
    if (plan(i) > 0) v += plan(i) * cost(i) + eps * plan(i) * std::log(plan(i));
  }
  return v;
}

}  // namespace

TEST(EStepVanilla, SingleComponentTakesEverything) {
  Gmm p;
  p.weights = Vector::Ones(1);
  p.means = Matrix::Zero(1, 2);
  p.variances = Matrix::Ones(1, 2);
  std::mt19937_64 rng(1);
  const Matrix X = sampleMixture(7, 2, 2, rng);
  EXPECT_TRUE((eStepVanilla(X, p).q.array() == 1.0).all());
}

TEST(EStepVanilla, EquidistantSampleSplitsEvenly) {
  const auto q = eStepVanilla(column({0.0}), twoComponents1d(0.5, -2, 2)).q;
  EXPECT_NEAR(q(0, 0), 0.5, 1e-15);
  EXPECT_NEAR(q(0, 1), 0.5, 1e-15);
}

TEST(EStepVanilla, EqualLikelihoodsReturnThePrior) {
  const auto q = eStepVanilla(column({0.0}), twoComponents1d(0.8, -1, 1)).q;
  EXPECT_NEAR(q(0, 0), 0.8, 1e-14);
  EXPECT_NEAR(q(0, 1), 0.2, 1e-14);
}

TEST(EStepVanilla, MatchesDirectFormula) {
  std::mt19937_64 rng(3);
  const Matrix X = sampleMixture(30, 3, 3, rng);
  Gmm p = initializeFromSamples(X, 3, ResponsibilityMode::Sum, rng);
  p.weights << 0.5, 0.3, 0.2;
  const auto q = eStepVanilla(X, p).q;
  const oracle::Mixture g{p.weights, p.means, p.variances};
  for (Index n = 0; n < X.rows(); ++n) {
    const auto t = oracle::jointTerms(X.row(n).transpose(), g);
    const auto lse = oracle::logSumExp(t);
    for (Index m = 0; m < 3; ++m) EXPECT_NEAR(q(n, m), static_cast<double>(std::exp(t[m] - lse)), 1e-13);
  }
  EXPECT_THROW(eStepVanilla(Matrix::Zero(3, 2), p), ContractViolation);
}

TEST(EStepSinkhorn, SingleSampleSingleComponent) {
  Gmm p;
  p.weights = Vector::Ones(1);
  p.means = Matrix::Zero(1, 1);
  p.variances = Matrix::Ones(1, 1);
  const auto r = eStepSinkhorn(column({3.0}), p);
  EXPECT_DOUBLE_EQ(r.q(0, 0), 1.0);
  EXPECT_FALSE(r.fewerSamplesThanComponents);
}

TEST(EStepSinkhorn, ConstantFeaturesSplitEvenly) {
  const auto r = eStepSinkhorn(column({0.4, 0.4, 0.4, 0.4, 0.4, 0.4}), twoComponents1d(0.5, -1, 3));
  EXPECT_TRUE(r.converged);
  for (Index i = 0; i < r.q.size(); ++i) EXPECT_NEAR(r.q(i), 0.5, 1e-9);
}

TEST(EStepSinkhorn, SymmetricPairsMatchBruteForce) {
  const Matrix X = column({-1.1, -0.9, 0.9, 1.1});
  const Gmm p = twoComponents1d(0.5, -1, 1, 0.5);
  const double eps = 0.05;
  const auto r = eStepSinkhorn(X, p, {eps, 1000, 1e-12});
  ASSERT_TRUE(r.converged);
  for (Index n = 0; n < 4; ++n) EXPECT_GT(r.q(n, n < 2 ? 0 : 1), 0.99);

  // Search all plans with q(n,0) = a_n, sum a_n = 2 (column mass N/M), first
  // on a 0.01 grid and then on a 0.001 grid around the coarse minimum.
  const Matrix cost = buildCost(X, p);
  auto planOf = [](double a0, double a1, double a2) {
    Matrix plan(4, 2);
    const double a3 = 2 - a0 - a1 - a2;
    const double a[] = {a0, a1, a2, a3};
    for (int n = 0; n < 4; ++n) {
      plan(n, 0) = a[n];
      plan(n, 1) = 1 - a[n];
    }
    return plan;
  };
  auto search = [&](double lo0, double lo1, double lo2, double span, double step) {
    double best = std::numeric_limits<double>::infinity();
    Matrix argBest;
    const int steps = static_cast<int>(std::lround(span / step));
    for (int i = 0; i <= steps; ++i) {
      for (int j = 0; j <= steps; ++j) {
        for (int k = 0; k <= steps; ++k) {
          const double a0 = lo0 + i * step, a1 = lo1 + j * step, a2 = lo2 + k * step;
          const double a3 = 2 - a0 - a1 - a2;
          if (a0 < 0 || a1 < 0 || a2 < 0 || a0 > 1 || a1 > 1 || a2 > 1 || a3 < 0 || a3 > 1) continue;
          const Matrix plan = planOf(a0, a1, a2);
          const double v = entropicObjective(cost, plan, eps);
          if (v < best) {
            best = v;
            argBest = plan;
          }
        }
      }
    }
    return argBest;
  };
  const Matrix coarse = search(0, 0, 0, 1, 0.01);
  const Matrix fine = search(coarse(0, 0) - 0.02, coarse(1, 0) - 0.02, coarse(2, 0) - 0.02, 0.04, 0.001);
  EXPECT_LT((fine - r.q).cwiseAbs().maxCoeff(), 2e-3);
}

TEST(EStepSinkhorn, ColumnMassesAreEquipartitioned) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix X = sampleMixture(60, 2, 3, rng);
    const Gmm p = initializeFromSamples(X, 4, ResponsibilityMode::Sum, rng);
    const auto r = eStepSinkhorn(X, p, {0.5, 10000, 1e-9});
    ASSERT_TRUE(r.converged);
    for (Index m = 0; m < 4; ++m) EXPECT_NEAR(r.q.col(m).sum(), 15.0, 1e-5 * 15.0);
    for (Index n = 0; n < 60; ++n) EXPECT_NEAR(r.q.row(n).sum(), 1.0, 1e-12);
  }
}

TEST(EStepSinkhorn, FlagsFewerSamplesThanComponents) {
  std::mt19937_64 rng(7);
  const Matrix X = sampleMixture(2, 2, 1, rng);
  Gmm p;
  p.weights = Vector::Constant(3, 1.0 / 3);
  p.means = Matrix::Zero(3, 2);
  p.means(1, 0) = 1;
  p.means(2, 1) = 1;
  p.variances = Matrix::Ones(3, 2);
  const auto r = eStepSinkhorn(X, p);
  EXPECT_TRUE(r.fewerSamplesThanComponents);
  for (Index m = 0; m < 3; ++m) EXPECT_NEAR(r.q.col(m).sum(), 2.0 / 3.0, 1e-5);
}

TEST(MStep, HardAssignmentGivesSampleMoments) {
  const Matrix X = column({1, 2, 4, 9});
  Responsibilities r;
  r.q = Matrix::Zero(4, 2);
  r.q.col(0).setOnes();
  const auto out = mStep(X, r, 1e-6, EmVariant::Vanilla);
  EXPECT_DOUBLE_EQ(out.params.weights(0), 1.0);
  EXPECT_DOUBLE_EQ(out.params.weights(1), 0.0);
  EXPECT_NEAR(out.params.means(0, 0), 4.0, 1e-15);
  EXPECT_NEAR(out.params.variances(0, 0), (9 + 4 + 0 + 25) / 4.0, 1e-14);
  ASSERT_EQ(out.emptyComponents.size(), 1u);
  EXPECT_EQ(out.emptyComponents[0], 1);
}

TEST(MStep, UniformResponsibilitiesOnSymmetricData) {
  const Matrix X = column({-1, 1});
  Responsibilities r;
  r.q = Matrix::Constant(2, 2, 0.5);
  for (auto variant : {EmVariant::Vanilla, EmVariant::Sinkhorn}) {
    const auto out = mStep(X, r, 1e-6, variant);
    for (Index m = 0; m < 2; ++m) {
      EXPECT_NEAR(out.params.means(m, 0), 0.0, 1e-15);
      EXPECT_NEAR(out.params.variances(m, 0), 1.0, 1e-15);
      EXPECT_NEAR(out.params.weights(m), 0.5, 1e-15);
    }
  }
}

TEST(MStep, WeightedMeanByHand) {
  const Matrix X = column({0, 1, 2});
  Responsibilities r;
  r.q = Matrix(3, 2);
  r.q << 0.5, 0.5, 0.3, 0.7, 0.2, 0.8;
  const auto out = mStep(X, r, 1e-6, EmVariant::Vanilla);
  EXPECT_NEAR(out.params.means(0, 0), 0.7, 1e-15);
  EXPECT_NEAR(out.params.weights(0), 1.0 / 3.0, 1e-15);
}

TEST(MStep, SinkhornVariantPinsWeights) {
  const Matrix X = column({0, 1, 2});
  Responsibilities r;
  r.q = Matrix(3, 2);
  r.q << 0.9, 0.1, 0.9, 0.1, 0.9, 0.1;
  const auto out = mStep(X, r, 1e-6, EmVariant::Sinkhorn);
  EXPECT_DOUBLE_EQ(out.params.weights(0), 0.5);
  EXPECT_DOUBLE_EQ(out.params.weights(1), 0.5);
}

TEST(MStep, VarianceIsFloored) {
  const Matrix X = column({3, 3, 3});
  Responsibilities r;
  r.q = Matrix::Ones(3, 1);
  EXPECT_DOUBLE_EQ(mStep(X, r, 1e-4, EmVariant::Vanilla).params.variances(0, 0), 1e-4);
  EXPECT_THROW(mStep(X, r, 0.0, EmVariant::Vanilla), ContractViolation);
}

TEST(MStep, MatchesOracleAlternation) {
  std::mt19937_64 rng(9);
  const Matrix X = sampleMixture(80, 3, 3, rng);
  Gmm p = initializeFromSamples(X, 3, ResponsibilityMode::Sum, rng);
  oracle::Mixture g{p.weights, p.means, p.variances};
  for (int step = 0; step < 5; ++step) {
    p = mStep(X, eStepVanilla(X, p), 1e-6, EmVariant::Vanilla).params;
    g = oracle::emStep(X, g, 1e-6L);
    EXPECT_LT((p.weights - g.weights).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LT((p.means - g.means).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LT((p.variances - g.variances).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(FObjective, SingleComponentHasNoEntropy) {
  const Matrix X = column({-0.5, 0.25, 2});
  Gmm p;
  p.weights = Vector::Ones(1);
  p.means = Matrix::Constant(1, 1, 0.3);
  p.variances = Matrix::Constant(1, 1, 1.5);
  Responsibilities r;
  r.q = Matrix::Ones(3, 1);
  double expected = 0;
  for (Index n = 0; n < 3; ++n) expected += logGaussianDiag(X.row(n).transpose(), p.component(0));
  EXPECT_NEAR(fObjective(X, p, r), expected, 1e-12);
}

TEST(FObjective, TightAtVanillaPosteriorAndBoundedOtherwise) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix X = sampleMixture(40, 2, 3, rng);
    Gmm p = initializeFromSamples(X, 3, ResponsibilityMode::Sum, rng);
    p.weights << 0.2, 0.5, 0.3;
    const double ll = logLikelihood(X, p);
    EXPECT_NEAR(fObjective(X, p, eStepVanilla(X, p)), ll, 1e-8);
    EXPECT_LE(fObjective(X, p, eStepSinkhorn(X, p, {0.5, 1000, 1e-9})), ll + 1e-8);
    Responsibilities hard;
    hard.q = Matrix::Zero(40, 3);
    hard.q.col(trial % 3).setOnes();
    EXPECT_LE(fObjective(X, p, hard), ll + 1e-8);
  }
}

TEST(MomentumBlend, EndpointsAndArithmetic) {
  const Gmm old = twoComponents1d(0.5, 0, 0);
  const Gmm fresh = twoComponents1d(0.7, 1, 1, 2.0);
  const Gmm a = momentumBlend(old, fresh, 1.0);
  EXPECT_EQ(a.means, old.means);
  EXPECT_EQ(a.weights, old.weights);
  const Gmm b = momentumBlend(old, fresh, 0.0);
  EXPECT_EQ(b.means, fresh.means);
  EXPECT_EQ(b.variances, fresh.variances);
  const Gmm c = momentumBlend(old, fresh, 0.999);
  EXPECT_NEAR(c.means(0, 0), 0.001, 1e-15);
  EXPECT_NEAR(c.weights.sum(), 1.0, 1e-15);
  EXPECT_THROW(momentumBlend(old, fresh, 1.5), ContractViolation);
}

TEST(MomentumBlend, IdentityWhenEstimatesAgree) {
  const Gmm p = twoComponents1d(0.3, -1, 2, 0.7);
  for (double tau : {0.0, 0.1, 0.5, 0.999, 1.0}) {
    const Gmm out = momentumBlend(p, p, tau);
    EXPECT_LT((out.means - p.means).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_LT((out.variances - p.variances).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_LT((out.weights - p.weights).cwiseAbs().maxCoeff(), 1e-15);
  }
}

TEST(EmLoop, RejectsZeroLoops) {
  EmConfig config;
  config.loopsPerIteration = 0;
  EXPECT_THROW(config.validate(), ContractViolation);
  Rng rng(1);
  EXPECT_THROW(emLoop(column({1}), twoComponents1d(0.5, 0, 1), config, rng), ContractViolation);
}

TEST(EmLoop, VanillaIsMonotone) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    const Matrix X = sampleMixture(100, 1 + seed % 3, 2, rng);
    Gmm p = initializeFromSamples(X, 2, ResponsibilityMode::Sum, rng);
    EmConfig config;
    config.variant = EmVariant::Vanilla;
    config.momentumTau = 0;
    double prev = logLikelihood(X, p);
    for (int loop = 0; loop < 40; ++loop) {
      const auto r = emLoop(X, p, config, rng);
      EXPECT_GE(r.logLikelihood, prev - 1e-8);
      EXPECT_NEAR(r.logLikelihood, logLikelihood(X, r.params), 1e-9);
      prev = r.logLikelihood;
      p = r.params;
    }
  }
}

TEST(EmLoop, SinkhornKeepsUniformWeights) {
  std::mt19937_64 rng(13);
  const Matrix X = sampleMixture(90, 2, 3, rng);
  const Gmm p = initializeFromSamples(X, 3, ResponsibilityMode::Sum, rng);
  EmConfig config;
  config.loopsPerIteration = 5;
  config.momentumTau = 0.5;
  const auto r = emLoop(X, p, config, rng);
  for (Index m = 0; m < 3; ++m) EXPECT_NEAR(r.params.weights(m), 1.0 / 3.0, 1e-15);
  EXPECT_NO_THROW(r.params.validate());
}

TEST(EmLoop, EmptyComponentIsReinitialized) {
  const Matrix X = column({0, 0.1, -0.1, 0.05});
  Gmm p = twoComponents1d(0.5, 0, 1000, 1.0);
  EmConfig config;
  config.variant = EmVariant::Vanilla;
  config.momentumTau = 0;
  Rng rng(3);
  const auto r = emLoop(X, p, config, rng);
  ASSERT_EQ(r.events.size(), 1u);
  EXPECT_EQ(r.events[0].kind, EmEvent::Kind::ComponentReinit);
  EXPECT_EQ(r.events[0].component, 1);
  bool fromData = false;
  for (Index n = 0; n < 4; ++n) fromData |= r.params.means(1, 0) == X(n, 0);
  EXPECT_TRUE(fromData);
  EXPECT_NEAR(r.params.variances(1, 0), globalVariance(X)(0), 1e-15);
}

TEST(EmLoop, NonConvergenceIsLogged) {
  const Matrix X = column({-3, -2.9, 3, 3.1, 100});
  EmConfig config;
  config.sinkhornMaxIters = 1;
  config.sinkhornTol = 1e-12;
  Rng rng(5);
  const auto r = emLoop(X, twoComponents1d(0.5, -3, 3, 0.01), config, rng);
  bool flagged = false;
  for (const auto& e : r.events) flagged |= e.kind == EmEvent::Kind::SinkhornNotConverged;
  EXPECT_TRUE(flagged);
}

TEST(EmLoop, ComponentPermutationEquivariance) {
  std::mt19937_64 rng(17);
  const Matrix X = sampleMixture(50, 2, 3, rng);
  const Gmm p = initializeFromSamples(X, 3, ResponsibilityMode::Sum, rng);
  Gmm swapped = p;
  swapped.means.row(0) = p.means.row(2);
  swapped.means.row(2) = p.means.row(0);
  swapped.variances.row(0) = p.variances.row(2);
  swapped.variances.row(2) = p.variances.row(0);
  for (auto variant : {EmVariant::Vanilla, EmVariant::Sinkhorn}) {
    EmConfig config;
    config.variant = variant;
    config.loopsPerIteration = 3;
    config.momentumTau = 0.2;
    config.epsilon = 0.5;
    config.sinkhornMaxIters = 10000;
    config.sinkhornTol = 1e-12;
    Rng r1(1), r2(1);
    const auto a = emLoop(X, p, config, r1);
    const auto b = emLoop(X, swapped, config, r2);
    EXPECT_LT((a.params.means.row(0) - b.params.means.row(2)).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LT((a.params.means.row(1) - b.params.means.row(1)).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LT((a.params.variances.row(2) - b.params.variances.row(0)).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_NEAR(a.logLikelihood, b.logLikelihood, 1e-9);
  }
}

TEST(Initialization, SamplesAndSharedMean) {
  std::mt19937_64 rng(19);
  const Matrix X = sampleMixture(20, 3, 2, rng);
  Rng r(4);
  const Gmm p = initializeFromSamples(X, 5, ResponsibilityMode::WinnerTakeAll, r);
  EXPECT_EQ(p.mode, ResponsibilityMode::WinnerTakeAll);
  std::vector<Index> hits;
  for (Index m = 0; m < 5; ++m) {
    for (Index n = 0; n < 20; ++n) {
      if (p.means.row(m) == X.row(n)) hits.push_back(n);
    }
  }
  ASSERT_EQ(hits.size(), 5u);
  std::sort(hits.begin(), hits.end());
  EXPECT_EQ(std::unique(hits.begin(), hits.end()), hits.end());
  for (Index m = 0; m < 5; ++m) EXPECT_EQ(Vector(p.variances.row(m).transpose()), globalVariance(X));

  const Gmm s = sharedMeanInit(X, 4, r, 1e-3);
  const Vector mean = X.colwise().mean().transpose();
  const Vector sd = globalVariance(X).cwiseSqrt();
  for (Index m = 0; m < 4; ++m) {
    EXPECT_LT(((s.means.row(m).transpose() - mean).array() / sd.array()).abs().maxCoeff(), 1e-2);
  }
  EXPECT_NE(s.means.row(0), s.means.row(1));
}

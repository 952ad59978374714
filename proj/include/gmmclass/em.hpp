#pragma once

#include "gmmclass/density.hpp"
#include "gmmclass/sinkhorn.hpp"

#include <vector>

namespace gmmclass {

using Gmm = GmmParams<double>;

enum class EmVariant { Vanilla, Sinkhorn };

struct EmConfig {
  EmVariant variant = EmVariant::Sinkhorn;
  int loopsPerIteration = 1;
  // Weight kept on the previous parameters: phi <- (1 - tau) * fresh + tau * old.
  double momentumTau = 0.999;
  double epsilon = 0.05;
  double varianceFloor = kVarianceFloor;
  int sinkhornMaxIters = 100;
  double sinkhornTol = 1e-6;

  void validate() const;
  SinkhornOptions sinkhorn() const { return {epsilon, sinkhornMaxIters, sinkhornTol}; }
};

// Soft assignment of N samples over M components; rows sum to 1.
struct Responsibilities {
  Matrix q;
  bool converged = true;
  // Set by the Sinkhorn E-step when N < M; equipartition is then fractional.
  bool fewerSamplesThanComponents = false;
  // Sinkhorn column potentials behind q; empty for the vanilla E-step.
  Vector colPotential;
};

Responsibilities eStepVanilla(const Matrix& features, const Gmm& params);
Responsibilities eStepSinkhorn(const Matrix& features, const Gmm& params,
                               const SinkhornOptions& opts = {},
                               const Vector* warmStart = nullptr);

struct MStepResult {
  Gmm params;
  // Components whose mass fell below the empty threshold. Their mean and
  // variance are placeholders (global statistics) until reinitialized.
  std::vector<Index> emptyComponents;
};

// Closed-form M-step. With EmVariant::Sinkhorn the weights stay pinned at 1/M.
MStepResult mStep(const Matrix& features, const Responsibilities& resp, double varianceFloor,
                  EmVariant variant, ResponsibilityMode mode = ResponsibilityMode::Sum);

// F(q, phi) = E_q[ln pi_m + ln N(x_n; mu_m, Sigma_m)] + H(q), with 0 ln 0 = 0.
double fObjective(const Matrix& features, const Gmm& params, const Responsibilities& resp);

Gmm momentumBlend(const Gmm& old, const Gmm& estimated, double tau,
                  double varianceFloor = kVarianceFloor);

struct EmEvent {
  enum class Kind { ComponentReinit, SinkhornNotConverged, FewerSamplesThanComponents };
  Kind kind;
  int loop;
  Index component;  // -1 when not component-specific
};

struct EmResult {
  Gmm params;
  // Sum-mode data log-likelihood of the working set under the returned params.
  double logLikelihood = 0;
  std::vector<EmEvent> events;
  // Column potentials of the last Sinkhorn E-step (empty for vanilla).
  Vector sinkhornPotential;
};

// `warmStart` seeds the first Sinkhorn solve, typically with the previous
// call's sinkhornPotential; it is ignored when its length is not M.
EmResult emLoop(const Matrix& features, const Gmm& params, const EmConfig& config, Rng& rng,
                const Vector* warmStart = nullptr);

// Per-dimension biased variance of the rows of X, clamped at `floor`.
Vector globalVariance(const Matrix& X, double floor = kVarianceFloor);

// Means are M distinct random rows of X (with repetition only if X has fewer
// than M rows), variances the global per-dimension variance, weights uniform.
Gmm initializeFromSamples(const Matrix& X, Index numComponents, ResponsibilityMode mode, Rng& rng,
                          double floor = kVarianceFloor);

// Adversarial start: every mean sits at the sample mean, displaced by
// `jitter` global standard deviations along an independent random direction.
Gmm sharedMeanInit(const Matrix& X, Index numComponents, Rng& rng, double jitter = 1e-3,
                   double floor = kVarianceFloor);

}  // namespace gmmclass

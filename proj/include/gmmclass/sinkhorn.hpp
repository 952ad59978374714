#pragma once

// Entropy-regularized transport between N samples (unit mass each) and M
// components (N/M mass each), solved by log-domain Sinkhorn-Knopp scaling.

#include "gmmclass/density.hpp"

#include <cmath>

namespace gmmclass {

struct SinkhornOptions {
  double epsilon = 0.05;
  int maxIters = 100;
  // Max column-marginal violation, relative to the target mass N/M, accepted
  // as converged.
  double tol = 1e-6;
};

template <typename Scalar>
struct TransportPlan {
  MatrixX<Scalar> entries;
  bool converged = false;
  int iterations = 0;
  Scalar maxColumnViolation = 0;
  // Column potentials (in units of epsilon) that produced `entries`; feeding
  // them back warm-starts a solve on a nearby cost matrix.
  VectorX<Scalar> colPotential;
};

template <typename Scalar>
using CostMatrix = MatrixX<Scalar>;

// cost(n, m) = -log N(x_n; mu_m, Sigma_m). Mixture weights are not part of the
// cost; the equipartition column marginal plays their role.
template <typename Scalar>
CostMatrix<Scalar> buildCost(const MatrixX<Scalar>& features, const GmmParams<Scalar>& params) {
  return -componentLogDensities(features, params);
}

// Sinkhorn-Knopp with log-domain stabilization. Only column potentials are
// carried between iterations; the row scaling is applied exactly when the
// plan is read out. The kernel is exponentiated once against the current
// potentials, each row shifted by its max, after which an iteration is two
// matrix-vector products with a per-column scale. The scale is folded back
// into the potentials, and the kernel rebuilt, when it leaves [1e-30, 1e30] or
// a column sum underflows. The fixed point does not depend on the starting
// potentials, only the iteration count does.
template <typename Scalar>
TransportPlan<Scalar> solveSinkhorn(const CostMatrix<Scalar>& cost, const SinkhornOptions& opts = {},
                                    const VectorX<Scalar>* warmStart = nullptr) {
  require(cost.rows() >= 1 && cost.cols() >= 1, "solveSinkhorn: empty cost matrix");
  require(cost.allFinite(), "solveSinkhorn: cost entries must be finite");
  require(opts.epsilon > 0, "solveSinkhorn: epsilon must be positive");
  require(opts.maxIters >= 1, "solveSinkhorn: maxIters must be >= 1");
  require(opts.tol > 0, "solveSinkhorn: tol must be positive");
  require(warmStart == nullptr || (warmStart->size() == cost.cols() && warmStart->allFinite()),
          "solveSinkhorn: warm start must hold one finite potential per column");

  using std::abs;
  using std::log;
  using std::max;
  const Index n = cost.rows();
  const Index m = cost.cols();
  const Scalar colMass = Scalar(n) / Scalar(m);
  const Scalar logColMass = log(colMass);
  const MatrixX<Scalar> logKernel = -cost / Scalar(opts.epsilon);
  const Scalar tiny = Scalar(1e-200);
  const Scalar maxScale = Scalar(1e30);

  VectorX<Scalar> colPot = warmStart ? *warmStart : VectorX<Scalar>::Zero(m);
  VectorX<Scalar> scale = VectorX<Scalar>::Ones(m);
  MatrixX<Scalar> shifted(n, m);  // logKernel + colPot, minus each row's max
  MatrixX<Scalar> kernel(n, m);   // exp(shifted)
  auto rebuild = [&] {
    colPot.array() += scale.array().log();
    scale.setOnes();
    shifted = logKernel.rowwise() + colPot.transpose();
    const VectorX<Scalar> top = shifted.rowwise().maxCoeff();
    shifted.colwise() -= top;
    kernel = shifted.array().exp().matrix();
  };
  rebuild();

  TransportPlan<Scalar> plan;
  for (;;) {
    const VectorX<Scalar> rowSum = kernel * scale;
    const VectorX<Scalar> invRowSum = rowSum.cwiseInverse();
    const VectorX<Scalar> colSum = (kernel.transpose() * invRowSum).cwiseProduct(scale);

    Scalar violation = 0;
    for (Index j = 0; j < m; ++j) violation = max(violation, abs(colSum(j) - colMass) / colMass);
    plan.maxColumnViolation = violation;
    plan.converged = violation <= Scalar(opts.tol);
    if (plan.converged || plan.iterations >= opts.maxIters) {
      plan.entries = kernel * scale.asDiagonal();
      plan.entries.array().colwise() *= invRowSum.array();
      plan.colPotential = colPot.array() + scale.array().log();
      break;
    }

    bool stale = false;
    for (Index j = 0; j < m; ++j) {
      if (colSum(j) > tiny) {
        scale(j) *= colMass / colSum(j);
      } else {
        const Scalar logColSum =
            log(scale(j)) + logSumExp(shifted.col(j) - VectorX<Scalar>(rowSum.array().log()));
        colPot(j) += log(scale(j)) + logColMass - logColSum;
        scale(j) = 1;
        stale = true;
      }
    }
    if (stale || (scale.array() > maxScale).any() || (scale.array() < 1 / maxScale).any()) rebuild();
    ++plan.iterations;
  }
  return plan;
}

}  // namespace gmmclass

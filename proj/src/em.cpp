#include "gmmclass/em.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace gmmclass {

namespace {

constexpr double kEmptyFraction = 1e-3;

Vector columnMean(const Matrix& X) { return X.colwise().mean().transpose(); }

Matrix rowNormalizedExp(const Matrix& logTerms) {
  const Vector lse = rowwiseLogSumExp(logTerms);
  return (logTerms.colwise() - lse).array().exp().matrix();
}

}  // namespace

void EmConfig::validate() const {
  require(loopsPerIteration >= 1, "EmConfig: loopsPerIteration must be >= 1");
  require(momentumTau >= 0.0 && momentumTau <= 1.0, "EmConfig: momentumTau must lie in [0, 1]");
  require(epsilon > 0.0, "EmConfig: epsilon must be positive");
  require(varianceFloor > 0.0, "EmConfig: varianceFloor must be positive");
  require(sinkhornMaxIters >= 1, "EmConfig: sinkhornMaxIters must be >= 1");
  require(sinkhornTol > 0.0, "EmConfig: sinkhornTol must be positive");
}

Responsibilities eStepVanilla(const Matrix& features, const Gmm& params) {
  require(features.rows() >= 1, "eStepVanilla: need at least one sample");
  return {rowNormalizedExp(jointLogTerms(features, params)), true, false};
}

Responsibilities eStepSinkhorn(const Matrix& features, const Gmm& params,
                               const SinkhornOptions& opts, const Vector* warmStart) {
  require(features.rows() >= 1, "eStepSinkhorn: need at least one sample");
  TransportPlan<double> plan = solveSinkhorn(buildCost(features, params), opts, warmStart);
  Responsibilities r;
  // Rows of the plan already sum to one; renormalize away the last ulps.
  r.q = plan.entries.array().colwise() / plan.entries.rowwise().sum().array();
  r.converged = plan.converged;
  r.fewerSamplesThanComponents = features.rows() < params.numComponents();
  r.colPotential = std::move(plan.colPotential);
  return r;
}

MStepResult mStep(const Matrix& features, const Responsibilities& resp, double varianceFloor,
                  EmVariant variant, ResponsibilityMode mode) {
  const Matrix& q = resp.q;
  require(q.rows() == features.rows(), "mStep: responsibilities/features row mismatch");
  require(q.cols() >= 1, "mStep: need at least one component");
  require(varianceFloor > 0, "mStep: varianceFloor must be positive");

  const Index n = features.rows();
  const Index m = q.cols();
  const Index d = features.cols();
  const Vector mass = q.colwise().sum().transpose();
  const double emptyThreshold = kEmptyFraction * static_cast<double>(n) / static_cast<double>(m);

  MStepResult out;
  Gmm& p = out.params;
  p.mode = mode;
  p.means.resize(m, d);
  p.variances.resize(m, d);
  if (variant == EmVariant::Sinkhorn) {
    p.weights = Vector::Constant(m, 1.0 / static_cast<double>(m));
  } else {
    p.weights = mass / static_cast<double>(n);
  }

  Vector fallbackMean;
  Vector fallbackVar;
  for (Index k = 0; k < m; ++k) {
    if (!(mass(k) > emptyThreshold)) {
      if (fallbackMean.size() == 0) {
        fallbackMean = columnMean(features);
        fallbackVar = globalVariance(features, varianceFloor);
      }
      p.means.row(k) = fallbackMean.transpose();
      p.variances.row(k) = fallbackVar.transpose();
      out.emptyComponents.push_back(k);
      continue;
    }
    const Vector mean = (features.transpose() * q.col(k)) / mass(k);
    const Matrix centered = features.rowwise() - mean.transpose();
    const Vector var =
        (centered.array().square().colwise() * q.col(k).array()).colwise().sum().transpose() /
        mass(k);
    p.means.row(k) = mean.transpose();
    p.variances.row(k) = var.cwiseMax(varianceFloor).transpose();
  }

  if (variant == EmVariant::Vanilla) {
    // Keep the weight invariant even when some column mass underflowed.
    p.weights = p.weights.cwiseMax(0.0);
    const double total = p.weights.sum();
    if (total > 0) p.weights /= total;
    else p.weights.setConstant(1.0 / static_cast<double>(m));
  }
  return out;
}

double fObjective(const Matrix& features, const Gmm& params, const Responsibilities& resp) {
  const Matrix& q = resp.q;
  require(q.rows() == features.rows() && q.cols() == params.numComponents(),
          "fObjective: shape mismatch");
  const Matrix joint = jointLogTerms(features, params);
  double expected = 0;
  double entropy = 0;
  for (Index n = 0; n < q.rows(); ++n) {
    for (Index k = 0; k < q.cols(); ++k) {
      const double w = q(n, k);
      if (w <= 0) continue;
      expected += w * joint(n, k);
      entropy -= w * std::log(w);
    }
  }
  return expected + entropy;
}

Gmm momentumBlend(const Gmm& old, const Gmm& estimated, double tau, double varianceFloor) {
  require(tau >= 0.0 && tau <= 1.0, "momentumBlend: tau must lie in [0, 1]");
  require(old.numComponents() == estimated.numComponents() && old.dim() == estimated.dim(),
          "momentumBlend: shape mismatch");
  if (tau == 1.0) return old;
  if (tau == 0.0) return estimated;
  Gmm out;
  out.mode = estimated.mode;
  out.weights = (1.0 - tau) * estimated.weights + tau * old.weights;
  out.weights /= out.weights.sum();
  out.means = (1.0 - tau) * estimated.means + tau * old.means;
  out.variances =
      ((1.0 - tau) * estimated.variances + tau * old.variances).cwiseMax(varianceFloor);
  return out;
}

EmResult emLoop(const Matrix& features, const Gmm& params, const EmConfig& config, Rng& rng,
                const Vector* warmStart) {
  config.validate();
  require(features.rows() >= 1, "emLoop: empty working set");
  require(features.cols() == params.dim(), "emLoop: dimension mismatch");

  EmResult result;
  result.params = params;
  if (warmStart && warmStart->size() == params.numComponents() && warmStart->allFinite()) {
    result.sinkhornPotential = *warmStart;
  }
  for (int loop = 0; loop < config.loopsPerIteration; ++loop) {
    Responsibilities resp;
    if (config.variant == EmVariant::Sinkhorn) {
      const Vector* warm = result.sinkhornPotential.size() > 0 ? &result.sinkhornPotential : nullptr;
      resp = eStepSinkhorn(features, result.params, config.sinkhorn(), warm);
      result.sinkhornPotential = resp.colPotential;
    } else {
      resp = eStepVanilla(features, result.params);
    }
    if (!resp.converged) {
      result.events.push_back({EmEvent::Kind::SinkhornNotConverged, loop, -1});
    }
    if (resp.fewerSamplesThanComponents) {
      result.events.push_back({EmEvent::Kind::FewerSamplesThanComponents, loop, -1});
    }

    MStepResult fresh =
        mStep(features, resp, config.varianceFloor, config.variant, result.params.mode);
    if (!fresh.emptyComponents.empty()) {
      std::uniform_int_distribution<Index> pick(0, features.rows() - 1);
      for (Index k : fresh.emptyComponents) {
        fresh.params.means.row(k) = features.row(pick(rng));
        result.events.push_back({EmEvent::Kind::ComponentReinit, loop, k});
      }
    }
    result.params = momentumBlend(result.params, fresh.params, config.momentumTau,
                                  config.varianceFloor);
  }
  result.logLikelihood = logLikelihood(features, result.params);
  return result;
}

Vector globalVariance(const Matrix& X, double floor) {
  require(X.rows() >= 1, "globalVariance: empty input");
  const Vector mean = columnMean(X);
  const Vector var =
      (X.rowwise() - mean.transpose()).array().square().colwise().mean().transpose();
  return var.cwiseMax(floor);
}

Gmm initializeFromSamples(const Matrix& X, Index numComponents, ResponsibilityMode mode, Rng& rng,
                          double floor) {
  require(X.rows() >= 1, "initializeFromSamples: empty input");
  require(numComponents >= 1, "initializeFromSamples: need at least one component");
  const Index n = X.rows();
  std::vector<Index> picks;
  if (n >= numComponents) {
    std::vector<Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Index{0});
    // Partial Fisher-Yates: first numComponents entries are a uniform draw.
    for (Index i = 0; i < numComponents; ++i) {
      std::uniform_int_distribution<Index> pick(i, n - 1);
      std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(pick(rng))]);
    }
    picks.assign(order.begin(), order.begin() + numComponents);
  } else {
    std::uniform_int_distribution<Index> pick(0, n - 1);
    for (Index i = 0; i < numComponents; ++i) picks.push_back(pick(rng));
  }

  const Vector var = globalVariance(X, floor);
  Gmm p;
  p.mode = mode;
  p.weights = Vector::Constant(numComponents, 1.0 / static_cast<double>(numComponents));
  p.means.resize(numComponents, X.cols());
  p.variances = var.transpose().replicate(numComponents, 1);
  for (Index k = 0; k < numComponents; ++k) p.means.row(k) = X.row(picks[static_cast<std::size_t>(k)]);
  return p;
}

Gmm sharedMeanInit(const Matrix& X, Index numComponents, Rng& rng, double jitter, double floor) {
  require(X.rows() >= 1, "sharedMeanInit: empty input");
  require(numComponents >= 1, "sharedMeanInit: need at least one component");
  const Vector mean = columnMean(X);
  const Vector var = globalVariance(X, floor);
  const Vector sd = var.cwiseSqrt();
  std::normal_distribution<double> normal(0.0, 1.0);

  Gmm p;
  p.weights = Vector::Constant(numComponents, 1.0 / static_cast<double>(numComponents));
  p.means.resize(numComponents, X.cols());
  p.variances = var.transpose().replicate(numComponents, 1);
  for (Index k = 0; k < numComponents; ++k) {
    for (Index d = 0; d < X.cols(); ++d) p.means(k, d) = mean(d) + jitter * sd(d) * normal(rng);
  }
  return p;
}

}  // namespace gmmclass

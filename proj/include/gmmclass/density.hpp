#pragma once

// Log-space densities of diagonal Gaussians and Gaussian mixtures.
//
// Everything here is templated on the scalar type so that the same code can
// run in double (the library default) or long double.

#include "gmmclass/types.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

namespace gmmclass {

inline constexpr double kVarianceFloor = 1e-6;

enum class ResponsibilityMode { Sum, WinnerTakeAll };

template <typename Scalar>
struct DiagGaussian {
  VectorX<Scalar> mean;
  VectorX<Scalar> variance;

  Index dim() const { return mean.size(); }

  void validate(Scalar floor = Scalar(0)) const {
    require(mean.size() >= 1, "DiagGaussian: dimension must be >= 1");
    require(mean.size() == variance.size(), "DiagGaussian: mean/variance length mismatch");
    require((variance.array() > Scalar(0)).all(), "DiagGaussian: variance must be positive");
    require((variance.array() >= floor).all(), "DiagGaussian: variance below floor");
  }
};

// Mixture of M diagonal Gaussians in D dimensions. Component m lives in row m
// of `means` and `variances`.
template <typename Scalar>
struct GmmParams {
  VectorX<Scalar> weights;
  MatrixX<Scalar> means;
  MatrixX<Scalar> variances;
  ResponsibilityMode mode = ResponsibilityMode::Sum;

  Index numComponents() const { return weights.size(); }
  Index dim() const { return means.cols(); }

  DiagGaussian<Scalar> component(Index m) const {
    return {means.row(m).transpose(), variances.row(m).transpose()};
  }

  static GmmParams fromComponents(const VectorX<Scalar>& weights,
                                  const std::vector<DiagGaussian<Scalar>>& components,
                                  ResponsibilityMode mode = ResponsibilityMode::Sum) {
    require(!components.empty(), "GmmParams: need at least one component");
    require(static_cast<Index>(components.size()) == weights.size(),
            "GmmParams: weight count must match component count");
    const Index dim = components.front().dim();
    GmmParams p;
    p.weights = weights;
    p.means.resize(weights.size(), dim);
    p.variances.resize(weights.size(), dim);
    p.mode = mode;
    for (Index m = 0; m < weights.size(); ++m) {
      const auto& c = components[static_cast<std::size_t>(m)];
      require(c.dim() == dim, "GmmParams: components must share one dimension");
      p.means.row(m) = c.mean.transpose();
      p.variances.row(m) = c.variance.transpose();
    }
    p.validate();
    return p;
  }

  void validate() const {
    require(weights.size() >= 1, "GmmParams: M must be >= 1");
    require(means.rows() == weights.size() && variances.rows() == weights.size(),
            "GmmParams: component count mismatch");
    require(means.cols() >= 1 && means.cols() == variances.cols(),
            "GmmParams: mean/variance dimension mismatch");
    require((weights.array() >= Scalar(0)).all(), "GmmParams: negative weight");
    using std::abs;
    require(abs(weights.sum() - Scalar(1)) <= Scalar(1e-9), "GmmParams: weights must sum to 1");
    require((variances.array() > Scalar(0)).all(), "GmmParams: variance must be positive");
  }
};

template <typename Scalar>
inline Scalar logTwoPi() {
  return std::log(Scalar(2) * std::numbers::pi_v<Scalar>);
}

// max(v) + ln sum exp(v - max(v)). Returns -inf only when every entry is -inf.
template <typename Derived>
typename Derived::Scalar logSumExp(const Eigen::DenseBase<Derived>& v) {
  using Scalar = typename Derived::Scalar;
  require(v.size() > 0, "logSumExp: empty input");
  const Scalar top = v.maxCoeff();
  if (top == -std::numeric_limits<Scalar>::infinity()) return top;
  if (top == std::numeric_limits<Scalar>::infinity()) return top;
  using std::exp;
  using std::log;
  return top + log((v.derived().array() - top).exp().sum());
}

// logSumExp of every row, vectorized down the columns.
template <typename Derived>
VectorX<typename Derived::Scalar> rowwiseLogSumExp(const Eigen::MatrixBase<Derived>& a) {
  using Scalar = typename Derived::Scalar;
  require(a.cols() > 0, "rowwiseLogSumExp: no columns");
  const VectorX<Scalar> top = a.rowwise().maxCoeff();
  VectorX<Scalar> sum = VectorX<Scalar>::Zero(a.rows());
  for (Index j = 0; j < a.cols(); ++j) sum.array() += (a.col(j) - top).array().exp();
  VectorX<Scalar> out = top.array() + sum.array().log();
  for (Index i = 0; i < a.rows(); ++i) {
    if (std::isinf(top(i))) out(i) = top(i);
  }
  return out;
}

template <typename DerivedX, typename DerivedM, typename DerivedV>
typename DerivedX::Scalar logGaussianDiag(const Eigen::MatrixBase<DerivedX>& x,
                                          const Eigen::MatrixBase<DerivedM>& mean,
                                          const Eigen::MatrixBase<DerivedV>& variance) {
  using Scalar = typename DerivedX::Scalar;
  require(x.size() == mean.size() && mean.size() == variance.size() && x.size() >= 1,
          "logGaussianDiag: dimension mismatch");
  Scalar acc = 0;
  for (Index d = 0; d < x.size(); ++d) {
    const Scalar var = variance(d);
    require(var > Scalar(0), "logGaussianDiag: variance must be positive");
    const Scalar diff = x(d) - mean(d);
    using std::log;
    acc += log(var) + diff * diff / var;
  }
  return Scalar(-0.5) * (Scalar(x.size()) * logTwoPi<Scalar>() + acc);
}

template <typename DerivedX, typename Scalar>
Scalar logGaussianDiag(const Eigen::MatrixBase<DerivedX>& x, const DiagGaussian<Scalar>& g) {
  return logGaussianDiag(x, g.mean, g.variance);
}

// Per-component log N(x_n; mu_m, Sigma_m) for every row of X: N x M.
template <typename Scalar>
MatrixX<Scalar> componentLogDensities(const MatrixX<Scalar>& X, const GmmParams<Scalar>& p) {
  require(X.cols() == p.dim(), "componentLogDensities: dimension mismatch");
  require((p.variances.array() > Scalar(0)).all(), "componentLogDensities: variance must be positive");
  const Index n = X.rows();
  const Index m = p.numComponents();
  const Scalar base = Scalar(X.cols()) * logTwoPi<Scalar>();
  MatrixX<Scalar> out(n, m);
  for (Index k = 0; k < m; ++k) {
    const auto invVar = p.variances.row(k).array().inverse();
    const Scalar logDet = p.variances.row(k).array().log().sum();
    out.col(k) = Scalar(-0.5) *
                 (((X.array().rowwise() - p.means.row(k).array()).square().rowwise() * invVar)
                      .rowwise()
                      .sum() +
                  base + logDet);
  }
  return out;
}

// Joint terms ln pi_m + log N(x_n; mu_m, Sigma_m): N x M.
template <typename Scalar>
MatrixX<Scalar> jointLogTerms(const MatrixX<Scalar>& X, const GmmParams<Scalar>& p) {
  MatrixX<Scalar> terms = componentLogDensities(X, p);
  terms.array().rowwise() += p.weights.array().log().transpose();
  return terms;
}

template <typename Derived>
typename Derived::Scalar combineMixtureTerms(const Eigen::DenseBase<Derived>& terms,
                                             ResponsibilityMode mode) {
  return mode == ResponsibilityMode::Sum ? logSumExp(terms) : terms.maxCoeff();
}

template <typename DerivedX, typename Scalar>
Scalar logMixture(const Eigen::MatrixBase<DerivedX>& x, const GmmParams<Scalar>& p,
                  ResponsibilityMode mode) {
  require(x.size() == p.dim(), "logMixture: dimension mismatch");
  VectorX<Scalar> terms(p.numComponents());
  for (Index m = 0; m < p.numComponents(); ++m) {
    using std::log;
    terms(m) = log(p.weights(m)) +
               logGaussianDiag(x, p.means.row(m).transpose(), p.variances.row(m).transpose());
  }
  return combineMixtureTerms(terms, mode);
}

template <typename DerivedX, typename Scalar>
Scalar logMixture(const Eigen::MatrixBase<DerivedX>& x, const GmmParams<Scalar>& p) {
  return logMixture(x, p, p.mode);
}

// Row-wise logMixture over a batch.
template <typename Scalar>
VectorX<Scalar> logMixtureRows(const MatrixX<Scalar>& X, const GmmParams<Scalar>& p,
                               ResponsibilityMode mode) {
  const MatrixX<Scalar> terms = jointLogTerms(X, p);
  if (mode == ResponsibilityMode::Sum) return rowwiseLogSumExp(terms);
  return terms.rowwise().maxCoeff();
}

// Sum over rows of the Sum-mode mixture log-density: the EM objective.
template <typename Scalar>
Scalar logLikelihood(const MatrixX<Scalar>& X, const GmmParams<Scalar>& p) {
  return logMixtureRows(X, p, ResponsibilityMode::Sum).sum();
}

}  // namespace gmmclass

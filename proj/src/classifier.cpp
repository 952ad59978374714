#include "gmmclass/classifier.hpp"

#include <cmath>

namespace gmmclass {

GenerativeClassifier GenerativeClassifier::uniform(std::vector<Gmm> perClass) {
  GenerativeClassifier clf;
  const auto c = static_cast<Index>(perClass.size());
  clf.perClass = std::move(perClass);
  clf.classPrior = Vector::Constant(c, 1.0 / static_cast<double>(c));
  clf.validate();
  return clf;
}

void GenerativeClassifier::validate() const {
  require(!perClass.empty(), "GenerativeClassifier: need at least one class");
  require(classPrior.size() == numClasses(), "GenerativeClassifier: prior length mismatch");
  require((classPrior.array() >= 0).all() && std::abs(classPrior.sum() - 1.0) <= 1e-9,
          "GenerativeClassifier: prior must be a probability vector");
  for (const Gmm& g : perClass) {
    g.validate();
    require(g.dim() == dim() && g.numComponents() == numComponents(),
            "GenerativeClassifier: classes must share D and M");
  }
}

void SoftmaxBaseline::validate() const {
  require(weights.rows() >= 1 && weights.rows() == biases.size(),
          "SoftmaxBaseline: weight/bias shape mismatch");
  require(weights.allFinite() && biases.allFinite(), "SoftmaxBaseline: non-finite parameter");
}

Matrix logClassCond(const Matrix& X, const GenerativeClassifier& clf) {
  require(X.cols() == clf.dim(), "logClassCond: dimension mismatch");
  Matrix out(X.rows(), clf.numClasses());
  for (int c = 0; c < clf.numClasses(); ++c) {
    const Gmm& g = clf.perClass[static_cast<std::size_t>(c)];
    out.col(c) = logMixtureRows(X, g, g.mode);
  }
  return out;
}

Vector logClassCond(const Vector& x, const GenerativeClassifier& clf) {
  return logClassCond(Matrix(x.transpose()), clf).row(0).transpose();
}

Matrix rowSoftmax(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Index n = 0; n < logits.rows(); ++n) {
    const double lse = logSumExp(logits.row(n));
    out.row(n) = (logits.row(n).array() - lse).exp();
  }
  return out;
}

std::vector<int> rowArgmax(const Matrix& scores) {
  std::vector<int> out(static_cast<std::size_t>(scores.rows()));
  for (Index n = 0; n < scores.rows(); ++n) {
    Index best = 0;
    for (Index c = 1; c < scores.cols(); ++c) {
      if (scores(n, c) > scores(n, best)) best = c;
    }
    out[static_cast<std::size_t>(n)] = static_cast<int>(best);
  }
  return out;
}

Matrix posterior(const Matrix& X, const GenerativeClassifier& clf) {
  Matrix logits = logClassCond(X, clf);
  logits.array().rowwise() += clf.classPrior.array().log().transpose();
  return rowSoftmax(logits);
}

Vector posterior(const Vector& x, const GenerativeClassifier& clf) {
  return posterior(Matrix(x.transpose()), clf).row(0).transpose();
}

std::vector<int> predict(const Matrix& X, const GenerativeClassifier& clf) {
  // Argmax over log-joint scores; same order as the posterior without the
  // exp/normalize round trip.
  Matrix logits = logClassCond(X, clf);
  logits.array().rowwise() += clf.classPrior.array().log().transpose();
  return rowArgmax(logits);
}

int predict(const Vector& x, const GenerativeClassifier& clf) {
  return predict(Matrix(x.transpose()), clf).front();
}

Vector anomalyScore(const Matrix& X, const GenerativeClassifier& clf) {
  return -logClassCond(X, clf).rowwise().maxCoeff();
}

double anomalyScore(const Vector& x, const GenerativeClassifier& clf) {
  return anomalyScore(Matrix(x.transpose()), clf)(0);
}

Matrix softmaxPosterior(const Matrix& X, const SoftmaxBaseline& base) {
  require(X.cols() == base.dim(), "softmaxPosterior: dimension mismatch");
  Matrix logits = X * base.weights.transpose();
  logits.rowwise() += base.biases.transpose();
  return rowSoftmax(logits);
}

Vector softmaxPosterior(const Vector& x, const SoftmaxBaseline& base) {
  return softmaxPosterior(Matrix(x.transpose()), base).row(0).transpose();
}

std::vector<int> predict(const Matrix& X, const SoftmaxBaseline& base) {
  require(X.cols() == base.dim(), "predict: dimension mismatch");
  Matrix logits = X * base.weights.transpose();
  logits.rowwise() += base.biases.transpose();
  return rowArgmax(logits);
}

}  // namespace gmmclass

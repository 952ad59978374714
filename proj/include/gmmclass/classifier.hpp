#pragma once

#include "gmmclass/em.hpp"

#include <vector>

namespace gmmclass {

// Bayes-rule classifier over per-class Gaussian mixtures.
struct GenerativeClassifier {
  std::vector<Gmm> perClass;
  Vector classPrior;  // uniform unless set

  static GenerativeClassifier uniform(std::vector<Gmm> perClass);

  int numClasses() const { return static_cast<int>(perClass.size()); }
  Index numComponents() const { return perClass.front().numComponents(); }
  Index dim() const { return perClass.front().dim(); }
  void validate() const;
};

// Affine logits W x + b followed by a softmax.
struct SoftmaxBaseline {
  Matrix weights;  // C x D
  Vector biases;   // C

  int numClasses() const { return static_cast<int>(weights.rows()); }
  Index dim() const { return weights.cols(); }
  void validate() const;
};

// log p(x | c) for every class, each in its mixture's responsibility mode.
Vector logClassCond(const Vector& x, const GenerativeClassifier& clf);
Matrix logClassCond(const Matrix& X, const GenerativeClassifier& clf);  // N x C

Vector posterior(const Vector& x, const GenerativeClassifier& clf);
Matrix posterior(const Matrix& X, const GenerativeClassifier& clf);

// argmax_c p(c | x), ties to the lowest class index.
int predict(const Vector& x, const GenerativeClassifier& clf);
std::vector<int> predict(const Matrix& X, const GenerativeClassifier& clf);

// -max_c log p(x | c); larger means more anomalous.
double anomalyScore(const Vector& x, const GenerativeClassifier& clf);
Vector anomalyScore(const Matrix& X, const GenerativeClassifier& clf);

Vector softmaxPosterior(const Vector& x, const SoftmaxBaseline& base);
Matrix softmaxPosterior(const Matrix& X, const SoftmaxBaseline& base);
std::vector<int> predict(const Matrix& X, const SoftmaxBaseline& base);

// Row-wise softmax of a logit matrix, stabilized by the row max.
Matrix rowSoftmax(const Matrix& logits);

// Row-wise argmax with ties to the lowest index.
std::vector<int> rowArgmax(const Matrix& scores);

}  // namespace gmmclass

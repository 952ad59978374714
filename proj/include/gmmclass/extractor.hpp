#pragma once

#include "gmmclass/classifier.hpp"

#include <span>
#include <vector>

namespace gmmclass {

enum class Activation { Identity, Tanh, Relu };

struct DenseLayer {
  Matrix weight;  // out x in
  Vector bias;    // out
  Activation activation = Activation::Identity;
};

// Feature extractor: a stack of dense layers; the last one produces the
// D-dimensional features consumed by the classifiers.
struct Mlp {
  std::vector<DenseLayer> layers;

  Index inputDim() const { return layers.front().weight.cols(); }
  Index outputDim() const { return layers.back().weight.rows(); }
  void validate() const;

  // Glorot-uniform weights, zero biases, `activation` on every hidden layer.
  static Mlp init(Index inputDim, std::span<const Index> hidden, Index outputDim,
                  Activation activation, Rng& rng,
                  Activation outputActivation = Activation::Identity);
};

// Per-layer inputs and pre-activations from one forward pass. Consumed by
// exactly one backward pass.
struct GradTape {
  std::vector<Matrix> inputs;
  std::vector<Matrix> preActivations;
  bool consumed = false;
};

struct ForwardResult {
  Matrix features;  // N x D
  GradTape tape;
};

ForwardResult forward(const Matrix& inputs, const Mlp& mlp);
Matrix extractFeatures(const Matrix& inputs, const Mlp& mlp);

struct MlpGradients {
  std::vector<Matrix> weights;
  std::vector<Vector> biases;
};

MlpGradients backward(GradTape& tape, const Matrix& dFeatures, const Mlp& mlp);

double squaredNorm(const MlpGradients& g);
void scaleGradients(MlpGradients& g, double factor);

// theta <- theta - lr * (grad + weightDecay * theta)
Mlp sgdStep(Mlp mlp, const MlpGradients& grads, double lr, double weightDecay);

// Gradient of the loss with respect to one class mixture, in the
// unconstrained coordinates used for end-to-end training: means, log
// variances and weight logits (weights = softmax(logits)).
struct GmmGradient {
  Matrix means;
  Matrix logVariances;
  Vector weightLogits;
};

struct GenerativeCeResult {
  double loss = 0;
  Matrix dFeatures;                  // N x D
  std::vector<GmmGradient> dParams;  // empty unless requested
};

// Mean cross-entropy of the Bayes-rule posterior, -(1/N) sum_n ln p(c_n | x_n).
// The mixtures are held fixed; in winner-take-all mode the gradient flows
// through the argmax component only (ties to the lowest index).
GenerativeCeResult generativeCeLoss(const Matrix& features, std::span<const int> labels,
                                    const GenerativeClassifier& clf, bool paramGrads = false);

struct SoftmaxCeResult {
  double loss = 0;
  Matrix dFeatures;
  Matrix dWeights;
  Vector dBiases;
};

SoftmaxCeResult softmaxCeLoss(const Matrix& features, std::span<const int> labels,
                              const SoftmaxBaseline& base);

}  // namespace gmmclass

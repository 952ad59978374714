#include "gmmclass/extractor.hpp"

#include <cmath>

namespace gmmclass {

namespace {

Matrix activate(const Matrix& z, Activation act) {
  switch (act) {
    case Activation::Tanh: return z.array().tanh().matrix();
    case Activation::Relu: return z.cwiseMax(0.0);
    case Activation::Identity: break;
  }
  return z;
}

// dL/dz given dL/da and the pre-activation z.
Matrix activationBackward(const Matrix& upstream, const Matrix& z, Activation act) {
  switch (act) {
    case Activation::Tanh:
      return (upstream.array() * (1.0 - z.array().tanh().square())).matrix();
    case Activation::Relu:
      return (upstream.array() * (z.array() > 0.0).cast<double>()).matrix();
    case Activation::Identity: break;
  }
  return upstream;
}

void checkLabels(std::span<const int> labels, Index rows, int numClasses) {
  require(static_cast<Index>(labels.size()) == rows, "loss: label count must match feature rows");
  for (int y : labels) require(y >= 0 && y < numClasses, "loss: label out of range");
}

}  // namespace

void Mlp::validate() const {
  require(!layers.empty(), "Mlp: need at least one layer");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const DenseLayer& layer = layers[l];
    require(layer.weight.rows() == layer.bias.size(), "Mlp: bias length mismatch");
    if (l > 0) {
      require(layer.weight.cols() == layers[l - 1].weight.rows(), "Mlp: layer dimensions do not chain");
    }
  }
}

Mlp Mlp::init(Index inputDim, std::span<const Index> hidden, Index outputDim,
              Activation activation, Rng& rng, Activation outputActivation) {
  Mlp mlp;
  Index fanIn = inputDim;
  auto addLayer = [&](Index fanOut, Activation act) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fanIn + fanOut));
    std::uniform_real_distribution<double> uniform(-limit, limit);
    DenseLayer layer;
    layer.weight.resize(fanOut, fanIn);
    for (Index i = 0; i < fanOut; ++i) {
      for (Index j = 0; j < fanIn; ++j) layer.weight(i, j) = uniform(rng);
    }
    layer.bias = Vector::Zero(fanOut);
    layer.activation = act;
    mlp.layers.push_back(std::move(layer));
    fanIn = fanOut;
  };
  for (Index width : hidden) addLayer(width, activation);
  addLayer(outputDim, outputActivation);
  return mlp;
}

ForwardResult forward(const Matrix& inputs, const Mlp& mlp) {
  mlp.validate();
  require(inputs.cols() == mlp.inputDim(), "forward: input dimension mismatch");
  ForwardResult out;
  Matrix a = inputs;
  for (const DenseLayer& layer : mlp.layers) {
    Matrix z = a * layer.weight.transpose();
    z.rowwise() += layer.bias.transpose();
    out.tape.inputs.push_back(std::move(a));
    a = activate(z, layer.activation);
    out.tape.preActivations.push_back(std::move(z));
  }
  out.features = std::move(a);
  return out;
}

Matrix extractFeatures(const Matrix& inputs, const Mlp& mlp) {
  return forward(inputs, mlp).features;
}

MlpGradients backward(GradTape& tape, const Matrix& dFeatures, const Mlp& mlp) {
  require(!tape.consumed, "backward: tape already consumed");
  require(tape.inputs.size() == mlp.layers.size(), "backward: tape does not match network");
  require(dFeatures.rows() == tape.inputs.front().rows() && dFeatures.cols() == mlp.outputDim(),
          "backward: upstream gradient shape mismatch");
  tape.consumed = true;

  const std::size_t numLayers = mlp.layers.size();
  MlpGradients grads;
  grads.weights.resize(numLayers);
  grads.biases.resize(numLayers);
  Matrix upstream = dFeatures;
  for (std::size_t l = numLayers; l-- > 0;) {
    const DenseLayer& layer = mlp.layers[l];
    const Matrix dz = activationBackward(upstream, tape.preActivations[l], layer.activation);
    grads.weights[l] = dz.transpose() * tape.inputs[l];
    grads.biases[l] = dz.colwise().sum().transpose();
    if (l > 0) upstream = dz * layer.weight;
  }
  return grads;
}

double squaredNorm(const MlpGradients& g) {
  double total = 0;
  for (const Matrix& w : g.weights) total += w.squaredNorm();
  for (const Vector& b : g.biases) total += b.squaredNorm();
  return total;
}

void scaleGradients(MlpGradients& g, double factor) {
  for (Matrix& w : g.weights) w *= factor;
  for (Vector& b : g.biases) b *= factor;
}

Mlp sgdStep(Mlp mlp, const MlpGradients& grads, double lr, double weightDecay) {
  require(lr >= 0, "sgdStep: learning rate must be nonnegative");
  require(grads.weights.size() == mlp.layers.size(), "sgdStep: gradient shape mismatch");
  for (std::size_t l = 0; l < mlp.layers.size(); ++l) {
    DenseLayer& layer = mlp.layers[l];
    layer.weight -= lr * (grads.weights[l] + weightDecay * layer.weight);
    layer.bias -= lr * (grads.biases[l] + weightDecay * layer.bias);
  }
  return mlp;
}

GenerativeCeResult generativeCeLoss(const Matrix& features, std::span<const int> labels,
                                    const GenerativeClassifier& clf, bool paramGrads) {
  require(features.cols() == clf.dim(), "generativeCeLoss: dimension mismatch");
  const Index n = features.rows();
  const int numClasses = clf.numClasses();
  checkLabels(labels, n, numClasses);
  require(n >= 1, "generativeCeLoss: empty batch");

  // Per-class component responsibilities within the class mixture.
  std::vector<Matrix> resp(static_cast<std::size_t>(numClasses));
  Matrix logits(n, numClasses);
  for (int c = 0; c < numClasses; ++c) {
    const Gmm& g = clf.perClass[static_cast<std::size_t>(c)];
    const Matrix terms = jointLogTerms(features, g);
    Matrix& r = resp[static_cast<std::size_t>(c)];
    r.setZero(n, g.numComponents());
    for (Index i = 0; i < n; ++i) {
      if (g.mode == ResponsibilityMode::Sum) {
        const double lse = logSumExp(terms.row(i));
        logits(i, c) = lse;
        r.row(i) = (terms.row(i).array() - lse).exp();
      } else {
        Index best = 0;
        for (Index m = 1; m < terms.cols(); ++m) {
          if (terms(i, m) > terms(i, best)) best = m;
        }
        logits(i, c) = terms(i, best);
        r(i, best) = 1.0;
      }
    }
  }
  logits.array().rowwise() += clf.classPrior.array().log().transpose();

  GenerativeCeResult out;
  Matrix upstream(n, numClasses);  // dLoss / dLogits
  double total = 0;
  for (Index i = 0; i < n; ++i) {
    const double lse = logSumExp(logits.row(i));
    const int y = labels[static_cast<std::size_t>(i)];
    total += lse - logits(i, y);
    upstream.row(i) = (logits.row(i).array() - lse).exp();
    upstream(i, y) -= 1.0;
  }
  const double scale = 1.0 / static_cast<double>(n);
  out.loss = total * scale;
  upstream *= scale;

  out.dFeatures = Matrix::Zero(n, features.cols());
  if (paramGrads) out.dParams.resize(static_cast<std::size_t>(numClasses));
  for (int c = 0; c < numClasses; ++c) {
    const Gmm& g = clf.perClass[static_cast<std::size_t>(c)];
    const Matrix& r = resp[static_cast<std::size_t>(c)];
    GmmGradient* pg = paramGrads ? &out.dParams[static_cast<std::size_t>(c)] : nullptr;
    if (pg) {
      pg->means.setZero(g.numComponents(), g.dim());
      pg->logVariances.setZero(g.numComponents(), g.dim());
      pg->weightLogits.setZero(g.numComponents());
    }
    for (Index m = 0; m < g.numComponents(); ++m) {
      const Vector w = upstream.col(c).cwiseProduct(r.col(m));
      if (pg) pg->weightLogits(m) = w.sum();
      if (w.isZero(0.0)) continue;
      const Matrix diff = features.rowwise() - g.means.row(m);
      const Matrix scaled = (diff.array().rowwise() / g.variances.row(m).array()).matrix();
      out.dFeatures -= (scaled.array().colwise() * w.array()).matrix();
      if (pg) {
        pg->means.row(m) = (scaled.array().colwise() * w.array()).colwise().sum();
        pg->logVariances.row(m) =
            -0.5 * ((1.0 - (diff.array() * scaled.array())).colwise() * w.array()).colwise().sum();
      }
    }
    if (pg) {
      // ln pi = alpha - lse(alpha): d/d alpha_k = r_k - pi_k, weighted by upstream.
      pg->weightLogits -= upstream.col(c).sum() * g.weights;
    }
  }
  return out;
}

SoftmaxCeResult softmaxCeLoss(const Matrix& features, std::span<const int> labels,
                              const SoftmaxBaseline& base) {
  require(features.cols() == base.dim(), "softmaxCeLoss: dimension mismatch");
  const Index n = features.rows();
  require(n >= 1, "softmaxCeLoss: empty batch");
  checkLabels(labels, n, base.numClasses());

  Matrix logits = features * base.weights.transpose();
  logits.rowwise() += base.biases.transpose();
  SoftmaxCeResult out;
  Matrix upstream(n, base.numClasses());
  double total = 0;
  for (Index i = 0; i < n; ++i) {
    const double lse = logSumExp(logits.row(i));
    const int y = labels[static_cast<std::size_t>(i)];
    total += lse - logits(i, y);
    upstream.row(i) = (logits.row(i).array() - lse).exp();
    upstream(i, y) -= 1.0;
  }
  const double scale = 1.0 / static_cast<double>(n);
  out.loss = total * scale;
  upstream *= scale;
  out.dFeatures = upstream * base.weights;
  out.dWeights = upstream.transpose() * features;
  out.dBiases = upstream.colwise().sum().transpose();
  return out;
}

}  // namespace gmmclass

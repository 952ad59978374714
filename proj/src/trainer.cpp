#include "gmmclass/trainer.hpp"

#include "gmmclass/serialize.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

namespace gmmclass {

namespace {

// Factor bringing a gradient of the given squared norm down to `clip`.
double clipFactor(double squaredNorm, double clip) {
  if (clip <= 0) return 1.0;
  const double norm = std::sqrt(squaredNorm);
  return norm > clip ? clip / norm : 1.0;
}

constexpr std::uint64_t kFnvOffset = 1469598103934665603ULL;
constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

void hashBytes(std::uint64_t& h, const double* data, Index count) {
  const auto* bytes = reinterpret_cast<const unsigned char*>(data);
  const std::size_t n = static_cast<std::size_t>(count) * sizeof(double);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= bytes[i];
    h *= kFnvPrime;
  }
}

template <typename Derived>
void hashDense(std::uint64_t& h, const Eigen::PlainObjectBase<Derived>& m) {
  hashBytes(h, m.data(), m.size());
}

bool sameDouble(double a, double b) {
  return (std::isnan(a) && std::isnan(b)) || a == b;
}

Matrix rowsOf(const Matrix& X, std::span<const Index> rows) {
  Matrix out(static_cast<Index>(rows.size()), X.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = X.row(rows[i]);
  return out;
}

Matrix stackRows(const Matrix& top, const Matrix& bottom) {
  if (top.rows() == 0) return bottom;
  Matrix out(top.rows() + bottom.rows(), bottom.cols());
  out << top, bottom;
  return out;
}

Vector softmaxOf(const Vector& logits) {
  return (logits.array() - logSumExp(logits)).exp().matrix();
}

Json recordToJson(const IterationRecord& r) {
  Json ll = Json::array();
  for (double v : r.classLogLikelihood) ll.push_back(std::isnan(v) ? Json(nullptr) : Json(v));
  return {{"iteration", r.iteration},
          {"loss", r.loss},
          {"classLogLikelihood", std::move(ll)},
          {"phiBeforeGradient", r.phiBeforeGradient},
          {"phiAfterGradient", r.phiAfterGradient},
          {"thetaBeforeEm", r.thetaBeforeEm},
          {"thetaAfterEm", r.thetaAfterEm}};
}

IterationRecord recordFromJson(const Json& j) {
  IterationRecord r;
  r.iteration = j.at("iteration").get<int>();
  r.loss = j.at("loss").get<double>();
  for (const Json& v : j.at("classLogLikelihood")) {
    r.classLogLikelihood.push_back(v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>());
  }
  r.phiBeforeGradient = j.at("phiBeforeGradient").get<std::uint64_t>();
  r.phiAfterGradient = j.at("phiAfterGradient").get<std::uint64_t>();
  r.thetaBeforeEm = j.at("thetaBeforeEm").get<std::uint64_t>();
  r.thetaAfterEm = j.at("thetaAfterEm").get<std::uint64_t>();
  return r;
}

}  // namespace

void TrainConfig::validate() const {
  require(iterations >= 0, "TrainConfig: iterations must be >= 0");
  require(batchSize >= 1, "TrainConfig: batchSize must be >= 1");
  require(lr >= 0, "TrainConfig: lr must be >= 0");
  require(weightDecay >= 0, "TrainConfig: weightDecay must be >= 0");
  require(gradClip >= 0, "TrainConfig: gradClip must be >= 0");
  require(components >= 1, "TrainConfig: components must be >= 1");
  require(featureDim >= 1, "TrainConfig: featureDim must be >= 1");
  for (Index h : hidden) require(h >= 1, "TrainConfig: hidden widths must be >= 1");
  require(memory.capacityPerQueue >= 0, "TrainConfig: memory capacity must be >= 0");
  require(memory.samplesPerClass >= 1, "TrainConfig: samplesPerClass must be >= 1");
  em.validate();
}

bool IterationRecord::operator==(const IterationRecord& o) const {
  if (iteration != o.iteration || !sameDouble(loss, o.loss) ||
      classLogLikelihood.size() != o.classLogLikelihood.size() ||
      phiBeforeGradient != o.phiBeforeGradient || phiAfterGradient != o.phiAfterGradient ||
      thetaBeforeEm != o.thetaBeforeEm || thetaAfterEm != o.thetaAfterEm) {
    return false;
  }
  for (std::size_t i = 0; i < classLogLikelihood.size(); ++i) {
    if (!sameDouble(classLogLikelihood[i], o.classLogLikelihood[i])) return false;
  }
  return true;
}

bool TrainReport::operator==(const TrainReport& o) const {
  if (iterations != o.iterations || unobservedClasses != o.unobservedClasses ||
      emEvents.size() != o.emEvents.size()) {
    return false;
  }
  for (std::size_t i = 0; i < emEvents.size(); ++i) {
    const auto& a = emEvents[i];
    const auto& b = o.emEvents[i];
    if (a.iteration != b.iteration || a.classId != b.classId || a.event.kind != b.event.kind ||
        a.event.loop != b.event.loop || a.event.component != b.event.component) {
      return false;
    }
  }
  return true;
}

std::uint64_t parameterHash(const GenerativeClassifier& clf) {
  std::uint64_t h = kFnvOffset;
  hashDense(h, clf.classPrior);
  for (const Gmm& g : clf.perClass) {
    hashDense(h, g.weights);
    hashDense(h, g.means);
    hashDense(h, g.variances);
  }
  return h;
}

std::uint64_t parameterHash(const Mlp& mlp) {
  std::uint64_t h = kFnvOffset;
  for (const DenseLayer& layer : mlp.layers) {
    hashDense(h, layer.weight);
    hashDense(h, layer.bias);
  }
  return h;
}

Gmm placeholderMixture(Index numComponents, Index dim, ResponsibilityMode mode) {
  Gmm g;
  g.weights = Vector::Constant(numComponents, 1.0 / static_cast<double>(numComponents));
  g.means = Matrix::Zero(numComponents, dim);
  g.variances = Matrix::Ones(numComponents, dim);
  g.mode = mode;
  return g;
}

Trainer::Trainer(const LabeledSet& data, TrainConfig config)
    : data_(&data), config_(std::move(config)), rng_(config_.seed) {
  config_.validate();
  data.validate();
  require(data.size() >= 1, "Trainer: empty training set");

  const int numClasses = data.numClasses;
  mlp_ = Mlp::init(data.inputDim(), config_.hidden, config_.featureDim, config_.activation, rng_,
                   config_.featureActivation);

  std::vector<Gmm> perClass;
  for (int c = 0; c < numClasses; ++c) {
    perClass.push_back(placeholderMixture(config_.components, config_.featureDim, config_.responsibility));
  }
  classifier_ = GenerativeClassifier::uniform(std::move(perClass));
  initialized_.assign(static_cast<std::size_t>(numClasses), false);
  sinkhornPotential_.assign(static_cast<std::size_t>(numClasses), Vector());

  if (config_.mode == TrainMode::SoftmaxBaseline) {
    const double limit =
        std::sqrt(6.0 / static_cast<double>(numClasses + config_.featureDim));
    std::uniform_real_distribution<double> uniform(-limit, limit);
    softmax_.weights.resize(numClasses, config_.featureDim);
    for (Index i = 0; i < softmax_.weights.size(); ++i) softmax_.weights.data()[i] = uniform(rng_);
    softmax_.biases = Vector::Zero(numClasses);
  }
  if (config_.mode == TrainMode::HybridGenerative) {
    memory_ = FeatureMemory(numClasses, static_cast<int>(config_.components), config_.featureDim,
                            config_.memory.capacityPerQueue, config_.memory.layout);
  }
  order_.resize(static_cast<std::size_t>(data.size()));
  std::iota(order_.begin(), order_.end(), Index{0});
  cursor_ = order_.size();
}

std::vector<Index> Trainer::nextBatch() {
  const auto n = static_cast<std::size_t>(data_->size());
  const auto b = static_cast<std::size_t>(config_.batchSize);
  if (b >= n) {
    std::vector<Index> all(n);
    std::iota(all.begin(), all.end(), Index{0});
    return all;
  }
  std::vector<Index> batch;
  batch.reserve(b);
  while (batch.size() < b) {
    if (cursor_ == order_.size()) {
      std::shuffle(order_.begin(), order_.end(), rng_);
      cursor_ = 0;
    }
    batch.push_back(order_[cursor_++]);
  }
  return batch;
}

void Trainer::initializeClass(int c, const Matrix& features) {
  classifier_.perClass[static_cast<std::size_t>(c)] = initializeFromSamples(
      features, config_.components, config_.responsibility, rng_, config_.em.varianceFloor);
  initialized_[static_cast<std::size_t>(c)] = true;
  sinkhornPotential_[static_cast<std::size_t>(c)].resize(0);
}

void Trainer::checkLoss(double loss) const {
  if (!std::isfinite(loss)) {
    throw NumericalError("non-finite loss at iteration " + std::to_string(iteration_), iteration_);
  }
}

void Trainer::emUpdate(const Matrix& features, std::span<const int> labels,
                       IterationRecord& record) {
  record.thetaBeforeEm = parameterHash(mlp_);
  const int numClasses = classifier_.numClasses();
  std::vector<std::vector<Index>> rows(static_cast<std::size_t>(numClasses));
  for (std::size_t i = 0; i < labels.size(); ++i) rows[static_cast<std::size_t>(labels[i])].push_back(static_cast<Index>(i));

  // Route the batch through the current mixtures to pick memory queues.
  std::vector<Matrix> routing(static_cast<std::size_t>(numClasses));
  std::vector<Matrix> classFeatures(static_cast<std::size_t>(numClasses));
  for (int c = 0; c < numClasses; ++c) {
    const auto& r = rows[static_cast<std::size_t>(c)];
    if (r.empty()) continue;
    classFeatures[static_cast<std::size_t>(c)] = rowsOf(features, r);
    if (initialized_[static_cast<std::size_t>(c)]) {
      routing[static_cast<std::size_t>(c)] =
          eStepVanilla(classFeatures[static_cast<std::size_t>(c)], classifier_.perClass[static_cast<std::size_t>(c)]).q;
    }
  }
  // Taken before the push: the rows about to be pushed are already part of the
  // batch, and the working set is the union of the two.
  std::vector<Matrix> stored(static_cast<std::size_t>(numClasses));
  for (int c = 0; c < numClasses; ++c) {
    if (!rows[static_cast<std::size_t>(c)].empty()) stored[static_cast<std::size_t>(c)] = memory_.snapshot(c);
  }
  const SparseSelection picked = sparseSample(features, labels, routing,
                                              static_cast<int>(config_.components),
                                              config_.memory.samplesPerClass, rng_);
  for (int c = 0; c < numClasses; ++c) {
    for (int m = 0; m < static_cast<int>(config_.components); ++m) {
      memory_.push(c, m, picked[static_cast<std::size_t>(c)][static_cast<std::size_t>(m)]);
    }
  }

  for (int c = 0; c < numClasses; ++c) {
    if (rows[static_cast<std::size_t>(c)].empty()) continue;
    const Matrix working = stackRows(stored[static_cast<std::size_t>(c)], classFeatures[static_cast<std::size_t>(c)]);
    if (!initialized_[static_cast<std::size_t>(c)]) initializeClass(c, working);
    Vector& potential = sinkhornPotential_[static_cast<std::size_t>(c)];
    EmResult res = emLoop(working, classifier_.perClass[static_cast<std::size_t>(c)], config_.em, rng_, &potential);
    potential = std::move(res.sinkhornPotential);
    classifier_.perClass[static_cast<std::size_t>(c)] = std::move(res.params);
    record.classLogLikelihood[static_cast<std::size_t>(c)] =
        res.logLikelihood / static_cast<double>(working.rows());
    for (const EmEvent& e : res.events) report_.emEvents.push_back({iteration_, c, e});
  }
  record.thetaAfterEm = parameterHash(mlp_);
}

void Trainer::gradientUpdate(GradTape& tape, const Matrix& features, std::span<const int> labels,
                             IterationRecord& record) {
  record.phiBeforeGradient = parameterHash(classifier_);
  GenerativeCeResult ce = generativeCeLoss(features, labels, classifier_);
  record.loss = ce.loss;
  checkLoss(ce.loss);
  MlpGradients grads = backward(tape, ce.dFeatures, mlp_);
  scaleGradients(grads, clipFactor(squaredNorm(grads), config_.gradClip));
  mlp_ = sgdStep(std::move(mlp_), grads, config_.lr, config_.weightDecay);
  record.phiAfterGradient = parameterHash(classifier_);
}

void Trainer::step() {
  const std::vector<Index> batch = nextBatch();
  const Matrix inputs = rowsOf(data_->samples, batch);
  std::vector<int> labels(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) labels[i] = data_->labels[static_cast<std::size_t>(batch[i])];

  IterationRecord record;
  record.iteration = iteration_;
  record.classLogLikelihood.assign(static_cast<std::size_t>(classifier_.numClasses()),
                                   std::numeric_limits<double>::quiet_NaN());
  ForwardResult fwd = forward(inputs, mlp_);

  switch (config_.mode) {
    case TrainMode::HybridGenerative:
      if (config_.emBeforeGradient) {
        emUpdate(fwd.features, labels, record);
        gradientUpdate(fwd.tape, fwd.features, labels, record);
      } else {
        gradientUpdate(fwd.tape, fwd.features, labels, record);
        emUpdate(fwd.features, labels, record);
      }
      break;

    case TrainMode::DiscriminativeGmm: {
      for (int c = 0; c < classifier_.numClasses(); ++c) {
        if (initialized_[static_cast<std::size_t>(c)]) continue;
        std::vector<Index> rows;
        for (std::size_t i = 0; i < labels.size(); ++i) {
          if (labels[i] == c) rows.push_back(static_cast<Index>(i));
        }
        if (!rows.empty()) initializeClass(c, rowsOf(fwd.features, rows));
      }
      record.phiBeforeGradient = parameterHash(classifier_);
      record.thetaBeforeEm = record.thetaAfterEm = parameterHash(mlp_);
      GenerativeCeResult ce = generativeCeLoss(fwd.features, labels, classifier_, true);
      record.loss = ce.loss;
      checkLoss(ce.loss);
      MlpGradients grads = backward(fwd.tape, ce.dFeatures, mlp_);
      double sq = squaredNorm(grads);
      for (const GmmGradient& d : ce.dParams) {
        sq += d.means.squaredNorm() + d.logVariances.squaredNorm() + d.weightLogits.squaredNorm();
      }
      const double scale = clipFactor(sq, config_.gradClip);
      scaleGradients(grads, scale);
      mlp_ = sgdStep(std::move(mlp_), grads, config_.lr, config_.weightDecay);
      const double step = config_.lr * scale;
      const double logFloor = std::log(config_.em.varianceFloor);
      for (int c = 0; c < classifier_.numClasses(); ++c) {
        Gmm& g = classifier_.perClass[static_cast<std::size_t>(c)];
        const GmmGradient& d = ce.dParams[static_cast<std::size_t>(c)];
        g.means -= step * d.means;
        const Matrix logVar = (g.variances.array().log().matrix() - step * d.logVariances).cwiseMax(logFloor);
        g.variances = logVar.array().exp().matrix();
        const Vector logits = g.weights.array().log().matrix() - step * d.weightLogits;
        g.weights = softmaxOf(logits);
      }
      record.phiAfterGradient = parameterHash(classifier_);
      break;
    }

    case TrainMode::SoftmaxBaseline: {
      record.thetaBeforeEm = record.thetaAfterEm = parameterHash(mlp_);
      record.phiBeforeGradient = record.phiAfterGradient = parameterHash(classifier_);
      SoftmaxCeResult ce = softmaxCeLoss(fwd.features, labels, softmax_);
      record.loss = ce.loss;
      checkLoss(ce.loss);
      MlpGradients grads = backward(fwd.tape, ce.dFeatures, mlp_);
      const double scale = clipFactor(
          squaredNorm(grads) + ce.dWeights.squaredNorm() + ce.dBiases.squaredNorm(), config_.gradClip);
      scaleGradients(grads, scale);
      mlp_ = sgdStep(std::move(mlp_), grads, config_.lr, config_.weightDecay);
      softmax_.weights -= config_.lr * (scale * ce.dWeights + config_.weightDecay * softmax_.weights);
      softmax_.biases -= config_.lr * (scale * ce.dBiases + config_.weightDecay * softmax_.biases);
      break;
    }
  }

  report_.iterations.push_back(std::move(record));
  ++iteration_;
}

void Trainer::run() {
  while (iteration_ < config_.iterations) step();
}

TrainReport Trainer::report() const {
  TrainReport out = report_;
  if (config_.mode != TrainMode::SoftmaxBaseline) {
    for (int c = 0; c < classifier_.numClasses(); ++c) {
      if (!initialized_[static_cast<std::size_t>(c)]) out.unobservedClasses.push_back(c);
    }
  }
  return out;
}

void Trainer::saveCheckpoint(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  Model model;
  if (config_.mode == TrainMode::SoftmaxBaseline) model.head = softmax_;
  else model.head = classifier_;
  model.extractor = mlp_;
  saveModel(model, dir / "model.json");

  if (config_.mode == TrainMode::HybridGenerative) {
    std::ofstream mem(dir / "memory.bin", std::ios::binary);
    if (!mem) throw std::runtime_error("cannot write memory dump");
    memory_.save(mem);
  }

  std::ostringstream rngState;
  rngState << rng_;
  Json records = Json::array();
  for (const IterationRecord& r : report_.iterations) records.push_back(recordToJson(r));
  Json events = Json::array();
  for (const EmEventRecord& e : report_.emEvents) {
    events.push_back({e.iteration, e.classId, static_cast<int>(e.event.kind), e.event.loop, e.event.component});
  }
  Json initialized = Json::array();
  for (bool b : initialized_) initialized.push_back(b);
  Json potentials = Json::array();
  for (const Vector& v : sinkhornPotential_) potentials.push_back(std::vector<double>(v.data(), v.data() + v.size()));
  const Json state = {{"iteration", iteration_},
                      {"rng", rngState.str()},
                      {"order", order_},
                      {"cursor", cursor_},
                      {"initialized", std::move(initialized)},
                      {"sinkhornPotentials", std::move(potentials)},
                      {"records", std::move(records)},
                      {"events", std::move(events)}};
  std::ofstream out(dir / "state.json", std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint state");
  out << dumpJson(state);
}

Trainer Trainer::resume(const std::filesystem::path& dir, const LabeledSet& data,
                        TrainConfig config) {
  Trainer t(data, std::move(config));
  const Model model = loadModel(dir / "model.json");
  t.mlp_ = model.extractor;
  if (const auto* clf = std::get_if<GenerativeClassifier>(&model.head)) t.classifier_ = *clf;
  else t.softmax_ = std::get<SoftmaxBaseline>(model.head);

  if (t.config_.mode == TrainMode::HybridGenerative) {
    std::ifstream mem(dir / "memory.bin", std::ios::binary);
    if (!mem) throw std::runtime_error("missing memory dump in checkpoint");
    t.memory_ = FeatureMemory::load(mem);
  }

  std::ifstream in(dir / "state.json", std::ios::binary);
  if (!in) throw std::runtime_error("missing checkpoint state");
  const Json state = Json::parse(in);
  t.iteration_ = state.at("iteration").get<int>();
  std::istringstream rngState(state.at("rng").get<std::string>());
  rngState >> t.rng_;
  t.order_ = state.at("order").get<std::vector<Index>>();
  t.cursor_ = state.at("cursor").get<std::size_t>();
  t.initialized_ = state.at("initialized").get<std::vector<bool>>();
  const Json& potentials = state.at("sinkhornPotentials");
  require(potentials.size() == t.sinkhornPotential_.size(), "checkpoint: potential count mismatch");
  for (std::size_t c = 0; c < potentials.size(); ++c) {
    const auto v = potentials[c].get<std::vector<double>>();
    t.sinkhornPotential_[c] = Eigen::Map<const Vector>(v.data(), static_cast<Index>(v.size()));
  }
  for (const Json& r : state.at("records")) t.report_.iterations.push_back(recordFromJson(r));
  for (const Json& e : state.at("events")) {
    EmEventRecord rec;
    rec.iteration = e.at(0).get<int>();
    rec.classId = e.at(1).get<int>();
    rec.event.kind = static_cast<EmEvent::Kind>(e.at(2).get<int>());
    rec.event.loop = e.at(3).get<int>();
    rec.event.component = e.at(4).get<Index>();
    t.report_.emEvents.push_back(rec);
  }
  return t;
}

GenerativeTrainResult trainHybrid(const LabeledSet& data, const TrainConfig& config) {
  require(config.mode == TrainMode::HybridGenerative, "trainHybrid: mode must be HybridGenerative");
  Trainer t(data, config);
  t.run();
  return {t.classifier(), t.extractor(), t.report()};
}

GenerativeTrainResult trainDiscriminativeGmm(const LabeledSet& data, const TrainConfig& config) {
  require(config.mode == TrainMode::DiscriminativeGmm,
          "trainDiscriminativeGmm: mode must be DiscriminativeGmm");
  Trainer t(data, config);
  t.run();
  return {t.classifier(), t.extractor(), t.report()};
}

SoftmaxTrainResult trainSoftmaxBaseline(const LabeledSet& data, const TrainConfig& config) {
  require(config.mode == TrainMode::SoftmaxBaseline, "trainSoftmaxBaseline: mode must be SoftmaxBaseline");
  Trainer t(data, config);
  t.run();
  return {t.softmax(), t.extractor(), t.report()};
}

}  // namespace gmmclass

#include "gmmclass/experiments.hpp"

#include <cmath>
#include <iostream>
#include <sstream>

namespace gmmclass {

Predictions predictWith(const Model& model, const Matrix& inputs) {
  const Matrix features = extractFeatures(inputs, model.extractor);
  const Matrix post = model.generative()
                          ? posterior(features, std::get<GenerativeClassifier>(model.head))
                          : softmaxPosterior(features, std::get<SoftmaxBaseline>(model.head));
  Predictions out;
  out.labels = model.generative() ? predict(features, std::get<GenerativeClassifier>(model.head))
                                  : predict(features, std::get<SoftmaxBaseline>(model.head));
  out.confidence.resize(out.labels.size());
  for (std::size_t i = 0; i < out.labels.size(); ++i) {
    out.confidence[i] = std::clamp(post(static_cast<Index>(i), out.labels[i]), 0.0, 1.0);
  }
  return out;
}

Vector anomalyScores(const Model& model, const Matrix& inputs) {
  const Matrix features = extractFeatures(inputs, model.extractor);
  if (model.generative()) return anomalyScore(features, std::get<GenerativeClassifier>(model.head));
  const Matrix post = softmaxPosterior(features, std::get<SoftmaxBaseline>(model.head));
  return (1.0 - post.rowwise().maxCoeff().array()).matrix();
}

ClosedSetMetrics evaluateClosedSet(const Model& model, const LabeledSet& data) {
  require(data.size() >= 1, "evaluateClosedSet: empty data");
  const Predictions p = predictWith(model, data.samples);
  const int numClasses = model.generative()
                             ? std::get<GenerativeClassifier>(model.head).numClasses()
                             : std::get<SoftmaxBaseline>(model.head).numClasses();
  require(data.numClasses <= numClasses, "evaluateClosedSet: data has more classes than the model");
  ClosedSetMetrics m;
  m.accuracy = accuracy(p.labels, data.labels);
  m.meanIou = meanIou(p.labels, data.labels, numClasses);
  std::vector<int> correct(p.labels.size());
  for (std::size_t i = 0; i < correct.size(); ++i) correct[i] = p.labels[i] == data.labels[i];
  CalibrationResult cal = expectedCalibrationError(p.confidence, correct);
  m.ece = cal.ece;
  m.bins = std::move(cal.bins);
  return m;
}

OodMetrics evaluateOod(const Model& model, const LabeledSet& ood) {
  const Vector scores = anomalyScores(model, ood.samples);
  BinaryScoreSet set;
  set.scores.assign(scores.data(), scores.data() + scores.size());
  set.labels = ood.labels;
  return {auroc(set), averagePrecision(set), fprAtTpr(set, 0.95)};
}

Json toJson(const ClosedSetMetrics& m) {
  Json bins = Json::array();
  for (const ReliabilityBin& b : m.bins) {
    bins.push_back({{"lo", b.lo}, {"hi", b.hi}, {"count", b.count}, {"conf", b.confidence}, {"acc", b.accuracy}});
  }
  return {{"accuracy", m.accuracy}, {"mIoU", m.meanIou}, {"ece", m.ece}, {"bins", std::move(bins)}};
}

Json toJson(const OodMetrics& m) {
  return {{"auroc", m.auroc}, {"ap", m.ap}, {"fpr95", m.fpr95}};
}

Json toJson(const TrainReport& r) {
  Json iterations = Json::array();
  for (const IterationRecord& it : r.iterations) {
    Json ll = Json::array();
    for (double v : it.classLogLikelihood) ll.push_back(std::isnan(v) ? Json(nullptr) : Json(v));
    iterations.push_back({{"iteration", it.iteration},
                          {"loss", it.loss},
                          {"classLogLikelihood", std::move(ll)},
                          {"phiBeforeGradient", it.phiBeforeGradient},
                          {"phiAfterGradient", it.phiAfterGradient},
                          {"thetaBeforeEm", it.thetaBeforeEm},
                          {"thetaAfterEm", it.thetaAfterEm}});
  }
  Json events = Json::array();
  for (const EmEventRecord& e : r.emEvents) {
    const char* kind = e.event.kind == EmEvent::Kind::ComponentReinit        ? "component-reinit"
                       : e.event.kind == EmEvent::Kind::SinkhornNotConverged ? "sinkhorn-not-converged"
                                                                             : "fewer-samples-than-components";
    events.push_back({{"iteration", e.iteration},
                      {"classId", e.classId},
                      {"kind", kind},
                      {"loop", e.event.loop},
                      {"component", e.event.component}});
  }
  return {{"iterations", std::move(iterations)},
          {"emEvents", std::move(events)},
          {"unobservedClasses", r.unobservedClasses}};
}

std::string binsCsv(const std::vector<ReliabilityBin>& bins) {
  std::ostringstream out;
  out.precision(17);
  out << "bin_lo,bin_hi,count,conf,acc\n";
  for (const ReliabilityBin& b : bins) {
    out << b.lo << ',' << b.hi << ',' << b.count << ',' << b.confidence << ',' << b.accuracy << '\n';
  }
  return out.str();
}

TrainedModel trainModel(const LabeledSet& data, const TrainConfig& config) {
  Trainer trainer(data, config);
  trainer.run();
  TrainedModel out;
  out.model.extractor = trainer.extractor();
  if (config.mode == TrainMode::SoftmaxBaseline) out.model.head = trainer.softmax();
  else out.model.head = trainer.classifier();
  out.report = trainer.report();
  return out;
}

EmComparison compareEmFromSharedMean(const LabeledSet& train, Index components, int loops,
                                     std::uint64_t seed, double jitter, double epsilon) {
  EmComparison out;
  for (int c = 0; c < train.numClasses; ++c) {
    std::vector<Index> rows;
    for (Index i = 0; i < train.size(); ++i) {
      if (train.labels[static_cast<std::size_t>(i)] == c) rows.push_back(i);
    }
    if (rows.empty()) continue;
    const Matrix X = subset(train, rows).samples;
    Rng initRng(seed + static_cast<std::uint64_t>(c));
    const Gmm start = sharedMeanInit(X, components, initRng, jitter);

    EmConfig cfg;
    cfg.loopsPerIteration = loops;
    cfg.momentumTau = 0.0;
    cfg.epsilon = epsilon;

    cfg.variant = EmVariant::Vanilla;
    Rng vanillaRng(seed);
    out.vanilla += emLoop(X, start, cfg, vanillaRng).logLikelihood;

    cfg.variant = EmVariant::Sinkhorn;
    Rng sinkhornRng(seed);
    out.sinkhorn += emLoop(X, start, cfg, sinkhornRng).logLikelihood;
  }
  return out;
}

std::string toString(TrainMode mode) {
  switch (mode) {
    case TrainMode::HybridGenerative: return "hybrid";
    case TrainMode::DiscriminativeGmm: return "disc-gmm";
    case TrainMode::SoftmaxBaseline: break;
  }
  return "softmax";
}

std::string toString(EmVariant variant) {
  return variant == EmVariant::Vanilla ? "vanilla" : "sinkhorn";
}

AblationResult runAblation(const SynthSpec& spec, const TrainConfig& base, const AblationGrid& grid) {
  require(grid.seeds >= 1, "runAblation: need at least one seed");
  struct Split {
    SynthData data;
    std::uint64_t seed;
  };
  std::vector<Split> splits;
  for (int s = 0; s < grid.seeds; ++s) {
    SynthSpec local = spec;
    local.seed = spec.seed + static_cast<std::uint64_t>(s);
    splits.push_back({generate(local), local.seed});
  }

  AblationResult result;
  for (TrainMode mode : grid.modes) {
    for (Index m : grid.components) {
      const bool usesEm = mode == TrainMode::HybridGenerative;
      const std::vector<EmVariant> variants =
          usesEm ? grid.variants : std::vector<EmVariant>{base.em.variant};
      const std::vector<Index> memories = usesEm ? grid.memory : std::vector<Index>{0};
      for (EmVariant v : variants) {
        for (Index mem : memories) {
          AblationCell cell{mode, v, m, mem};
          double aurocSum = 0;
          for (const Split& split : splits) {
            TrainConfig cfg = base;
            cfg.mode = mode;
            cfg.components = m;
            cfg.em.variant = v;
            cfg.memory.capacityPerQueue = mem;
            cfg.seed = split.seed;
            std::cerr << "ablate: mode=" << toString(mode) << " em=" << toString(v) << " M=" << m
                      << " memory=" << mem << " seed=" << split.seed << '\n';
            const TrainedModel trained = trainModel(split.data.train, cfg);
            const ClosedSetMetrics cs = evaluateClosedSet(trained.model, split.data.test);
            cell.accuracy += cs.accuracy;
            cell.meanIou += cs.meanIou;
            cell.ece += cs.ece;
            if (split.data.ood) aurocSum += evaluateOod(trained.model, *split.data.ood).auroc;
          }
          const auto n = static_cast<double>(splits.size());
          cell.accuracy /= n;
          cell.meanIou /= n;
          cell.ece /= n;
          if (spec.oodHoldout) cell.auroc = aurocSum / n;
          result.cells.push_back(cell);
        }
      }
    }
  }

  for (const Split& split : splits) {
    const Index m = static_cast<Index>(spec.modesPerClass);
    const EmComparison cmp = compareEmFromSharedMean(split.data.train, m, grid.emLoops, split.seed);
    ++result.emSeeds;
    if (cmp.sinkhorn >= cmp.vanilla) ++result.sinkhornWins;
  }
  return result;
}

Json toJson(const AblationResult& r) {
  Json cells = Json::array();
  for (const AblationCell& c : r.cells) {
    const bool usesEm = c.mode == TrainMode::HybridGenerative;
    Json cell = {{"mode", toString(c.mode)},
                 {"em", usesEm ? Json(toString(c.variant)) : Json(nullptr)},
                 {"components", c.components},
                 {"memory", usesEm ? Json(c.memory) : Json(nullptr)},
                 {"accuracy", c.accuracy},
                 {"mIoU", c.meanIou},
                 {"ece", c.ece}};
    cell["auroc"] = c.auroc < 0 ? Json(nullptr) : Json(c.auroc);
    cells.push_back(std::move(cell));
  }
  return {{"cells", std::move(cells)},
          {"emComparison",
           {{"seeds", r.emSeeds},
            {"sinkhornWins", r.sinkhornWins},
            {"sinkhornWinFraction", r.emSeeds ? static_cast<double>(r.sinkhornWins) / r.emSeeds : 0.0}}}};
}

}  // namespace gmmclass

#pragma once

#include "gmmclass/data.hpp"
#include "gmmclass/metrics.hpp"
#include "gmmclass/serialize.hpp"
#include "gmmclass/trainer.hpp"

#include <string>
#include <vector>

namespace gmmclass {

struct ClosedSetMetrics {
  double accuracy = 0;
  double meanIou = 0;
  double ece = 0;
  std::vector<ReliabilityBin> bins;
};

struct OodMetrics {
  double auroc = 0;
  double ap = 0;
  double fpr95 = 0;
};

// Predicted class and max-posterior confidence for each row of `inputs`.
struct Predictions {
  std::vector<int> labels;
  std::vector<double> confidence;
};

Predictions predictWith(const Model& model, const Matrix& inputs);

// Generative heads score by -max_c log p(x|c); softmax heads by
// 1 - max_c p(c|x).
Vector anomalyScores(const Model& model, const Matrix& inputs);

ClosedSetMetrics evaluateClosedSet(const Model& model, const LabeledSet& data);
OodMetrics evaluateOod(const Model& model, const LabeledSet& ood);

Json toJson(const ClosedSetMetrics& m);
Json toJson(const TrainReport& r);
Json toJson(const OodMetrics& m);
std::string binsCsv(const std::vector<ReliabilityBin>& bins);

// Trains according to config.mode and packages the result as a Model.
struct TrainedModel {
  Model model;
  TrainReport report;
};
TrainedModel trainModel(const LabeledSet& data, const TrainConfig& config);

// Pure EM on each class of the training split, starting both variants from
// the same shared-mean initialization. Log-likelihoods are summed over
// classes, evaluated in Sum mode.
struct EmComparison {
  double vanilla = 0;
  double sinkhorn = 0;
};
EmComparison compareEmFromSharedMean(const LabeledSet& train, Index components, int loops,
                                     std::uint64_t seed, double jitter = 1e-3,
                                     double epsilon = 0.05);

struct AblationGrid {
  std::vector<EmVariant> variants{EmVariant::Vanilla, EmVariant::Sinkhorn};
  std::vector<Index> components{1, 3, 5, 10};
  std::vector<Index> memory{0, 2048};
  std::vector<TrainMode> modes{TrainMode::HybridGenerative, TrainMode::DiscriminativeGmm};
  int seeds = 3;
  int emLoops = 5;
};

struct AblationCell {
  TrainMode mode;
  EmVariant variant;
  Index components;
  Index memory;
  double accuracy = 0;  // mean over seeds
  double meanIou = 0;
  double ece = 0;
  double auroc = -1;  // mean over seeds; -1 without an OOD split
};

struct AblationResult {
  std::vector<AblationCell> cells;
  int emSeeds = 0;
  int sinkhornWins = 0;
};

// Runs every cell of the grid for `grid.seeds` data seeds starting at
// spec.seed. DiscriminativeGmm ignores the EM variant and memory axes, so it
// runs once per component count.
AblationResult runAblation(const SynthSpec& spec, const TrainConfig& base, const AblationGrid& grid);
Json toJson(const AblationResult& r);

std::string toString(TrainMode mode);
std::string toString(EmVariant variant);

}  // namespace gmmclass

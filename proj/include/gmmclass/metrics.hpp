#pragma once

#include "gmmclass/types.hpp"

#include <span>
#include <vector>

namespace gmmclass {

// Scores with binary labels; label 1 marks the positive (anomalous) class and
// higher scores mean "more positive".
struct BinaryScoreSet {
  std::vector<double> scores;
  std::vector<int> labels;

  void validate() const;
};

struct ReliabilityBin {
  double lo = 0;
  double hi = 0;
  Index count = 0;
  double confidence = 0;  // mean confidence in the bin (0 when empty)
  double accuracy = 0;    // mean correctness in the bin (0 when empty)
};

struct CalibrationResult {
  double ece = 0;
  std::vector<ReliabilityBin> bins;
};

double accuracy(std::span<const int> predictions, std::span<const int> labels);

// Mean over classes of TP / (TP + FP + FN); classes with an empty union are
// left out of the mean.
double meanIou(std::span<const int> predictions, std::span<const int> labels, int numClasses);

// Normalized Mann-Whitney U: P(pos > neg) + 0.5 P(pos == neg).
double auroc(const BinaryScoreSet& s);

// Step-wise area under precision/recall with tied scores forming one step.
double averagePrecision(const BinaryScoreSet& s);

// Smallest false-positive rate over thresholds whose true-positive rate
// reaches `tprTarget`.
double fprAtTpr(const BinaryScoreSet& s, double tprTarget = 0.95);

// Equal-width confidence bins over [0, 1]; a confidence of exactly 1 falls in
// the last bin.
CalibrationResult expectedCalibrationError(std::span<const double> confidences,
                                           std::span<const int> correct, int numBins = 10);

}  // namespace gmmclass

#include "gmmclass/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace gmmclass {

namespace {

struct Counts {
  Index positives = 0;
  Index negatives = 0;
};

Counts countLabels(const BinaryScoreSet& s) {
  Counts c;
  for (int y : s.labels) (y == 1 ? c.positives : c.negatives)++;
  return c;
}

// Indices sorted by descending score.
std::vector<std::size_t> descendingOrder(const std::vector<double>& scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

// Cumulative (tp, fp) after each group of tied scores, highest first.
struct Step {
  Index tp;
  Index fp;
};

std::vector<Step> thresholdSteps(const BinaryScoreSet& s) {
  const auto order = descendingOrder(s.scores);
  std::vector<Step> steps;
  Index tp = 0;
  Index fp = 0;
  for (std::size_t i = 0; i < order.size(); ++i) {
    (s.labels[order[i]] == 1 ? tp : fp)++;
    const bool groupEnds =
        i + 1 == order.size() || s.scores[order[i + 1]] != s.scores[order[i]];
    if (groupEnds) steps.push_back({tp, fp});
  }
  return steps;
}

// Bin b covers [b/B, (b+1)/B). p*B can round across an integer, so the
// candidate is checked against the exact sign of p*B - b.
int binOf(double p, int numBins) {
  const double bins = numBins;
  int b = static_cast<int>(p * bins);
  if (b > 0 && std::fma(p, bins, -static_cast<double>(b)) < 0) --b;
  else if (b + 1 < numBins && std::fma(p, bins, -static_cast<double>(b + 1)) >= 0) ++b;
  return std::min(b, numBins - 1);
}

}  // namespace

void BinaryScoreSet::validate() const {
  require(scores.size() == labels.size(), "BinaryScoreSet: length mismatch");
  for (int y : labels) require(y == 0 || y == 1, "BinaryScoreSet: labels must be 0 or 1");
  for (double v : scores) require(!std::isnan(v), "BinaryScoreSet: NaN score");
  const Counts c = countLabels(*this);
  require(c.positives > 0 && c.negatives > 0,
          "BinaryScoreSet: need at least one positive and one negative");
}

double accuracy(std::span<const int> predictions, std::span<const int> labels) {
  require(predictions.size() == labels.size(), "accuracy: length mismatch");
  require(!labels.empty(), "accuracy: empty input");
  Index hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += predictions[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

double meanIou(std::span<const int> predictions, std::span<const int> labels, int numClasses) {
  require(predictions.size() == labels.size(), "meanIou: length mismatch");
  require(!labels.empty(), "meanIou: empty input");
  require(numClasses >= 1, "meanIou: need at least one class");
  std::vector<Index> tp(static_cast<std::size_t>(numClasses), 0);
  std::vector<Index> predicted(static_cast<std::size_t>(numClasses), 0);
  std::vector<Index> actual(static_cast<std::size_t>(numClasses), 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int p = predictions[i];
    const int y = labels[i];
    require(p >= 0 && p < numClasses && y >= 0 && y < numClasses, "meanIou: class out of range");
    predicted[static_cast<std::size_t>(p)]++;
    actual[static_cast<std::size_t>(y)]++;
    if (p == y) tp[static_cast<std::size_t>(y)]++;
  }
  double sum = 0;
  int present = 0;
  for (std::size_t c = 0; c < tp.size(); ++c) {
    const Index unionSize = predicted[c] + actual[c] - tp[c];
    if (unionSize == 0) continue;
    sum += static_cast<double>(tp[c]) / static_cast<double>(unionSize);
    ++present;
  }
  return sum / present;
}

double auroc(const BinaryScoreSet& s) {
  s.validate();
  // Rank-sum with midranks for ties.
  std::vector<std::size_t> order(s.scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return s.scores[a] < s.scores[b]; });
  double positiveRankSum = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && s.scores[order[j + 1]] == s.scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) {
      if (s.labels[order[k]] == 1) positiveRankSum += midrank;
    }
    i = j + 1;
  }
  const Counts c = countLabels(s);
  const auto pos = static_cast<double>(c.positives);
  const auto neg = static_cast<double>(c.negatives);
  return (positiveRankSum - pos * (pos + 1.0) / 2.0) / (pos * neg);
}

double averagePrecision(const BinaryScoreSet& s) {
  s.validate();
  const Counts c = countLabels(s);
  double ap = 0;
  Index prevTp = 0;
  for (const Step& step : thresholdSteps(s)) {
    if (step.tp != prevTp) {
      const double recallGain =
          static_cast<double>(step.tp - prevTp) / static_cast<double>(c.positives);
      const double precision = static_cast<double>(step.tp) / static_cast<double>(step.tp + step.fp);
      ap += recallGain * precision;
      prevTp = step.tp;
    }
  }
  return ap;
}

double fprAtTpr(const BinaryScoreSet& s, double tprTarget) {
  s.validate();
  require(tprTarget > 0.0 && tprTarget <= 1.0, "fprAtTpr: target must lie in (0, 1]");
  const Counts c = countLabels(s);
  // TPR and FPR both grow as the threshold drops, so the first step that
  // reaches the target has the smallest FPR.
  for (const Step& step : thresholdSteps(s)) {
    const double tpr = static_cast<double>(step.tp) / static_cast<double>(c.positives);
    if (tpr >= tprTarget) {
      return static_cast<double>(step.fp) / static_cast<double>(c.negatives);
    }
  }
  return 1.0;
}

CalibrationResult expectedCalibrationError(std::span<const double> confidences,
                                           std::span<const int> correct, int numBins) {
  require(confidences.size() == correct.size(), "ece: length mismatch");
  require(numBins >= 1, "ece: need at least one bin");
  CalibrationResult out;
  out.bins.resize(static_cast<std::size_t>(numBins));
  std::vector<double> confSum(static_cast<std::size_t>(numBins), 0.0);
  std::vector<double> accSum(static_cast<std::size_t>(numBins), 0.0);
  for (std::size_t i = 0; i < confidences.size(); ++i) {
    const double p = confidences[i];
    require(p >= 0.0 && p <= 1.0, "ece: confidence outside [0, 1]");
    const auto b = binOf(p, numBins);
    out.bins[static_cast<std::size_t>(b)].count++;
    confSum[static_cast<std::size_t>(b)] += p;
    accSum[static_cast<std::size_t>(b)] += correct[i] ? 1.0 : 0.0;
  }
  const auto total = static_cast<double>(confidences.size());
  for (int b = 0; b < numBins; ++b) {
    ReliabilityBin& bin = out.bins[static_cast<std::size_t>(b)];
    bin.lo = static_cast<double>(b) / numBins;
    bin.hi = static_cast<double>(b + 1) / numBins;
    if (bin.count == 0) continue;
    const auto n = static_cast<double>(bin.count);
    bin.confidence = confSum[static_cast<std::size_t>(b)] / n;
    bin.accuracy = accSum[static_cast<std::size_t>(b)] / n;
    out.ece += (n / total) * std::abs(bin.accuracy - bin.confidence);
  }
  return out;
}

}  // namespace gmmclass

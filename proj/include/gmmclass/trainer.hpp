#pragma once

#include "gmmclass/classifier.hpp"
#include "gmmclass/data.hpp"
#include "gmmclass/em.hpp"
#include "gmmclass/extractor.hpp"
#include "gmmclass/memory.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace gmmclass {

enum class TrainMode {
  HybridGenerative,   // mixtures by momentum EM, extractor by cross-entropy
  DiscriminativeGmm,  // mixtures and extractor both by cross-entropy
  SoftmaxBaseline,    // affine softmax head and extractor by cross-entropy
};

struct MemoryConfig {
  Index capacityPerQueue = 2048;
  int samplesPerClass = 100;
  MemoryLayout layout = MemoryLayout::PerComponent;
};

struct TrainConfig {
  TrainMode mode = TrainMode::HybridGenerative;
  int iterations = 2000;
  int batchSize = 64;
  double lr = 0.05;
  double weightDecay = 0.0;
  // Rescale the gradient to this global L2 norm when it is larger; 0 disables.
  double gradClip = 1.0;
  EmConfig em;
  MemoryConfig memory;
  Index components = 5;
  ResponsibilityMode responsibility = ResponsibilityMode::WinnerTakeAll;
  std::vector<Index> hidden{64, 64};
  Index featureDim = 16;
  Activation activation = Activation::Tanh;
  // Activation of the layer producing the features.
  Activation featureActivation = Activation::Identity;
  // Run the EM update before the gradient step of the same iteration.
  bool emBeforeGradient = true;
  std::uint64_t seed = 0;

  void validate() const;
};

struct IterationRecord {
  int iteration = 0;
  double loss = 0;
  // Mean per-sample log-likelihood of each class's EM working set after its
  // update; NaN for classes that received no EM update this iteration.
  std::vector<double> classLogLikelihood;
  std::uint64_t phiBeforeGradient = 0;
  std::uint64_t phiAfterGradient = 0;
  std::uint64_t thetaBeforeEm = 0;
  std::uint64_t thetaAfterEm = 0;

  bool operator==(const IterationRecord&) const;
};

struct EmEventRecord {
  int iteration = 0;
  int classId = 0;
  EmEvent event;
};

struct TrainReport {
  std::vector<IterationRecord> iterations;
  std::vector<EmEventRecord> emEvents;
  // Classes never seen in any batch; their mixtures remain at the placeholder.
  std::vector<int> unobservedClasses;

  bool operator==(const TrainReport&) const;
};

// FNV-1a over the raw bytes of every parameter.
std::uint64_t parameterHash(const GenerativeClassifier& clf);
std::uint64_t parameterHash(const Mlp& mlp);

// Stateful training loop for all three modes. Holds a reference to `data`,
// which must outlive the trainer.
class Trainer {
public:
  Trainer(const LabeledSet& data, TrainConfig config);

  // Runs until config().iterations iterations have completed.
  void run();
  void step();

  int iteration() const { return iteration_; }
  const TrainConfig& config() const { return config_; }
  const Mlp& extractor() const { return mlp_; }
  const GenerativeClassifier& classifier() const { return classifier_; }
  const SoftmaxBaseline& softmax() const { return softmax_; }
  const FeatureMemory& memory() const { return memory_; }
  const std::vector<bool>& initialized() const { return initialized_; }
  TrainReport report() const;
  const std::vector<IterationRecord>& records() const { return report_.iterations; }

  // Writes model.json, memory.bin and state.json into `dir`.
  void saveCheckpoint(const std::filesystem::path& dir) const;
  static Trainer resume(const std::filesystem::path& dir, const LabeledSet& data,
                        TrainConfig config);

private:
  std::vector<Index> nextBatch();
  void emUpdate(const Matrix& features, std::span<const int> labels, IterationRecord& record);
  void gradientUpdate(GradTape& tape, const Matrix& features, std::span<const int> labels,
                      IterationRecord& record);
  void initializeClass(int c, const Matrix& features);
  void checkLoss(double loss) const;

  const LabeledSet* data_;
  TrainConfig config_;
  Rng rng_;
  Mlp mlp_;
  GenerativeClassifier classifier_;
  std::vector<bool> initialized_;
  // Per-class Sinkhorn potentials carried between iterations as warm starts.
  std::vector<Vector> sinkhornPotential_;
  SoftmaxBaseline softmax_;
  FeatureMemory memory_;
  std::vector<Index> order_;
  std::size_t cursor_ = 0;
  int iteration_ = 0;
  TrainReport report_;
};

struct GenerativeTrainResult {
  GenerativeClassifier classifier;
  Mlp extractor;
  TrainReport report;
};

struct SoftmaxTrainResult {
  SoftmaxBaseline baseline;
  Mlp extractor;
  TrainReport report;
};

GenerativeTrainResult trainHybrid(const LabeledSet& data, const TrainConfig& config);
GenerativeTrainResult trainDiscriminativeGmm(const LabeledSet& data, const TrainConfig& config);
SoftmaxTrainResult trainSoftmaxBaseline(const LabeledSet& data, const TrainConfig& config);

// Placeholder mixture for a class that has not been observed yet.
Gmm placeholderMixture(Index numComponents, Index dim, ResponsibilityMode mode);

}  // namespace gmmclass

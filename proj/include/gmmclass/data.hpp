#pragma once

#include "gmmclass/types.hpp"

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <utility>
#include <vector>

namespace gmmclass {

// Samples with integer class labels. When `grid` is set the rows tile an
// h x w image in row-major order.
struct LabeledSet {
  Matrix samples;           // N x inDim
  std::vector<int> labels;  // N, each in [0, numClasses)
  int numClasses = 0;
  std::optional<std::pair<Index, Index>> grid;

  Index size() const { return samples.rows(); }
  Index inputDim() const { return samples.cols(); }
  void validate() const;
  bool operator==(const LabeledSet& other) const;
};

struct SynthSpec {
  int numClasses = 4;
  int modesPerClass = 2;
  Index inputDim = 8;
  double separation = 6.0;  // minimum distance between any two mode means
  double noise = 1.0;       // isotropic standard deviation of each mode
  Index nTrain = 2000;
  Index nTest = 1000;
  // Class kept out of train/test; appears only as the anomalous half of the
  // OOD split. Remaining classes are relabeled densely in order.
  std::optional<int> oodHoldout;
  // When set, test splits are arranged on a grid of this width with labels
  // laid out in square patches of `patch` cells.
  std::optional<Index> gridWidth;
  Index patch = 4;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SynthData {
  LabeledSet train;
  LabeledSet test;
  std::optional<LabeledSet> ood;  // label 1 = anomaly, 0 = in-distribution
  Matrix modeMeans;               // (numClasses * modesPerClass) x inDim, original class order
};

SynthData generate(const SynthSpec& spec);

// Text format:
//   # gmmclass-dataset v1 inDim=<d> C=<c> [grid=<h>x<w>]
//   v_1,...,v_d,label
// Values are written with shortest round-trip formatting.
class DatasetParseError : public std::runtime_error {
public:
  DatasetParseError(const std::string& what, std::size_t line)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

private:
  std::size_t line_;
};

void writeDataset(const LabeledSet& set, std::ostream& out);
LabeledSet readDataset(std::istream& in);
void saveDataset(const LabeledSet& set, const std::filesystem::path& path);
LabeledSet loadDataset(const std::filesystem::path& path);

// Rows of `set` selected by `indices`, grid dropped.
LabeledSet subset(const LabeledSet& set, const std::vector<Index>& indices);

}  // namespace gmmclass

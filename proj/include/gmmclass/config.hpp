#pragma once

#include "gmmclass/data.hpp"
#include "gmmclass/experiments.hpp"
#include "gmmclass/serialize.hpp"
#include "gmmclass/trainer.hpp"

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace gmmclass {

// Raised for configuration documents that fail validation. Carries every
// problem found, one "path: message" line each.
class ConfigError : public std::runtime_error {
public:
  explicit ConfigError(std::vector<std::string> problems);
  const std::vector<std::string>& problems() const { return problems_; }

private:
  std::vector<std::string> problems_;
};

// Run configuration document:
//   {
//     "seed": 7,                                     required
//     "data":   { numClasses, modesPerClass, inputDim, separation, noise,
//                 nTrain, nTest, oodHoldout, gridWidth, patch },
//     "train":  { mode, iterations, batchSize, lr, weightDecay, components,
//                 responsibility, hidden, featureDim, activation, emBeforeGradient,
//                 em: { variant, loops, tau, epsilon, varianceFloor,
//                       sinkhornMaxIters, sinkhornTol },
//                 memory: { capacity, samplesPerClass, layout } },
//     "ablate": { seeds, components, memory, emLoops },
//     "output": { dir }
//   }
// Every section and field other than seed is optional; missing fields keep
// library defaults. Unknown keys are rejected.
struct RunConfig {
  std::optional<std::uint64_t> seed;
  SynthSpec data;
  TrainConfig train;
  AblationGrid ablate;
  std::filesystem::path outputDir = ".";
};

// Parses and validates; throws ConfigError listing every problem. When
// requireSeed is false the seed may come from a command-line override later.
RunConfig parseRunConfig(const Json& doc, bool requireSeed = true);
RunConfig loadRunConfig(const std::filesystem::path& path, bool requireSeed = true);

// Pushes the resolved seed into the data and training sections.
void applySeed(RunConfig& cfg, std::uint64_t seed);

TrainMode trainModeFromString(const std::string& s);
EmVariant emVariantFromString(const std::string& s);

}  // namespace gmmclass

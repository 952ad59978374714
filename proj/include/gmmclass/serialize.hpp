#pragma once

#include "gmmclass/classifier.hpp"
#include "gmmclass/extractor.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <variant>

namespace gmmclass {

using Json = nlohmann::json;

inline constexpr int kModelVersion = 1;

class ModelFormatError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

std::string toString(ResponsibilityMode mode);
ResponsibilityMode responsibilityModeFromString(const std::string& s);
std::string toString(Activation act);
Activation activationFromString(const std::string& s);

Json toJson(const Gmm& g);
Gmm gmmFromJson(const Json& j, ResponsibilityMode mode);

Json toJson(const Mlp& mlp);
Mlp mlpFromJson(const Json& j);

// Model document: {version, kind, ...head fields..., extractor}.
//   kind "generative": C, M, D, responsibilityMode, prior, perClass[{weights, means, variances}]
//   kind "softmax":    C, D, weights, biases
struct Model {
  std::variant<GenerativeClassifier, SoftmaxBaseline> head;
  Mlp extractor;

  bool generative() const { return std::holds_alternative<GenerativeClassifier>(head); }
};

Json toJson(const Model& model);
Model modelFromJson(const Json& j);

void saveModel(const Model& model, const std::filesystem::path& path);
Model loadModel(const std::filesystem::path& path);

// Text dump used for every JSON file: one-space indent, sorted keys, float64
// values in shortest round-trip form, trailing newline.
std::string dumpJson(const Json& j);

}  // namespace gmmclass

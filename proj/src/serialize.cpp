#include "gmmclass/serialize.hpp"

#include <fstream>
#include <sstream>

namespace gmmclass {

namespace {

Json rowsToJson(const Matrix& m) {
  Json out = Json::array();
  for (Index r = 0; r < m.rows(); ++r) {
    Json row = Json::array();
    for (Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    out.push_back(std::move(row));
  }
  return out;
}

Json vectorToJson(const Vector& v) {
  Json out = Json::array();
  for (Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

Vector vectorFromJson(const Json& j, const char* what) {
  if (!j.is_array()) throw ModelFormatError(std::string(what) + ": expected an array");
  Vector v(static_cast<Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw ModelFormatError(std::string(what) + ": expected numbers");
    v(static_cast<Index>(i)) = j[i].get<double>();
  }
  return v;
}

Matrix rowsFromJson(const Json& j, const char* what) {
  if (!j.is_array() || j.empty()) throw ModelFormatError(std::string(what) + ": expected rows");
  const std::size_t cols = j.front().size();
  Matrix m(static_cast<Index>(j.size()), static_cast<Index>(cols));
  for (std::size_t r = 0; r < j.size(); ++r) {
    if (!j[r].is_array() || j[r].size() != cols) throw ModelFormatError(std::string(what) + ": ragged rows");
    m.row(static_cast<Index>(r)) = vectorFromJson(j[r], what).transpose();
  }
  return m;
}

const Json& field(const Json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) throw ModelFormatError(std::string("missing field '") + key + "'");
  return j.at(key);
}

}  // namespace

std::string toString(ResponsibilityMode mode) {
  return mode == ResponsibilityMode::Sum ? "sum" : "winner-take-all";
}

ResponsibilityMode responsibilityModeFromString(const std::string& s) {
  if (s == "sum") return ResponsibilityMode::Sum;
  if (s == "winner-take-all") return ResponsibilityMode::WinnerTakeAll;
  throw ModelFormatError("unknown responsibility mode '" + s + "'");
}

std::string toString(Activation act) {
  switch (act) {
    case Activation::Tanh: return "tanh";
    case Activation::Relu: return "relu";
    case Activation::Identity: break;
  }
  return "identity";
}

Activation activationFromString(const std::string& s) {
  if (s == "tanh") return Activation::Tanh;
  if (s == "relu") return Activation::Relu;
  if (s == "identity") return Activation::Identity;
  throw ModelFormatError("unknown activation '" + s + "'");
}

Json toJson(const Gmm& g) {
  return {{"weights", vectorToJson(g.weights)},
          {"means", rowsToJson(g.means)},
          {"variances", rowsToJson(g.variances)}};
}

Gmm gmmFromJson(const Json& j, ResponsibilityMode mode) {
  Gmm g;
  g.weights = vectorFromJson(field(j, "weights"), "weights");
  g.means = rowsFromJson(field(j, "means"), "means");
  g.variances = rowsFromJson(field(j, "variances"), "variances");
  g.mode = mode;
  try {
    g.validate();
  } catch (const ContractViolation& e) {
    throw ModelFormatError(e.what());
  }
  return g;
}

Json toJson(const Mlp& mlp) {
  Json layers = Json::array();
  for (const DenseLayer& layer : mlp.layers) {
    layers.push_back({{"weight", rowsToJson(layer.weight)},
                      {"bias", vectorToJson(layer.bias)},
                      {"activation", toString(layer.activation)}});
  }
  return {{"layers", std::move(layers)}};
}

Mlp mlpFromJson(const Json& j) {
  Mlp mlp;
  for (const Json& layer : field(j, "layers")) {
    DenseLayer l;
    l.weight = rowsFromJson(field(layer, "weight"), "weight");
    l.bias = vectorFromJson(field(layer, "bias"), "bias");
    l.activation = activationFromString(field(layer, "activation").get<std::string>());
    mlp.layers.push_back(std::move(l));
  }
  try {
    mlp.validate();
  } catch (const ContractViolation& e) {
    throw ModelFormatError(e.what());
  }
  return mlp;
}

Json toJson(const Model& model) {
  Json j;
  j["version"] = kModelVersion;
  if (const auto* clf = std::get_if<GenerativeClassifier>(&model.head)) {
    j["kind"] = "generative";
    j["C"] = clf->numClasses();
    j["M"] = clf->numComponents();
    j["D"] = clf->dim();
    j["responsibilityMode"] = toString(clf->perClass.front().mode);
    j["prior"] = vectorToJson(clf->classPrior);
    Json perClass = Json::array();
    for (const Gmm& g : clf->perClass) perClass.push_back(toJson(g));
    j["perClass"] = std::move(perClass);
  } else {
    const auto& base = std::get<SoftmaxBaseline>(model.head);
    j["kind"] = "softmax";
    j["C"] = base.numClasses();
    j["D"] = base.dim();
    j["weights"] = rowsToJson(base.weights);
    j["biases"] = vectorToJson(base.biases);
  }
  j["extractor"] = toJson(model.extractor);
  return j;
}

namespace {

Model parseModel(const Json& j) {
  if (field(j, "version").get<int>() != kModelVersion) throw ModelFormatError("unsupported model version");
  Model model;
  model.extractor = mlpFromJson(field(j, "extractor"));
  const std::string kind = field(j, "kind").get<std::string>();
  if (kind == "generative") {
    const ResponsibilityMode mode =
        responsibilityModeFromString(field(j, "responsibilityMode").get<std::string>());
    GenerativeClassifier clf;
    for (const Json& g : field(j, "perClass")) clf.perClass.push_back(gmmFromJson(g, mode));
    clf.classPrior = vectorFromJson(field(j, "prior"), "prior");
    try {
      clf.validate();
    } catch (const ContractViolation& e) {
      throw ModelFormatError(e.what());
    }
    if (field(j, "C").get<int>() != clf.numClasses() || field(j, "M").get<Index>() != clf.numComponents() ||
        field(j, "D").get<Index>() != clf.dim()) {
      throw ModelFormatError("header counts disagree with parameters");
    }
    model.head = std::move(clf);
  } else if (kind == "softmax") {
    SoftmaxBaseline base;
    base.weights = rowsFromJson(field(j, "weights"), "weights");
    base.biases = vectorFromJson(field(j, "biases"), "biases");
    try {
      base.validate();
    } catch (const ContractViolation& e) {
      throw ModelFormatError(e.what());
    }
    model.head = std::move(base);
  } else {
    throw ModelFormatError("unknown model kind '" + kind + "'");
  }
  return model;
}

}  // namespace

Model modelFromJson(const Json& j) {
  try {
    return parseModel(j);
  } catch (const Json::exception& e) {
    throw ModelFormatError(e.what());
  }
}

std::string dumpJson(const Json& j) { return j.dump(1) + "\n"; }

void saveModel(const Model& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out << dumpJson(toJson(model));
  if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

Model loadModel(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ModelFormatError(e.what());
  }
  return modelFromJson(j);
}

}  // namespace gmmclass

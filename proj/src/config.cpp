#include "gmmclass/config.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

namespace gmmclass {

namespace {

std::string joinProblems(const std::vector<std::string>& problems) {
  std::string out = "invalid configuration";
  for (const std::string& p : problems) out += "\n  " + p;
  return out;
}

// Reads typed fields out of one JSON object, recording problems instead of
// throwing so that a single pass reports everything wrong with the document.
class Section {
public:
  Section(const Json& obj, std::string path, std::vector<std::string>& problems,
          std::set<std::string> allowed)
      : obj_(obj), path_(std::move(path)), problems_(problems) {
    if (!obj_.is_object()) {
      fail("", "expected an object");
      return;
    }
    for (const auto& [key, value] : obj_.items()) {
      if (!allowed.contains(key)) fail(key, "unknown key");
    }
  }

  bool has(const char* key) const { return obj_.is_object() && obj_.contains(key); }

  const Json* child(const char* key) const { return has(key) ? &obj_.at(key) : nullptr; }

  template <class T>
  void integer(const char* key, T& out, long long lo, long long hi = std::numeric_limits<long long>::max()) {
    if (!has(key)) return;
    const Json& v = obj_.at(key);
    if (!v.is_number_integer()) return fail(key, "expected an integer");
    const long long x = v.is_number_unsigned() ? static_cast<long long>(v.get<unsigned long long>())
                                               : v.get<long long>();
    if (x < lo || x > hi) {
      return fail(key, "must be in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
    }
    out = static_cast<T>(x);
  }

  void real(const char* key, double& out, double lo, double hi, bool openLow = false) {
    if (!has(key)) return;
    const Json& v = obj_.at(key);
    if (!v.is_number()) return fail(key, "expected a number");
    const double x = v.get<double>();
    if (!std::isfinite(x) || x < lo || x > hi || (openLow && x == lo)) {
      std::ostringstream msg;
      msg << "must be in " << (openLow ? "(" : "[") << lo << ", " << hi << "]";
      return fail(key, msg.str());
    }
    out = x;
  }

  void boolean(const char* key, bool& out) {
    if (!has(key)) return;
    const Json& v = obj_.at(key);
    if (!v.is_boolean()) return fail(key, "expected true or false");
    out = v.get<bool>();
  }

  template <class T, class Parse>
  void choice(const char* key, T& out, Parse parse) {
    if (!has(key)) return;
    const Json& v = obj_.at(key);
    if (!v.is_string()) return fail(key, "expected a string");
    try {
      out = parse(v.get<std::string>());
    } catch (const std::exception& e) {
      fail(key, e.what());
    }
  }

  template <class T>
  void integerList(const char* key, std::vector<T>& out, long long lo) {
    if (!has(key)) return;
    const Json& v = obj_.at(key);
    if (!v.is_array()) return fail(key, "expected an array of integers");
    std::vector<T> parsed;
    for (const Json& e : v) {
      if (!e.is_number_integer() || e.get<long long>() < lo) {
        return fail(key, "entries must be integers >= " + std::to_string(lo));
      }
      parsed.push_back(static_cast<T>(e.get<long long>()));
    }
    out = std::move(parsed);
  }

  void fail(const std::string& key, const std::string& message) {
    std::string where = path_;
    if (!key.empty()) where += where.empty() ? key : "." + key;
    problems_.push_back((where.empty() ? "<root>" : where) + ": " + message);
  }


private:
  const Json& obj_;
  std::string path_;
  std::vector<std::string>& problems_;
};

void parseData(const Json& j, SynthSpec& d, std::vector<std::string>& problems) {
  Section s(j, "data", problems,
            {"numClasses", "modesPerClass", "inputDim", "separation", "noise", "nTrain", "nTest",
             "oodHoldout", "gridWidth", "patch"});
  s.integer("numClasses", d.numClasses, 1, 1000);
  s.integer("modesPerClass", d.modesPerClass, 1, 1000);
  s.integer("inputDim", d.inputDim, 1, 100000);
  s.real("separation", d.separation, 0, 1e6, true);
  s.real("noise", d.noise, 0, 1e6);
  s.integer("nTrain", d.nTrain, 0);
  s.integer("nTest", d.nTest, 0);
  if (s.has("oodHoldout")) {
    int h = 0;
    s.integer("oodHoldout", h, 0, 1000);
    d.oodHoldout = h;
  }
  if (s.has("gridWidth")) {
    Index w = 0;
    s.integer("gridWidth", w, 1);
    d.gridWidth = w;
  }
  s.integer("patch", d.patch, 1);
}

void parseEm(const Json& j, EmConfig& em, std::vector<std::string>& problems) {
  Section s(j, "train.em", problems,
            {"variant", "loops", "tau", "epsilon", "varianceFloor", "sinkhornMaxIters", "sinkhornTol"});
  s.choice("variant", em.variant, emVariantFromString);
  s.integer("loops", em.loopsPerIteration, 1, 100000);
  s.real("tau", em.momentumTau, 0, 1);
  s.real("epsilon", em.epsilon, 0, 1e6, true);
  s.real("varianceFloor", em.varianceFloor, 0, 1e6, true);
  s.integer("sinkhornMaxIters", em.sinkhornMaxIters, 1, 100000000);
  s.real("sinkhornTol", em.sinkhornTol, 0, 1e6, true);
}

void parseMemory(const Json& j, MemoryConfig& m, std::vector<std::string>& problems) {
  Section s(j, "train.memory", problems, {"capacity", "samplesPerClass", "layout"});
  s.integer("capacity", m.capacityPerQueue, 0);
  s.integer("samplesPerClass", m.samplesPerClass, 1, 1000000000);
  s.choice("layout", m.layout, [](const std::string& v) {
    if (v == "per-component") return MemoryLayout::PerComponent;
    if (v == "per-class") return MemoryLayout::PerClass;
    throw std::invalid_argument("unknown layout '" + v + "' (per-component|per-class)");
  });
}

void parseTrain(const Json& j, TrainConfig& t, std::vector<std::string>& problems) {
  Section s(j, "train", problems,
            {"mode", "iterations", "batchSize", "lr", "weightDecay", "gradClip", "components",
             "responsibility", "hidden", "featureDim", "activation", "featureActivation",
             "emBeforeGradient", "em", "memory"});
  s.choice("mode", t.mode, trainModeFromString);
  s.integer("iterations", t.iterations, 0, 100000000);
  s.integer("batchSize", t.batchSize, 1, 100000000);
  s.real("lr", t.lr, 0, 1e6);
  s.real("weightDecay", t.weightDecay, 0, 1e6);
  s.real("gradClip", t.gradClip, 0, 1e6);
  s.integer("components", t.components, 1, 100000);
  s.choice("responsibility", t.responsibility, [](const std::string& v) {
    if (v == "sum") return ResponsibilityMode::Sum;
    if (v == "winner-take-all") return ResponsibilityMode::WinnerTakeAll;
    throw std::invalid_argument("unknown responsibility mode '" + v + "' (sum|winner-take-all)");
  });
  s.integerList("hidden", t.hidden, 1);
  s.integer("featureDim", t.featureDim, 1, 100000);
  s.choice("activation", t.activation, [](const std::string& v) {
    if (v == "tanh") return Activation::Tanh;
    if (v == "relu") return Activation::Relu;
    throw std::invalid_argument("unknown activation '" + v + "' (tanh|relu)");
  });
  s.choice("featureActivation", t.featureActivation, [](const std::string& v) {
    if (v == "identity") return Activation::Identity;
    if (v == "tanh") return Activation::Tanh;
    if (v == "relu") return Activation::Relu;
    throw std::invalid_argument("unknown activation '" + v + "' (identity|tanh|relu)");
  });
  s.boolean("emBeforeGradient", t.emBeforeGradient);
  if (const Json* em = s.child("em")) parseEm(*em, t.em, problems);
  if (const Json* mem = s.child("memory")) parseMemory(*mem, t.memory, problems);
}

void parseAblate(const Json& j, AblationGrid& a, std::vector<std::string>& problems) {
  Section s(j, "ablate", problems, {"seeds", "components", "memory", "emLoops"});
  s.integer("seeds", a.seeds, 1, 100000);
  s.integerList("components", a.components, 1);
  s.integerList("memory", a.memory, 0);
  s.integer("emLoops", a.emLoops, 1, 100000);
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> problems)
    : std::runtime_error(joinProblems(problems)), problems_(std::move(problems)) {}

TrainMode trainModeFromString(const std::string& s) {
  if (s == "hybrid") return TrainMode::HybridGenerative;
  if (s == "disc-gmm") return TrainMode::DiscriminativeGmm;
  if (s == "softmax") return TrainMode::SoftmaxBaseline;
  throw std::invalid_argument("unknown mode '" + s + "' (hybrid|disc-gmm|softmax)");
}

EmVariant emVariantFromString(const std::string& s) {
  if (s == "vanilla") return EmVariant::Vanilla;
  if (s == "sinkhorn") return EmVariant::Sinkhorn;
  throw std::invalid_argument("unknown EM variant '" + s + "' (vanilla|sinkhorn)");
}

RunConfig parseRunConfig(const Json& doc, bool requireSeed) {
  std::vector<std::string> problems;
  RunConfig cfg;
  Section root(doc, "", problems, {"seed", "data", "train", "ablate", "output"});
  if (root.has("seed")) {
    std::uint64_t seed = 0;
    const std::size_t before = problems.size();
    root.integer("seed", seed, 0);
    if (problems.size() == before) cfg.seed = seed;
  } else if (requireSeed) {
    problems.emplace_back("seed: required field is missing");
  }
  if (const Json* d = root.child("data")) parseData(*d, cfg.data, problems);
  if (const Json* t = root.child("train")) parseTrain(*t, cfg.train, problems);
  if (const Json* a = root.child("ablate")) parseAblate(*a, cfg.ablate, problems);
  if (const Json* o = root.child("output")) {
    Section s(*o, "output", problems, {"dir"});
    if (s.has("dir")) {
      if (o->at("dir").is_string()) cfg.outputDir = o->at("dir").get<std::string>();
      else s.fail("dir", "expected a string");
    }
  }

  // Cross-field checks only once the individual fields are sound.
  if (problems.empty()) {
    const auto check = [&](const char* where, auto&& fn) {
      try {
        fn();
      } catch (const std::exception& e) {
        problems.push_back(std::string(where) + ": " + e.what());
      }
    };
    check("data", [&] { cfg.data.validate(); });
    check("train", [&] { cfg.train.validate(); });
  }
  if (!problems.empty()) throw ConfigError(std::move(problems));
  if (cfg.seed) applySeed(cfg, *cfg.seed);
  return cfg;
}

RunConfig loadRunConfig(const std::filesystem::path& path, bool requireSeed) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config '" + path.string() + "'");
  Json doc;
  try {
    doc = Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ConfigError({std::string("<root>: not valid JSON: ") + e.what()});
  }
  return parseRunConfig(doc, requireSeed);
}

void applySeed(RunConfig& cfg, std::uint64_t seed) {
  cfg.seed = seed;
  cfg.data.seed = seed;
  cfg.train.seed = seed;
}

}  // namespace gmmclass

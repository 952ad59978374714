#include "gmmclass/config.hpp"
#include "gmmclass/data.hpp"
#include "gmmclass/experiments.hpp"
#include "gmmclass/serialize.hpp"
#include "gmmclass/trainer.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

namespace fs = std::filesystem;
using namespace gmmclass;

namespace {

enum Exit { kOk = 0, kIo = 1, kConfig = 2, kNumerical = 3 };

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string data;
  std::string model;
  std::optional<std::string> mode;
  std::optional<std::string> em;
  std::optional<Index> components;
  std::optional<Index> memory;
};

// Config file (if any) with command-line overrides applied; flags win.
RunConfig resolveConfig(const Options& o, bool needSeed) {
  RunConfig cfg = o.config.empty() ? parseRunConfig(Json::object(), false) : loadRunConfig(o.config, false);
  if (o.seed) applySeed(cfg, *o.seed);
  if (needSeed && !cfg.seed) throw ConfigError({"seed: required field is missing (config or --seed)"});
  std::vector<std::string> problems;
  const auto apply = [&](const char* what, auto&& fn) {
    try {
      fn();
    } catch (const std::exception& e) {
      problems.push_back(std::string(what) + ": " + e.what());
    }
  };
  if (o.mode) apply("--mode", [&] { cfg.train.mode = trainModeFromString(*o.mode); });
  if (o.em) apply("--em", [&] { cfg.train.em.variant = emVariantFromString(*o.em); });
  if (o.components) cfg.train.components = *o.components;
  if (o.memory) cfg.train.memory.capacityPerQueue = *o.memory;
  apply("train", [&] { cfg.train.validate(); });
  if (!problems.empty()) throw ConfigError(std::move(problems));
  return cfg;
}

fs::path outDir(const Options& o, const RunConfig& cfg) {
  const fs::path dir = o.out.empty() ? cfg.outputDir : fs::path(o.out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
  return dir;
}

void writeText(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out || !(out << text)) throw IoError("cannot write '" + path.string() + "'");
}

// Writes to `path`, or to standard output when it is empty.
void emit(const std::string& path, const std::string& text) {
  if (path.empty()) std::cout << text;
  else writeText(path, text);
}

LabeledSet readData(const std::string& path) {
  if (path.empty()) throw ConfigError({"--data: required"});
  try {
    return loadDataset(path);
  } catch (const DatasetParseError& e) {
    throw IoError("'" + path + "' " + e.what());
  } catch (const std::runtime_error& e) {
    throw IoError(e.what());
  }
}

Model readModel(const std::string& path) {
  if (path.empty()) throw ConfigError({"--model: required"});
  try {
    return loadModel(path);
  } catch (const std::runtime_error& e) {
    throw IoError(e.what());
  }
}

int genData(const Options& o) {
  const RunConfig cfg = resolveConfig(o, true);
  const SynthData d = generate(cfg.data);
  const fs::path dir = outDir(o, cfg);
  saveDataset(d.train, dir / "train.txt");
  saveDataset(d.test, dir / "test.txt");
  std::cerr << "gen-data: train " << d.train.size() << ", test " << d.test.size();
  if (d.ood) {
    saveDataset(*d.ood, dir / "ood.txt");
    std::cerr << ", ood " << d.ood->size();
  }
  std::cerr << " -> " << dir.string() << '\n';
  return kOk;
}

int train(const Options& o) {
  const RunConfig cfg = resolveConfig(o, true);
  const LabeledSet data = readData(o.data);
  const fs::path dir = outDir(o, cfg);

  Trainer trainer(data, cfg.train);
  const int total = cfg.train.iterations;
  const int every = std::max(1, total / 10);
  while (trainer.iteration() < total) {
    trainer.step();
    if (trainer.iteration() % every == 0 || trainer.iteration() == total) {
      std::cerr << "train: iteration " << trainer.iteration() << "/" << total << " loss "
                << trainer.records().back().loss << '\n';
    }
  }
  Model model;
  model.extractor = trainer.extractor();
  if (cfg.train.mode == TrainMode::SoftmaxBaseline) model.head = trainer.softmax();
  else model.head = trainer.classifier();
  saveModel(model, dir / "model.json");
  writeText(dir / "report.json", dumpJson(toJson(trainer.report())));
  std::cerr << "train: wrote " << (dir / "model.json").string() << '\n';
  return kOk;
}

int eval(const Options& o) {
  const Model model = readModel(o.model);
  const LabeledSet data = readData(o.data);
  const ClosedSetMetrics m = evaluateClosedSet(model, data);
  emit(o.out, dumpJson(toJson(m)));
  if (!o.out.empty()) writeText(fs::path(o.out).replace_extension(".bins.csv"), binsCsv(m.bins));
  std::cerr << "eval: accuracy " << m.accuracy << " mIoU " << m.meanIou << " ece " << m.ece << '\n';
  return kOk;
}

int oodEval(const Options& o) {
  const Model model = readModel(o.model);
  const LabeledSet data = readData(o.data);
  const OodMetrics m = evaluateOod(model, data);
  emit(o.out, dumpJson(toJson(m)));
  std::cerr << "ood-eval: auroc " << m.auroc << " ap " << m.ap << " fpr95 " << m.fpr95 << '\n';
  return kOk;
}

int ablate(const Options& o) {
  RunConfig cfg = resolveConfig(o, true);
  // Explicit flags narrow the corresponding sweep axis to one value.
  if (o.components) cfg.ablate.components = {*o.components};
  if (o.memory) cfg.ablate.memory = {*o.memory};
  if (o.em) cfg.ablate.variants = {cfg.train.em.variant};
  if (o.mode) cfg.ablate.modes = {cfg.train.mode};
  const AblationResult r = runAblation(cfg.data, cfg.train, cfg.ablate);
  emit(o.out, dumpJson(toJson(r)));
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Generative GMM classifier with momentum Sinkhorn EM"};
  app.require_subcommand(1);
  Options o;

  const auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "Run configuration JSON");
    sub->add_option("--seed", o.seed, "Seed overriding the config");
    sub->add_option("--out", o.out, "Output directory (gen-data, train) or file (eval, ood-eval, ablate)");
    sub->add_option("--mode", o.mode, "hybrid|disc-gmm|softmax");
    sub->add_option("--em", o.em, "vanilla|sinkhorn");
    sub->add_option("--components", o.components, "Mixture components per class")->check(CLI::PositiveNumber);
    sub->add_option("--memory", o.memory, "Memory capacity per queue")->check(CLI::NonNegativeNumber);
    return sub;
  };
  CLI::App* gen = common(app.add_subcommand("gen-data", "Generate train/test/ood dataset files"));
  CLI::App* tr = common(app.add_subcommand("train", "Train a model"));
  tr->add_option("--data", o.data, "Training dataset");
  CLI::App* ev = common(app.add_subcommand("eval", "Closed-set accuracy, mIoU and ECE"));
  CLI::App* ood = common(app.add_subcommand("ood-eval", "Anomaly AUROC, AP and FPR95"));
  for (CLI::App* sub : {ev, ood}) {
    sub->add_option("--model", o.model, "Model JSON");
    sub->add_option("--data", o.data, "Dataset to evaluate");
  }
  CLI::App* abl = common(app.add_subcommand("ablate", "Sweep EM variant, components, memory and mode"));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (gen->parsed()) return genData(o);
    if (tr->parsed()) return train(o);
    if (ev->parsed()) return eval(o);
    if (ood->parsed()) return oodEval(o);
    if (abl->parsed()) return ablate(o);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kConfig;
  } catch (const NumericalError& e) {
    std::cerr << "error: numerical failure at iteration " << e.iteration() << ": " << e.what() << '\n';
    return kNumerical;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kIo;
  }
  return kOk;
}

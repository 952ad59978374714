// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fail.
// Usage: acceptance <gmmclass binary> [criterion numbers...]

#include "gmmclass/em.hpp"
#include "gmmclass/experiments.hpp"
#include "gmmclass/sinkhorn.hpp"
#include "gmmclass/trainer.hpp"
#include "gradient_checks.hpp"
#include "metric_sweeps.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>

namespace fs = std::filesystem;
using namespace gmmclass;

namespace {

struct Outcome {
  bool pass;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

constexpr int kSeeds = 10;
constexpr std::uint64_t kSeedBase = 2000;

// Shared training protocol for the scaled direction checks.
TrainConfig protocol(TrainMode mode, std::uint64_t seed) {
  TrainConfig cfg;
  cfg.mode = mode;
  cfg.iterations = 300;
  cfg.batchSize = 64;
  cfg.lr = 0.05;
  cfg.gradClip = 1.0;
  cfg.featureActivation = Activation::Identity;
  cfg.components = 2;
  cfg.memory.capacityPerQueue = 2048;
  cfg.em.momentumTau = 0.9;
  cfg.em.epsilon = 0.05;
  cfg.seed = seed;
  return cfg;
}

SynthSpec task(std::uint64_t seed, Index inputDim = 8) {
  SynthSpec spec;
  spec.inputDim = inputDim;
  spec.seed = seed;
  return spec;
}

// Mean test accuracy over the protocol seeds with `tweak` applied.
double meanAccuracy(Index inputDim, const std::function<void(TrainConfig&)>& tweak) {
  double acc = 0;
  for (int s = 0; s < kSeeds; ++s) {
    const SynthData d = generate(task(kSeedBase + s, inputDim));
    TrainConfig cfg = protocol(TrainMode::HybridGenerative, kSeedBase + s);
    tweak(cfg);
    acc += evaluateClosedSet(trainModel(d.train, cfg).model, d.test).accuracy;
  }
  return acc / kSeeds;
}

Outcome gradients() {
  double worstFeature = 0, worstParam = 0, worstPipeline = 0;
  constexpr int kConfigs = 6;
  for (std::uint64_t s = 0; s < kConfigs; ++s) {
    worstFeature = std::max(worstFeature, gradcheck::featureGradientError(s));
    worstParam = std::max(worstParam, gradcheck::parameterGradientError(s));
    worstPipeline = std::max(worstPipeline, gradcheck::pipelineGradientError(s));
  }
  const double worst = std::max({worstFeature, worstParam, worstPipeline});
  return {worst <= 1e-4, fmt("%d configs each; worst rel err features %.2e, mixture params %.2e, extractor %.2e",
                             kConfigs, worstFeature, worstParam, worstPipeline)};
}

Outcome sinkhornFeasibility() {
  std::mt19937_64 rng(77);
  std::uniform_int_distribution<Index> nDist(1, 64), mDist(1, 8);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const SinkhornOptions opts{0.05, 10000, 1e-10};
  int converged = 0;
  double worstRow = 0, worstCol = 0;
  for (int t = 0; t < 100; ++t) {
    const Index n = nDist(rng);
    const Index m = mDist(rng);
    Matrix cost(n, m);
    for (Index i = 0; i < cost.size(); ++i) cost(i) = unit(rng);
    const auto plan = solveSinkhorn(cost, opts);
    if (!plan.converged) continue;
    ++converged;
    worstRow = std::max(worstRow, (plan.entries.rowwise().sum().array() - 1.0).abs().maxCoeff());
    const double target = static_cast<double>(n) / static_cast<double>(m);
    worstCol = std::max(worstCol, (plan.entries.colwise().sum().array() - target).abs().maxCoeff());
  }
  return {converged == 100 && worstRow <= 1e-6 && worstCol <= 1e-6,
          fmt("%d/100 converged; worst |row sum - 1| %.2e, |col sum - N/M| %.2e", converged, worstRow, worstCol)};
}

Outcome emMonotonicity() {
  double worstDrop = 0, worstGap = 0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    const SynthData d = generate(task(100 + s));
    std::vector<Index> rows;
    for (Index i = 0; i < d.train.size(); ++i) {
      if (d.train.labels[static_cast<std::size_t>(i)] == 0) rows.push_back(i);
    }
    const Matrix X = subset(d.train, rows).samples;
    Rng rng(s);
    Gmm p = initializeFromSamples(X, 3, ResponsibilityMode::Sum, rng);
    EmConfig cfg;
    cfg.variant = EmVariant::Vanilla;
    cfg.momentumTau = 0;
    double prev = logLikelihood(X, p);
    for (int loop = 0; loop < 50; ++loop) {
      const Responsibilities q = eStepVanilla(X, p);
      worstGap = std::max(worstGap, std::abs(fObjective(X, p, q) - logLikelihood(X, p)));
      const EmResult r = emLoop(X, p, cfg, rng);
      worstDrop = std::max(worstDrop, prev - r.logLikelihood);
      prev = r.logLikelihood;
      p = r.params;
    }
  }
  return {worstDrop <= 1e-8 && worstGap <= 1e-8,
          fmt("20 instances x 50 steps; largest decrease %.2e, largest |F - loglik| %.2e", worstDrop, worstGap)};
}

Outcome sinkhornVersusVanilla() {
  int wins = 0;
  for (int s = 0; s < 100; ++s) {
    const SynthData d = generate(task(1000 + s));
    const EmComparison c = compareEmFromSharedMean(d.train, 2, 5, 1000 + s);
    if (c.sinkhorn >= c.vanilla) ++wins;
  }
  return {wins >= 80, fmt("sinkhorn >= vanilla in %d/100 seeds", wins)};
}

Outcome multimodality() {
  const auto linear = [](Index m) {
    return [m](TrainConfig& c) {
      c.components = m;
      c.hidden.clear();
    };
  };
  const double one = meanAccuracy(2, linear(1));
  const double two = meanAccuracy(2, linear(2));
  return {two - one >= 0.02, fmt("accuracy M=1 %.4f, M=2 %.4f (+%.2f points)", one, two, 100 * (two - one))};
}

Outcome memoryDirection() {
  const double none = meanAccuracy(2, [](TrainConfig& c) { c.memory.capacityPerQueue = 0; });
  const double full = meanAccuracy(2, [](TrainConfig&) {});
  return {full - none >= 0.01,
          fmt("accuracy memory 0 %.4f, memory 2048 %.4f (+%.2f points)", none, full, 100 * (full - none))};
}

Outcome oodDirection() {
  double hybrid = 0, disc = 0, softmax = 0;
  for (int s = 0; s < kSeeds; ++s) {
    SynthSpec spec = task(kSeedBase + s);
    spec.oodHoldout = 3;
    const SynthData d = generate(spec);
    const auto auroc = [&](TrainMode mode) {
      return evaluateOod(trainModel(d.train, protocol(mode, kSeedBase + s)).model, *d.ood).auroc;
    };
    hybrid += auroc(TrainMode::HybridGenerative) / kSeeds;
    disc += auroc(TrainMode::DiscriminativeGmm) / kSeeds;
    softmax += auroc(TrainMode::SoftmaxBaseline) / kSeeds;
  }
  return {hybrid >= 0.90 && hybrid > disc && hybrid > softmax,
          fmt("AUROC hybrid %.4f, disc-gmm %.4f, softmax %.4f", hybrid, disc, softmax)};
}

Outcome calibration() {
  double hybrid = 0, softmax = 0;
  for (int s = 0; s < kSeeds; ++s) {
    const SynthData d = generate(task(kSeedBase + s));
    const auto ece = [&](TrainMode mode) {
      return evaluateClosedSet(trainModel(d.train, protocol(mode, kSeedBase + s)).model, d.test).ece;
    };
    hybrid += ece(TrainMode::HybridGenerative) / kSeeds;
    softmax += ece(TrainMode::SoftmaxBaseline) / kSeeds;
  }
  return {hybrid <= softmax, fmt("ECE hybrid %.4f, softmax %.4f", hybrid, softmax)};
}

Outcome parameterIsolation() {
  const SynthData d = generate(task(kSeedBase));
  TrainConfig cfg = protocol(TrainMode::HybridGenerative, kSeedBase);
  cfg.iterations = 500;
  Trainer t(d.train, cfg);
  int violations = 0, thetaMoves = 0, phiMoves = 0;
  while (t.iteration() < cfg.iterations) {
    const std::uint64_t theta0 = parameterHash(t.extractor());
    const std::uint64_t phi0 = parameterHash(t.classifier());
    t.step();
    const IterationRecord& r = t.records().back();
    if (r.phiBeforeGradient != r.phiAfterGradient || r.thetaBeforeEm != r.thetaAfterEm ||
        r.thetaBeforeEm != theta0 || r.phiAfterGradient != parameterHash(t.classifier())) {
      ++violations;
    }
    thetaMoves += parameterHash(t.extractor()) != theta0;
    phiMoves += parameterHash(t.classifier()) != phi0;
  }
  return {violations == 0, fmt("%d/500 iterations with a cross update; theta moved in %d, phi in %d",
                               violations, thetaMoves, phiMoves)};
}

Outcome metricOracles() {
  sweep::MetricErrors e;
  sweep::enumerateBinary(8, e);
  sweep::enumerateMeanIou(8, 3, e);
  sweep::enumerateEce(8, e);
  const long enumerated = e.instances;
  sweep::seededInstances(100, 100, 20260101, e);
  const double worst = e.worst();
  return {worst <= 1e-12, fmt("%ld enumerated + 100 seeded instances; worst |impl - oracle| auroc %.1e ap %.1e "
                              "fpr95 %.1e miou %.1e ece %.1e",
                              enumerated, e.auroc, e.ap, e.fpr, e.miou, e.ece)};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Outcome determinism(const std::string& cli) {
  const fs::path root = fs::temp_directory_path() / "gmmclass_acceptance_determinism";
  fs::remove_all(root);
  fs::create_directories(root);
  {
    std::ofstream cfg(root / "config.json");
    cfg << R"({"seed": 31, "train": {"iterations": 200, "components": 2, "em": {"tau": 0.9}}})";
  }
  const std::vector<std::string> files{"data/train.txt", "data/test.txt", "model/model.json",
                                       "model/report.json", "metrics.json"};
  std::vector<std::string> first;
  for (int run = 0; run < 2; ++run) {
    const fs::path dir = root / ("run" + std::to_string(run));
    const std::string q = "'" + dir.string() + "'";
    const std::string cfg = "'" + (root / "config.json").string() + "'";
    const std::string cmd = "'" + cli + "' gen-data --config " + cfg + " --out " + q + "/data 2>/dev/null && '" +
                            cli + "' train --config " + cfg + " --data " + q + "/data/train.txt --out " + q +
                            "/model 2>/dev/null && '" + cli + "' eval --model " + q + "/model/model.json --data " +
                            q + "/data/test.txt --out " + q + "/metrics.json 2>/dev/null";
    if (std::system(cmd.c_str()) != 0) return {false, "pipeline run " + std::to_string(run) + " failed"};
    for (std::size_t i = 0; i < files.size(); ++i) {
      const std::string bytes = slurp(dir / files[i]);
      if (bytes.empty()) return {false, files[i] + " missing or empty"};
      if (run == 0) first.push_back(bytes);
      else if (bytes != first[i]) return {false, files[i] + " differs between runs"};
    }
  }
  fs::remove_all(root);
  return {true, fmt("%zu files byte-identical across two runs", files.size())};
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::cerr << "usage: acceptance <gmmclass binary> [criteria...]\n";
    return 2;
  }
  const std::string cli = argv[1];
  std::set<int> only;
  for (int i = 2; i < argc; ++i) only.insert(std::atoi(argv[i]));

  struct Criterion {
    int id;
    const char* name;
    double limitSeconds;  // 0 = no runtime bound
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {1, "gradient correctness", 10, gradients},
      {2, "sinkhorn feasibility", 5, sinkhornFeasibility},
      {3, "EM monotonicity and Jensen tightness", 0, emMonotonicity},
      {4, "sinkhorn EM favoured over vanilla", 120, sinkhornVersusVanilla},
      {5, "multimodality direction", 300, multimodality},
      {6, "memory direction", 0, memoryDirection},
      {7, "OOD direction", 600, oodDirection},
      {8, "calibration direction", 0, calibration},
      {9, "parameter isolation", 0, parameterIsolation},
      {10, "metric oracles", 0, metricOracles},
      {11, "determinism", 0, [&] { return determinism(cli); }},
  };

  int failed = 0;
  for (const Criterion& c : criteria) {
    if (!only.empty() && !only.contains(c.id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool inTime = c.limitSeconds == 0 || secs < c.limitSeconds;
    const bool pass = o.pass && inTime;
    failed += !pass;
    std::cout << (pass ? "PASS" : "FAIL") << "  criterion " << c.id << " (" << c.name << "): " << o.detail
              << "; " << fmt("%.1f s", secs);
    if (c.limitSeconds > 0) std::cout << fmt(" (limit %.0f s)", c.limitSeconds);
    std::cout << std::endl;
  }
  return failed == 0 ? 0 : 1;
}

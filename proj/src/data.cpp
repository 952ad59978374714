#include "gmmclass/data.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace gmmclass {

namespace {

constexpr int kPlacementAttempts = 2000;
constexpr int kPlacementRestarts = 200;

// Mode means drawn uniformly from a cube whose volume grows with the number
// of modes, rejecting candidates closer than `separation` to any earlier mean.
Matrix placeModeMeans(const SynthSpec& spec, Rng& rng) {
  const Index k = static_cast<Index>(spec.numClasses) * spec.modesPerClass;
  const Index d = spec.inputDim;
  const double side =
      spec.separation * std::pow(static_cast<double>(k), 1.0 / static_cast<double>(d));
  // A cube of this side cannot hold more points at that spacing.
  const double packingBound = std::pow(side / spec.separation + 1.0, static_cast<double>(d));
  if (static_cast<double>(k) > packingBound) {
    throw ContractViolation("generate: separation infeasible for the requested mode count");
  }
  std::uniform_real_distribution<double> coord(-0.5 * side, 0.5 * side);
  Matrix means(k, d);
  for (int restart = 0; restart < kPlacementRestarts; ++restart) {
    Index placed = 0;
    for (int attempt = 0; attempt < kPlacementAttempts && placed < k; ++attempt) {
      Vector candidate(d);
      for (Index j = 0; j < d; ++j) candidate(j) = coord(rng);
      bool ok = true;
      for (Index i = 0; i < placed && ok; ++i) {
        ok = (means.row(i).transpose() - candidate).norm() >= spec.separation;
      }
      if (ok) means.row(placed++) = candidate.transpose();
    }
    if (placed == k) return means;
  }
  throw ContractViolation("generate: could not place mode means at the requested separation");
}

class Sampler {
public:
  Sampler(const SynthSpec& spec, const Matrix& means, Rng& rng)
      : spec_(spec), means_(means), rng_(rng) {}

  Vector draw(int originalClass) {
    std::uniform_int_distribution<int> mode(0, spec_.modesPerClass - 1);
    const Index row = static_cast<Index>(originalClass) * spec_.modesPerClass + mode(rng_);
    Vector x = means_.row(row).transpose();
    for (Index j = 0; j < x.size(); ++j) x(j) += spec_.noise * normal_(rng_);
    return x;
  }

private:
  const SynthSpec& spec_;
  const Matrix& means_;
  Rng& rng_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

// Original class ids eligible for train/test, in order; their position is the
// dense label.
std::vector<int> inDistributionClasses(const SynthSpec& spec) {
  std::vector<int> out;
  for (int c = 0; c < spec.numClasses; ++c) {
    if (!spec.oodHoldout || *spec.oodHoldout != c) out.push_back(c);
  }
  return out;
}

LabeledSet drawSplit(const SynthSpec& spec, Index count, const std::vector<int>& classes,
                     Sampler& sampler, Rng& rng) {
  LabeledSet set;
  set.numClasses = static_cast<int>(classes.size());
  set.samples.resize(count, spec.inputDim);
  set.labels.resize(static_cast<std::size_t>(count));
  std::uniform_int_distribution<int> pickClass(0, set.numClasses - 1);

  std::vector<int> dense(static_cast<std::size_t>(count));
  if (spec.gridWidth && count > 0) {
    const Index w = *spec.gridWidth;
    const Index h = count / w;
    const Index patchesX = (w + spec.patch - 1) / spec.patch;
    const Index patchesY = (h + spec.patch - 1) / spec.patch;
    std::vector<int> patchLabel(static_cast<std::size_t>(patchesX * patchesY));
    for (int& p : patchLabel) p = pickClass(rng);
    for (Index r = 0; r < h; ++r) {
      for (Index c = 0; c < w; ++c) {
        const Index patchIdx = (r / spec.patch) * patchesX + c / spec.patch;
        dense[static_cast<std::size_t>(r * w + c)] = patchLabel[static_cast<std::size_t>(patchIdx)];
      }
    }
    set.grid = std::make_pair(h, w);
  } else {
    for (int& y : dense) y = pickClass(rng);
  }
  for (Index i = 0; i < count; ++i) {
    const int y = dense[static_cast<std::size_t>(i)];
    set.labels[static_cast<std::size_t>(i)] = y;
    set.samples.row(i) = sampler.draw(classes[static_cast<std::size_t>(y)]).transpose();
  }
  return set;
}

std::string formatDouble(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

template <typename T>
bool parseNumber(std::string_view text, T& value) {
  const char* begin = text.data();
  const char* end = begin + text.size();
  const auto res = std::from_chars(begin, end, value);
  return res.ec == std::errc() && res.ptr == end;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

}  // namespace

void LabeledSet::validate() const {
  require(static_cast<Index>(labels.size()) == samples.rows(), "LabeledSet: label count mismatch");
  require(numClasses >= 1, "LabeledSet: need at least one class");
  for (int y : labels) require(y >= 0 && y < numClasses, "LabeledSet: label out of range");
  if (grid) require(grid->first * grid->second == samples.rows(), "LabeledSet: grid does not tile samples");
}

bool LabeledSet::operator==(const LabeledSet& other) const {
  return numClasses == other.numClasses && grid == other.grid && labels == other.labels &&
         samples.rows() == other.samples.rows() && samples.cols() == other.samples.cols() &&
         samples == other.samples;
}

void SynthSpec::validate() const {
  require(numClasses >= 1, "SynthSpec: numClasses must be >= 1");
  require(modesPerClass >= 1, "SynthSpec: modesPerClass must be >= 1");
  require(inputDim >= 1, "SynthSpec: inputDim must be >= 1");
  require(separation > 0 && noise > 0, "SynthSpec: separation and noise must be positive");
  require(nTrain >= 0 && nTest >= 0, "SynthSpec: split sizes must be nonnegative");
  if (oodHoldout) {
    require(*oodHoldout >= 0 && *oodHoldout < numClasses, "SynthSpec: oodHoldout out of range");
    require(numClasses >= 2, "SynthSpec: holding out a class needs at least two classes");
  }
  if (gridWidth) {
    require(*gridWidth >= 1 && patch >= 1, "SynthSpec: grid width and patch must be positive");
    require(nTrain % *gridWidth == 0 && nTest % *gridWidth == 0,
            "SynthSpec: split sizes must be multiples of the grid width");
  }
}

SynthData generate(const SynthSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  SynthData out;
  out.modeMeans = placeModeMeans(spec, rng);
  Sampler sampler(spec, out.modeMeans, rng);
  const std::vector<int> classes = inDistributionClasses(spec);

  out.train = drawSplit(spec, spec.nTrain, classes, sampler, rng);
  out.test = drawSplit(spec, spec.nTest, classes, sampler, rng);

  if (spec.oodHoldout) {
    const Index normal = spec.nTest / 2;
    LabeledSet ood;
    ood.numClasses = 2;
    ood.samples.resize(spec.nTest, spec.inputDim);
    ood.labels.resize(static_cast<std::size_t>(spec.nTest));
    std::uniform_int_distribution<int> pickClass(0, static_cast<int>(classes.size()) - 1);
    for (Index i = 0; i < spec.nTest; ++i) {
      const bool anomalous = i >= normal;
      const int original = anomalous ? *spec.oodHoldout : classes[static_cast<std::size_t>(pickClass(rng))];
      ood.samples.row(i) = sampler.draw(original).transpose();
      ood.labels[static_cast<std::size_t>(i)] = anomalous ? 1 : 0;
    }
    out.ood = std::move(ood);
  }
  return out;
}

void writeDataset(const LabeledSet& set, std::ostream& out) {
  set.validate();
  out << "# gmmclass-dataset v1 inDim=" << set.inputDim() << " C=" << set.numClasses;
  if (set.grid) out << " grid=" << set.grid->first << 'x' << set.grid->second;
  out << '\n';
  for (Index i = 0; i < set.size(); ++i) {
    for (Index j = 0; j < set.inputDim(); ++j) out << formatDouble(set.samples(i, j)) << ',';
    out << set.labels[static_cast<std::size_t>(i)] << '\n';
  }
}

LabeledSet readDataset(std::istream& in) {
  std::string line;
  std::size_t lineNo = 1;
  if (!std::getline(in, line)) throw DatasetParseError("missing header", lineNo);

  LabeledSet set;
  Index inDim = -1;
  {
    std::istringstream header(line);
    std::string hash, magic, version;
    header >> hash >> magic >> version;
    if (hash != "#" || magic != "gmmclass-dataset") throw DatasetParseError("not a gmmclass dataset", lineNo);
    if (version != "v1") throw DatasetParseError("unsupported version '" + version + "'", lineNo);
    std::string field;
    while (header >> field) {
      const auto eq = field.find('=');
      if (eq == std::string::npos) throw DatasetParseError("malformed header field '" + field + "'", lineNo);
      const std::string key = field.substr(0, eq);
      const std::string_view value = std::string_view(field).substr(eq + 1);
      if (key == "inDim") {
        if (!parseNumber(value, inDim) || inDim < 1) throw DatasetParseError("bad inDim", lineNo);
      } else if (key == "C") {
        if (!parseNumber(value, set.numClasses) || set.numClasses < 1) throw DatasetParseError("bad C", lineNo);
      } else if (key == "grid") {
        const auto x = value.find('x');
        Index h = 0;
        Index w = 0;
        if (x == std::string_view::npos || !parseNumber(value.substr(0, x), h) ||
            !parseNumber(value.substr(x + 1), w) || h < 1 || w < 1) {
          throw DatasetParseError("bad grid", lineNo);
        }
        set.grid = std::make_pair(h, w);
      } else {
        throw DatasetParseError("unknown header field '" + key + "'", lineNo);
      }
    }
    if (inDim < 1 || set.numClasses < 1) throw DatasetParseError("header lacks inDim or C", lineNo);
  }

  std::vector<double> values;
  while (std::getline(in, line)) {
    ++lineNo;
    const std::string_view row = trim(line);
    if (row.empty()) continue;
    std::size_t start = 0;
    Index fields = 0;
    while (true) {
      const std::size_t comma = row.find(',', start);
      const std::string_view token =
          trim(row.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
      const bool last = comma == std::string_view::npos;
      if (!last) {
        double v = 0;
        if (!parseNumber(token, v) || !std::isfinite(v)) throw DatasetParseError("bad value '" + std::string(token) + "'", lineNo);
        values.push_back(v);
        ++fields;
        start = comma + 1;
      } else {
        int y = 0;
        if (!parseNumber(token, y)) throw DatasetParseError("bad label '" + std::string(token) + "'", lineNo);
        if (y < 0 || y >= set.numClasses) throw DatasetParseError("label out of range", lineNo);
        if (fields != inDim) throw DatasetParseError("expected " + std::to_string(inDim) + " values", lineNo);
        set.labels.push_back(y);
        break;
      }
    }
  }

  const auto n = static_cast<Index>(set.labels.size());
  set.samples = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      values.data(), n, inDim);
  if (set.grid && set.grid->first * set.grid->second != n) {
    throw DatasetParseError("grid does not match sample count", lineNo);
  }
  return set;
}

void saveDataset(const LabeledSet& set, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  writeDataset(set, out);
  if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

LabeledSet loadDataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  return readDataset(in);
}

LabeledSet subset(const LabeledSet& set, const std::vector<Index>& indices) {
  LabeledSet out;
  out.numClasses = set.numClasses;
  out.samples.resize(static_cast<Index>(indices.size()), set.inputDim());
  out.labels.resize(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    out.samples.row(static_cast<Index>(i)) = set.samples.row(indices[i]);
    out.labels[i] = set.labels[static_cast<std::size_t>(indices[i])];
  }
  return out;
}

}  // namespace gmmclass

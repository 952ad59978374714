#include "gmmclass/memory.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <istream>
#include <numeric>
#include <ostream>

namespace gmmclass {

namespace {

constexpr std::array<char, 4> kMagic{'G', 'M', 'E', 'M'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "memory dump assumes a little-endian host");

void writeU32(std::ostream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void writeF64(std::ostream& out, double v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint32_t readU32(std::istream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw std::runtime_error("memory dump: truncated header");
  return v;
}

}  // namespace

FeatureMemory::FeatureMemory(int numClasses, int numComponents, Index dim, Index capacityPerQueue,
                             MemoryLayout layout)
    : numClasses_(numClasses),
      numComponents_(numComponents),
      dim_(dim),
      capacity_(capacityPerQueue),
      layout_(layout) {
  require(numClasses >= 1 && numComponents >= 1 && dim >= 1, "FeatureMemory: bad shape");
  require(capacityPerQueue >= 0, "FeatureMemory: negative capacity");
  const int queuesPerClass = layout == MemoryLayout::PerComponent ? numComponents : 1;
  queues_.resize(static_cast<std::size_t>(numClasses) * static_cast<std::size_t>(queuesPerClass));
}

std::size_t FeatureMemory::queueIndex(int classId, int componentId) const {
  require(classId >= 0 && classId < numClasses_, "FeatureMemory: class id out of range");
  require(componentId >= 0 && componentId < numComponents_,
          "FeatureMemory: component id out of range");
  if (layout_ == MemoryLayout::PerClass) return static_cast<std::size_t>(classId);
  return static_cast<std::size_t>(classId) * static_cast<std::size_t>(numComponents_) +
         static_cast<std::size_t>(componentId);
}

Index FeatureMemory::queueCapacity() const {
  return layout_ == MemoryLayout::PerClass ? capacity_ * numComponents_ : capacity_;
}

void FeatureMemory::push(int classId, int componentId, const Matrix& features) {
  auto& queue = queues_[queueIndex(classId, componentId)];
  if (features.rows() == 0) return;
  require(features.cols() == dim_, "FeatureMemory::push: dimension mismatch");
  const Index cap = queueCapacity();
  for (Index r = 0; r < features.rows(); ++r) {
    queue.emplace_back(features.row(r).transpose());
    while (static_cast<Index>(queue.size()) > cap) queue.pop_front();
  }
}

Matrix FeatureMemory::snapshot(int classId) const {
  const Index total = classSize(classId);
  Matrix out(total, dim_);
  Index row = 0;
  const int queuesPerClass = layout_ == MemoryLayout::PerComponent ? numComponents_ : 1;
  for (int k = 0; k < queuesPerClass; ++k) {
    for (const Vector& v : queues_[queueIndex(classId, k)]) out.row(row++) = v.transpose();
  }
  return out;
}

Index FeatureMemory::queueLength(int classId, int componentId) const {
  return static_cast<Index>(queues_[queueIndex(classId, componentId)].size());
}

Index FeatureMemory::classSize(int classId) const {
  require(classId >= 0 && classId < numClasses_, "FeatureMemory: class id out of range");
  const int queuesPerClass = layout_ == MemoryLayout::PerComponent ? numComponents_ : 1;
  Index total = 0;
  for (int k = 0; k < queuesPerClass; ++k) total += queueLength(classId, k);
  return total;
}

void FeatureMemory::save(std::ostream& out) const {
  out.write(kMagic.data(), kMagic.size());
  writeU32(out, kVersion);
  writeU32(out, static_cast<std::uint32_t>(numClasses_));
  writeU32(out, static_cast<std::uint32_t>(numComponents_));
  writeU32(out, static_cast<std::uint32_t>(dim_));
  writeU32(out, static_cast<std::uint32_t>(capacity_));
  writeU32(out, layout_ == MemoryLayout::PerComponent ? 0u : 1u);
  for (const auto& queue : queues_) {
    writeU32(out, static_cast<std::uint32_t>(queue.size()));
    for (const Vector& v : queue) {
      for (Index d = 0; d < v.size(); ++d) writeF64(out, v(d));
    }
  }
  if (!out) throw std::runtime_error("memory dump: write failed");
}

FeatureMemory FeatureMemory::load(std::istream& in) {
  std::array<char, 4> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw std::runtime_error("memory dump: bad magic");
  const std::uint32_t version = readU32(in);
  if (version != kVersion) throw std::runtime_error("memory dump: unsupported version");
  const auto c = static_cast<int>(readU32(in));
  const auto m = static_cast<int>(readU32(in));
  const auto d = static_cast<Index>(readU32(in));
  const auto cap = static_cast<Index>(readU32(in));
  const std::uint32_t layoutTag = readU32(in);
  if (layoutTag > 1) throw std::runtime_error("memory dump: unknown layout");
  FeatureMemory mem(c, m, d, cap,
                    layoutTag == 0 ? MemoryLayout::PerComponent : MemoryLayout::PerClass);
  for (auto& queue : mem.queues_) {
    const std::uint32_t rows = readU32(in);
    if (rows > static_cast<std::uint32_t>(mem.queueCapacity()))
      throw std::runtime_error("memory dump: queue exceeds capacity");
    for (std::uint32_t r = 0; r < rows; ++r) {
      Vector v(d);
      in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(d * sizeof(double)));
      if (!in) throw std::runtime_error("memory dump: truncated queue");
      queue.push_back(std::move(v));
    }
  }
  return mem;
}

bool FeatureMemory::operator==(const FeatureMemory& other) const {
  return numClasses_ == other.numClasses_ && numComponents_ == other.numComponents_ &&
         dim_ == other.dim_ && capacity_ == other.capacity_ && layout_ == other.layout_ &&
         queues_ == other.queues_;
}

SparseSelection sparseSample(const Matrix& features, std::span<const int> labels,
                             std::span<const Matrix> routing, int numComponents, int k, Rng& rng) {
  require(k >= 1, "sparseSample: k must be >= 1");
  require(numComponents >= 1, "sparseSample: need at least one component");
  require(static_cast<Index>(labels.size()) == features.rows(),
          "sparseSample: label count must match feature rows");
  const int numClasses = static_cast<int>(routing.size());

  std::vector<std::vector<Index>> rowsOf(static_cast<std::size_t>(numClasses));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    require(labels[i] >= 0 && labels[i] < numClasses, "sparseSample: label out of range");
    rowsOf[static_cast<std::size_t>(labels[i])].push_back(static_cast<Index>(i));
  }

  SparseSelection out(static_cast<std::size_t>(numClasses),
                      std::vector<Matrix>(static_cast<std::size_t>(numComponents)));
  for (int c = 0; c < numClasses; ++c) {
    const auto& rows = rowsOf[static_cast<std::size_t>(c)];
    const Index available = static_cast<Index>(rows.size());
    if (available == 0) continue;
    const Matrix& route = routing[static_cast<std::size_t>(c)];
    require(route.rows() == 0 || (route.rows() == available && route.cols() == numComponents),
            "sparseSample: routing shape mismatch");

    // Partial Fisher-Yates over positions within the class.
    std::vector<Index> order(static_cast<std::size_t>(available));
    std::iota(order.begin(), order.end(), Index{0});
    const Index take = std::min<Index>(k, available);
    for (Index i = 0; i < take; ++i) {
      std::uniform_int_distribution<Index> pick(i, available - 1);
      std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(pick(rng))]);
    }
    std::sort(order.begin(), order.begin() + take);

    std::vector<std::vector<Index>> byComponent(static_cast<std::size_t>(numComponents));
    for (Index i = 0; i < take; ++i) {
      const Index pos = order[static_cast<std::size_t>(i)];
      Index target = 0;
      if (route.rows() > 0) route.row(pos).maxCoeff(&target);
      byComponent[static_cast<std::size_t>(target)].push_back(rows[static_cast<std::size_t>(pos)]);
    }
    for (int m = 0; m < numComponents; ++m) {
      const auto& picked = byComponent[static_cast<std::size_t>(m)];
      Matrix sel(static_cast<Index>(picked.size()), features.cols());
      for (std::size_t i = 0; i < picked.size(); ++i) sel.row(static_cast<Index>(i)) = features.row(picked[i]);
      out[static_cast<std::size_t>(c)][static_cast<std::size_t>(m)] = std::move(sel);
    }
  }
  return out;
}

}  // namespace gmmclass

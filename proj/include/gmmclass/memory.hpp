#pragma once

#include "gmmclass/em.hpp"

#include <deque>
#include <iosfwd>
#include <span>
#include <vector>

namespace gmmclass {

enum class MemoryLayout {
  PerComponent,  // one FIFO per (class, component), fed by argmax routing
  PerClass,      // one FIFO per class holding capacity * M rows; routing ignored
};

// Per-(class, component) FIFO queues of detached feature vectors.
//
// Single writer. snapshot() may run alongside other readers but never during
// a push; callers synchronize externally.
class FeatureMemory {
public:
  FeatureMemory() = default;
  FeatureMemory(int numClasses, int numComponents, Index dim, Index capacityPerQueue,
                MemoryLayout layout = MemoryLayout::PerComponent);

  // Appends rows of `features` in order; the oldest rows are evicted once the
  // queue exceeds its capacity.
  void push(int classId, int componentId, const Matrix& features);

  // All rows stored for a class, queue-major and in insertion order.
  Matrix snapshot(int classId) const;

  Index queueLength(int classId, int componentId) const;
  Index classSize(int classId) const;

  int numClasses() const { return numClasses_; }
  int numComponents() const { return numComponents_; }
  Index dim() const { return dim_; }
  Index capacityPerQueue() const { return capacity_; }
  MemoryLayout layout() const { return layout_; }

  // Binary dump: "GMEM", u32 version, u32 C, u32 M, u32 D, u32 capacity,
  // u32 layout; then for each queue a u32 row count followed by the rows as
  // little-endian float64.
  void save(std::ostream& out) const;
  static FeatureMemory load(std::istream& in);

  bool operator==(const FeatureMemory& other) const;

private:
  std::size_t queueIndex(int classId, int componentId) const;
  Index queueCapacity() const;

  int numClasses_ = 0;
  int numComponents_ = 0;
  Index dim_ = 0;
  Index capacity_ = 0;
  MemoryLayout layout_ = MemoryLayout::PerComponent;
  std::vector<std::deque<Vector>> queues_;
};

// Selected rows indexed [class][component].
using SparseSelection = std::vector<std::vector<Matrix>>;

// For each class present in the batch, picks min(k, available) rows uniformly
// without replacement and routes each to the argmax component of its
// responsibility row. routing[c] holds one row per batch sample of class c,
// in batch order; an empty matrix routes everything to component 0.
SparseSelection sparseSample(const Matrix& features, std::span<const int> labels,
                             std::span<const Matrix> routing, int numComponents, int k, Rng& rng);

}  // namespace gmmclass

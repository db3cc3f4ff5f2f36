#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

#include "calq/kg_store.hpp"
#include "calq/membership.hpp"

namespace calq {

struct SparsityReport {
  std::uint64_t nnz = 0;
  /// |V|^2 |R|
  std::uint64_t total = 0;
  /// fraction of zero entries
  double sparsity = 1.0;
  std::uint64_t bytes = 0;
};

/// Thresholded, immutable CSR copy of a calibrated tensor. Rows are ordered
/// h-major, r-minor. Pinned entries carry a flag in the top bit of the stored
/// column index.
class CalibratedTensor final : public RowProvider {
 public:
  static constexpr std::uint32_t kPinnedBit = 1u << 31;
  static constexpr std::uint32_t kIndexMask = kPinnedBit - 1;

  CalibratedTensor() = default;
  /// Takes raw CSR arrays; validates shape, ordering and value range.
  CalibratedTensor(std::uint32_t num_entities, std::uint32_t num_relations, double epsilon,
                   std::vector<std::uint64_t> offsets, std::vector<std::uint32_t> index, std::vector<float> values);

  std::size_t num_entities() const override { return entities_; }
  std::size_t num_relations() const override { return relations_; }
  double epsilon() const { return epsilon_; }
  std::uint64_t nnz() const { return values_.size(); }

  /// Stored row as a sparse Row; empty when nothing survived.
  Row row(EntityId head, RelationId relation) const override;
  /// 0 when absent.
  double value(EntityId head, RelationId relation, EntityId tail) const;
  bool is_pinned(EntityId head, RelationId relation, EntityId tail) const;

  const std::vector<std::uint64_t>& offsets() const { return offsets_; }
  const std::vector<std::uint32_t>& raw_index() const { return index_; }
  const std::vector<float>& raw_values() const { return values_; }

  bool operator==(const CalibratedTensor& other) const;

 private:
  std::int64_t find(EntityId head, RelationId relation, EntityId tail) const;

  std::uint32_t entities_ = 0;
  std::uint32_t relations_ = 0;
  double epsilon_ = 0.0;
  std::vector<std::uint64_t> offsets_ = {0};
  std::vector<std::uint32_t> index_;
  std::vector<float> values_;
};

/// Bytes used by a CSR tensor with the given shape and nnz.
std::uint64_t estimated_bytes(std::uint64_t num_entities, std::uint64_t num_relations, std::uint64_t nnz);

SparsityReport stats(const CalibratedTensor& tensor);

struct BuildOptions {
  double epsilon = 0.0005;
  /// Store train and validation triplets as pinned 1.0 entries.
  bool pin_known = true;
  /// 0 means unlimited.
  std::uint64_t memory_cap_bytes = 0;
  /// 0 means hardware concurrency.
  unsigned threads = 1;
};

class MemoryBudgetExceeded : public std::runtime_error {
 public:
  MemoryBudgetExceeded(const std::string& what, double suggested_epsilon)
      : std::runtime_error(what), suggested_epsilon_(suggested_epsilon) {}
  /// Smallest probed epsilon that fits the cap, or 0 when none does.
  double suggested_epsilon() const { return suggested_epsilon_; }

 private:
  double suggested_epsilon_;
};

/// Keeps provider values strictly above epsilon for every (h, r) row.
CalibratedTensor build_tensor(const RowProvider& provider, const KnowledgeGraph& kg, const BuildOptions& options);

class TensorFileError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void save_tensor(const CalibratedTensor& tensor, const std::filesystem::path& path);
/// Throws TensorFileError on a bad header, unsupported version or truncation.
CalibratedTensor load_tensor(const std::filesystem::path& path);

}  // namespace calq

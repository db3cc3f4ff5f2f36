#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace calq {

using EntityId = std::uint32_t;
using RelationId = std::uint32_t;

/// Bijection between surface strings and dense ids, ids assigned in insertion order.
class Vocabulary {
 public:
  /// Returns the id of `name`, inserting it at the end when absent.
  std::uint32_t intern(std::string_view name);
  /// Returns the id of `name` or -1 when absent.
  std::int64_t find(std::string_view name) const;
  const std::string& name(std::uint32_t id) const { return names_.at(id); }
  std::size_t size() const { return names_.size(); }
  bool empty() const { return names_.empty(); }
  const std::vector<std::string>& names() const { return names_; }

  /// Writes `id<TAB>surface` lines.
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  bool operator==(const Vocabulary& other) const { return names_ == other.names_; }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, std::uint32_t> ids_;
};

struct Triplet {
  EntityId head = 0;
  RelationId relation = 0;
  EntityId tail = 0;

  auto operator<=>(const Triplet&) const = default;
};

enum class Split : std::uint8_t { train = 1, validation = 2, test = 4 };

/// Bitmask over splits.
class SplitSet {
 public:
  constexpr SplitSet() = default;
  constexpr SplitSet(Split s) : bits_(static_cast<std::uint8_t>(s)) {}  // NOLINT
  constexpr SplitSet operator|(SplitSet o) const { return SplitSet(bits_ | o.bits_); }
  constexpr bool contains(Split s) const { return (bits_ & static_cast<std::uint8_t>(s)) != 0; }
  constexpr std::uint8_t bits() const { return bits_; }

  static constexpr SplitSet train() { return SplitSet(Split::train); }
  static constexpr SplitSet known() { return SplitSet(Split::train) | SplitSet(Split::validation); }
  static constexpr SplitSet all() { return known() | SplitSet(Split::test); }

 private:
  constexpr explicit SplitSet(std::uint8_t bits) : bits_(bits) {}
  std::uint8_t bits_ = 0;
};

constexpr SplitSet operator|(Split a, Split b) { return SplitSet(a) | SplitSet(b); }

class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& file, std::size_t line, const std::string& what);
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

enum class VocabPolicy { build, reuse };

struct LoadResult {
  std::vector<Triplet> triplets;
  std::size_t duplicates_dropped = 0;
};

/// Reads a `head<TAB>relation<TAB>tail` file. Under `build` unknown symbols
/// are interned; under `reuse` they are an error. Duplicate lines are dropped.
LoadResult load_split(const std::filesystem::path& path, Vocabulary& entities,
                      Vocabulary& relations, VocabPolicy policy);

/// Same as load_split but over an in-memory buffer; `source` names it in errors.
LoadResult parse_split(std::string_view text, const std::string& source,
                       Vocabulary& entities, Vocabulary& relations, VocabPolicy policy);

/// Per-split `(head, relation) -> sorted tails` index stored as a sorted triplet
/// array; lookups are binary searches.
class AdjacencyIndex {
 public:
  AdjacencyIndex() = default;
  explicit AdjacencyIndex(std::vector<Triplet> triplets);

  std::span<const EntityId> tails(EntityId head, RelationId relation) const;
  bool contains(const Triplet& t) const;
  std::span<const Triplet> sorted() const { return sorted_; }

 private:
  std::vector<Triplet> sorted_;
  std::vector<EntityId> tails_;
};

class KnowledgeGraph {
 public:
  KnowledgeGraph() = default;
  /// Takes ownership of vocabularies and splits; drops duplicates within each split.
  KnowledgeGraph(Vocabulary entities, Vocabulary relations, std::vector<Triplet> train,
                 std::vector<Triplet> validation, std::vector<Triplet> test);

  /// Loads the three split files with first-appearance vocabulary order
  /// (train, then validation, then test). Missing validation/test paths are allowed.
  static KnowledgeGraph load(const std::filesystem::path& train,
                             const std::filesystem::path& validation,
                             const std::filesystem::path& test);

  const Vocabulary& entities() const { return entities_; }
  const Vocabulary& relations() const { return relations_; }
  std::size_t num_entities() const { return entities_.size(); }
  std::size_t num_relations() const { return relations_.size(); }

  const std::vector<Triplet>& split(Split s) const;

  /// Number of training tails of (head, relation).
  std::size_t tail_count(EntityId head, RelationId relation) const;
  /// Sorted tails over the union of the requested splits.
  std::vector<EntityId> neighbors(EntityId head, RelationId relation, SplitSet splits) const;
  std::span<const EntityId> tails(EntityId head, RelationId relation, Split s) const;
  bool contains(const Triplet& t, SplitSet splits) const;

  bool has_inverses() const { return inverses_; }
  /// Number of relations before inverse augmentation.
  std::size_t base_relations() const {
    return has_inverses() ? inverse_offset_ : relations_.size();
  }
  /// For an augmented graph, returns the paired relation id.
  RelationId inverse_of(RelationId r) const;

  std::size_t duplicates_dropped() const { return duplicates_dropped_; }

 private:
  friend KnowledgeGraph add_inverse_relations(const KnowledgeGraph& kg);
  void validate_and_index();

  Vocabulary entities_;
  Vocabulary relations_;
  std::vector<Triplet> train_;
  std::vector<Triplet> validation_;
  std::vector<Triplet> test_;
  AdjacencyIndex train_index_;
  AdjacencyIndex validation_index_;
  AdjacencyIndex test_index_;
  std::size_t inverse_offset_ = 0;
  bool inverses_ = false;
  std::size_t duplicates_dropped_ = 0;
};

/// Suffix appended to a relation's surface name to form its inverse.
inline constexpr std::string_view kInverseSuffix = "^-1";

/// Adds r^-1 with triplets (t, r^-1, h) for every relation r; inverse ids are
/// r + |R|. Throws std::logic_error if inverses are already present.
KnowledgeGraph add_inverse_relations(const KnowledgeGraph& kg);

}  // namespace calq

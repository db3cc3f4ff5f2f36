#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "calq/kg_store.hpp"

namespace calq {

/// Fuzzy set over d entities. Held either dense (d values) or sparse (strictly
/// increasing indices, no stored zeros). All values lie in [0,1].
class MembershipVector {
 public:
  MembershipVector() = default;

  static MembershipVector zeros(std::size_t dim);
  static MembershipVector ones(std::size_t dim);
  /// The one-hot vector of an anchor entity.
  static MembershipVector anchor(std::size_t dim, EntityId entity);
  /// Validates range; throws std::invalid_argument on values outside [0,1].
  static MembershipVector dense(std::vector<double> values);
  /// Validates range and ordering; zero values are dropped.
  static MembershipVector sparse(std::size_t dim, std::vector<EntityId> index, std::vector<double> values);
  /// Picks the representation by the support-size rule (sparse below 10% of d).
  static MembershipVector from_buffer(std::vector<double> values);

  std::size_t dim() const { return dim_; }
  bool is_sparse() const { return sparse_; }
  std::size_t support_size() const;
  double at(std::size_t i) const;

  std::vector<double> to_dense() const;
  MembershipVector as_sparse() const;
  MembershipVector as_dense() const;

  std::span<const EntityId> sparse_index() const { return index_; }
  std::span<const double> values() const { return values_; }

  /// Calls f(index, value) for every nonzero entry in increasing index order.
  template <typename F>
  void for_each_nonzero(F&& f) const {
    if (sparse_) {
      for (std::size_t k = 0; k < index_.size(); ++k) f(index_[k], values_[k]);
    } else {
      for (std::size_t i = 0; i < values_.size(); ++i) {
        if (values_[i] != 0.0) f(static_cast<EntityId>(i), values_[i]);
      }
    }
  }

  /// Exact value equality regardless of representation.
  bool same_values(const MembershipVector& other) const;

 private:
  std::size_t dim_ = 0;
  bool sparse_ = false;
  std::vector<EntityId> index_;
  std::vector<double> values_;
};

inline constexpr double kSparseSupportFraction = 0.1;

/// One tensor row X[h, r, :], either dense (value.size() == d, index empty) or
/// sparse (index/value pairs, strictly increasing index).
struct Row {
  bool dense = true;
  std::vector<EntityId> index;
  std::vector<double> value;

  static Row make_dense(std::vector<double> values) { return Row{true, {}, std::move(values)}; }
  static Row make_sparse(std::vector<EntityId> idx, std::vector<double> values) {
    return Row{false, std::move(idx), std::move(values)};
  }

  template <typename F>
  void for_each(F&& f) const {
    if (dense) {
      for (std::size_t j = 0; j < value.size(); ++j) f(static_cast<EntityId>(j), value[j]);
    } else {
      for (std::size_t k = 0; k < index.size(); ++k) f(index[k], value[k]);
    }
  }

  std::vector<double> to_dense(std::size_t dim) const;
};

/// Source of tensor rows for projection. Implementations must be safe for
/// concurrent calls to row().
class RowProvider {
 public:
  virtual ~RowProvider() = default;
  virtual std::size_t num_entities() const = 0;
  virtual std::size_t num_relations() const = 0;
  virtual Row row(EntityId head, RelationId relation) const = 0;
};

/// Dense in-memory |V| x |R| x |V| tensor; used for indicator tensors and tests.
class DenseTensorProvider final : public RowProvider {
 public:
  DenseTensorProvider(std::size_t num_entities, std::size_t num_relations);
  /// 0/1 indicator of the requested splits.
  static DenseTensorProvider indicator(const KnowledgeGraph& kg, SplitSet splits);

  std::size_t num_entities() const override { return entities_; }
  std::size_t num_relations() const override { return relations_; }
  Row row(EntityId head, RelationId relation) const override;

  double& at(EntityId h, RelationId r, EntityId t) { return data_[offset(h, r) + t]; }
  double at(EntityId h, RelationId r, EntityId t) const { return data_[offset(h, r) + t]; }

 private:
  std::size_t offset(EntityId h, RelationId r) const { return (std::size_t{h} * relations_ + r) * entities_; }
  std::size_t entities_;
  std::size_t relations_;
  std::vector<double> data_;
};

}  // namespace calq

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "calq/kg_store.hpp"

namespace calq {

/// Trilinear scoring families. For every kind f(h, r, t) = <q(h, r), e_t>
/// where q is bilinear in the head and relation rows.
///
///   complex   ComplEx, rows are [re | im] halves of rank-k complex vectors
///   distmult  DistMult, rank-k real vectors
///   cp        Canonical polyadic, entity rows [head-role | tail-role]
///   simple    SimplE, entity rows [head-role | tail-role], relation rows [r | r^-1]
enum class ModelKind : std::uint8_t { complex_bilinear, diagonal_bilinear, canonical_polyadic, simple_bilinear };

std::string_view to_string(ModelKind kind);
/// Accepts complex, distmult, cp, simple. Throws std::invalid_argument.
ModelKind parse_model_kind(std::string_view name);

class EmbeddingModel {
 public:
  EmbeddingModel() = default;
  EmbeddingModel(ModelKind kind, std::size_t rank, std::size_t num_entities, std::size_t num_relations);

  ModelKind kind() const { return kind_; }
  std::size_t rank() const { return rank_; }
  std::size_t num_entities() const { return num_entities_; }
  std::size_t num_relations() const { return num_relations_; }
  std::size_t entity_width() const { return entity_width_; }
  std::size_t relation_width() const { return relation_width_; }

  std::span<double> entity(EntityId e);
  std::span<const double> entity(EntityId e) const;
  std::span<double> relation(RelationId r);
  std::span<const double> relation(RelationId r) const;
  std::vector<double>& entity_table() { return entities_; }
  const std::vector<double>& entity_table() const { return entities_; }
  std::vector<double>& relation_table() { return relations_; }
  const std::vector<double>& relation_table() const { return relations_; }

  /// i.i.d. uniform in [-0.5/sqrt(rank), 0.5/sqrt(rank)].
  void init_uniform(std::uint64_t seed);

  /// q(h, r) of length entity_width().
  void query_vector(std::span<const double> head, std::span<const double> rel, std::span<double> q) const;
  /// Accumulates dq into the head and relation gradients.
  void query_backward(std::span<const double> head, std::span<const double> rel, std::span<const double> dq,
                      std::span<double> dhead, std::span<double> drel) const;

  double score(EntityId h, RelationId r, EntityId t) const;
  /// f(h, r, t) for every t.
  std::vector<double> score_row(EntityId h, RelationId r) const;

  void save(const std::filesystem::path& path) const;
  static EmbeddingModel load(const std::filesystem::path& path);

  bool operator==(const EmbeddingModel&) const = default;

 private:
  ModelKind kind_ = ModelKind::complex_bilinear;
  std::size_t rank_ = 0;
  std::size_t num_entities_ = 0;
  std::size_t num_relations_ = 0;
  std::size_t entity_width_ = 0;
  std::size_t relation_width_ = 0;
  std::vector<double> entities_;
  std::vector<double> relations_;
};

struct TrainConfig {
  ModelKind kind = ModelKind::complex_bilinear;
  std::size_t rank = 16;
  std::size_t epochs = 100;
  std::size_t batch_size = 100;
  double learning_rate = 0.1;
  /// N3 regularization weight.
  double l3 = 0.01;
  /// Weight of the auxiliary relation-prediction cross-entropy; 0 disables it.
  double relation_prediction = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ModelGradient {
  std::vector<double> entities;
  std::vector<double> relations;
};

struct ObjectiveParts {
  double cross_entropy = 0.0;        // mean tail cross-entropy
  double relation_cross_entropy = 0.0;  // mean relation-prediction cross-entropy
  double n3 = 0.0;                   // mean N3 penalty (unweighted)
  double total = 0.0;                // cross_entropy + l1 * relation + l3 * n3
};

/// Batch objective: full-softmax cross-entropy of each tail against all
/// entities, optional relation-prediction term, and the N3 penalty of the
/// rows used by each triplet, all averaged over the batch. When `grad` is
/// non-null it is resized and filled with d(total)/d(parameters).
ObjectiveParts batch_objective(const EmbeddingModel& model, std::span<const Triplet> batch, const TrainConfig& config,
                               ModelGradient* grad);

struct TrainStats {
  std::vector<double> epoch_loss;
};

/// Adagrad over shuffled mini-batches of the training split. Deterministic for a given seed.
EmbeddingModel train(const KnowledgeGraph& kg, const TrainConfig& config, TrainStats* stats = nullptr);

/// Mean reciprocal tail rank over `triplets`, filtering other known tails of
/// the same (h, r) in `filter` splits, ties counted as half.
double link_prediction_mrr(const EmbeddingModel& model, std::span<const Triplet> triplets, const KnowledgeGraph& kg,
                           SplitSet filter);

}  // namespace calq

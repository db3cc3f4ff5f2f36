#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "calq/fuzzy_engine.hpp"
#include "calq/kgc_model.hpp"
#include "calq/query_lang.hpp"

namespace calq {

/// min(n * softmax(scores), 1), softmax computed with max subtraction.
std::vector<double> normalize_scores(std::span<const double> scores, double n);

/// min(w * row, 1) componentwise.
std::vector<double> adapt_row(std::span<const double> normalized, double w);

/// Softmax-normalized scorer. N(h, r) is the training tail count of (h, r),
/// falling back to alpha for unseen pairs.
class NormalizedScorer {
 public:
  NormalizedScorer(const EmbeddingModel& model, const KnowledgeGraph& kg, double alpha, bool cache_rows = true);

  const EmbeddingModel& model() const { return model_; }
  const KnowledgeGraph& graph() const { return kg_; }
  double alpha() const { return alpha_; }
  std::size_t num_entities() const { return kg_.num_entities(); }
  std::size_t num_relations() const { return kg_.num_relations(); }

  double scale(EntityId h, RelationId r) const;
  /// f^(h, r, :). Shared, immutable; cached when caching is enabled.
  std::shared_ptr<const std::vector<double>> row(EntityId h, RelationId r) const;

 private:
  const EmbeddingModel& model_;
  const KnowledgeGraph& kg_;
  double alpha_;
  bool cache_rows_;
  mutable std::shared_mutex mutex_;
  mutable std::unordered_map<std::uint64_t, std::shared_ptr<const std::vector<double>>> cache_;
};

/// Per-(h, r) positive scale W = exp(theta); theta = 0 gives the identity.
class AdaptationMatrix {
 public:
  AdaptationMatrix() = default;
  AdaptationMatrix(std::size_t num_entities, std::size_t num_relations);

  std::size_t num_entities() const { return entities_; }
  std::size_t num_relations() const { return relations_; }
  double theta(EntityId h, RelationId r) const { return theta_[index(h, r)]; }
  double& theta(EntityId h, RelationId r) { return theta_[index(h, r)]; }
  double weight(EntityId h, RelationId r) const;
  std::vector<double>& thetas() { return theta_; }
  const std::vector<double>& thetas() const { return theta_; }
  std::size_t index(EntityId h, RelationId r) const { return std::size_t{h} * relations_ + r; }

  void save(const std::filesystem::path& path) const;
  static AdaptationMatrix load(const std::filesystem::path& path);

  bool operator==(const AdaptationMatrix&) const = default;

 private:
  std::size_t entities_ = 0;
  std::size_t relations_ = 0;
  std::vector<double> theta_;
};

enum class AblationMode : std::uint8_t { s12, s123, s1234 };

std::string_view to_string(AblationMode mode);
/// Accepts S12, S123, S1234 (case-insensitive). Throws std::invalid_argument.
AblationMode parse_ablation_mode(std::string_view name);

/// Row provider for the three ablation settings:
///   s12    f^              (normalized only)
///   s123   min(W f^, 1)    (adapted)
///   s1234  adapted rows with train and validation tails pinned to 1
class CalibratedProvider final : public RowProvider {
 public:
  CalibratedProvider(const NormalizedScorer& scorer, const AdaptationMatrix* weights, AblationMode mode);

  std::size_t num_entities() const override { return scorer_.num_entities(); }
  std::size_t num_relations() const override { return scorer_.num_relations(); }
  Row row(EntityId head, RelationId relation) const override;
  AblationMode mode() const { return mode_; }

 private:
  const NormalizedScorer& scorer_;
  const AdaptationMatrix* weights_;
  AblationMode mode_;
};

/// `weights` may be null for s12 (and is treated as W = 1 for the other modes).
std::unique_ptr<CalibratedProvider> ablation_provider(AblationMode mode, const NormalizedScorer& scorer,
                                                      const AdaptationMatrix* weights);

/// The fully calibrated provider (all four steps).
std::unique_ptr<CalibratedProvider> finalize(const NormalizedScorer& scorer, const AdaptationMatrix& weights);

struct CalibrationConfig {
  double alpha = 0.1;
  double learning_rate = 0.001;
  std::size_t epochs = 5;
  /// queries per batch
  std::size_t batch_size = 1000;
  std::vector<std::string> query_types = {"1p", "2i", "3i", "2in", "3in"};
  double log_floor = 1e-10;
  double beta1 = 0.9;
  double beta2 = 0.999;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Binary cross-entropy style loss over the answer set and its complement:
///   -mean_{i in A} log a_i - mean_{i not in A} log(1 - a_i)
/// with log arguments clamped to >= floor. Writes d(loss)/d(a) when requested.
double answer_loss(const MembershipVector& prediction, std::span<const EntityId> answers_sorted, double floor,
                   std::vector<double>* adjoint);

/// Loss of one query under min(W f^, 1) rows and its gradient w.r.t. theta,
/// accumulated (scaled by `scale`) into `theta_grad` keyed by AdaptationMatrix::index.
double query_loss_and_gradient(const NormalizedScorer& scorer, const AdaptationMatrix& weights,
                               const QueryGraph& query, std::span<const EntityId> answers_sorted, double floor,
                               std::unordered_map<std::size_t, double>* theta_grad, double scale = 1.0);

struct AdaptReport {
  std::vector<double> epoch_loss;
  std::size_t steps = 0;
  std::size_t queries_used = 0;
};

class CalibrationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Fits theta with Adam on mini-batches of training queries whose structure is
/// listed in config.query_types. Answer sets are easy union hard.
AdaptationMatrix adapt(const NormalizedScorer& scorer, std::span<const QueryRecord> training,
                       const CalibrationConfig& config, AdaptReport* report = nullptr);

}  // namespace calq

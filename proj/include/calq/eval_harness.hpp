#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "calq/kg_store.hpp"
#include "calq/membership.hpp"
#include "calq/query_lang.hpp"

namespace calq {

/// Classical set semantics over the edges of `splits`. Sorted result.
std::vector<EntityId> brute_force_answers(const QueryGraph& graph, const KnowledgeGraph& kg, SplitSet splits);

struct AnswerSplit {
  std::vector<EntityId> easy;
  std::vector<EntityId> hard;
};

/// Easy/hard answers for queries targeting one split:
///   test        easy over train+valid edges, hard = all-edge answers minus easy
///   validation  easy over train edges,       hard = train+valid answers minus easy
///   train       easy over train edges,       hard empty
/// Easy answers are intersected with the full answer set, so easy and hard
/// partition it even when negation makes the answers shrink as edges are added.
AnswerSplit split_answers(const QueryGraph& graph, const KnowledgeGraph& kg, Split target = Split::test);

struct GenerationConfig {
  /// Upper bound on |easy| + |hard| for a kept query.
  std::size_t max_answers = 100;
  /// Sampling attempts allowed per requested query.
  std::size_t attempts_per_query = 200;
};

class SamplingExhausted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Rejection-samples `count` distinct queries of one benchmark structure by
/// walking backward from a random answer entity. Walks use train edges for
/// train queries, train+valid for validation queries and all edges for test
/// queries. Deterministic for a given seed.
std::vector<QueryRecord> generate_queries(const KnowledgeGraph& kg, std::string_view structure, std::size_t count,
                                          std::uint64_t seed, Split target = Split::test,
                                          const GenerationConfig& config = {});

/// Filtered rank of answer `t` against the non-answers: 1 + #greater + #ties / 2.
/// `all_answers` must be sorted and contain t.
double rank_hard_answer(std::span<const double> scores, EntityId t, std::span<const EntityId> all_answers);

struct StructureMetrics {
  std::size_t queries = 0;
  std::size_t answers = 0;
  double mrr = 0.0;
  double hits1 = 0.0;
  double hits3 = 0.0;
  double hits10 = 0.0;
};

struct EvalReport {
  std::array<StructureMetrics, kNumStructures> structures{};
  /// Queries that match none of the benchmark structures; not part of the averages.
  StructureMetrics other;
  /// MRR means over the positive and negation structures that have queries.
  double avg_p = 0.0;
  double avg_n = 0.0;

  /// Accepts the 14 structure names and "other"; throws std::invalid_argument otherwise.
  const StructureMetrics& at(std::string_view structure) const;
  /// Header plus one row: avg_p, avg_n and the 14 structure MRRs in percent.
  std::string table() const;
  /// Flat `key = value` lines.
  std::string key_values() const;
};

struct EvalConfig {
  /// 0 means hardware concurrency.
  unsigned threads = 1;
};

/// Evaluates every query over `provider` and ranks its hard answers.
/// Queries without hard answers are skipped.
EvalReport evaluate_run(const RowProvider& provider, std::span<const QueryRecord> records,
                        const EvalConfig& config = {});

}  // namespace calq

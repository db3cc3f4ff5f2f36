#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "calq/membership.hpp"
#include "calq/query_lang.hpp"

namespace calq {

// Fuzzy set operations. Intersection uses the product t-norm, union is its
// De Morgan dual, and projection uses the Goedel t-norm:
//   P_r(e)_j = max_i e_i * X[i, r, j].
// Results are clamped into [0,1] after every operation.

MembershipVector complement(const MembershipVector& e);
MembershipVector intersect(std::span<const MembershipVector* const> operands);
MembershipVector intersect(const std::vector<MembershipVector>& operands);
MembershipVector unite(std::span<const MembershipVector* const> operands);
MembershipVector unite(const std::vector<MembershipVector>& operands);
/// Touches only rows of nonzero entries of `e`; cost O(|V| * support(e)).
MembershipVector project(const MembershipVector& e, RelationId relation, const RowProvider& rows);

/// Adjoint of one tensor entry X[head, relation, tail] touched by the forward pass.
struct EntryAdjoint {
  EntityId head = 0;
  RelationId relation = 0;
  EntityId tail = 0;
  double adjoint = 0.0;
  /// X value seen during the forward pass.
  double value = 0.0;
};

struct Gradients {
  /// One record per (projection node, output entity) with a nonzero adjoint.
  /// The same tensor entry can appear several times; consumers sum.
  std::vector<EntryAdjoint> entries;
  /// dense adjoint per node, indexed like the graph
  std::vector<std::vector<double>> node_adjoints;
};

/// Records a forward pass for reverse-mode differentiation. Single owner; not
/// shareable across concurrent evaluations.
class GradientTape {
 public:
  bool recorded() const { return recorded_; }
  const MembershipVector& value(NodeIndex i) const { return values_.at(i); }
  const QueryGraph& graph() const { return graph_; }
  void clear();

 private:
  friend MembershipVector evaluate(const QueryGraph&, const RowProvider&, GradientTape*);
  friend Gradients backward(const GradientTape&, std::span<const double>);

  struct ProjectionRecord {
    // For every output entity j: the winning input index (lowest on ties), or
    // -1 when no stored tensor entry reached j; and the tensor value used.
    std::vector<std::int64_t> argmax;
    std::vector<double> entry;
  };

  bool recorded_ = false;
  QueryGraph graph_;
  std::vector<NodeIndex> order_;
  std::vector<MembershipVector> values_;
  std::vector<ProjectionRecord> projections_;
};

/// Forward propagation over the computation graph in topological order.
/// When `tape` is non-null the pass is recorded for backward().
MembershipVector evaluate(const QueryGraph& graph, const RowProvider& rows, GradientTape* tape = nullptr);

/// Reverse pass from d(loss)/d(root). The max in projection routes its full
/// adjoint to the lowest-index argmax. Throws std::logic_error without a
/// recorded forward pass.
Gradients backward(const GradientTape& tape, std::span<const double> root_adjoint);

}  // namespace calq

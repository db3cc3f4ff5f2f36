#include "calq/fuzzy_engine.hpp"

#include <algorithm>
#include <stdexcept>

namespace calq {

namespace {

inline double clamp01(double x) { return std::min(std::max(x, 0.0), 1.0); }

void check_dims(std::span<const MembershipVector* const> operands) {
  if (operands.size() < 2) throw std::invalid_argument("set operation needs at least two operands");
  for (const auto* e : operands) {
    if (e->dim() != operands[0]->dim()) throw std::invalid_argument("membership vector length mismatch");
  }
}

// Dense value lookup shared by the dense and sparse paths so both compute
// identical floating-point sequences.
inline double value_at(const MembershipVector& e, std::size_t j) {
  return e.is_sparse() ? e.at(j) : e.values()[j];
}

std::vector<const MembershipVector*> pointers(const std::vector<MembershipVector>& v) {
  std::vector<const MembershipVector*> out;
  out.reserve(v.size());
  for (const auto& e : v) out.push_back(&e);
  return out;
}

std::vector<EntityId> support_union(std::span<const MembershipVector* const> operands) {
  std::vector<EntityId> out;
  for (const auto* e : operands) {
    auto idx = e->sparse_index();
    out.insert(out.end(), idx.begin(), idx.end());
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

MembershipVector project_impl(const MembershipVector& e, RelationId relation, const RowProvider& rows,
                              std::vector<std::int64_t>* argmax, std::vector<double>* entry) {
  const std::size_t d = e.dim();
  if (rows.num_entities() != d) throw std::invalid_argument("row provider dimension mismatch");
  std::vector<double> out(d, 0.0);
  std::vector<std::uint8_t> reached(d, 0);
  if (argmax != nullptr) {
    argmax->assign(d, -1);
    entry->assign(d, 0.0);
  }
  e.for_each_nonzero([&](EntityId i, double ei) {
    Row row = rows.row(i, relation);
    if (row.dense && row.value.size() != d) throw std::runtime_error("provider returned a row of wrong length");
    row.for_each([&](EntityId j, double x) {
      double v = clamp01(ei * x);
      // Strict comparison keeps the lowest input index among ties.
      if (!reached[j] || v > out[j]) {
        reached[j] = 1;
        out[j] = v;
        if (argmax != nullptr) {
          (*argmax)[j] = i;
          (*entry)[j] = x;
        }
      }
    });
  });
  return MembershipVector::from_buffer(std::move(out));
}

}  // namespace

MembershipVector complement(const MembershipVector& e) {
  std::vector<double> out(e.dim());
  if (e.is_sparse()) {
    std::fill(out.begin(), out.end(), 1.0);
    e.for_each_nonzero([&](EntityId i, double x) { out[i] = clamp01(1.0 - x); });
  } else {
    auto v = e.values();
    for (std::size_t j = 0; j < out.size(); ++j) out[j] = clamp01(1.0 - v[j]);
  }
  return MembershipVector::from_buffer(std::move(out));
}

MembershipVector intersect(std::span<const MembershipVector* const> operands) {
  check_dims(operands);
  const std::size_t d = operands[0]->dim();
  const MembershipVector* narrowest = nullptr;
  for (const auto* e : operands) {
    if (e->is_sparse() && (narrowest == nullptr || e->support_size() < narrowest->support_size())) narrowest = e;
  }
  std::vector<double> out(d, 0.0);
  auto product_at = [&](std::size_t j) {
    double p = value_at(*operands[0], j);
    for (std::size_t k = 1; k < operands.size(); ++k) p *= value_at(*operands[k], j);
    out[j] = clamp01(p);
  };
  if (narrowest != nullptr) {
    for (auto j : narrowest->sparse_index()) product_at(j);
  } else {
    for (std::size_t j = 0; j < d; ++j) product_at(j);
  }
  return MembershipVector::from_buffer(std::move(out));
}

MembershipVector intersect(const std::vector<MembershipVector>& operands) {
  auto p = pointers(operands);
  return intersect(std::span<const MembershipVector* const>(p));
}

MembershipVector unite(std::span<const MembershipVector* const> operands) {
  check_dims(operands);
  const std::size_t d = operands[0]->dim();
  bool all_sparse = std::all_of(operands.begin(), operands.end(), [](const auto* e) { return e->is_sparse(); });
  std::vector<double> out(d, 0.0);
  auto union_at = [&](std::size_t j) {
    double p = 1.0 - value_at(*operands[0], j);
    for (std::size_t k = 1; k < operands.size(); ++k) p *= 1.0 - value_at(*operands[k], j);
    out[j] = clamp01(1.0 - p);
  };
  if (all_sparse) {
    for (auto j : support_union(operands)) union_at(j);
  } else {
    for (std::size_t j = 0; j < d; ++j) union_at(j);
  }
  return MembershipVector::from_buffer(std::move(out));
}

MembershipVector unite(const std::vector<MembershipVector>& operands) {
  auto p = pointers(operands);
  return unite(std::span<const MembershipVector* const>(p));
}

MembershipVector project(const MembershipVector& e, RelationId relation, const RowProvider& rows) {
  return project_impl(e, relation, rows, nullptr, nullptr);
}

void GradientTape::clear() {
  recorded_ = false;
  graph_ = QueryGraph();
  order_.clear();
  values_.clear();
  projections_.clear();
}

MembershipVector evaluate(const QueryGraph& graph, const RowProvider& rows, GradientTape* tape) {
  graph.validate();
  const std::size_t d = rows.num_entities();
  auto order = topo_order(graph);
  std::vector<MembershipVector> values(graph.size());
  std::vector<GradientTape::ProjectionRecord> projections(tape != nullptr ? graph.size() : 0);
  std::vector<const MembershipVector*> operands;
  for (NodeIndex i : order) {
    const auto& n = graph.node(i);
    switch (n.kind) {
      case NodeKind::anchor:
        values[i] = MembershipVector::anchor(d, n.symbol);
        break;
      case NodeKind::projection:
        if (n.symbol >= rows.num_relations()) throw std::out_of_range("relation id out of range");
        if (tape != nullptr) {
          auto& rec = projections[i];
          values[i] = project_impl(values[n.children[0]], n.symbol, rows, &rec.argmax, &rec.entry);
        } else {
          values[i] = project(values[n.children[0]], n.symbol, rows);
        }
        break;
      case NodeKind::complement:
        values[i] = complement(values[n.children[0]]);
        break;
      case NodeKind::intersection:
      case NodeKind::union_:
        operands.clear();
        for (auto c : n.children) operands.push_back(&values[c]);
        values[i] = n.kind == NodeKind::intersection ? intersect(std::span<const MembershipVector* const>(operands))
                                                     : unite(std::span<const MembershipVector* const>(operands));
        break;
    }
  }
  MembershipVector result = values[graph.root()];
  if (tape != nullptr) {
    tape->graph_ = graph;
    tape->order_ = std::move(order);
    tape->values_ = std::move(values);
    tape->projections_ = std::move(projections);
    tape->recorded_ = true;
  }
  return result;
}

Gradients backward(const GradientTape& tape, std::span<const double> root_adjoint) {
  if (!tape.recorded_) throw std::logic_error("backward without a recorded forward pass");
  const auto& graph = tape.graph_;
  const std::size_t d = tape.values_[graph.root()].dim();
  if (root_adjoint.size() != d) throw std::invalid_argument("root adjoint has wrong length");

  Gradients grads;
  grads.node_adjoints.assign(graph.size(), {});
  auto adjoint_of = [&](NodeIndex i) -> std::vector<double>& {
    auto& a = grads.node_adjoints[i];
    if (a.empty()) a.assign(d, 0.0);
    return a;
  };
  adjoint_of(graph.root()).assign(root_adjoint.begin(), root_adjoint.end());

  std::vector<std::vector<double>> child_values;
  for (auto it = tape.order_.rbegin(); it != tape.order_.rend(); ++it) {
    const NodeIndex i = *it;
    const auto& n = graph.node(i);
    if (grads.node_adjoints[i].empty() || n.kind == NodeKind::anchor) continue;
    const std::vector<double>& adj = grads.node_adjoints[i];
    switch (n.kind) {
      case NodeKind::anchor:
        break;
      case NodeKind::complement: {
        auto& ca = adjoint_of(n.children[0]);
        for (std::size_t j = 0; j < d; ++j) ca[j] -= adj[j];
        break;
      }
      case NodeKind::projection: {
        const auto& rec = tape.projections_[i];
        const auto& input = tape.values_[n.children[0]];
        auto& ca = adjoint_of(n.children[0]);
        for (std::size_t j = 0; j < d; ++j) {
          if (rec.argmax[j] < 0 || adj[j] == 0.0) continue;
          auto src = static_cast<EntityId>(rec.argmax[j]);
          double ei = input.at(src);
          ca[src] += adj[j] * rec.entry[j];
          grads.entries.push_back({src, n.symbol, static_cast<EntityId>(j), adj[j] * ei, rec.entry[j]});
        }
        break;
      }
      case NodeKind::intersection:
      case NodeKind::union_: {
        const bool is_union = n.kind == NodeKind::union_;
        const std::size_t m = n.children.size();
        child_values.clear();
        for (auto c : n.children) {
          auto v = tape.values_[c].to_dense();
          if (is_union) {
            for (auto& x : v) x = 1.0 - x;
          }
          child_values.push_back(std::move(v));
        }
        for (std::size_t k = 0; k < m; ++k) {
          auto& ca = adjoint_of(n.children[k]);
          for (std::size_t j = 0; j < d; ++j) {
            if (adj[j] == 0.0) continue;
            double p = 1.0;
            for (std::size_t q = 0; q < m; ++q) {
              if (q != k) p *= child_values[q][j];
            }
            ca[j] += adj[j] * p;
          }
        }
        break;
      }
    }
  }
  return grads;
}

}  // namespace calq

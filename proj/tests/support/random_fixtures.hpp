#pragma once

#include <random>
#include <string>
#include <vector>

#include "calq/kg_store.hpp"
#include "calq/query_lang.hpp"

namespace calq::fixtures {

inline Vocabulary numbered(const std::string& prefix, std::size_t n) {
  Vocabulary v;
  for (std::size_t i = 0; i < n; ++i) v.intern(prefix + std::to_string(i));
  return v;
}

/// Random graph over `v` entities and `r` relations; each candidate triplet is
/// present with probability `density` and lands in train (70%), valid (15%) or test.
inline KnowledgeGraph random_kg(std::size_t v, std::size_t r, double density, std::mt19937_64& rng) {
  std::bernoulli_distribution present(density);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Triplet> train;
  std::vector<Triplet> valid;
  std::vector<Triplet> test;
  for (EntityId h = 0; h < v; ++h) {
    for (RelationId rel = 0; rel < r; ++rel) {
      for (EntityId t = 0; t < v; ++t) {
        if (!present(rng)) continue;
        const double x = u(rng);
        (x < 0.7 ? train : (x < 0.85 ? valid : test)).push_back({h, rel, t});
      }
    }
  }
  return KnowledgeGraph(numbered("e", v), numbered("r", r), std::move(train), std::move(valid), std::move(test));
}

namespace detail {

inline NodeIndex random_node(QueryGraph& g, std::size_t v, std::size_t r, int depth, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> kind(0, depth <= 0 ? 0 : 4);
  std::uniform_int_distribution<EntityId> ent(0, static_cast<EntityId>(v - 1));
  std::uniform_int_distribution<RelationId> rel(0, static_cast<RelationId>(r - 1));
  std::uniform_int_distribution<int> arity(2, 3);
  const int k = kind(rng);
  switch (k) {
    case 0:
      return g.add_anchor(ent(rng));
    case 1:
      return g.add_projection(rel(rng), random_node(g, v, r, depth - 1, rng));
    case 2:
      return g.add_complement(random_node(g, v, r, depth - 1, rng));
    case 3:
    case 4: {
      const bool is_and = k == 3;
      std::vector<NodeIndex> kids;
      const int n = arity(rng);
      for (int i = 0; i < n; ++i) kids.push_back(random_node(g, v, r, depth - 1, rng));
      return is_and ? g.add_intersection(std::move(kids)) : g.add_union(std::move(kids));
    }
  }
  return 0;
}

}  // namespace detail

/// Random tree-shaped query with ids below `v` / `r`.
inline QueryGraph random_query(std::size_t v, std::size_t r, int max_depth, std::mt19937_64& rng) {
  QueryGraph g;
  g.set_root(detail::random_node(g, v, r, max_depth, rng));
  return g;
}

/// Template of `structure` with random anchors and relations.
inline QueryGraph random_instance(std::string_view structure, std::size_t v, std::size_t r, std::mt19937_64& rng) {
  QueryGraph g = structure_template(structure);
  std::uniform_int_distribution<EntityId> ent(0, static_cast<EntityId>(v - 1));
  std::uniform_int_distribution<RelationId> rel(0, static_cast<RelationId>(r - 1));
  for (NodeIndex i = 0; i < g.size(); ++i) {
    auto& n = g.mutable_node(i);
    if (n.kind == NodeKind::anchor) n.symbol = ent(rng);
    if (n.kind == NodeKind::projection) n.symbol = rel(rng);
  }
  return g;
}

}  // namespace calq::fixtures

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

enum class NodeKind : std::uint8_t { anchor, projection, complement, intersection, union_ };

using NodeIndex = std::uint32_t;

struct QueryNode {
  NodeKind kind = NodeKind::anchor;
  /// Entity id for anchors, relation id for projections, unused otherwise.
  std::uint32_t symbol = 0;
  std::vector<NodeIndex> children;
};

/// Computation graph of a query: an arena of set-operation nodes with a single
/// root holding the answer set. Nodes may be shared (DAG).
class QueryGraph {
 public:
  QueryGraph() = default;

  NodeIndex add_anchor(EntityId entity);
  NodeIndex add_projection(RelationId relation, NodeIndex child);
  NodeIndex add_complement(NodeIndex child);
  NodeIndex add_intersection(std::vector<NodeIndex> children);
  NodeIndex add_union(std::vector<NodeIndex> children);
  void set_root(NodeIndex root);

  const QueryNode& node(NodeIndex i) const { return nodes_.at(i); }
  std::span<const QueryNode> nodes() const { return nodes_; }
  std::size_t size() const { return nodes_.size(); }
  bool empty() const { return nodes_.empty(); }
  NodeIndex root() const { return root_; }

  /// Checks arity, child indices, and the presence of a root.
  void validate() const;

  /// Builder access for tests that need malformed graphs.
  QueryNode& mutable_node(NodeIndex i) { return nodes_.at(i); }

 private:
  NodeIndex push(QueryNode n);
  std::vector<QueryNode> nodes_;
  NodeIndex root_ = 0;
};

/// Structural equality of the two graphs' trees below their roots.
bool structurally_equal(const QueryGraph& a, const QueryGraph& b);

class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t position, const std::string& what);
  std::size_t position() const { return position_; }

 private:
  std::size_t position_;
};

/// Parses the query DSL:
///
///   node   := anchor | proj | neg | and | or
///   anchor := IDENT
///   proj   := "P" "[" IDENT "]" "(" node ")"
///   neg    := "N" "(" node ")"
///   and    := "I" "(" node ("," node)+ ")"
///   or     := "U" "(" node ("," node)+ ")"
///
/// IDENT is any run of characters other than whitespace and `[](),`. An IDENT
/// of the form `#123` names a raw id. Names resolve against `entities` and
/// `relations`; either may be null, in which case only raw ids are accepted.
QueryGraph parse_query(std::string_view text, const Vocabulary* entities, const Vocabulary* relations);

/// Writes raw `#id` identifiers.
std::string serialize(const QueryGraph& graph);
/// Writes surface names where they are unambiguous, `#id` otherwise.
std::string serialize(const QueryGraph& graph, const Vocabulary& entities, const Vocabulary& relations);

/// Children-before-parents order over the nodes reachable from the root; root last.
/// Throws std::logic_error on a cycle.
std::vector<NodeIndex> topo_order(const QueryGraph& graph);

inline constexpr std::string_view kStructureNames[] = {"1p", "2p", "3p",  "2i",  "3i",  "pi",  "ip", "2u",
                                                       "up", "2in", "3in", "inp", "pin", "pni"};
inline constexpr std::size_t kNumStructures = 14;
inline constexpr std::size_t kNumPositiveStructures = 9;

/// Matches the graph against the 14 benchmark templates; returns "other" on no match.
std::string classify_structure(const QueryGraph& graph);

/// Index into kStructureNames or -1.
int structure_index(std::string_view name);

/// Template instance for `structure` with placeholder anchors/relations (all 0).
QueryGraph structure_template(std::string_view structure);

struct QueryRecord {
  QueryGraph query;
  std::string structure;
  std::vector<EntityId> easy_answers;  // sorted
  std::vector<EntityId> hard_answers;  // sorted, disjoint from easy
};

/// Line format `<dsl><TAB><easy-csv><TAB><hard-csv>`, answers as integer entity ids.
std::vector<QueryRecord> read_query_file(const std::filesystem::path& path, const Vocabulary* entities,
                                         const Vocabulary* relations);
std::vector<QueryRecord> parse_query_lines(std::string_view text, const std::string& source,
                                           const Vocabulary* entities, const Vocabulary* relations);
void write_query_file(const std::filesystem::path& path, std::span<const QueryRecord> records,
                      const Vocabulary* entities, const Vocabulary* relations);
std::string format_query_line(const QueryRecord& record, const Vocabulary* entities, const Vocabulary* relations);

}  // namespace calq

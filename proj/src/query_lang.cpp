#include "calq/query_lang.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace calq {

NodeIndex QueryGraph::push(QueryNode n) {
  nodes_.push_back(std::move(n));
  root_ = static_cast<NodeIndex>(nodes_.size() - 1);
  return root_;
}

NodeIndex QueryGraph::add_anchor(EntityId entity) { return push({NodeKind::anchor, entity, {}}); }

NodeIndex QueryGraph::add_projection(RelationId relation, NodeIndex child) {
  return push({NodeKind::projection, relation, {child}});
}

NodeIndex QueryGraph::add_complement(NodeIndex child) { return push({NodeKind::complement, 0, {child}}); }

NodeIndex QueryGraph::add_intersection(std::vector<NodeIndex> children) {
  if (children.size() < 2) throw std::invalid_argument("intersection needs at least two operands");
  return push({NodeKind::intersection, 0, std::move(children)});
}

NodeIndex QueryGraph::add_union(std::vector<NodeIndex> children) {
  if (children.size() < 2) throw std::invalid_argument("union needs at least two operands");
  return push({NodeKind::union_, 0, std::move(children)});
}

void QueryGraph::set_root(NodeIndex root) {
  if (root >= nodes_.size()) throw std::out_of_range("root index");
  root_ = root;
}

void QueryGraph::validate() const {
  if (nodes_.empty()) throw std::invalid_argument("empty query graph");
  if (root_ >= nodes_.size()) throw std::invalid_argument("root index out of range");
  for (const auto& n : nodes_) {
    for (auto c : n.children) {
      if (c >= nodes_.size()) throw std::invalid_argument("child index out of range");
    }
    switch (n.kind) {
      case NodeKind::anchor:
        if (!n.children.empty()) throw std::invalid_argument("anchor with children");
        break;
      case NodeKind::projection:
      case NodeKind::complement:
        if (n.children.size() != 1) throw std::invalid_argument("unary node needs exactly one child");
        break;
      case NodeKind::intersection:
      case NodeKind::union_:
        if (n.children.size() < 2) throw std::invalid_argument("n-ary node needs at least two children");
        break;
    }
  }
  (void)topo_order(*this);
}

namespace {

bool equal_below(const QueryGraph& a, NodeIndex ia, const QueryGraph& b, NodeIndex ib) {
  const auto& na = a.node(ia);
  const auto& nb = b.node(ib);
  if (na.kind != nb.kind || na.children.size() != nb.children.size()) return false;
  if ((na.kind == NodeKind::anchor || na.kind == NodeKind::projection) && na.symbol != nb.symbol) return false;
  for (std::size_t i = 0; i < na.children.size(); ++i) {
    if (!equal_below(a, na.children[i], b, nb.children[i])) return false;
  }
  return true;
}

}  // namespace

bool structurally_equal(const QueryGraph& a, const QueryGraph& b) {
  if (a.empty() || b.empty()) return a.empty() && b.empty();
  return equal_below(a, a.root(), b, b.root());
}

ParseError::ParseError(std::size_t position, const std::string& what)
    : std::runtime_error("parse error at " + std::to_string(position) + ": " + what), position_(position) {}

namespace {

bool is_delimiter(char c) {
  return std::isspace(static_cast<unsigned char>(c)) || c == '[' || c == ']' || c == '(' || c == ')' || c == ',';
}

class Parser {
 public:
  Parser(std::string_view text, const Vocabulary* entities, const Vocabulary* relations)
      : text_(text), entities_(entities), relations_(relations) {}

  QueryGraph run() {
    skip_space();
    if (pos_ >= text_.size()) throw ParseError(pos_, "empty query");
    NodeIndex root = parse_node();
    skip_space();
    if (pos_ != text_.size()) throw ParseError(pos_, "unexpected trailing input");
    graph_.set_root(root);
    return std::move(graph_);
  }

 private:
  void skip_space() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  bool peek(char c) {
    skip_space();
    return pos_ < text_.size() && text_[pos_] == c;
  }

  void expect(char c) {
    if (!peek(c)) {
      std::string msg = std::string("expected '") + c + "'";
      if (pos_ < text_.size()) msg += std::string(", found '") + text_[pos_] + "'";
      throw ParseError(pos_, msg);
    }
    ++pos_;
  }

  std::string_view ident() {
    skip_space();
    std::size_t start = pos_;
    while (pos_ < text_.size() && !is_delimiter(text_[pos_])) ++pos_;
    if (start == pos_) {
      throw ParseError(start, pos_ < text_.size() ? std::string("unexpected '") + text_[pos_] + "'"
                                                  : std::string("unexpected end of input"));
    }
    return text_.substr(start, pos_ - start);
  }

  std::uint32_t resolve(std::string_view name, std::size_t at, const Vocabulary* vocab, const char* kind) {
    if (name.size() > 1 && name[0] == '#') {
      std::uint32_t id = 0;
      auto digits = name.substr(1);
      auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), id);
      if (ec == std::errc() && ptr == digits.data() + digits.size()) {
        if (vocab != nullptr && id >= vocab->size()) {
          throw ParseError(at, std::string(kind) + " id out of range: " + std::string(name));
        }
        return id;
      }
    }
    if (vocab != nullptr) {
      auto id = vocab->find(name);
      if (id >= 0) return static_cast<std::uint32_t>(id);
    }
    throw ParseError(at, std::string("unknown ") + kind + " '" + std::string(name) + "'");
  }

  NodeIndex parse_node() {
    skip_space();
    const std::size_t at = pos_;
    auto head = ident();
    if (head == "P" && peek('[')) {
      ++pos_;
      skip_space();
      const std::size_t rel_at = pos_;
      auto rel = resolve(ident(), rel_at, relations_, "relation");
      expect(']');
      expect('(');
      auto child = parse_node();
      expect(')');
      return graph_.add_projection(rel, child);
    }
    if (head == "N" && peek('(')) {
      ++pos_;
      auto child = parse_node();
      expect(')');
      return graph_.add_complement(child);
    }
    if ((head == "I" || head == "U") && peek('(')) {
      ++pos_;
      std::vector<NodeIndex> children{parse_node()};
      while (peek(',')) {
        ++pos_;
        children.push_back(parse_node());
      }
      expect(')');
      if (children.size() < 2) {
        throw ParseError(at, std::string(head) + " needs at least two operands");
      }
      return head == "I" ? graph_.add_intersection(std::move(children)) : graph_.add_union(std::move(children));
    }
    return graph_.add_anchor(resolve(head, at, entities_, "entity"));
  }

  std::string_view text_;
  const Vocabulary* entities_;
  const Vocabulary* relations_;
  std::size_t pos_ = 0;
  QueryGraph graph_;
};

std::string ident_for(std::uint32_t id, const Vocabulary* vocab) {
  if (vocab != nullptr && id < vocab->size()) {
    const auto& name = vocab->name(id);
    bool safe = !name.empty() && name[0] != '#' &&
                std::none_of(name.begin(), name.end(), [](char c) { return is_delimiter(c); });
    if (safe) return name;
  }
  return "#" + std::to_string(id);
}

void write_node(const QueryGraph& g, NodeIndex i, const Vocabulary* ents, const Vocabulary* rels, std::string& out) {
  const auto& n = g.node(i);
  switch (n.kind) {
    case NodeKind::anchor:
      out += ident_for(n.symbol, ents);
      return;
    case NodeKind::projection:
      out += "P[";
      out += ident_for(n.symbol, rels);
      out += "](";
      write_node(g, n.children[0], ents, rels, out);
      out += ')';
      return;
    case NodeKind::complement:
      out += "N(";
      write_node(g, n.children[0], ents, rels, out);
      out += ')';
      return;
    case NodeKind::intersection:
    case NodeKind::union_:
      out += n.kind == NodeKind::intersection ? "I(" : "U(";
      for (std::size_t c = 0; c < n.children.size(); ++c) {
        if (c > 0) out += ',';
        write_node(g, n.children[c], ents, rels, out);
      }
      out += ')';
      return;
  }
}

}  // namespace

QueryGraph parse_query(std::string_view text, const Vocabulary* entities, const Vocabulary* relations) {
  return Parser(text, entities, relations).run();
}

std::string serialize(const QueryGraph& graph) {
  std::string out;
  if (!graph.empty()) write_node(graph, graph.root(), nullptr, nullptr, out);
  return out;
}

std::string serialize(const QueryGraph& graph, const Vocabulary& entities, const Vocabulary& relations) {
  std::string out;
  if (!graph.empty()) write_node(graph, graph.root(), &entities, &relations, out);
  return out;
}

std::vector<NodeIndex> topo_order(const QueryGraph& graph) {
  std::vector<NodeIndex> order;
  if (graph.empty()) return order;
  enum : std::uint8_t { unseen, open, done };
  std::vector<std::uint8_t> state(graph.size(), unseen);
  // Explicit stack of (node, next child) to keep deep chains off the call stack.
  std::vector<std::pair<NodeIndex, std::size_t>> stack{{graph.root(), 0}};
  state[graph.root()] = open;
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    const auto& children = graph.node(node).children;
    if (next < children.size()) {
      NodeIndex c = children[next++];
      if (c >= graph.size()) throw std::out_of_range("child index out of range");
      if (state[c] == open) throw std::logic_error("cycle in query graph");
      if (state[c] == unseen) {
        state[c] = open;
        stack.emplace_back(c, 0);
      }
      continue;
    }
    state[node] = done;
    order.push_back(node);
    stack.pop_back();
  }
  return order;
}

namespace {

std::string signature(const QueryGraph& g, NodeIndex i) {
  const auto& n = g.node(i);
  switch (n.kind) {
    case NodeKind::anchor: return "e";
    case NodeKind::projection: return "p(" + signature(g, n.children[0]) + ")";
    case NodeKind::complement: return "n(" + signature(g, n.children[0]) + ")";
    case NodeKind::intersection:
    case NodeKind::union_: {
      std::vector<std::string> parts;
      for (auto c : n.children) parts.push_back(signature(g, c));
      std::sort(parts.begin(), parts.end());
      std::string out = n.kind == NodeKind::intersection ? "i(" : "u(";
      for (std::size_t k = 0; k < parts.size(); ++k) {
        if (k > 0) out += ',';
        out += parts[k];
      }
      return out + ")";
    }
  }
  return {};
}

constexpr std::string_view kTemplates[kNumStructures] = {
    "P[#0](#0)",
    "P[#0](P[#0](#0))",
    "P[#0](P[#0](P[#0](#0)))",
    "I(P[#0](#0),P[#0](#0))",
    "I(P[#0](#0),P[#0](#0),P[#0](#0))",
    "I(P[#0](P[#0](#0)),P[#0](#0))",
    "P[#0](I(P[#0](#0),P[#0](#0)))",
    "U(P[#0](#0),P[#0](#0))",
    "P[#0](U(P[#0](#0),P[#0](#0)))",
    "I(P[#0](#0),N(P[#0](#0)))",
    "I(P[#0](#0),P[#0](#0),N(P[#0](#0)))",
    "P[#0](I(P[#0](#0),N(P[#0](#0))))",
    "I(P[#0](P[#0](#0)),N(P[#0](#0)))",
    "I(N(P[#0](P[#0](#0))),P[#0](#0))",
};

const std::vector<std::string>& template_signatures() {
  static const std::vector<std::string> sigs = [] {
    std::vector<std::string> out;
    for (auto t : kTemplates) {
      auto g = parse_query(t, nullptr, nullptr);
      out.push_back(signature(g, g.root()));
    }
    return out;
  }();
  return sigs;
}

}  // namespace

std::string classify_structure(const QueryGraph& graph) {
  if (graph.empty()) return "other";
  auto sig = signature(graph, graph.root());
  const auto& sigs = template_signatures();
  for (std::size_t i = 0; i < kNumStructures; ++i) {
    if (sigs[i] == sig) return std::string(kStructureNames[i]);
  }
  return "other";
}

int structure_index(std::string_view name) {
  for (std::size_t i = 0; i < kNumStructures; ++i) {
    if (kStructureNames[i] == name) return static_cast<int>(i);
  }
  return -1;
}

QueryGraph structure_template(std::string_view structure) {
  int idx = structure_index(structure);
  if (idx < 0) throw std::invalid_argument("unknown structure '" + std::string(structure) + "'");
  return parse_query(kTemplates[idx], nullptr, nullptr);
}

namespace {

std::vector<EntityId> parse_csv(std::string_view field, const std::string& source, std::size_t lineno,
                                const Vocabulary* entities) {
  std::vector<EntityId> out;
  std::size_t start = 0;
  while (start < field.size()) {
    auto comma = field.find(',', start);
    auto item = field.substr(start, comma == std::string_view::npos ? field.size() - start : comma - start);
    start = comma == std::string_view::npos ? field.size() : comma + 1;
    while (!item.empty() && std::isspace(static_cast<unsigned char>(item.front()))) item.remove_prefix(1);
    while (!item.empty() && std::isspace(static_cast<unsigned char>(item.back()))) item.remove_suffix(1);
    if (item.empty()) continue;
    EntityId id = 0;
    auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), id);
    if (ec != std::errc() || ptr != item.data() + item.size()) {
      throw FormatError(source, lineno, "bad answer id '" + std::string(item) + "'");
    }
    if (entities != nullptr && id >= entities->size()) {
      throw FormatError(source, lineno, "answer id out of range: " + std::string(item));
    }
    out.push_back(id);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::string to_csv(const std::vector<EntityId>& ids) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i > 0) out += ',';
    out += std::to_string(ids[i]);
  }
  return out;
}

}  // namespace

std::vector<QueryRecord> parse_query_lines(std::string_view text, const std::string& source,
                                           const Vocabulary* entities, const Vocabulary* relations) {
  std::vector<QueryRecord> records;
  std::size_t pos = 0;
  std::size_t lineno = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(pos, end - pos);
    pos = end + 1;
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    auto t1 = line.find('\t');
    auto t2 = t1 == std::string_view::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 != std::string_view::npos && line.find('\t', t2 + 1) != std::string_view::npos) {
      throw FormatError(source, lineno, "too many fields");
    }
    QueryRecord rec;
    try {
      rec.query = parse_query(line.substr(0, t1), entities, relations);
    } catch (const ParseError& e) {
      throw FormatError(source, lineno, e.what());
    }
    if (t1 != std::string_view::npos) {
      auto easy = line.substr(t1 + 1, t2 == std::string_view::npos ? std::string_view::npos : t2 - t1 - 1);
      rec.easy_answers = parse_csv(easy, source, lineno, entities);
      if (t2 != std::string_view::npos) rec.hard_answers = parse_csv(line.substr(t2 + 1), source, lineno, entities);
    }
    for (auto h : rec.hard_answers) {
      if (std::binary_search(rec.easy_answers.begin(), rec.easy_answers.end(), h)) {
        throw FormatError(source, lineno, "easy and hard answers overlap");
      }
    }
    rec.structure = classify_structure(rec.query);
    records.push_back(std::move(rec));
  }
  return records;
}

std::vector<QueryRecord> read_query_file(const std::filesystem::path& path, const Vocabulary* entities,
                                         const Vocabulary* relations) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open query file: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_query_lines(buf.str(), path.string(), entities, relations);
}

std::string format_query_line(const QueryRecord& record, const Vocabulary* entities, const Vocabulary* relations) {
  std::string dsl = entities != nullptr && relations != nullptr ? serialize(record.query, *entities, *relations)
                                                                : serialize(record.query);
  return dsl + '\t' + to_csv(record.easy_answers) + '\t' + to_csv(record.hard_answers);
}

void write_query_file(const std::filesystem::path& path, std::span<const QueryRecord> records,
                      const Vocabulary* entities, const Vocabulary* relations) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write query file: " + path.string());
  for (const auto& r : records) out << format_query_line(r, entities, relations) << '\n';
}

}  // namespace calq

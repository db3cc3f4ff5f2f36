#include "calq/kg_store.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

namespace calq {

std::uint32_t Vocabulary::intern(std::string_view name) {
  std::string key(name);
  auto it = ids_.find(key);
  if (it != ids_.end()) return it->second;
  auto id = static_cast<std::uint32_t>(names_.size());
  names_.push_back(key);
  ids_.emplace(std::move(key), id);
  return id;
}

std::int64_t Vocabulary::find(std::string_view name) const {
  auto it = ids_.find(std::string(name));
  return it == ids_.end() ? -1 : static_cast<std::int64_t>(it->second);
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write vocabulary: " + path.string());
  for (std::size_t i = 0; i < names_.size(); ++i) out << i << '\t' << names_[i] << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read vocabulary: " + path.string());
  Vocabulary vocab;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos) throw FormatError(path.string(), lineno, "expected id<TAB>surface");
    std::size_t id = 0;
    try {
      id = std::stoul(line.substr(0, tab));
    } catch (const std::exception&) {
      throw FormatError(path.string(), lineno, "bad id");
    }
    if (id != vocab.size()) throw FormatError(path.string(), lineno, "ids must be dense and ordered");
    auto name = line.substr(tab + 1);
    if (vocab.find(name) >= 0) throw FormatError(path.string(), lineno, "duplicate surface '" + name + "'");
    vocab.intern(name);
  }
  return vocab;
}

FormatError::FormatError(const std::string& file, std::size_t line, const std::string& what)
    : std::runtime_error(file + ":" + std::to_string(line) + ": " + what), line_(line) {}

LoadResult parse_split(std::string_view text, const std::string& source, Vocabulary& entities,
                       Vocabulary& relations, VocabPolicy policy) {
  LoadResult result;
  std::set<Triplet> seen;
  std::size_t lineno = 0;
  std::size_t pos = 0;
  auto resolve = [&](Vocabulary& vocab, std::string_view name, const char* kind) -> std::uint32_t {
    if (policy == VocabPolicy::build) return vocab.intern(name);
    auto id = vocab.find(name);
    if (id < 0) throw FormatError(source, lineno, std::string("unknown ") + kind + " '" + std::string(name) + "'");
    return static_cast<std::uint32_t>(id);
  };
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;

    std::string_view fields[3];
    std::size_t nfields = 0;
    std::size_t start = 0;
    while (true) {
      auto tab = line.find('\t', start);
      if (nfields == 3) {
        nfields = 4;
        break;
      }
      fields[nfields++] = line.substr(start, tab == std::string_view::npos ? line.size() - start : tab - start);
      if (tab == std::string_view::npos) break;
      start = tab + 1;
    }
    if (nfields != 3) throw FormatError(source, lineno, "expected head<TAB>relation<TAB>tail");
    for (auto f : fields) {
      if (f.empty()) throw FormatError(source, lineno, "empty field");
    }
    Triplet t{resolve(entities, fields[0], "entity"), resolve(relations, fields[1], "relation"),
              resolve(entities, fields[2], "entity")};
    if (!seen.insert(t).second) {
      ++result.duplicates_dropped;
      continue;
    }
    result.triplets.push_back(t);
  }
  if (result.duplicates_dropped > 0) {
    std::cerr << "warning: " << source << ": dropped " << result.duplicates_dropped
              << " duplicate triplet(s)\n";
  }
  return result;
}

LoadResult load_split(const std::filesystem::path& path, Vocabulary& entities, Vocabulary& relations,
                      VocabPolicy policy) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open triplet file: " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_split(buffer.str(), path.string(), entities, relations, policy);
}

AdjacencyIndex::AdjacencyIndex(std::vector<Triplet> triplets) : sorted_(std::move(triplets)) {
  std::sort(sorted_.begin(), sorted_.end());
  tails_.reserve(sorted_.size());
  for (const auto& t : sorted_) tails_.push_back(t.tail);
}

std::span<const EntityId> AdjacencyIndex::tails(EntityId head, RelationId relation) const {
  auto key_less = [](const Triplet& t, std::pair<EntityId, RelationId> k) {
    return std::pair(t.head, t.relation) < k;
  };
  auto key = std::pair(head, relation);
  auto lo = std::lower_bound(sorted_.begin(), sorted_.end(), key, key_less);
  auto hi = lo;
  while (hi != sorted_.end() && hi->head == head && hi->relation == relation) ++hi;
  auto offset = static_cast<std::size_t>(lo - sorted_.begin());
  return {tails_.data() + offset, static_cast<std::size_t>(hi - lo)};
}

bool AdjacencyIndex::contains(const Triplet& t) const {
  return std::binary_search(sorted_.begin(), sorted_.end(), t);
}

namespace {

std::size_t dedupe(std::vector<Triplet>& triplets) {
  std::set<Triplet> seen;
  std::vector<Triplet> kept;
  kept.reserve(triplets.size());
  for (const auto& t : triplets) {
    if (seen.insert(t).second) kept.push_back(t);
  }
  std::size_t dropped = triplets.size() - kept.size();
  triplets = std::move(kept);
  return dropped;
}

}  // namespace

KnowledgeGraph::KnowledgeGraph(Vocabulary entities, Vocabulary relations, std::vector<Triplet> train,
                               std::vector<Triplet> validation, std::vector<Triplet> test)
    : entities_(std::move(entities)),
      relations_(std::move(relations)),
      train_(std::move(train)),
      validation_(std::move(validation)),
      test_(std::move(test)) {
  duplicates_dropped_ = dedupe(train_) + dedupe(validation_) + dedupe(test_);
  validate_and_index();
}

void KnowledgeGraph::validate_and_index() {
  for (const auto* split : {&train_, &validation_, &test_}) {
    for (const auto& t : *split) {
      if (t.head >= entities_.size() || t.tail >= entities_.size() || t.relation >= relations_.size()) {
        throw std::out_of_range("triplet id outside vocabulary");
      }
    }
  }
  train_index_ = AdjacencyIndex(train_);
  validation_index_ = AdjacencyIndex(validation_);
  test_index_ = AdjacencyIndex(test_);
}

KnowledgeGraph KnowledgeGraph::load(const std::filesystem::path& train, const std::filesystem::path& validation,
                                    const std::filesystem::path& test) {
  Vocabulary entities;
  Vocabulary relations;
  auto tr = load_split(train, entities, relations, VocabPolicy::build);
  LoadResult va;
  LoadResult te;
  if (!validation.empty()) va = load_split(validation, entities, relations, VocabPolicy::build);
  if (!test.empty()) te = load_split(test, entities, relations, VocabPolicy::build);
  KnowledgeGraph kg(std::move(entities), std::move(relations), std::move(tr.triplets), std::move(va.triplets),
                    std::move(te.triplets));
  kg.duplicates_dropped_ += tr.duplicates_dropped + va.duplicates_dropped + te.duplicates_dropped;
  return kg;
}

const std::vector<Triplet>& KnowledgeGraph::split(Split s) const {
  switch (s) {
    case Split::train: return train_;
    case Split::validation: return validation_;
    case Split::test: return test_;
  }
  throw std::invalid_argument("bad split");
}

std::span<const EntityId> KnowledgeGraph::tails(EntityId head, RelationId relation, Split s) const {
  switch (s) {
    case Split::train: return train_index_.tails(head, relation);
    case Split::validation: return validation_index_.tails(head, relation);
    case Split::test: return test_index_.tails(head, relation);
  }
  throw std::invalid_argument("bad split");
}

std::size_t KnowledgeGraph::tail_count(EntityId head, RelationId relation) const {
  return train_index_.tails(head, relation).size();
}

std::vector<EntityId> KnowledgeGraph::neighbors(EntityId head, RelationId relation, SplitSet splits) const {
  std::vector<EntityId> out;
  for (Split s : {Split::train, Split::validation, Split::test}) {
    if (!splits.contains(s)) continue;
    auto t = tails(head, relation, s);
    out.insert(out.end(), t.begin(), t.end());
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

bool KnowledgeGraph::contains(const Triplet& t, SplitSet splits) const {
  return (splits.contains(Split::train) && train_index_.contains(t)) ||
         (splits.contains(Split::validation) && validation_index_.contains(t)) ||
         (splits.contains(Split::test) && test_index_.contains(t));
}

RelationId KnowledgeGraph::inverse_of(RelationId r) const {
  if (!has_inverses()) throw std::logic_error("graph has no inverse relations");
  if (r >= relations_.size()) throw std::out_of_range("relation id");
  return r < inverse_offset_ ? static_cast<RelationId>(r + inverse_offset_)
                             : static_cast<RelationId>(r - inverse_offset_);
}

KnowledgeGraph add_inverse_relations(const KnowledgeGraph& kg) {
  if (kg.has_inverses()) throw std::logic_error("inverses already present");
  Vocabulary relations = kg.relations_;
  const auto base = static_cast<RelationId>(relations.size());
  for (RelationId r = 0; r < base; ++r) {
    auto name = kg.relations_.name(r) + std::string(kInverseSuffix);
    if (relations.find(name) >= 0) throw std::logic_error("inverse name collides: " + name);
    relations.intern(name);
  }
  auto augment = [base](const std::vector<Triplet>& in) {
    std::vector<Triplet> out = in;
    out.reserve(in.size() * 2);
    for (const auto& t : in) out.push_back({t.tail, static_cast<RelationId>(t.relation + base), t.head});
    return out;
  };
  KnowledgeGraph result(kg.entities_, std::move(relations), augment(kg.train_), augment(kg.validation_),
                        augment(kg.test_));
  result.inverse_offset_ = base;
  result.inverses_ = true;
  result.duplicates_dropped_ = kg.duplicates_dropped_;
  return result;
}

}  // namespace calq

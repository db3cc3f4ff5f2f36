#include "calq/eval_harness.hpp"

#include <algorithm>
#include <cstdio>
#include <exception>
#include <iomanip>
#include <random>
#include <set>
#include <sstream>
#include <thread>
#include <unordered_set>

#include "calq/fuzzy_engine.hpp"

namespace calq {

namespace {

constexpr Split kSplits[] = {Split::train, Split::validation, Split::test};

using Mask = std::vector<std::uint8_t>;

std::vector<EntityId> to_list(const Mask& m) {
  std::vector<EntityId> out;
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (m[i]) out.push_back(static_cast<EntityId>(i));
  }
  return out;
}

}  // namespace

std::vector<EntityId> brute_force_answers(const QueryGraph& graph, const KnowledgeGraph& kg, SplitSet splits) {
  graph.validate();
  const std::size_t d = kg.num_entities();
  std::vector<Mask> sets(graph.size());
  for (NodeIndex i : topo_order(graph)) {
    const auto& n = graph.node(i);
    Mask out(d, 0);
    switch (n.kind) {
      case NodeKind::anchor:
        if (n.symbol >= d) throw std::out_of_range("anchor id out of range");
        out[n.symbol] = 1;
        break;
      case NodeKind::projection: {
        if (n.symbol >= kg.num_relations()) throw std::out_of_range("relation id out of range");
        const auto& in = sets[n.children[0]];
        for (std::size_t h = 0; h < d; ++h) {
          if (!in[h]) continue;
          for (Split s : kSplits) {
            if (!splits.contains(s)) continue;
            for (auto t : kg.tails(static_cast<EntityId>(h), n.symbol, s)) out[t] = 1;
          }
        }
        break;
      }
      case NodeKind::complement: {
        const auto& in = sets[n.children[0]];
        for (std::size_t j = 0; j < d; ++j) out[j] = in[j] ? 0 : 1;
        break;
      }
      case NodeKind::intersection:
        std::fill(out.begin(), out.end(), 1);
        for (auto c : n.children) {
          for (std::size_t j = 0; j < d; ++j) out[j] &= sets[c][j];
        }
        break;
      case NodeKind::union_:
        for (auto c : n.children) {
          for (std::size_t j = 0; j < d; ++j) out[j] |= sets[c][j];
        }
        break;
    }
    sets[i] = std::move(out);
  }
  return to_list(sets[graph.root()]);
}

AnswerSplit split_answers(const QueryGraph& graph, const KnowledgeGraph& kg, Split target) {
  AnswerSplit out;
  SplitSet easy_edges = SplitSet::known();
  SplitSet full_edges = SplitSet::all();
  if (target == Split::validation) {
    easy_edges = SplitSet::train();
    full_edges = SplitSet::known();
  }
  out.easy = brute_force_answers(graph, kg, target == Split::train ? SplitSet::train() : easy_edges);
  if (target == Split::train) return out;
  auto full = brute_force_answers(graph, kg, full_edges);
  // Negation is not monotone in the edge set: drop easy answers the full graph refutes.
  std::vector<EntityId> easy;
  std::set_intersection(out.easy.begin(), out.easy.end(), full.begin(), full.end(), std::back_inserter(easy));
  out.easy = std::move(easy);
  std::set_difference(full.begin(), full.end(), out.easy.begin(), out.easy.end(), std::back_inserter(out.hard));
  return out;
}

namespace {

struct Incoming {
  EntityId head;
  RelationId relation;
};

class Sampler {
 public:
  Sampler(const KnowledgeGraph& kg, SplitSet edges, std::mt19937_64& rng) : kg_(kg), edges_(edges), rng_(rng) {
    incoming_.resize(kg.num_entities());
    for (Split s : kSplits) {
      if (!edges.contains(s)) continue;
      for (const auto& t : kg.split(s)) incoming_[t.tail].push_back({t.head, t.relation});
    }
    for (std::size_t e = 0; e < incoming_.size(); ++e) {
      if (!incoming_[e].empty()) reachable_.push_back(static_cast<EntityId>(e));
    }
  }

  bool empty() const { return reachable_.empty(); }
  EntityId random_target() { return reachable_[pick(reachable_.size())]; }

  // Fills the template below `i` so that `target` is reachable from it.
  bool instantiate(QueryGraph& g, NodeIndex i, EntityId target) {
    auto& n = g.mutable_node(i);
    switch (n.kind) {
      case NodeKind::anchor:
        n.symbol = target;
        return true;
      case NodeKind::projection: {
        const auto& in = incoming_[target];
        if (in.empty()) return false;
        const auto& edge = in[pick(in.size())];
        n.symbol = edge.relation;
        const NodeIndex child = n.children[0];
        return instantiate(g, child, edge.head);
      }
      case NodeKind::complement:
        // Reached only through an intersection, which picks the target.
        return instantiate(g, n.children[0], target);
      case NodeKind::intersection: {
        const auto children = n.children;
        std::vector<NodeIndex> negated;
        std::vector<EntityId> positive;
        bool first = true;
        for (auto c : children) {
          if (g.node(c).kind == NodeKind::complement) {
            negated.push_back(c);
            continue;
          }
          if (!instantiate(g, c, target)) return false;
          auto answers = subquery_answers(g, c);
          if (first) {
            positive = std::move(answers);
            first = false;
          } else {
            std::vector<EntityId> both;
            std::set_intersection(positive.begin(), positive.end(), answers.begin(), answers.end(),
                                  std::back_inserter(both));
            positive = std::move(both);
          }
        }
        // Each negated branch is rooted at another entity of the positive
        // conjunction so that the negation removes at least one candidate.
        positive.erase(std::remove(positive.begin(), positive.end(), target), positive.end());
        for (auto c : negated) {
          if (positive.empty()) return false;
          if (!instantiate(g, c, positive[pick(positive.size())])) return false;
        }
        return true;
      }
      case NodeKind::union_: {
        const auto children = n.children;
        for (std::size_t k = 0; k < children.size(); ++k) {
          if (!instantiate(g, children[k], k == 0 ? target : random_target())) return false;
        }
        return true;
      }
    }
    return false;
  }

 private:
  std::vector<EntityId> subquery_answers(const QueryGraph& g, NodeIndex i) const {
    QueryGraph sub = g;
    sub.set_root(i);
    return brute_force_answers(sub, kg_, edges_);
  }

  std::size_t pick(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng_); }

  const KnowledgeGraph& kg_;
  SplitSet edges_;
  std::mt19937_64& rng_;
  std::vector<std::vector<Incoming>> incoming_;
  std::vector<EntityId> reachable_;
};

// True when two operands of an intersection or union are the same subquery.
bool has_duplicate_branches(const QueryGraph& g) {
  for (const auto& n : g.nodes()) {
    if (n.kind != NodeKind::intersection && n.kind != NodeKind::union_) continue;
    std::set<std::string> seen;
    for (auto c : n.children) {
      QueryGraph sub = g;
      sub.set_root(c);
      if (!seen.insert(serialize(sub)).second) return true;
    }
  }
  return false;
}

}  // namespace

std::vector<QueryRecord> generate_queries(const KnowledgeGraph& kg, std::string_view structure, std::size_t count,
                                          std::uint64_t seed, Split target, const GenerationConfig& config) {
  const int sidx = structure_index(structure);
  if (sidx < 0) throw std::invalid_argument("unknown query structure '" + std::string(structure) + "'");
  std::vector<QueryRecord> out;
  if (count == 0) return out;
  const SplitSet walk_edges =
      target == Split::train ? SplitSet::train() : (target == Split::validation ? SplitSet::known() : SplitSet::all());
  std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(sidx) + 1);
  Sampler sampler(kg, walk_edges, rng);
  if (sampler.empty()) throw SamplingExhausted("no edges to sample " + std::string(structure) + " queries from");

  const QueryGraph tmpl = structure_template(structure);
  std::unordered_set<std::string> seen;
  const std::size_t budget = count * config.attempts_per_query;
  for (std::size_t attempt = 0; attempt < budget && out.size() < count; ++attempt) {
    QueryGraph g = tmpl;
    if (!sampler.instantiate(g, g.root(), sampler.random_target())) continue;
    if (has_duplicate_branches(g)) continue;
    std::string key = serialize(g);
    if (seen.count(key) != 0) continue;
    auto answers = split_answers(g, kg, target);
    const std::size_t total = answers.easy.size() + answers.hard.size();
    if (total == 0 || total > config.max_answers) continue;
    if (target != Split::train && answers.hard.empty()) continue;
    seen.insert(std::move(key));
    out.push_back({std::move(g), std::string(structure), std::move(answers.easy), std::move(answers.hard)});
  }
  if (out.size() < count) {
    std::ostringstream msg;
    msg << "sampling budget exhausted for " << structure << ": " << out.size() << " of " << count
        << " queries after " << budget << " attempts";
    throw SamplingExhausted(msg.str());
  }
  return out;
}

double rank_hard_answer(std::span<const double> scores, EntityId t, std::span<const EntityId> all_answers) {
  if (t >= scores.size()) throw std::out_of_range("answer id out of range");
  if (!std::binary_search(all_answers.begin(), all_answers.end(), t)) {
    throw std::invalid_argument("ranked entity is not an answer");
  }
  const double st = scores[t];
  std::size_t greater = 0;
  std::size_t ties = 0;
  std::size_t a = 0;
  for (std::size_t v = 0; v < scores.size(); ++v) {
    while (a < all_answers.size() && all_answers[a] < v) ++a;
    if (a < all_answers.size() && all_answers[a] == v) continue;
    if (scores[v] > st) {
      ++greater;
    } else if (scores[v] == st) {
      ++ties;
    }
  }
  return 1.0 + static_cast<double>(greater) + static_cast<double>(ties) / 2.0;
}

const StructureMetrics& EvalReport::at(std::string_view structure) const {
  if (structure == "other") return other;
  const int i = structure_index(structure);
  if (i < 0) throw std::invalid_argument("unknown structure: " + std::string(structure));
  return structures[static_cast<std::size_t>(i)];
}

std::string EvalReport::table() const {
  std::ostringstream out;
  out << std::left << std::setw(7) << "avg_p" << std::setw(7) << "avg_n";
  for (auto name : kStructureNames) out << std::setw(7) << name;
  out << '\n' << std::fixed << std::setprecision(1);
  out << std::setw(7) << avg_p * 100.0 << std::setw(7) << avg_n * 100.0;
  for (const auto& s : structures) {
    if (s.queries == 0) {
      out << std::setw(7) << "-";
    } else {
      out << std::setw(7) << s.mrr * 100.0;
    }
  }
  out << '\n';
  return out.str();
}

std::string EvalReport::key_values() const {
  std::ostringstream out;
  out << std::setprecision(10);
  out << "avg_p = " << avg_p << '\n' << "avg_n = " << avg_n << '\n';
  auto emit = [&](std::string_view name, const StructureMetrics& s) {
    out << name << ".queries = " << s.queries << '\n' << name << ".answers = " << s.answers << '\n';
    out << name << ".mrr = " << s.mrr << '\n' << name << ".hits1 = " << s.hits1 << '\n';
    out << name << ".hits3 = " << s.hits3 << '\n' << name << ".hits10 = " << s.hits10 << '\n';
  };
  for (std::size_t i = 0; i < kNumStructures; ++i) emit(kStructureNames[i], structures[i]);
  if (other.queries > 0) emit("other", other);
  return out.str();
}

namespace {

struct QueryResult {
  bool ranked = false;
  std::size_t answers = 0;
  double mrr = 0.0;
  double hits1 = 0.0;
  double hits3 = 0.0;
  double hits10 = 0.0;
};

QueryResult score_query(const RowProvider& provider, const QueryRecord& rec) {
  QueryResult r;
  if (rec.hard_answers.empty()) return r;
  const auto a = evaluate(rec.query, provider).to_dense();
  std::vector<EntityId> all;
  std::set_union(rec.easy_answers.begin(), rec.easy_answers.end(), rec.hard_answers.begin(), rec.hard_answers.end(),
                 std::back_inserter(all));
  for (auto t : rec.hard_answers) {
    const double rank = rank_hard_answer(a, t, all);
    r.mrr += 1.0 / rank;
    r.hits1 += rank <= 1.0 ? 1.0 : 0.0;
    r.hits3 += rank <= 3.0 ? 1.0 : 0.0;
    r.hits10 += rank <= 10.0 ? 1.0 : 0.0;
  }
  const double n = static_cast<double>(rec.hard_answers.size());
  r.ranked = true;
  r.answers = rec.hard_answers.size();
  r.mrr /= n;
  r.hits1 /= n;
  r.hits3 /= n;
  r.hits10 /= n;
  return r;
}

void accumulate(StructureMetrics& m, const QueryResult& r) {
  ++m.queries;
  m.answers += r.answers;
  m.mrr += r.mrr;
  m.hits1 += r.hits1;
  m.hits3 += r.hits3;
  m.hits10 += r.hits10;
}

void finish(StructureMetrics& m) {
  if (m.queries == 0) return;
  const double n = static_cast<double>(m.queries);
  m.mrr /= n;
  m.hits1 /= n;
  m.hits3 /= n;
  m.hits10 /= n;
}

}  // namespace

EvalReport evaluate_run(const RowProvider& provider, std::span<const QueryRecord> records, const EvalConfig& config) {
  std::vector<QueryResult> results(records.size());
  unsigned threads = config.threads == 0 ? std::max(1u, std::thread::hardware_concurrency()) : config.threads;
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, std::max<std::size_t>(records.size(), 1)));
  std::vector<std::exception_ptr> errors(threads);
  auto work = [&](unsigned w) {
    try {
      for (std::size_t q = w; q < records.size(); q += threads) results[q] = score_query(provider, records[q]);
    } catch (...) {
      errors[w] = std::current_exception();
    }
  };
  if (threads == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < threads; ++w) pool.emplace_back(work, w);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  EvalReport report;
  for (std::size_t q = 0; q < records.size(); ++q) {
    if (!results[q].ranked) continue;
    const int s = structure_index(records[q].structure);
    accumulate(s < 0 ? report.other : report.structures[static_cast<std::size_t>(s)], results[q]);
  }
  for (auto& m : report.structures) finish(m);
  finish(report.other);
  std::size_t np = 0;
  std::size_t nn = 0;
  for (std::size_t i = 0; i < kNumStructures; ++i) {
    const auto& m = report.structures[i];
    if (m.queries == 0) continue;
    if (i < kNumPositiveStructures) {
      report.avg_p += m.mrr;
      ++np;
    } else {
      report.avg_n += m.mrr;
      ++nn;
    }
  }
  if (np > 0) report.avg_p /= static_cast<double>(np);
  if (nn > 0) report.avg_n /= static_cast<double>(nn);
  return report;
}

}  // namespace calq

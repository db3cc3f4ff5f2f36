#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <sstream>

#include "calq/eval_harness.hpp"
#include "calq/fuzzy_engine.hpp"
#include "calq/key_value.hpp"
#include "random_fixtures.hpp"

using namespace calq;

namespace {

std::vector<EntityId> thresholded(const MembershipVector& v) {
  std::vector<EntityId> out;
  auto d = v.to_dense();
  for (std::size_t i = 0; i < d.size(); ++i)
    if (d[i] > 0.5) out.push_back(static_cast<EntityId>(i));
  return out;
}

std::vector<EntityId> to_vec(std::span<const EntityId> s) { return {s.begin(), s.end()}; }

KnowledgeGraph bipartite(std::size_t left, std::size_t right) {
  std::vector<Triplet> train;
  for (EntityId a = 0; a < left; ++a)
    for (EntityId b = 0; b < right; ++b) train.push_back({a, 0, static_cast<EntityId>(left + b)});
  return KnowledgeGraph(fixtures::numbered("e", left + right), fixtures::numbered("r", 1), std::move(train), {}, {});
}

std::size_t count_tokens(const std::string& line) {
  std::istringstream in(line);
  std::size_t n = 0;
  std::string tok;
  while (in >> tok) ++n;
  return n;
}

}  // namespace

TEST(BruteForce, OneHopIsNeighbors) {
  std::mt19937_64 rng(1);
  auto kg = fixtures::random_kg(15, 3, 0.1, rng);
  for (EntityId h = 0; h < 15; ++h) {
    for (RelationId r = 0; r < 3; ++r) {
      auto q = parse_query("P[#" + std::to_string(r) + "](#" + std::to_string(h) + ")", nullptr, nullptr);
      auto got = brute_force_answers(q, kg, SplitSet(Split::train));
      auto want = to_vec(kg.neighbors(h, r, SplitSet(Split::train)));
      std::sort(want.begin(), want.end());
      EXPECT_EQ(got, want);
    }
  }
}

TEST(BruteForce, TwoInIsSetDifference) {
  std::mt19937_64 rng(2);
  auto kg = fixtures::random_kg(15, 2, 0.2, rng);
  const auto all = SplitSet::known() | SplitSet(Split::test);
  for (EntityId a = 0; a < 15; ++a) {
    const EntityId b = (a + 3) % 15;
    auto q = parse_query("I(P[#0](#" + std::to_string(a) + "),N(P[#1](#" + std::to_string(b) + ")))", nullptr, nullptr);
    auto x = to_vec(kg.neighbors(a, 0, all));
    auto y = to_vec(kg.neighbors(b, 1, all));
    std::sort(x.begin(), x.end());
    std::sort(y.begin(), y.end());
    std::vector<EntityId> want;
    std::set_difference(x.begin(), x.end(), y.begin(), y.end(), std::back_inserter(want));
    EXPECT_EQ(brute_force_answers(q, kg, all), want);
  }
}

TEST(BruteForce, MatchesFuzzyIndicatorEvaluation) {
  std::mt19937_64 rng(3);
  for (int g = 0; g < 10; ++g) {
    const std::size_t v = 5 + rng() % 16;
    auto kg = fixtures::random_kg(v, 3, 0.15, rng);
    for (auto splits : {SplitSet(Split::train), SplitSet::known(), SplitSet::known() | SplitSet(Split::test)}) {
      auto ind = DenseTensorProvider::indicator(kg, splits);
      for (auto name : kStructureNames) {
        auto q = fixtures::random_instance(name, v, 3, rng);
        EXPECT_EQ(thresholded(evaluate(q, ind)), brute_force_answers(q, kg, splits)) << name << " " << serialize(q);
      }
    }
  }
}

TEST(SplitAnswers, TrainOnlyQueryHasNoHardAnswers) {
  KnowledgeGraph kg(fixtures::numbered("e", 4), fixtures::numbered("r", 1), {{0, 0, 1}, {1, 0, 2}}, {}, {{0, 0, 3}});
  auto q = parse_query("P[#0](#1)", nullptr, nullptr);
  auto s = split_answers(q, kg);
  EXPECT_EQ(s.easy, (std::vector<EntityId>{2}));
  EXPECT_TRUE(s.hard.empty());
  // The test edge 0 -> 3 makes 3 a hard answer.
  auto p = split_answers(parse_query("P[#0](#0)", nullptr, nullptr), kg);
  EXPECT_EQ(p.easy, (std::vector<EntityId>{1}));
  EXPECT_EQ(p.hard, (std::vector<EntityId>{3}));
}

TEST(SplitAnswers, DisjointAndCoverFullGraph) {
  std::mt19937_64 rng(4);
  for (int g = 0; g < 5; ++g) {
    auto kg = fixtures::random_kg(20, 3, 0.1, rng);
    const auto all = SplitSet::known() | SplitSet(Split::test);
    for (auto name : kStructureNames) {
      auto q = fixtures::random_instance(name, 20, 3, rng);
      auto s = split_answers(q, kg);
      std::vector<EntityId> inter, uni;
      std::set_intersection(s.easy.begin(), s.easy.end(), s.hard.begin(), s.hard.end(), std::back_inserter(inter));
      std::set_union(s.easy.begin(), s.easy.end(), s.hard.begin(), s.hard.end(), std::back_inserter(uni));
      EXPECT_TRUE(inter.empty());
      EXPECT_EQ(uni, brute_force_answers(q, kg, all));
      auto known = brute_force_answers(q, kg, SplitSet::known());
      auto full = brute_force_answers(q, kg, all);
      std::vector<EntityId> want_easy;
      std::set_intersection(known.begin(), known.end(), full.begin(), full.end(), std::back_inserter(want_easy));
      EXPECT_EQ(s.easy, want_easy);
      auto tr = split_answers(q, kg, Split::train);
      EXPECT_TRUE(tr.hard.empty());
    }
  }
}

TEST(Generate, BipartiteOneHopAlwaysAnswered) {
  auto kg = bipartite(4, 4);
  auto recs = generate_queries(kg, "1p", 4, 1, Split::train);
  ASSERT_EQ(recs.size(), 4u);
  for (const auto& r : recs) {
    EXPECT_EQ(r.structure, "1p");
    EXPECT_EQ(r.easy_answers.size(), 4u);
    EXPECT_TRUE(r.hard_answers.empty());
  }
}

TEST(Generate, RevalidatesAndIsDeterministic) {
  std::mt19937_64 rng(5);
  auto kg = add_inverse_relations(fixtures::random_kg(40, 4, 0.06, rng));
  GenerationConfig cfg;
  cfg.max_answers = 30;
  for (auto name : kStructureNames) {
    for (Split target : {Split::train, Split::validation, Split::test}) {
      auto recs = generate_queries(kg, name, 5, 11, target, cfg);
      ASSERT_EQ(recs.size(), 5u) << name;
      std::vector<std::string> seen;
      for (const auto& r : recs) {
        EXPECT_EQ(classify_structure(r.query), std::string(name));
        auto s = split_answers(r.query, kg, target);
        EXPECT_EQ(s.easy, r.easy_answers);
        EXPECT_EQ(s.hard, r.hard_answers);
        if (target == Split::train) {
          EXPECT_FALSE(r.easy_answers.empty());
        } else {
          EXPECT_FALSE(r.hard_answers.empty());
        }
        EXPECT_LE(r.easy_answers.size() + r.hard_answers.size(), cfg.max_answers);
        seen.push_back(serialize(r.query));
      }
      std::sort(seen.begin(), seen.end());
      EXPECT_EQ(std::adjacent_find(seen.begin(), seen.end()), seen.end());
      auto again = generate_queries(kg, name, 5, 11, target, cfg);
      for (std::size_t i = 0; i < recs.size(); ++i) EXPECT_EQ(serialize(again[i].query), serialize(recs[i].query));
    }
  }
}

TEST(Generate, ExhaustsOnEmptyGraphAndRejectsUnknownStructure) {
  KnowledgeGraph kg(fixtures::numbered("e", 5), fixtures::numbered("r", 1), {}, {}, {});
  EXPECT_THROW(generate_queries(kg, "2p", 3, 0), SamplingExhausted);
  EXPECT_THROW(generate_queries(kg, "9p", 3, 0), std::invalid_argument);
}

TEST(Rank, Examples) {
  std::vector<double> a{0.9, 0.5, 0.1};
  std::vector<EntityId> ans{1};
  EXPECT_EQ(rank_hard_answer(a, 1, ans), 2.0);
  std::vector<EntityId> both{0, 1};
  EXPECT_EQ(rank_hard_answer(a, 1, both), 1.0);
  std::vector<double> flat(5, 0.3);
  std::vector<EntityId> one{2};
  EXPECT_EQ(rank_hard_answer(flat, 2, one), 3.0);
  EXPECT_THROW(rank_hard_answer(a, 2, ans), std::invalid_argument);
}

TEST(Rank, MonotoneInOwnScore) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 200; ++i) {
    std::vector<double> a(12);
    for (auto& x : a) x = std::round(u(rng) * 10.0) / 10.0;
    std::vector<EntityId> ans{3, 7};
    const double before = rank_hard_answer(a, 3, ans);
    a[3] = std::min(1.0, a[3] + u(rng) * 0.3);
    EXPECT_LE(rank_hard_answer(a, 3, ans), before);
  }
}

TEST(EvaluateRun, EmptyRun) {
  DenseTensorProvider p(3, 1);
  auto rep = evaluate_run(p, {});
  for (const auto& s : rep.structures) EXPECT_EQ(s.queries, 0u);
  EXPECT_EQ(rep.avg_p, 0.0);
  EXPECT_EQ(rep.avg_n, 0.0);
  EXPECT_NE(rep.table().find('-'), std::string::npos);
}

TEST(EvaluateRun, PerfectKnowledgeGivesMrrOne) {
  std::mt19937_64 rng(7);
  auto kg = add_inverse_relations(fixtures::random_kg(40, 3, 0.06, rng));
  auto ind = DenseTensorProvider::indicator(kg, SplitSet::known() | SplitSet(Split::test));
  std::vector<QueryRecord> recs;
  for (auto name : kStructureNames) {
    auto q = generate_queries(kg, name, 4, 3);
    recs.insert(recs.end(), q.begin(), q.end());
  }
  auto rep = evaluate_run(ind, recs);
  for (auto name : kStructureNames) {
    const auto& m = rep.at(name);
    EXPECT_EQ(m.queries, 4u) << name;
    EXPECT_DOUBLE_EQ(m.mrr, 1.0) << name;
    EXPECT_DOUBLE_EQ(m.hits1, 1.0) << name;
  }
  EXPECT_DOUBLE_EQ(rep.avg_p, 1.0);
  EXPECT_DOUBLE_EQ(rep.avg_n, 1.0);
  EvalConfig cfg;
  cfg.threads = 3;
  EXPECT_EQ(evaluate_run(ind, recs, cfg).key_values(), rep.key_values());
}

TEST(EvaluateRun, PerQueryMeanThenQueryMean) {
  // Query A: hard answers ranked 1 and 2 (mean 0.75); query B: one hard answer ranked 4 (0.25).
  DenseTensorProvider p(5, 1);
  const double a[] = {0.9, 0.8, 0.7, 0.6, 0.5};
  for (EntityId t = 0; t < 5; ++t) p.at(0, 0, t) = a[t];
  for (EntityId t = 0; t < 5; ++t) p.at(1, 0, t) = a[t];
  auto qa = parse_query("P[#0](#0)", nullptr, nullptr);
  auto qb = parse_query("P[#0](#1)", nullptr, nullptr);
  std::vector<QueryRecord> recs{{qa, "1p", {}, {0, 2}}, {qb, "1p", {}, {3}}};
  auto rep = evaluate_run(p, recs);
  const auto& m = rep.at("1p");
  EXPECT_EQ(m.queries, 2u);
  EXPECT_EQ(m.answers, 3u);
  EXPECT_DOUBLE_EQ(m.mrr, (0.75 + 0.25) / 2.0);
  EXPECT_DOUBLE_EQ(m.hits1, 0.25);
  EXPECT_DOUBLE_EQ(m.hits3, 0.5);
  EXPECT_DOUBLE_EQ(m.hits10, 1.0);
  // Only 1p has queries, so it alone makes up avg_p.
  EXPECT_DOUBLE_EQ(rep.avg_p, m.mrr);
  EXPECT_EQ(rep.avg_n, 0.0);
}

TEST(EvalReport, TableAndKeyValues) {
  EvalReport rep;
  rep.structures[0] = {3, 3, 0.5, 0.25, 0.5, 1.0};
  rep.avg_p = 0.5;
  auto table = rep.table();
  std::istringstream in(table);
  std::string header, values;
  std::getline(in, header);
  std::getline(in, values);
  EXPECT_EQ(count_tokens(header), 16u);
  EXPECT_EQ(count_tokens(values), 16u);
  EXPECT_NE(values.find("50.0"), std::string::npos);
  auto kv = KeyValueFile::parse(rep.key_values());
  EXPECT_EQ(kv.get_double("1p.mrr"), 0.5);
  EXPECT_EQ(kv.get_int("1p.queries"), 3);
  EXPECT_EQ(kv.get_double("avg_p"), 0.5);
  EXPECT_TRUE(kv.has("pni.hits10"));
  EXPECT_THROW(rep.at("7p"), std::invalid_argument);
}

#include "calq/synthetic.hpp"

#include <algorithm>
#include <complex>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>

namespace calq {

KnowledgeGraph make_synthetic_kg(const SyntheticConfig& c) {
  if (c.entities < 2 || c.relations == 0 || c.latent_rank == 0 || c.max_tails == 0) {
    throw std::invalid_argument("degenerate synthetic graph configuration");
  }
  if (c.valid_fraction < 0.0 || c.test_fraction < 0.0 || c.valid_fraction + c.test_fraction >= 1.0) {
    throw std::invalid_argument("held-out fractions must be non-negative and sum below 1");
  }
  std::mt19937_64 rng(c.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  using cd = std::complex<double>;
  const std::size_t k = c.latent_rank;
  std::vector<cd> ent(c.entities * k);
  std::vector<cd> rel(c.relations * k);
  for (auto& x : ent) x = cd(normal(rng), normal(rng));
  for (auto& x : rel) x = cd(normal(rng), normal(rng));

  Vocabulary entities;
  Vocabulary relations;
  for (std::size_t i = 0; i < c.entities; ++i) entities.intern("e" + std::to_string(i));
  for (std::size_t i = 0; i < c.relations; ++i) relations.intern("r" + std::to_string(i));

  std::bernoulli_distribution active(c.participation);
  std::uniform_int_distribution<std::size_t> tails_dist(1, c.max_tails);
  std::vector<Triplet> edges;
  std::vector<double> score(c.entities);
  std::vector<EntityId> order(c.entities);
  for (std::size_t h = 0; h < c.entities; ++h) {
    for (std::size_t r = 0; r < c.relations; ++r) {
      if (!active(rng)) continue;
      const std::size_t m = tails_dist(rng);
      for (std::size_t t = 0; t < c.entities; ++t) {
        double s = 0.0;
        for (std::size_t i = 0; i < k; ++i) s += (ent[h * k + i] * rel[r * k + i] * std::conj(ent[t * k + i])).real();
        score[t] = s;
      }
      std::iota(order.begin(), order.end(), 0);
      std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(m), order.end(),
                        [&](EntityId a, EntityId b) { return score[a] > score[b] || (score[a] == score[b] && a < b); });
      for (std::size_t i = 0; i < m; ++i) {
        edges.push_back({static_cast<EntityId>(h), static_cast<RelationId>(r), order[i]});
      }
    }
  }
  std::shuffle(edges.begin(), edges.end(), rng);
  const auto n_valid = static_cast<std::size_t>(c.valid_fraction * static_cast<double>(edges.size()));
  const auto n_test = static_cast<std::size_t>(c.test_fraction * static_cast<double>(edges.size()));
  std::vector<Triplet> valid(edges.begin(), edges.begin() + static_cast<std::ptrdiff_t>(n_valid));
  std::vector<Triplet> test(edges.begin() + static_cast<std::ptrdiff_t>(n_valid),
                            edges.begin() + static_cast<std::ptrdiff_t>(n_valid + n_test));
  std::vector<Triplet> train(edges.begin() + static_cast<std::ptrdiff_t>(n_valid + n_test), edges.end());
  std::sort(train.begin(), train.end());
  std::sort(valid.begin(), valid.end());
  std::sort(test.begin(), test.end());
  return KnowledgeGraph(std::move(entities), std::move(relations), std::move(train), std::move(valid),
                        std::move(test));
}

void write_splits(const KnowledgeGraph& kg, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const std::pair<Split, const char*> files[] = {
      {Split::train, "train.txt"}, {Split::validation, "valid.txt"}, {Split::test, "test.txt"}};
  for (const auto& [split, name] : files) {
    std::ofstream out(dir / name);
    if (!out) throw std::runtime_error("cannot write " + (dir / name).string());
    for (const auto& t : kg.split(split)) {
      out << kg.entities().name(t.head) << '\t' << kg.relations().name(t.relation) << '\t'
          << kg.entities().name(t.tail) << '\n';
    }
  }
}

}  // namespace calq

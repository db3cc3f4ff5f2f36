#pragma once

#include <cstdint>
#include <filesystem>

#include "calq/kg_store.hpp"

namespace calq {

/// Incomplete KG drawn from a random low-rank complex bilinear ground truth.
/// Each (h, r) pair is active with probability `participation`; an active pair
/// links to its 1..max_tails highest-scoring tails. A random fraction of the
/// edges becomes the validation and test splits.
struct SyntheticConfig {
  std::size_t entities = 200;
  std::size_t relations = 10;
  std::size_t latent_rank = 6;
  double participation = 0.5;
  std::size_t max_tails = 3;
  double valid_fraction = 0.1;
  double test_fraction = 0.1;
  std::uint64_t seed = 0;
};

/// Entities are named e<i>, relations r<i>. No inverse relations.
KnowledgeGraph make_synthetic_kg(const SyntheticConfig& config);

/// Writes train.txt, valid.txt and test.txt under `dir`.
void write_splits(const KnowledgeGraph& kg, const std::filesystem::path& dir);

}  // namespace calq

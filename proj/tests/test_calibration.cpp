#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "calq/calibration.hpp"
#include "random_fixtures.hpp"

using namespace calq;

namespace {

// DistMult rank 1 model whose row (0, 0) has scores e_0 * e_t = e_t.
EmbeddingModel scalar_model(const std::vector<double>& entity_values) {
  EmbeddingModel m(ModelKind::diagonal_bilinear, 1, entity_values.size(), 1);
  for (std::size_t i = 0; i < entity_values.size(); ++i) m.entity(static_cast<EntityId>(i))[0] = entity_values[i];
  m.relation(0)[0] = 1.0;
  return m;
}

KnowledgeGraph graph(std::size_t v, std::size_t r, std::vector<Triplet> train, std::vector<Triplet> valid = {},
                     std::vector<Triplet> test = {}) {
  return KnowledgeGraph(fixtures::numbered("e", v), fixtures::numbered("r", r), std::move(train), std::move(valid),
                        std::move(test));
}

std::vector<double> dense_row(const RowProvider& p, EntityId h, RelationId r) {
  return p.row(h, r).to_dense(p.num_entities());
}

}  // namespace

TEST(Normalize, UniformScoresWithTwoTails) {
  auto row = normalize_scores(std::vector<double>{3.0, 3.0, 3.0, 3.0}, 2.0);
  EXPECT_EQ(row, (std::vector<double>{0.5, 0.5, 0.5, 0.5}));
}

TEST(Normalize, UniformScoresWithAlphaFallback) {
  auto row = normalize_scores(std::vector<double>{0.0, 0.0, 0.0, 0.0}, 0.1);
  for (double x : row) EXPECT_DOUBLE_EQ(x, 0.025);
}

TEST(Normalize, HandSoftmax) {
  auto row = normalize_scores(std::vector<double>{std::log(4.0), std::log(2.0), 0.0, 0.0}, 1.0);
  const std::vector<double> want{0.5, 0.25, 0.125, 0.125};
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(row[i], want[i], 1e-15);
}

TEST(Normalize, TranslationInvariantAndStable) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 3.0);
  for (int i = 0; i < 100; ++i) {
    std::vector<double> s(10);
    for (auto& x : s) x = n(rng);
    auto shifted = s;
    for (auto& x : shifted) x += 1234.5;
    auto a = normalize_scores(s, 2.0);
    auto b = normalize_scores(shifted, 2.0);
    for (std::size_t j = 0; j < s.size(); ++j) EXPECT_NEAR(a[j], b[j], 1e-12);
  }
  auto big = normalize_scores(std::vector<double>{1e4, 0.0, -1e4}, 1.0);
  EXPECT_EQ(big, (std::vector<double>{1.0, 0.0, 0.0}));
}

TEST(AdaptRow, ClampEngages) {
  EXPECT_EQ(adapt_row(std::vector<double>{0.5, 0.25}, 3.0), (std::vector<double>{1.0, 0.75}));
  EXPECT_EQ(adapt_row(std::vector<double>{0.5, 0.25}, 1.0), (std::vector<double>{0.5, 0.25}));
}

TEST(AdaptRow, PreservesWeakOrder) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_real_distribution<double> lw(-3.0, 3.0);
  for (int i = 0; i < 200; ++i) {
    std::vector<double> f(12);
    for (auto& x : f) x = u(rng) * 5.0;
    auto fhat = normalize_scores(f, 1.0 + u(rng) * 3.0);
    auto ftil = adapt_row(fhat, std::exp(lw(rng)));
    for (std::size_t a = 0; a < f.size(); ++a) {
      for (std::size_t b = 0; b < f.size(); ++b) {
        if (f[a] > f[b]) {
          EXPECT_GE(fhat[a], fhat[b]);
          EXPECT_GE(ftil[a], ftil[b]);
        }
      }
    }
  }
}

TEST(NormalizedScorer, ScaleUsesTrainTailCount) {
  auto kg = graph(4, 2, {{0, 0, 1}, {0, 0, 2}}, {{0, 1, 3}});
  EmbeddingModel zero(ModelKind::complex_bilinear, 2, 4, 2);
  NormalizedScorer s(zero, kg, 0.1);
  EXPECT_EQ(s.scale(0, 0), 2.0);
  EXPECT_EQ(s.scale(0, 1), 0.1);
  EXPECT_EQ(*s.row(0, 0), (std::vector<double>{0.5, 0.5, 0.5, 0.5}));
  for (double x : *s.row(3, 1)) EXPECT_DOUBLE_EQ(x, 0.025);
  EXPECT_THROW(NormalizedScorer(zero, kg, 0.0), std::invalid_argument);
  EmbeddingModel wrong(ModelKind::complex_bilinear, 2, 5, 2);
  EXPECT_THROW(NormalizedScorer(wrong, kg, 0.1), std::invalid_argument);
}

TEST(NormalizedScorer, CachedAndUncachedAgree) {
  std::mt19937_64 rng(3);
  auto kg = fixtures::random_kg(10, 2, 0.2, rng);
  EmbeddingModel m(ModelKind::complex_bilinear, 4, 10, 2);
  m.init_uniform(3);
  NormalizedScorer cached(m, kg, 0.1, true);
  NormalizedScorer uncached(m, kg, 0.1, false);
  for (EntityId h = 0; h < 10; ++h) {
    EXPECT_EQ(*cached.row(h, 1), *uncached.row(h, 1));
    EXPECT_EQ(cached.row(h, 1).get(), cached.row(h, 1).get());
  }
}

TEST(AdaptationMatrix, IdentityAtInitAndSaveLoad) {
  AdaptationMatrix w(5, 3);
  EXPECT_EQ(w.weight(4, 2), 1.0);
  w.theta(4, 2) = std::log(3.0);
  EXPECT_NEAR(w.weight(4, 2), 3.0, 1e-15);
  EXPECT_EQ(w.index(4, 2), 14u);
  auto path = std::filesystem::temp_directory_path() / "calq_w.bin";
  w.save(path);
  EXPECT_EQ(AdaptationMatrix::load(path), w);
  std::filesystem::resize_file(path, 30);
  EXPECT_THROW(AdaptationMatrix::load(path), std::runtime_error);
}

TEST(AblationMode, Parse) {
  EXPECT_EQ(parse_ablation_mode("S12"), AblationMode::s12);
  EXPECT_EQ(parse_ablation_mode("s123"), AblationMode::s123);
  EXPECT_EQ(parse_ablation_mode("S1234"), AblationMode::s1234);
  EXPECT_EQ(to_string(AblationMode::s123), "S123");
  EXPECT_THROW(parse_ablation_mode("S13"), std::invalid_argument);
}

TEST(Providers, IdentityAtInitIsBitwise) {
  std::mt19937_64 rng(4);
  auto kg = fixtures::random_kg(12, 3, 0.2, rng);
  EmbeddingModel m(ModelKind::complex_bilinear, 4, 12, 3);
  m.init_uniform(4);
  NormalizedScorer s(m, kg, 0.1);
  AdaptationMatrix w(12, 3);
  auto s12 = ablation_provider(AblationMode::s12, s, &w);
  auto s123 = ablation_provider(AblationMode::s123, s, &w);
  for (EntityId h = 0; h < 12; ++h) {
    for (RelationId r = 0; r < 3; ++r) EXPECT_EQ(dense_row(*s12, h, r), dense_row(*s123, h, r));
  }
}

TEST(Providers, PinningOverwritesKnownTailsOnly) {
  auto kg = graph(5, 2, {{0, 0, 1}}, {{0, 0, 2}}, {{0, 0, 3}});
  EmbeddingModel m(ModelKind::complex_bilinear, 3, 5, 2);
  m.init_uniform(5);
  NormalizedScorer s(m, kg, 0.1);
  AdaptationMatrix w(5, 2);
  w.theta(0, 0) = -2.0;
  auto adapted = ablation_provider(AblationMode::s123, s, &w);
  auto pinned = finalize(s, w);
  EXPECT_EQ(pinned->mode(), AblationMode::s1234);
  auto a = dense_row(*adapted, 0, 0);
  auto p = dense_row(*pinned, 0, 0);
  EXPECT_LT(a[1], 1.0);
  EXPECT_EQ(p[1], 1.0);
  EXPECT_EQ(p[2], 1.0);
  EXPECT_EQ(p[3], a[3]);
  EXPECT_EQ(p[0], a[0]);
  // No known triplet for (1, 1): the row is the adapted row.
  EXPECT_EQ(dense_row(*pinned, 1, 1), dense_row(*adapted, 1, 1));
}

TEST(Providers, AgreeWhereNothingAppliesAndStayInRange) {
  std::mt19937_64 rng(6);
  auto kg = fixtures::random_kg(10, 2, 0.15, rng);
  EmbeddingModel m(ModelKind::simple_bilinear, 4, 10, 2);
  m.init_uniform(6);
  NormalizedScorer s(m, kg, 0.1);
  AdaptationMatrix w(10, 2);
  std::normal_distribution<double> n(0.0, 1.0);
  for (auto& t : w.thetas()) t = n(rng);
  auto s12 = ablation_provider(AblationMode::s12, s, nullptr);
  auto s123 = ablation_provider(AblationMode::s123, s, &w);
  auto s1234 = ablation_provider(AblationMode::s1234, s, &w);
  for (EntityId h = 0; h < 10; ++h) {
    for (RelationId r = 0; r < 2; ++r) {
      auto a = dense_row(*s12, h, r);
      auto b = dense_row(*s123, h, r);
      auto c = dense_row(*s1234, h, r);
      for (std::size_t t = 0; t < 10; ++t) {
        for (double x : {a[t], b[t], c[t]}) {
          EXPECT_GE(x, 0.0);
          EXPECT_LE(x, 1.0);
        }
      }
      if (w.theta(h, r) == 0.0) EXPECT_EQ(a, b);
      if (kg.neighbors(h, r, SplitSet::known()).empty()) EXPECT_EQ(b, c);
    }
  }
}

TEST(AnswerLoss, FiniteAtEndpoints) {
  auto pred = MembershipVector::dense({0.0, 1.0, 0.5});
  std::vector<EntityId> ans{0, 2};
  std::vector<double> adj;
  const double loss = answer_loss(pred, ans, 1e-10, &adj);
  EXPECT_TRUE(std::isfinite(loss));
  EXPECT_NEAR(loss, -(std::log(1e-10) + std::log(0.5)) / 2.0 - std::log(1e-10), 1e-9);
  EXPECT_EQ(adj[0], 0.0);
  EXPECT_NEAR(adj[2], -1.0 / (2 * 0.5), 1e-15);
}

TEST(AnswerLoss, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  std::vector<double> a(8);
  for (auto& x : a) x = u(rng);
  std::vector<EntityId> ans{1, 4, 5};
  std::vector<double> adj;
  answer_loss(MembershipVector::dense(a), ans, 1e-10, &adj);
  for (std::size_t i = 0; i < a.size(); ++i) {
    auto up = a;
    auto dn = a;
    up[i] += 1e-6;
    dn[i] -= 1e-6;
    const double fd = (answer_loss(MembershipVector::dense(up), ans, 1e-10, nullptr) -
                       answer_loss(MembershipVector::dense(dn), ans, 1e-10, nullptr)) /
                      2e-6;
    EXPECT_NEAR(adj[i], fd, 1e-6);
  }
}

TEST(Adapt, PerfectRowIsAlreadyOptimal) {
  auto kg = graph(4, 1, {{0, 0, 1}});
  auto m = scalar_model({1.0, 800.0, 0.0, 0.0});
  NormalizedScorer s(m, kg, 0.1);
  auto fhat = *s.row(0, 0);
  ASSERT_EQ(fhat[1], 1.0);
  ASSERT_EQ(fhat[2], 0.0);
  AdaptationMatrix w(4, 1);
  auto q = parse_query("P[#0](#0)", nullptr, nullptr);
  std::vector<EntityId> ans{1};
  std::unordered_map<std::size_t, double> grad;
  const double loss = query_loss_and_gradient(s, w, q, ans, 1e-10, &grad);
  EXPECT_NEAR(loss, 0.0, 1e-9);
  std::vector<QueryRecord> recs{{q, "1p", {1}, {}}};
  CalibrationConfig cfg;
  auto fitted = adapt(s, recs, cfg);
  EXPECT_NEAR(fitted.theta(0, 0), 0.0, 1e-12);
}

TEST(Adapt, HalfScoredAnswerPushesThetaUp) {
  // Row (0, 0) scores [1, ln 3, x, x] with 2 e^x = 3 - e, so softmax(1) = 1/2 and M = 1.
  const double x = std::log((3.0 - std::exp(1.0)) / 2.0);
  auto kg = graph(4, 1, {{0, 0, 1}});
  auto m = scalar_model({1.0, std::log(3.0), x, x});
  NormalizedScorer s(m, kg, 0.1);
  ASSERT_NEAR((*s.row(0, 0))[1], 0.5, 1e-12);
  AdaptationMatrix w(4, 1);
  auto q = parse_query("P[#0](#0)", nullptr, nullptr);
  std::vector<EntityId> ans{1};
  std::unordered_map<std::size_t, double> grad;
  query_loss_and_gradient(s, w, q, ans, 1e-10, &grad);
  const double analytic = grad[w.index(0, 0)];
  EXPECT_LT(analytic, 0.0);
  auto at = [&](double theta) {
    AdaptationMatrix v(4, 1);
    v.theta(0, 0) = theta;
    return query_loss_and_gradient(s, v, q, ans, 1e-10, nullptr);
  };
  const double fd = (at(1e-6) - at(-1e-6)) / 2e-6;
  EXPECT_NEAR(analytic, fd, 1e-6);
  std::vector<QueryRecord> recs{{q, "1p", {1}, {}}};
  CalibrationConfig cfg;
  cfg.learning_rate = 0.05;
  auto fitted = adapt(s, recs, cfg);
  EXPECT_GT(fitted.theta(0, 0), 0.0);
}

TEST(Adapt, ThetaGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n(0.0, 0.3);
  auto kg = fixtures::random_kg(8, 2, 0.25, rng);
  EmbeddingModel m(ModelKind::complex_bilinear, 3, 8, 2);
  m.init_uniform(8);
  for (auto& v : m.entity_table()) v *= 8.0;
  for (auto& v : m.relation_table()) v *= 8.0;
  NormalizedScorer s(m, kg, 0.1);
  int checked = 0;
  for (int trial = 0; trial < 200 && checked < 20; ++trial) {
    AdaptationMatrix w(8, 2);
    for (auto& t : w.thetas()) t = n(rng);
    auto q = fixtures::random_query(8, 2, 3, rng);
    std::vector<EntityId> ans{static_cast<EntityId>(rng() % 8), static_cast<EntityId>(rng() % 8)};
    std::sort(ans.begin(), ans.end());
    ans.erase(std::unique(ans.begin(), ans.end()), ans.end());
    std::unordered_map<std::size_t, double> grad;
    query_loss_and_gradient(s, w, q, ans, 1e-10, &grad);
    bool ok = !grad.empty();
    std::vector<std::pair<double, double>> pairs;
    for (const auto& [idx, g] : grad) {
      auto eval = [&](double delta) {
        AdaptationMatrix v = w;
        v.thetas()[idx] += delta;
        return query_loss_and_gradient(s, v, q, ans, 1e-10, nullptr);
      };
      const double l0 = eval(0.0);
      const double up = eval(1e-6);
      const double dn = eval(-1e-6);
      const double fd = (up - dn) / 2e-6;
      const double wide = (eval(1e-3) - eval(-1e-3)) / 2e-3;
      // A kink (argmax switch or clamp) nearby shows up as one-sided slopes that disagree.
      const double tol = 1e-5 * std::max(1.0, std::abs(fd));
      if (std::abs(fd - wide) > 1e-3 * std::max(1.0, std::abs(fd)) || std::abs((up - l0) - (l0 - dn)) / 1e-6 > tol) {
        ok = false;
        break;
      }
      pairs.emplace_back(g, fd);
    }
    if (!ok) continue;
    for (auto [g, fd] : pairs) EXPECT_NEAR(g, fd, 1e-4 * std::max(1.0, std::abs(fd)));
    ++checked;
  }
  EXPECT_GE(checked, 10);
}

TEST(Adapt, FiltersQueryTypesAndIsDeterministic) {
  std::mt19937_64 rng(9);
  auto kg = fixtures::random_kg(10, 2, 0.2, rng);
  EmbeddingModel m(ModelKind::complex_bilinear, 3, 10, 2);
  m.init_uniform(9);
  NormalizedScorer s(m, kg, 0.1);
  std::vector<QueryRecord> recs;
  for (int i = 0; i < 6; ++i) {
    auto q = fixtures::random_instance(i % 2 == 0 ? "1p" : "2p", 10, 2, rng);
    recs.push_back({q, i % 2 == 0 ? "1p" : "2p", {static_cast<EntityId>(i)}, {}});
  }
  CalibrationConfig cfg;
  cfg.learning_rate = 0.05;
  cfg.batch_size = 2;
  cfg.seed = 3;
  AdaptReport rep;
  auto a = adapt(s, recs, cfg, &rep);
  EXPECT_EQ(rep.queries_used, 3u);
  EXPECT_EQ(rep.steps, 10u);
  EXPECT_EQ(rep.epoch_loss.size(), 5u);
  EXPECT_EQ(adapt(s, recs, cfg), a);
}

TEST(CalibrationConfig, Validation) {
  CalibrationConfig cfg;
  EXPECT_EQ(cfg.alpha, 0.1);
  EXPECT_EQ(cfg.learning_rate, 0.001);
  EXPECT_NO_THROW(cfg.validate());
  cfg.query_types.push_back("5p");
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = CalibrationConfig{};
  cfg.batch_size = 0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

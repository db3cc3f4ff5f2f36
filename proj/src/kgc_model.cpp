#include "calq/kgc_model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace calq {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

std::string_view to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::complex_bilinear: return "complex";
    case ModelKind::diagonal_bilinear: return "distmult";
    case ModelKind::canonical_polyadic: return "cp";
    case ModelKind::simple_bilinear: return "simple";
  }
  return "?";
}

ModelKind parse_model_kind(std::string_view name) {
  if (name == "complex") return ModelKind::complex_bilinear;
  if (name == "distmult") return ModelKind::diagonal_bilinear;
  if (name == "cp") return ModelKind::canonical_polyadic;
  if (name == "simple") return ModelKind::simple_bilinear;
  throw std::invalid_argument("unknown model kind '" + std::string(name) + "'");
}

EmbeddingModel::EmbeddingModel(ModelKind kind, std::size_t rank, std::size_t num_entities, std::size_t num_relations)
    : kind_(kind), rank_(rank), num_entities_(num_entities), num_relations_(num_relations) {
  if (rank == 0) throw std::invalid_argument("rank must be positive");
  entity_width_ = kind == ModelKind::diagonal_bilinear ? rank : 2 * rank;
  relation_width_ = (kind == ModelKind::diagonal_bilinear || kind == ModelKind::canonical_polyadic) ? rank : 2 * rank;
  entities_.assign(num_entities_ * entity_width_, 0.0);
  relations_.assign(num_relations_ * relation_width_, 0.0);
}

std::span<double> EmbeddingModel::entity(EntityId e) {
  return {entities_.data() + std::size_t{e} * entity_width_, entity_width_};
}
std::span<const double> EmbeddingModel::entity(EntityId e) const {
  return {entities_.data() + std::size_t{e} * entity_width_, entity_width_};
}
std::span<double> EmbeddingModel::relation(RelationId r) {
  return {relations_.data() + std::size_t{r} * relation_width_, relation_width_};
}
std::span<const double> EmbeddingModel::relation(RelationId r) const {
  return {relations_.data() + std::size_t{r} * relation_width_, relation_width_};
}

void EmbeddingModel::init_uniform(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const double bound = 0.5 / std::sqrt(static_cast<double>(rank_));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& x : entities_) x = dist(rng);
  for (auto& x : relations_) x = dist(rng);
}

void EmbeddingModel::query_vector(std::span<const double> h, std::span<const double> r, std::span<double> q) const {
  const std::size_t k = rank_;
  switch (kind_) {
    case ModelKind::diagonal_bilinear:
      for (std::size_t i = 0; i < k; ++i) q[i] = h[i] * r[i];
      return;
    case ModelKind::complex_bilinear:
      for (std::size_t i = 0; i < k; ++i) {
        q[i] = h[i] * r[i] - h[k + i] * r[k + i];
        q[k + i] = h[i] * r[k + i] + h[k + i] * r[i];
      }
      return;
    case ModelKind::canonical_polyadic:
      for (std::size_t i = 0; i < k; ++i) {
        q[i] = 0.0;
        q[k + i] = h[i] * r[i];
      }
      return;
    case ModelKind::simple_bilinear:
      // 0.5 * (<h_head, r, t_tail> + <t_head, r_inv, h_tail>)
      for (std::size_t i = 0; i < k; ++i) {
        q[i] = 0.5 * h[k + i] * r[k + i];
        q[k + i] = 0.5 * h[i] * r[i];
      }
      return;
  }
}

void EmbeddingModel::query_backward(std::span<const double> h, std::span<const double> r, std::span<const double> dq,
                                    std::span<double> dh, std::span<double> dr) const {
  const std::size_t k = rank_;
  switch (kind_) {
    case ModelKind::diagonal_bilinear:
      for (std::size_t i = 0; i < k; ++i) {
        dh[i] += dq[i] * r[i];
        dr[i] += dq[i] * h[i];
      }
      return;
    case ModelKind::complex_bilinear:
      for (std::size_t i = 0; i < k; ++i) {
        const double gre = dq[i];
        const double gim = dq[k + i];
        dh[i] += gre * r[i] + gim * r[k + i];
        dh[k + i] += -gre * r[k + i] + gim * r[i];
        dr[i] += gre * h[i] + gim * h[k + i];
        dr[k + i] += -gre * h[k + i] + gim * h[i];
      }
      return;
    case ModelKind::canonical_polyadic:
      for (std::size_t i = 0; i < k; ++i) {
        dh[i] += dq[k + i] * r[i];
        dr[i] += dq[k + i] * h[i];
      }
      return;
    case ModelKind::simple_bilinear:
      for (std::size_t i = 0; i < k; ++i) {
        dh[k + i] += 0.5 * dq[i] * r[k + i];
        dr[k + i] += 0.5 * dq[i] * h[k + i];
        dh[i] += 0.5 * dq[k + i] * r[i];
        dr[i] += 0.5 * dq[k + i] * h[i];
      }
      return;
  }
}

double EmbeddingModel::score(EntityId h, RelationId r, EntityId t) const {
  std::vector<double> q(entity_width_);
  query_vector(entity(h), relation(r), q);
  auto et = entity(t);
  return std::inner_product(q.begin(), q.end(), et.begin(), 0.0);
}

std::vector<double> EmbeddingModel::score_row(EntityId h, RelationId r) const {
  if (h >= num_entities_ || r >= num_relations_) throw std::out_of_range("score_row id out of range");
  std::vector<double> q(entity_width_);
  query_vector(entity(h), relation(r), q);
  std::vector<double> out(num_entities_);
  for (std::size_t t = 0; t < num_entities_; ++t) {
    const double* et = entities_.data() + t * entity_width_;
    double s = 0.0;
    for (std::size_t i = 0; i < entity_width_; ++i) s += q[i] * et[i];
    out[t] = s;
  }
  return out;
}

namespace {

constexpr char kModelMagic[8] = {'C', 'A', 'L', 'Q', 'E', 'M', 'B', '\0'};
constexpr std::uint32_t kModelVersion = 1;

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const std::string& what) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error("truncated model checkpoint (" + what + ")");
  return v;
}

}  // namespace

void EmbeddingModel::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write model: " + path.string());
  out.write(kModelMagic, sizeof(kModelMagic));
  write_pod(out, kModelVersion);
  write_pod(out, static_cast<std::uint32_t>(kind_));
  write_pod(out, static_cast<std::uint64_t>(rank_));
  write_pod(out, static_cast<std::uint64_t>(num_entities_));
  write_pod(out, static_cast<std::uint64_t>(num_relations_));
  out.write(reinterpret_cast<const char*>(entities_.data()), static_cast<std::streamsize>(entities_.size() * 8));
  out.write(reinterpret_cast<const char*>(relations_.data()), static_cast<std::streamsize>(relations_.size() * 8));
  if (!out) throw std::runtime_error("failed writing model: " + path.string());
}

EmbeddingModel EmbeddingModel::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open model: " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kModelMagic, sizeof(magic)) != 0) {
    throw std::runtime_error("not a model checkpoint: " + path.string());
  }
  auto version = read_pod<std::uint32_t>(in, "version");
  if (version != kModelVersion) throw std::runtime_error("unsupported model checkpoint version " + std::to_string(version));
  auto kind = read_pod<std::uint32_t>(in, "kind");
  if (kind > static_cast<std::uint32_t>(ModelKind::simple_bilinear)) throw std::runtime_error("bad model kind");
  auto rank = read_pod<std::uint64_t>(in, "rank");
  auto ne = read_pod<std::uint64_t>(in, "entities");
  auto nr = read_pod<std::uint64_t>(in, "relations");
  EmbeddingModel m(static_cast<ModelKind>(kind), rank, ne, nr);
  in.read(reinterpret_cast<char*>(m.entities_.data()), static_cast<std::streamsize>(m.entities_.size() * 8));
  in.read(reinterpret_cast<char*>(m.relations_.data()), static_cast<std::streamsize>(m.relations_.size() * 8));
  if (!in) throw std::runtime_error("truncated model checkpoint (tables)");
  return m;
}

void TrainConfig::validate() const {
  if (rank == 0) throw std::invalid_argument("rank must be positive");
  if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning rate must be positive");
  if (l3 < 0.0) throw std::invalid_argument("regularization weight must be non-negative");
  if (relation_prediction < 0.0) throw std::invalid_argument("relation-prediction weight must be non-negative");
}

namespace {

bool is_complex_kind(ModelKind k) { return k == ModelKind::complex_bilinear; }

// N3 penalty of one row and its gradient (scaled by `scale`).
double n3_row(std::span<const double> x, std::size_t rank, bool complex_kind, std::span<double> grad, double scale) {
  double total = 0.0;
  if (complex_kind) {
    // Modulus of each complex coordinate; relation rows share the layout.
    for (std::size_t i = 0; i < rank; ++i) {
      const double re = x[i];
      const double im = x[rank + i];
      const double mod = std::sqrt(re * re + im * im);
      total += mod * mod * mod;
      if (!grad.empty()) {
        grad[i] += scale * 3.0 * re * mod;
        grad[rank + i] += scale * 3.0 * im * mod;
      }
    }
    return total;
  }
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double a = std::abs(x[i]);
    total += a * a * a;
    if (!grad.empty()) grad[i] += scale * 3.0 * x[i] * a;
  }
  return total;
}

double log_softmax_grad(std::span<const double> scores, std::size_t target, std::span<double> dscores) {
  const double mx = *std::max_element(scores.begin(), scores.end());
  double z = 0.0;
  for (double s : scores) z += std::exp(s - mx);
  const double lse = mx + std::log(z);
  for (std::size_t i = 0; i < scores.size(); ++i) dscores[i] = std::exp(scores[i] - lse);
  dscores[target] -= 1.0;
  return lse - scores[target];
}

}  // namespace

ObjectiveParts batch_objective(const EmbeddingModel& model, std::span<const Triplet> batch, const TrainConfig& config,
                               ModelGradient* grad) {
  ObjectiveParts parts;
  if (batch.empty()) return parts;
  const std::size_t we = model.entity_width();
  const std::size_t wr = model.relation_width();
  const std::size_t ne = model.num_entities();
  const std::size_t nr = model.num_relations();
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  const bool complex_kind = is_complex_kind(model.kind());
  if (grad != nullptr) {
    grad->entities.assign(model.entity_table().size(), 0.0);
    grad->relations.assign(model.relation_table().size(), 0.0);
  }
  auto ent_grad = [&](EntityId e) -> std::span<double> {
    if (grad == nullptr) return {};
    return {grad->entities.data() + std::size_t{e} * we, we};
  };
  auto rel_grad = [&](RelationId r) -> std::span<double> {
    if (grad == nullptr) return {};
    return {grad->relations.data() + std::size_t{r} * wr, wr};
  };

  std::vector<double> q(we);
  std::vector<double> dq(we);
  std::vector<double> scores(ne);
  std::vector<double> dscores(ne);
  std::vector<double> rel_scores(nr);
  std::vector<double> drel_scores(nr);
  std::vector<double> qs(nr * we);
  const auto& table = model.entity_table();

  for (const auto& tr : batch) {
    auto h = model.entity(tr.head);
    auto r = model.relation(tr.relation);
    model.query_vector(h, r, q);
    for (std::size_t t = 0; t < ne; ++t) {
      const double* et = table.data() + t * we;
      double s = 0.0;
      for (std::size_t i = 0; i < we; ++i) s += q[i] * et[i];
      scores[t] = s;
    }
    parts.cross_entropy += inv_b * log_softmax_grad(scores, tr.tail, dscores);
    if (grad != nullptr) {
      std::fill(dq.begin(), dq.end(), 0.0);
      for (std::size_t t = 0; t < ne; ++t) {
        const double g = inv_b * dscores[t];
        const double* et = table.data() + t * we;
        double* gt = grad->entities.data() + t * we;
        for (std::size_t i = 0; i < we; ++i) {
          dq[i] += g * et[i];
          gt[i] += g * q[i];
        }
      }
      model.query_backward(h, r, dq, ent_grad(tr.head), rel_grad(tr.relation));
    }

    if (config.relation_prediction > 0.0) {
      auto t_row = model.entity(tr.tail);
      for (RelationId rr = 0; rr < nr; ++rr) {
        std::span<double> qr(qs.data() + std::size_t{rr} * we, we);
        model.query_vector(h, model.relation(rr), qr);
        rel_scores[rr] = std::inner_product(qr.begin(), qr.end(), t_row.begin(), 0.0);
      }
      const double ce = log_softmax_grad(rel_scores, tr.relation, drel_scores);
      parts.relation_cross_entropy += inv_b * ce;
      if (grad != nullptr) {
        const double w = config.relation_prediction * inv_b;
        auto gt = ent_grad(tr.tail);
        for (RelationId rr = 0; rr < nr; ++rr) {
          const double g = w * drel_scores[rr];
          std::span<const double> qr(qs.data() + std::size_t{rr} * we, we);
          for (std::size_t i = 0; i < we; ++i) {
            gt[i] += g * qr[i];
            dq[i] = g * t_row[i];
          }
          model.query_backward(h, model.relation(rr), dq, ent_grad(tr.head), rel_grad(rr));
        }
      }
    }

    {
      const double scale = config.l3 * inv_b;
      const std::size_t k = model.rank();
      double pen = n3_row(h, k, complex_kind, ent_grad(tr.head), scale);
      pen += n3_row(r, k, complex_kind, rel_grad(tr.relation), scale);
      pen += n3_row(model.entity(tr.tail), k, complex_kind, ent_grad(tr.tail), scale);
      parts.n3 += inv_b * pen;
    }
  }
  parts.total = parts.cross_entropy + config.relation_prediction * parts.relation_cross_entropy + config.l3 * parts.n3;
  return parts;
}

EmbeddingModel train(const KnowledgeGraph& kg, const TrainConfig& config, TrainStats* stats) {
  config.validate();
  EmbeddingModel model(config.kind, config.rank, kg.num_entities(), kg.num_relations());
  model.init_uniform(config.seed);
  std::vector<Triplet> triplets = kg.split(Split::train);
  if (triplets.empty() || config.epochs == 0) return model;

  std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<double> acc_e(model.entity_table().size(), 0.0);
  std::vector<double> acc_r(model.relation_table().size(), 0.0);
  ModelGradient grad;
  constexpr double kAdagradEps = 1e-10;

  auto adagrad = [&](std::vector<double>& params, std::vector<double>& acc, const std::vector<double>& g) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (g[i] == 0.0) continue;
      acc[i] += g[i] * g[i];
      params[i] -= config.learning_rate * g[i] / (std::sqrt(acc[i]) + kAdagradEps);
    }
  };

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(triplets.begin(), triplets.end(), rng);
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < triplets.size(); start += config.batch_size) {
      const std::size_t end = std::min(start + config.batch_size, triplets.size());
      std::span<const Triplet> batch(triplets.data() + start, end - start);
      auto parts = batch_objective(model, batch, config, &grad);
      if (!std::isfinite(parts.total)) {
        std::ostringstream msg;
        msg << "non-finite training loss at epoch " << epoch << ", batch " << batches << " (cross-entropy "
            << parts.cross_entropy << ", n3 " << parts.n3 << ")";
        throw TrainingError(msg.str());
      }
      adagrad(model.entity_table(), acc_e, grad.entities);
      adagrad(model.relation_table(), acc_r, grad.relations);
      epoch_loss += parts.total;
      ++batches;
    }
    if (stats != nullptr) stats->epoch_loss.push_back(epoch_loss / static_cast<double>(batches));
  }
  return model;
}

double link_prediction_mrr(const EmbeddingModel& model, std::span<const Triplet> triplets, const KnowledgeGraph& kg,
                           SplitSet filter) {
  if (triplets.empty()) return 0.0;
  double total = 0.0;
  for (const auto& tr : triplets) {
    auto row = model.score_row(tr.head, tr.relation);
    auto known = kg.neighbors(tr.head, tr.relation, filter);
    const double target = row[tr.tail];
    double above = 0.0;
    double ties = 0.0;
    for (std::size_t t = 0; t < row.size(); ++t) {
      if (t == tr.tail || std::binary_search(known.begin(), known.end(), static_cast<EntityId>(t))) continue;
      if (row[t] > target) above += 1.0;
      else if (row[t] == target) ties += 1.0;
    }
    total += 1.0 / (1.0 + above + ties / 2.0);
  }
  return total / static_cast<double>(triplets.size());
}

}  // namespace calq

#include "calq/calibration.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

namespace calq {

std::vector<double> normalize_scores(std::span<const double> scores, double n) {
  std::vector<double> out(scores.size());
  if (scores.empty()) return out;
  const double mx = *std::max_element(scores.begin(), scores.end());
  double z = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    out[i] = std::exp(scores[i] - mx);
    z += out[i];
  }
  for (auto& x : out) x = std::min(n * (x / z), 1.0);
  return out;
}

std::vector<double> adapt_row(std::span<const double> normalized, double w) {
  std::vector<double> out(normalized.size());
  for (std::size_t i = 0; i < normalized.size(); ++i) out[i] = std::min(w * normalized[i], 1.0);
  return out;
}

NormalizedScorer::NormalizedScorer(const EmbeddingModel& model, const KnowledgeGraph& kg, double alpha,
                                   bool cache_rows)
    : model_(model), kg_(kg), alpha_(alpha), cache_rows_(cache_rows) {
  if (!(alpha > 0.0)) throw std::invalid_argument("alpha must be positive");
  if (model.num_entities() != kg.num_entities() || model.num_relations() != kg.num_relations()) {
    throw std::invalid_argument("model does not match the knowledge graph vocabularies");
  }
}

double NormalizedScorer::scale(EntityId h, RelationId r) const {
  auto m = kg_.tail_count(h, r);
  return m > 0 ? static_cast<double>(m) : alpha_;
}

std::shared_ptr<const std::vector<double>> NormalizedScorer::row(EntityId h, RelationId r) const {
  if (h >= num_entities() || r >= num_relations()) throw std::out_of_range("row id out of range");
  const std::uint64_t key = std::uint64_t{h} * num_relations() + r;
  if (cache_rows_) {
    std::shared_lock lock(mutex_);
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
  }
  auto scores = model_.score_row(h, r);
  auto result = std::make_shared<const std::vector<double>>(normalize_scores(scores, scale(h, r)));
  if (cache_rows_) {
    std::unique_lock lock(mutex_);
    cache_.emplace(key, result);
  }
  return result;
}

AdaptationMatrix::AdaptationMatrix(std::size_t num_entities, std::size_t num_relations)
    : entities_(num_entities), relations_(num_relations), theta_(num_entities * num_relations, 0.0) {}

double AdaptationMatrix::weight(EntityId h, RelationId r) const { return std::exp(theta_[index(h, r)]); }

namespace {

constexpr char kWeightsMagic[8] = {'C', 'A', 'L', 'Q', 'A', 'D', 'P', '\0'};
constexpr std::uint32_t kWeightsVersion = 1;

}  // namespace

void AdaptationMatrix::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write adaptation matrix: " + path.string());
  out.write(kWeightsMagic, sizeof(kWeightsMagic));
  out.write(reinterpret_cast<const char*>(&kWeightsVersion), sizeof(kWeightsVersion));
  const std::uint64_t shape[2] = {entities_, relations_};
  out.write(reinterpret_cast<const char*>(shape), sizeof(shape));
  out.write(reinterpret_cast<const char*>(theta_.data()), static_cast<std::streamsize>(theta_.size() * 8));
  if (!out) throw std::runtime_error("failed writing adaptation matrix: " + path.string());
}

AdaptationMatrix AdaptationMatrix::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open adaptation matrix: " + path.string());
  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t shape[2] = {0, 0};
  in.read(magic, sizeof(magic));
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  in.read(reinterpret_cast<char*>(shape), sizeof(shape));
  if (!in || std::memcmp(magic, kWeightsMagic, sizeof(magic)) != 0) {
    throw std::runtime_error("not an adaptation matrix: " + path.string());
  }
  if (version != kWeightsVersion) throw std::runtime_error("unsupported adaptation matrix version");
  AdaptationMatrix w(shape[0], shape[1]);
  in.read(reinterpret_cast<char*>(w.theta_.data()), static_cast<std::streamsize>(w.theta_.size() * 8));
  if (!in) throw std::runtime_error("truncated adaptation matrix: " + path.string());
  return w;
}

std::string_view to_string(AblationMode mode) {
  switch (mode) {
    case AblationMode::s12: return "S12";
    case AblationMode::s123: return "S123";
    case AblationMode::s1234: return "S1234";
  }
  return "?";
}

AblationMode parse_ablation_mode(std::string_view name) {
  std::string upper(name);
  for (auto& c : upper) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  if (upper == "S12") return AblationMode::s12;
  if (upper == "S123") return AblationMode::s123;
  if (upper == "S1234") return AblationMode::s1234;
  throw std::invalid_argument("unknown ablation mode '" + std::string(name) + "'");
}

CalibratedProvider::CalibratedProvider(const NormalizedScorer& scorer, const AdaptationMatrix* weights,
                                       AblationMode mode)
    : scorer_(scorer), weights_(weights), mode_(mode) {
  if (weights != nullptr &&
      (weights->num_entities() != scorer.num_entities() || weights->num_relations() != scorer.num_relations())) {
    throw std::invalid_argument("adaptation matrix shape does not match the scorer");
  }
}

Row CalibratedProvider::row(EntityId head, RelationId relation) const {
  auto normalized = scorer_.row(head, relation);
  if (mode_ == AblationMode::s12 || weights_ == nullptr) {
    if (mode_ != AblationMode::s1234) return Row::make_dense(*normalized);
  }
  std::vector<double> values = mode_ != AblationMode::s12 && weights_ != nullptr
                                   ? adapt_row(*normalized, weights_->weight(head, relation))
                                   : *normalized;
  if (mode_ == AblationMode::s1234) {
    for (auto t : scorer_.graph().neighbors(head, relation, SplitSet::known())) values[t] = 1.0;
  }
  return Row::make_dense(std::move(values));
}

std::unique_ptr<CalibratedProvider> ablation_provider(AblationMode mode, const NormalizedScorer& scorer,
                                                      const AdaptationMatrix* weights) {
  return std::make_unique<CalibratedProvider>(scorer, weights, mode);
}

std::unique_ptr<CalibratedProvider> finalize(const NormalizedScorer& scorer, const AdaptationMatrix& weights) {
  return std::make_unique<CalibratedProvider>(scorer, &weights, AblationMode::s1234);
}

void CalibrationConfig::validate() const {
  if (!(alpha > 0.0)) throw std::invalid_argument("alpha must be positive");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning rate must be positive");
  if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
  if (!(log_floor > 0.0 && log_floor < 1.0)) throw std::invalid_argument("log floor must be in (0,1)");
  for (const auto& q : query_types) {
    if (structure_index(q) < 0) throw std::invalid_argument("unknown training query type '" + q + "'");
  }
}

double answer_loss(const MembershipVector& prediction, std::span<const EntityId> answers, double floor,
                   std::vector<double>* adjoint) {
  const std::size_t d = prediction.dim();
  const auto a = prediction.to_dense();
  const std::size_t n_pos = answers.size();
  const std::size_t n_neg = d - n_pos;
  if (adjoint != nullptr) adjoint->assign(d, 0.0);
  std::vector<std::uint8_t> is_answer(d, 0);
  for (auto t : answers) {
    if (t >= d) throw std::out_of_range("answer id out of range");
    is_answer[t] = 1;
  }
  double pos = 0.0;
  double neg = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    if (is_answer[i]) {
      const double x = std::max(a[i], floor);
      pos += std::log(x);
      if (adjoint != nullptr && a[i] > floor) (*adjoint)[i] = -1.0 / (static_cast<double>(n_pos) * a[i]);
    } else {
      const double x = std::max(1.0 - a[i], floor);
      neg += std::log(x);
      if (adjoint != nullptr && 1.0 - a[i] > floor) (*adjoint)[i] = 1.0 / (static_cast<double>(n_neg) * (1.0 - a[i]));
    }
  }
  double loss = 0.0;
  if (n_pos > 0) loss -= pos / static_cast<double>(n_pos);
  if (n_neg > 0) loss -= neg / static_cast<double>(n_neg);
  return loss;
}

double query_loss_and_gradient(const NormalizedScorer& scorer, const AdaptationMatrix& weights,
                               const QueryGraph& query, std::span<const EntityId> answers, double floor,
                               std::unordered_map<std::size_t, double>* theta_grad, double scale) {
  CalibratedProvider provider(scorer, &weights, AblationMode::s123);
  GradientTape tape;
  auto prediction = evaluate(query, provider, theta_grad != nullptr ? &tape : nullptr);
  std::vector<double> adjoint;
  const double loss = answer_loss(prediction, answers, floor, theta_grad != nullptr ? &adjoint : nullptr);
  if (theta_grad == nullptr) return loss;
  auto grads = backward(tape, adjoint);
  for (const auto& e : grads.entries) {
    const double w = weights.weight(e.head, e.relation);
    const double fhat = (*scorer.row(e.head, e.relation))[e.tail];
    // X = min(W f^, 1) and dX/dtheta = W f^ below the clamp, 0 on it.
    if (w * fhat >= 1.0) continue;
    (*theta_grad)[weights.index(e.head, e.relation)] += scale * e.adjoint * e.value;
  }
  return loss;
}

AdaptationMatrix adapt(const NormalizedScorer& scorer, std::span<const QueryRecord> training,
                       const CalibrationConfig& config, AdaptReport* report) {
  config.validate();
  AdaptationMatrix weights(scorer.num_entities(), scorer.num_relations());

  std::vector<std::size_t> usable;
  std::vector<std::vector<EntityId>> answers(training.size());
  for (std::size_t i = 0; i < training.size(); ++i) {
    const auto& rec = training[i];
    if (std::find(config.query_types.begin(), config.query_types.end(), rec.structure) == config.query_types.end()) {
      continue;
    }
    auto& ans = answers[i];
    std::set_union(rec.easy_answers.begin(), rec.easy_answers.end(), rec.hard_answers.begin(), rec.hard_answers.end(),
                   std::back_inserter(ans));
    if (ans.empty()) continue;
    usable.push_back(i);
  }
  if (report != nullptr) report->queries_used = usable.size();
  if (usable.empty() || config.epochs == 0) return weights;

  auto& theta = weights.thetas();
  std::vector<double> m(theta.size(), 0.0);
  std::vector<double> v(theta.size(), 0.0);
  std::mt19937_64 rng(config.seed);
  std::size_t step = 0;
  std::unordered_map<std::size_t, double> grad;
  constexpr double kAdamEps = 1e-8;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(usable.begin(), usable.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < usable.size(); start += config.batch_size) {
      const std::size_t end = std::min(start + config.batch_size, usable.size());
      const double inv = 1.0 / static_cast<double>(end - start);
      grad.clear();
      double batch_loss = 0.0;
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t qi = usable[k];
        batch_loss += query_loss_and_gradient(scorer, weights, training[qi].query, answers[qi], config.log_floor,
                                              &grad, inv);
      }
      if (!std::isfinite(batch_loss)) {
        std::ostringstream msg;
        msg << "non-finite adaptation loss at epoch " << epoch << ", step " << step;
        throw CalibrationError(msg.str());
      }
      epoch_loss += batch_loss;
      ++step;
      const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(step));
      for (std::size_t p = 0; p < theta.size(); ++p) {
        double g = 0.0;
        if (auto it = grad.find(p); it != grad.end()) g = it->second;
        if (g == 0.0 && m[p] == 0.0 && v[p] == 0.0) continue;
        m[p] = config.beta1 * m[p] + (1.0 - config.beta1) * g;
        v[p] = config.beta2 * v[p] + (1.0 - config.beta2) * g * g;
        theta[p] -= config.learning_rate * (m[p] / c1) / (std::sqrt(v[p] / c2) + kAdamEps);
      }
    }
    if (report != nullptr) report->epoch_loss.push_back(epoch_loss / static_cast<double>(usable.size()));
  }
  if (report != nullptr) report->steps = step;
  return weights;
}

}  // namespace calq

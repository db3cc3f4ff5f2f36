#include "calq/membership.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace calq {

namespace {

void check_range(double v) {
  if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("membership value outside [0,1]: " + std::to_string(v));
}

}  // namespace

MembershipVector MembershipVector::zeros(std::size_t dim) {
  MembershipVector v;
  v.dim_ = dim;
  v.sparse_ = true;
  return v;
}

MembershipVector MembershipVector::ones(std::size_t dim) {
  MembershipVector v;
  v.dim_ = dim;
  v.values_.assign(dim, 1.0);
  return v;
}

MembershipVector MembershipVector::anchor(std::size_t dim, EntityId entity) {
  if (entity >= dim) throw std::out_of_range("anchor entity out of range");
  MembershipVector v;
  v.dim_ = dim;
  v.sparse_ = true;
  v.index_ = {entity};
  v.values_ = {1.0};
  return v;
}

MembershipVector MembershipVector::dense(std::vector<double> values) {
  for (double x : values) check_range(x);
  MembershipVector v;
  v.dim_ = values.size();
  v.values_ = std::move(values);
  return v;
}

MembershipVector MembershipVector::sparse(std::size_t dim, std::vector<EntityId> index, std::vector<double> values) {
  if (index.size() != values.size()) throw std::invalid_argument("index/value length mismatch");
  MembershipVector v;
  v.dim_ = dim;
  v.sparse_ = true;
  for (std::size_t k = 0; k < index.size(); ++k) {
    check_range(values[k]);
    if (index[k] >= dim) throw std::out_of_range("sparse index out of range");
    if (k > 0 && index[k] <= index[k - 1]) throw std::invalid_argument("sparse indices must increase");
    if (values[k] == 0.0) continue;
    v.index_.push_back(index[k]);
    v.values_.push_back(values[k]);
  }
  return v;
}

MembershipVector MembershipVector::from_buffer(std::vector<double> values) {
  std::size_t nnz = 0;
  for (double x : values) nnz += x != 0.0 ? 1 : 0;
  if (static_cast<double>(nnz) < kSparseSupportFraction * static_cast<double>(values.size())) {
    MembershipVector v;
    v.dim_ = values.size();
    v.sparse_ = true;
    v.index_.reserve(nnz);
    v.values_.reserve(nnz);
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (values[i] != 0.0) {
        v.index_.push_back(static_cast<EntityId>(i));
        v.values_.push_back(values[i]);
      }
    }
    return v;
  }
  MembershipVector v;
  v.dim_ = values.size();
  v.values_ = std::move(values);
  return v;
}

std::size_t MembershipVector::support_size() const {
  if (sparse_) return index_.size();
  std::size_t n = 0;
  for (double x : values_) n += x != 0.0 ? 1 : 0;
  return n;
}

double MembershipVector::at(std::size_t i) const {
  if (i >= dim_) throw std::out_of_range("membership index out of range");
  if (!sparse_) return values_[i];
  auto it = std::lower_bound(index_.begin(), index_.end(), static_cast<EntityId>(i));
  if (it == index_.end() || *it != i) return 0.0;
  return values_[static_cast<std::size_t>(it - index_.begin())];
}

std::vector<double> MembershipVector::to_dense() const {
  if (!sparse_) return values_;
  std::vector<double> out(dim_, 0.0);
  for (std::size_t k = 0; k < index_.size(); ++k) out[index_[k]] = values_[k];
  return out;
}

MembershipVector MembershipVector::as_sparse() const {
  if (sparse_) return *this;
  MembershipVector v;
  v.dim_ = dim_;
  v.sparse_ = true;
  for_each_nonzero([&](EntityId i, double x) {
    v.index_.push_back(i);
    v.values_.push_back(x);
  });
  return v;
}

MembershipVector MembershipVector::as_dense() const {
  MembershipVector v;
  v.dim_ = dim_;
  v.values_ = to_dense();
  return v;
}

bool MembershipVector::same_values(const MembershipVector& other) const {
  return dim_ == other.dim_ && to_dense() == other.to_dense();
}

std::vector<double> Row::to_dense(std::size_t dim) const {
  if (dense) return value;
  std::vector<double> out(dim, 0.0);
  for (std::size_t k = 0; k < index.size(); ++k) out[index[k]] = value[k];
  return out;
}

DenseTensorProvider::DenseTensorProvider(std::size_t num_entities, std::size_t num_relations)
    : entities_(num_entities), relations_(num_relations), data_(num_entities * num_relations * num_entities, 0.0) {}

DenseTensorProvider DenseTensorProvider::indicator(const KnowledgeGraph& kg, SplitSet splits) {
  DenseTensorProvider p(kg.num_entities(), kg.num_relations());
  for (Split s : {Split::train, Split::validation, Split::test}) {
    if (!splits.contains(s)) continue;
    for (const auto& t : kg.split(s)) p.at(t.head, t.relation, t.tail) = 1.0;
  }
  return p;
}

Row DenseTensorProvider::row(EntityId head, RelationId relation) const {
  if (head >= entities_ || relation >= relations_) throw std::out_of_range("row id out of range");
  auto begin = data_.begin() + static_cast<std::ptrdiff_t>(offset(head, relation));
  return Row::make_dense(std::vector<double>(begin, begin + static_cast<std::ptrdiff_t>(entities_)));
}

}  // namespace calq

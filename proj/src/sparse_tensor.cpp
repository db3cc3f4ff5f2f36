#include "calq/sparse_tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <exception>
#include <fstream>
#include <sstream>
#include <thread>

namespace calq {

CalibratedTensor::CalibratedTensor(std::uint32_t num_entities, std::uint32_t num_relations, double epsilon,
                                   std::vector<std::uint64_t> offsets, std::vector<std::uint32_t> index,
                                   std::vector<float> values)
    : entities_(num_entities),
      relations_(num_relations),
      epsilon_(epsilon),
      offsets_(std::move(offsets)),
      index_(std::move(index)),
      values_(std::move(values)) {
  if (num_entities > kIndexMask) throw std::invalid_argument("too many entities for 31-bit indices");
  const std::uint64_t rows = std::uint64_t{num_entities} * num_relations;
  if (offsets_.size() != rows + 1 || offsets_.front() != 0) throw std::invalid_argument("bad row offsets");
  if (index_.size() != values_.size() || offsets_.back() != index_.size()) {
    throw std::invalid_argument("offsets do not match entry count");
  }
  for (std::uint64_t row = 0; row < rows; ++row) {
    if (offsets_[row] > offsets_[row + 1]) throw std::invalid_argument("row offsets decrease");
    for (std::uint64_t k = offsets_[row]; k < offsets_[row + 1]; ++k) {
      const std::uint32_t col = index_[k] & kIndexMask;
      if (col >= num_entities) throw std::invalid_argument("column index out of range");
      if (k > offsets_[row] && (index_[k - 1] & kIndexMask) >= col) {
        throw std::invalid_argument("column indices not strictly increasing");
      }
      if (!(values_[k] > 0.0f && values_[k] <= 1.0f)) throw std::invalid_argument("stored value outside (0,1]");
    }
  }
}

Row CalibratedTensor::row(EntityId head, RelationId relation) const {
  if (head >= entities_ || relation >= relations_) throw std::out_of_range("tensor row out of range");
  const std::uint64_t r = std::uint64_t{head} * relations_ + relation;
  const std::uint64_t b = offsets_[r];
  const std::uint64_t e = offsets_[r + 1];
  std::vector<EntityId> idx(e - b);
  std::vector<double> val(e - b);
  for (std::uint64_t k = b; k < e; ++k) {
    idx[k - b] = index_[k] & kIndexMask;
    val[k - b] = values_[k];
  }
  return Row::make_sparse(std::move(idx), std::move(val));
}

std::int64_t CalibratedTensor::find(EntityId head, RelationId relation, EntityId tail) const {
  if (head >= entities_ || relation >= relations_ || tail >= entities_) return -1;
  const std::uint64_t r = std::uint64_t{head} * relations_ + relation;
  auto first = index_.begin() + static_cast<std::ptrdiff_t>(offsets_[r]);
  auto last = index_.begin() + static_cast<std::ptrdiff_t>(offsets_[r + 1]);
  auto it = std::lower_bound(first, last, tail, [](std::uint32_t a, std::uint32_t t) { return (a & kIndexMask) < t; });
  if (it == last || (*it & kIndexMask) != tail) return -1;
  return it - index_.begin();
}

double CalibratedTensor::value(EntityId head, RelationId relation, EntityId tail) const {
  auto k = find(head, relation, tail);
  return k < 0 ? 0.0 : static_cast<double>(values_[static_cast<std::size_t>(k)]);
}

bool CalibratedTensor::is_pinned(EntityId head, RelationId relation, EntityId tail) const {
  auto k = find(head, relation, tail);
  return k >= 0 && (index_[static_cast<std::size_t>(k)] & kPinnedBit) != 0;
}

bool CalibratedTensor::operator==(const CalibratedTensor& o) const {
  if (entities_ != o.entities_ || relations_ != o.relations_ || offsets_ != o.offsets_ || index_ != o.index_) {
    return false;
  }
  if (std::memcmp(&epsilon_, &o.epsilon_, sizeof(double)) != 0) return false;
  return values_.size() == o.values_.size() &&
         (values_.empty() || std::memcmp(values_.data(), o.values_.data(), values_.size() * sizeof(float)) == 0);
}

std::uint64_t estimated_bytes(std::uint64_t num_entities, std::uint64_t num_relations, std::uint64_t nnz) {
  return nnz * (sizeof(std::uint32_t) + sizeof(float)) + (num_entities * num_relations + 1) * sizeof(std::uint64_t);
}

SparsityReport stats(const CalibratedTensor& tensor) {
  SparsityReport rep;
  const std::uint64_t v = tensor.num_entities();
  const std::uint64_t r = tensor.num_relations();
  rep.nnz = tensor.nnz();
  rep.total = v * v * r;
  rep.sparsity = rep.total == 0 ? 1.0 : 1.0 - static_cast<double>(rep.nnz) / static_cast<double>(rep.total);
  rep.bytes = estimated_bytes(v, r, rep.nnz);
  return rep;
}

namespace {

struct Chunk {
  std::vector<std::uint64_t> row_sizes;
  std::vector<std::uint32_t> index;
  std::vector<float> values;
  // entries kept at each probe threshold (memory-cap mode only)
  std::vector<std::uint64_t> probe_counts;
};

// Ascending list of thresholds >= epsilon tried when the cap is exceeded.
std::vector<double> probe_grid(double epsilon) {
  std::vector<double> grid{epsilon};
  static constexpr double kSteps[] = {2.0, 5.0, 10.0};
  for (double decade = epsilon; decade < 1.0; decade *= 10.0) {
    for (double s : kSteps) {
      double c = decade * s;
      if (c < 1.0) grid.push_back(c);
    }
  }
  grid.push_back(1.0);
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  return grid;
}

void build_rows(const RowProvider& provider, const KnowledgeGraph& kg, const BuildOptions& opt,
                const std::vector<double>& grid, bool store, EntityId h_begin, EntityId h_end, Chunk& out) {
  const std::size_t d = provider.num_entities();
  const std::size_t nr = provider.num_relations();
  out.probe_counts.assign(grid.size(), 0);
  for (EntityId h = h_begin; h < h_end; ++h) {
    for (RelationId r = 0; r < nr; ++r) {
      Row row = provider.row(h, r);
      if (row.dense && row.value.size() != d) throw std::runtime_error("provider returned a row of wrong length");
      std::vector<EntityId> pinned;
      if (opt.pin_known) pinned = kg.neighbors(h, r, SplitSet::known());
      std::size_t p = 0;
      std::uint64_t kept = 0;
      auto emit_pinned = [&](EntityId t) {
        if (store) {
          out.index.push_back(t | CalibratedTensor::kPinnedBit);
          out.values.push_back(1.0f);
        }
        for (auto& c : out.probe_counts) ++c;
        ++kept;
      };
      row.for_each([&](EntityId t, double v) {
        while (p < pinned.size() && pinned[p] < t) emit_pinned(pinned[p++]);
        if (p < pinned.size() && pinned[p] == t) {
          emit_pinned(pinned[p++]);
          return;
        }
        if (!(v > opt.epsilon)) return;
        if (v > 1.0 || std::isnan(v)) throw std::runtime_error("provider value outside [0,1]");
        for (std::size_t g = 0; g < grid.size() && v > grid[g]; ++g) ++out.probe_counts[g];
        if (store) {
          out.index.push_back(t);
          out.values.push_back(static_cast<float>(v));
        }
        ++kept;
      });
      while (p < pinned.size()) emit_pinned(pinned[p++]);
      out.row_sizes.push_back(kept);
    }
  }
}

std::vector<Chunk> run_chunks(const RowProvider& provider, const KnowledgeGraph& kg, const BuildOptions& opt,
                              const std::vector<double>& grid, bool store) {
  const std::size_t v = provider.num_entities();
  unsigned threads = opt.threads == 0 ? std::max(1u, std::thread::hardware_concurrency()) : opt.threads;
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, std::max<std::size_t>(v, 1)));
  std::vector<Chunk> chunks(threads);
  std::vector<std::exception_ptr> errors(threads);
  auto bounds = [&](unsigned i) { return static_cast<EntityId>(v * i / threads); };
  auto work = [&](unsigned i) {
    try {
      build_rows(provider, kg, opt, grid, store, bounds(i), bounds(i + 1), chunks[i]);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  if (threads == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (unsigned i = 0; i < threads; ++i) pool.emplace_back(work, i);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return chunks;
}

}  // namespace

CalibratedTensor build_tensor(const RowProvider& provider, const KnowledgeGraph& kg, const BuildOptions& opt) {
  if (!(opt.epsilon > 0.0)) throw std::invalid_argument("epsilon must be positive");
  const std::size_t v = provider.num_entities();
  const std::size_t nr = provider.num_relations();
  if (v != kg.num_entities() || nr != kg.num_relations()) {
    throw std::invalid_argument("provider shape does not match the knowledge graph");
  }
  if (v > CalibratedTensor::kIndexMask) throw std::invalid_argument("too many entities for 31-bit indices");

  if (opt.memory_cap_bytes > 0) {
    const auto grid = probe_grid(opt.epsilon);
    auto chunks = run_chunks(provider, kg, opt, grid, false);
    std::vector<std::uint64_t> counts(grid.size(), 0);
    for (const auto& c : chunks) {
      for (std::size_t g = 0; g < grid.size(); ++g) counts[g] += c.probe_counts[g];
    }
    if (estimated_bytes(v, nr, counts[0]) > opt.memory_cap_bytes) {
      double suggestion = 0.0;
      for (std::size_t g = 1; g < grid.size(); ++g) {
        if (estimated_bytes(v, nr, counts[g]) <= opt.memory_cap_bytes) {
          suggestion = grid[g];
          break;
        }
      }
      std::ostringstream msg;
      msg << "tensor needs " << estimated_bytes(v, nr, counts[0]) << " bytes at epsilon " << opt.epsilon
          << ", cap is " << opt.memory_cap_bytes;
      if (suggestion > 0.0) {
        msg << "; smallest probed epsilon that fits: " << suggestion;
      } else {
        msg << "; no probed epsilon fits";
      }
      throw MemoryBudgetExceeded(msg.str(), suggestion);
    }
  }

  auto chunks = run_chunks(provider, kg, opt, {}, true);
  std::vector<std::uint64_t> offsets;
  offsets.reserve(v * nr + 1);
  offsets.push_back(0);
  std::vector<std::uint32_t> index;
  std::vector<float> values;
  for (auto& c : chunks) {
    for (auto s : c.row_sizes) offsets.push_back(offsets.back() + s);
    index.insert(index.end(), c.index.begin(), c.index.end());
    values.insert(values.end(), c.values.begin(), c.values.end());
    c = Chunk{};
  }
  return CalibratedTensor(static_cast<std::uint32_t>(v), static_cast<std::uint32_t>(nr), opt.epsilon,
                          std::move(offsets), std::move(index), std::move(values));
}

namespace {

constexpr char kTensorMagic[4] = {'C', 'Q', 'T', 'X'};
constexpr std::uint32_t kTensorVersion = 1;

template <typename T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void get(std::istream& in, T& v, const std::filesystem::path& path) {
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw TensorFileError("truncated tensor file: " + path.string());
}

}  // namespace

void save_tensor(const CalibratedTensor& t, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw TensorFileError("cannot write tensor file: " + path.string());
  out.write(kTensorMagic, sizeof(kTensorMagic));
  put(out, kTensorVersion);
  put(out, static_cast<std::uint32_t>(t.num_entities()));
  put(out, static_cast<std::uint32_t>(t.num_relations()));
  put(out, t.epsilon());
  put(out, static_cast<std::uint64_t>(t.nnz()));
  out.write(reinterpret_cast<const char*>(t.offsets().data()),
            static_cast<std::streamsize>(t.offsets().size() * sizeof(std::uint64_t)));
  for (std::size_t k = 0; k < t.nnz(); ++k) {
    put(out, t.raw_index()[k]);
    put(out, t.raw_values()[k]);
  }
  if (!out) throw TensorFileError("failed writing tensor file: " + path.string());
}

CalibratedTensor load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw TensorFileError("cannot open tensor file: " + path.string());
  char magic[4];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kTensorMagic, sizeof(magic)) != 0) {
    throw TensorFileError("not a tensor file (bad header): " + path.string());
  }
  std::uint32_t version = 0;
  get(in, version, path);
  if (version != kTensorVersion) {
    throw TensorFileError("unsupported tensor file version " + std::to_string(version) + ": " + path.string());
  }
  std::uint32_t v = 0;
  std::uint32_t r = 0;
  double eps = 0.0;
  std::uint64_t nnz = 0;
  get(in, v, path);
  get(in, r, path);
  get(in, eps, path);
  get(in, nnz, path);
  const std::uint64_t rows = std::uint64_t{v} * r;
  // Guard allocation against a corrupt size field.
  in.seekg(0, std::ios::end);
  const auto file_size = static_cast<std::uint64_t>(in.tellg());
  const std::uint64_t header = 4 + 4 + 4 + 4 + 8 + 8;
  if (file_size < header + (rows + 1) * 8 + nnz * 8) throw TensorFileError("truncated tensor file: " + path.string());
  in.seekg(static_cast<std::streamoff>(header));
  std::vector<std::uint64_t> offsets(rows + 1);
  in.read(reinterpret_cast<char*>(offsets.data()), static_cast<std::streamsize>(offsets.size() * 8));
  if (!in) throw TensorFileError("truncated tensor file: " + path.string());
  std::vector<std::uint32_t> index(nnz);
  std::vector<float> values(nnz);
  for (std::uint64_t k = 0; k < nnz; ++k) {
    get(in, index[k], path);
    get(in, values[k], path);
  }
  try {
    return CalibratedTensor(v, r, eps, std::move(offsets), std::move(index), std::move(values));
  } catch (const std::invalid_argument& e) {
    throw TensorFileError(std::string("corrupt tensor file: ") + e.what());
  }
}

}  // namespace calq

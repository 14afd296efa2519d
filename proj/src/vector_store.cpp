#include "facegen/vector_store.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace facegen {

namespace {

constexpr char kMagic[4] = {'V', 'E', 'C', '2'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("vector store: truncated file");
  return v;
}

}  // namespace

void VectorStore::append(const Vec& v, std::string label) {
  if (dim_ == 0) dim_ = v.size();
  if (v.size() != dim_) {
    throw std::invalid_argument("VectorStore::append: vector has " + std::to_string(v.size()) +
                                " values, store dim is " + std::to_string(dim_));
  }
  if (!label.empty() && labels_.size() != count()) {
    throw std::invalid_argument("VectorStore::append: mixing labeled and unlabeled rows");
  }
  data_.insert(data_.end(), v.begin(), v.end());
  if (!label.empty()) labels_.push_back(std::move(label));
}

Vec VectorStore::row(std::size_t i) const {
  if (i >= count()) throw std::out_of_range("VectorStore::row: index out of range");
  return Vec(data_.begin() + static_cast<std::ptrdiff_t>(i * dim_),
             data_.begin() + static_cast<std::ptrdiff_t>((i + 1) * dim_));
}

const std::string& VectorStore::label(std::size_t i) const {
  if (i >= labels_.size()) throw std::out_of_range("VectorStore::label: index out of range");
  return labels_[i];
}

void VectorStore::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("vector store: cannot open " + path.string() + " for writing");
  os.write(kMagic, 4);
  write_pod(os, kVersion);
  write_pod(os, static_cast<std::uint32_t>(dim_));
  write_pod(os, static_cast<std::uint64_t>(count()));
  std::vector<float> buf(data_.size());
  for (std::size_t i = 0; i < data_.size(); ++i) buf[i] = static_cast<float>(data_[i]);
  os.write(reinterpret_cast<const char*>(buf.data()),
           static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!os) throw std::runtime_error("vector store: write failed for " + path.string());
  if (!labels_.empty()) {
    std::ofstream ls(path.string() + ".labels", std::ios::binary);
    if (!ls) throw std::runtime_error("vector store: cannot write labels for " + path.string());
    for (const auto& l : labels_) ls << l << '\n';
  }
}

VectorStore VectorStore::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("vector store: cannot open " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) {
    throw std::runtime_error("vector store: bad magic in " + path.string());
  }
  const auto version = read_pod<std::uint32_t>(is);
  if (version != kVersion) {
    throw std::runtime_error("vector store: unsupported version " + std::to_string(version));
  }
  const auto dim = read_pod<std::uint32_t>(is);
  const auto cnt = read_pod<std::uint64_t>(is);
  VectorStore store(dim);
  std::vector<float> buf(static_cast<std::size_t>(cnt) * dim);
  is.read(reinterpret_cast<char*>(buf.data()),
          static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!is) throw std::runtime_error("vector store: payload shorter than header count");
  store.data_.assign(buf.begin(), buf.end());
  const auto label_path = path.string() + ".labels";
  if (std::filesystem::exists(label_path)) {
    std::ifstream ls(label_path);
    std::string line;
    while (std::getline(ls, line)) store.labels_.push_back(line);
    if (store.labels_.size() != store.count()) {
      throw std::runtime_error("vector store: label count does not match row count");
    }
  }
  return store;
}

MaxCosine pairwise_max_cosine(const Vec& query, const VectorStore& pool,
                              std::optional<std::size_t> exclude, std::size_t block) {
  if (pool.dim() != query.size()) {
    throw std::invalid_argument("pairwise_max_cosine: dim mismatch " +
                                std::to_string(query.size()) + " vs " + std::to_string(pool.dim()));
  }
  const std::size_t n = pool.count();
  const double qn = l2norm(query);
  if (qn == 0.0) throw std::invalid_argument("pairwise_max_cosine: zero query");
  MaxCosine best{-2.0, 0};
  bool any = false;
  const auto& data = pool.data();
  const std::size_t dim = pool.dim();
  for (std::size_t b0 = 0; b0 < n; b0 += block) {
    const std::size_t b1 = std::min(n, b0 + block);
    for (std::size_t i = b0; i < b1; ++i) {
      if (exclude && *exclude == i) continue;
      const double* row = data.data() + i * dim;
      double d = 0.0, rn = 0.0;
      for (std::size_t j = 0; j < dim; ++j) {
        d += row[j] * query[j];
        rn += row[j] * row[j];
      }
      if (rn == 0.0) throw std::invalid_argument("pairwise_max_cosine: zero vector in pool");
      const double c = d / (qn * std::sqrt(rn));
      if (!any || c > best.sim) {
        best = {c, i};
        any = true;
      }
    }
  }
  if (!any) throw std::invalid_argument("pairwise_max_cosine: pool empty after exclusion");
  return best;
}

std::vector<double> all_pairs_max_cosine(const VectorStore& store, std::size_t block) {
  const std::size_t n = store.count();
  const std::size_t dim = store.dim();
  const auto& data = store.data();
  std::vector<double> inv_norm(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    const double* row = data.data() + i * dim;
    for (std::size_t j = 0; j < dim; ++j) s += row[j] * row[j];
    if (s == 0.0) throw std::invalid_argument("all_pairs_max_cosine: zero vector at row " + std::to_string(i));
    inv_norm[i] = 1.0 / std::sqrt(s);
  }
  std::vector<double> best(n, -2.0);
  // Upper-triangular blocked sweep; each dot product updates both rows.
  for (std::size_t b0 = 0; b0 < n; b0 += block) {
    const std::size_t b1 = std::min(n, b0 + block);
    for (std::size_t i = b0; i < b1; ++i) {
      const double* ri = data.data() + i * dim;
      for (std::size_t j = i + 1; j < n; ++j) {
        const double* rj = data.data() + j * dim;
        double d = 0.0;
        for (std::size_t k = 0; k < dim; ++k) d += ri[k] * rj[k];
        const double c = d * inv_norm[i] * inv_norm[j];
        if (c > best[i]) best[i] = c;
        if (c > best[j]) best[j] = c;
      }
    }
  }
  return best;
}

}  // namespace facegen

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "facegen/embedding.hpp"

namespace facegen {

// In-memory collection of fixed-dimension vectors with optional per-row
// identity labels.
//
// On-disk format (little-endian):
//   magic "VEC2" | u32 version=1 | u32 dim | u64 count | count*dim float32
// Labels, when present, live in a companion file "<path>.labels", one
// identity id per line, UTF-8.
class VectorStore {
 public:
  VectorStore() = default;
  explicit VectorStore(std::size_t dim) : dim_(dim) {}

  std::size_t dim() const { return dim_; }
  std::size_t count() const { return dim_ == 0 ? 0 : data_.size() / dim_; }
  bool has_labels() const { return !labels_.empty(); }

  void append(const Vec& v, std::string label = {});
  Vec row(std::size_t i) const;
  const std::string& label(std::size_t i) const;
  const std::vector<double>& data() const { return data_; }

  void save(const std::filesystem::path& path) const;
  static VectorStore load(const std::filesystem::path& path);

 private:
  std::size_t dim_ = 0;
  std::vector<double> data_;  // row-major; file payload is float32
  std::vector<std::string> labels_;
};

struct MaxCosine {
  double sim;
  std::size_t index;
};

// Exact maximum cosine similarity of `query` over the pool, scanning in
// blocks of `block` rows so no pool-sized similarity matrix is ever resident.
MaxCosine pairwise_max_cosine(const Vec& query, const VectorStore& pool,
                              std::optional<std::size_t> exclude = std::nullopt,
                              std::size_t block = 4096);

// Per-row max cosine against every *other* row of the store (blocked scans).
std::vector<double> all_pairs_max_cosine(const VectorStore& store, std::size_t block = 4096);

}  // namespace facegen

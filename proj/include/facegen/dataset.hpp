#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "facegen/embedding.hpp"
#include "facegen/vector_store.hpp"

namespace facegen {

inline constexpr const char* kStageRandom = "random";
inline constexpr const char* kStageAttrOpPose = "attrop-pose";
inline constexpr const char* kStageLoraPose = "lora-pose";

struct ManifestRow {
  std::string identity_id;
  std::string image_id;
  std::string stage;
  double sim_to_identity = 0.0;
  double quality = 0.0;
  std::string archive_ref;  // "<archive path>#<record index>"
};

// Line-delimited UTF-8, tab-separated fields in ManifestRow order.
class DatasetManifest {
 public:
  void append(ManifestRow row);
  const std::vector<ManifestRow>& rows() const { return rows_; }
  std::size_t size() const { return rows_.size(); }
  const ManifestRow& row(std::size_t i) const { return rows_[i]; }

  // Identities in first-appearance order, with their row indices.
  std::vector<std::pair<std::string, std::vector<std::size_t>>> by_identity() const;

  void save(const std::filesystem::path& path) const;
  static DatasetManifest load(const std::filesystem::path& path);

 private:
  std::vector<ManifestRow> rows_;
  std::map<std::pair<std::string, std::string>, std::size_t> keys_;
};

std::pair<std::string, std::size_t> parse_archive_ref(const std::string& ref);
std::string make_archive_ref(const std::string& path, std::size_t index);

// Flat archive of fixed-size float32 image records:
//   magic "IMGA" | u32 version=1 | u32 h | u32 w | u32 ch | u64 count | payload.
// Values are quantized to float32 on append, so a record read back equals
// exactly what downstream gates were evaluated on.
class ImageArchive {
 public:
  ImageArchive() = default;
  ImageArchive(std::size_t h, std::size_t w, std::size_t ch) : h_(h), w_(w), ch_(ch) {}

  std::size_t h() const { return h_; }
  std::size_t w() const { return w_; }
  std::size_t ch() const { return ch_; }
  std::size_t record_size() const { return h_ * w_ * ch_; }
  std::size_t count() const { return record_size() == 0 ? 0 : data_.size() / record_size(); }

  // Returns the record index; the stored (and returned) image is the float32
  // rounding of the input.
  std::size_t append(const Vec& image);
  Vec get(std::size_t index) const;

  void save(const std::filesystem::path& path) const;
  static ImageArchive load(const std::filesystem::path& path);

 private:
  std::size_t h_ = 0, w_ = 0, ch_ = 0;
  std::vector<float> data_;
};

struct GateConfig {
  double identity_min_sim = 0.9;
  double identity_min_quality = 26.0;
  double perturb_min_sim = 0.7;
  double perturb_min_quality = 24.0;

  void validate() const;
};

struct GateDecision {
  bool accept = false;
  double sim = 0.0;
  double quality = 0.0;
};

// Identity gate: strict cosine(embed(image), v_id) > min_sim AND quality >
// min_quality. Values are returned regardless of the decision.
GateDecision gate_identity(const Vec& image, const Vec& v_id, const OracleEmbedder& oracle,
                           const GateConfig& gate);

// Perturbation gate: compares against the identity image's feature.
GateDecision gate_perturbation(const Vec& image, const Vec& identity_feature,
                               const OracleEmbedder& oracle, const GateConfig& gate);

struct AssembleConfig {
  std::size_t images_per_identity = 50;  // K
  std::size_t replace = 40;
  std::size_t attrop_share = 20;  // of the replaced slots; the rest come from the pose base
  std::uint64_t seed = 0;

  void validate() const;
};

// Per identity: keep K-replace seeded-random base-1 rows, fill attrop_share
// slots from the adjusted base and the remainder from the pose base. Errors
// name the identity that lacks supply.
DatasetManifest assemble(const DatasetManifest& base1, const DatasetManifest& base2,
                         const DatasetManifest& base3, const AssembleConfig& cfg);

// DBSCAN over cosine distance (1 - cosine). Neighborhoods use distance <=
// eps and include the point itself; label -1 marks noise.
std::vector<int> dbscan_labels(const std::vector<Vec>& points, double eps, std::size_t min_pts);

struct CleanResult {
  DatasetManifest kept;
  std::vector<ManifestRow> dropped;
  std::vector<std::string> warnings;
};

// Per-identity DBSCAN; noise rows are dropped. Identities with fewer than
// min_pts rows are kept unchanged with a warning. `embeddings` is row-aligned
// with the manifest.
CleanResult dbscan_clean(const DatasetManifest& manifest, const VectorStore& embeddings,
                         double eps = 0.5, std::size_t min_pts = 5);

// Drops every row whose embedding has cosine > threshold against any
// reference identity feature; blocked scan over the reference store.
CleanResult leakage_check(const DatasetManifest& manifest, const VectorStore& embeddings,
                          const VectorStore& reference_ids, double threshold = 0.4,
                          std::size_t block = 4096);

}  // namespace facegen

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "facegen/dataset.hpp"
#include "facegen/vector_store.hpp"

namespace facegen {

struct SeparabilityReport {
  std::size_t n_total = 0;
  std::size_t n_sep = 0;
  double d_sep = 0.0;
  double threshold = 0.4;
  std::vector<double> max_sims;  // per identity, -1 for a single-identity pool
};

// An identity is well separated when its max cosine against every other
// identity feature stays strictly below the threshold. A single-identity
// pool is vacuously separated.
SeparabilityReport separability(const VectorStore& id_features, double threshold = 0.4,
                                std::size_t block = 4096);

// Mean image feature per identity, rows in first-appearance order.
VectorStore identity_mean_features(const DatasetManifest& manifest, const VectorStore& embeddings);

enum class ConsistencyMode {
  centroid,  // mean cosine between image features and their identity mean
  pairwise,  // mean cosine over distinct image pairs within the identity
};

struct ConsistencyReport {
  std::size_t identities = 0;
  double d_consis = 0.0;
  std::vector<double> per_identity;
};

ConsistencyReport consistency(const DatasetManifest& manifest, const VectorStore& embeddings,
                              ConsistencyMode mode = ConsistencyMode::centroid);

// CSV with a header row: identity_id,image_id,<attribute>... Values that
// parse as doubles are continuous; everything else is categorical.
struct AttributeTable {
  std::vector<std::string> attributes;
  std::vector<std::string> identity_ids;
  std::vector<std::string> image_ids;
  // column-major: values[a][row]
  std::vector<std::vector<std::string>> values;

  static AttributeTable load_csv(const std::filesystem::path& path);
};

struct FiveNumber {
  double min = 0.0, q1 = 0.0, median = 0.0, q3 = 0.0, max = 0.0;
};

FiveNumber five_number_summary(std::vector<double> values);

struct ContinuousAttributeSummary {
  double avg_intra_mean = 0.0;  // average over identities of the intra-class mean
  double avg_intra_std = 0.0;   // average over identities of the intra-class population std
  FiveNumber mean_summary;      // five-number summary of the per-identity means
  FiveNumber std_summary;
};

struct CategoricalAttributeSummary {
  // category -> average over identities of the intra-class fraction
  std::map<std::string, double> avg_fraction;
};

struct AttributeStats {
  std::map<std::string, ContinuousAttributeSummary> continuous;
  std::map<std::string, CategoricalAttributeSummary> categorical;
};

AttributeStats attribute_stats(const AttributeTable& table);

struct ScoreSet {
  std::vector<double> genuine;
  std::vector<double> impostor;
};

struct TprResult {
  double threshold = 0.0;
  double tpr = 0.0;
  double realized_fpr = 0.0;
};

// Threshold = smallest impostor score whose strictly-above false-positive
// fraction is <= fpr_target (+inf when even the top impostor fails); TPR
// counts genuine scores >= threshold.
TprResult tpr_at_fpr(const ScoreSet& scores, double fpr_target);

struct LabeledScore {
  double score;
  bool genuine;
};

// Ten-fold protocol over contiguous folds in input order: the threshold
// maximizing train accuracy (scanned over midpoints of the sorted train
// scores) is applied to the held-out fold; the mean fold accuracy comes back.
double kfold_accuracy(const std::vector<LabeledScore>& pairs, std::size_t k = 10);

struct GroupRate {
  double tpr = 0.0;
  std::size_t genuine_count = 0;
};

struct DemographicReport {
  double threshold = 0.0;            // from pooled impostors at the target FPR
  std::map<std::string, GroupRate> per_group;
  std::map<std::string, double> gender_gap;  // race -> TPR(male) - TPR(female)
};

// Group keys end in 'M' or 'F' with the race as prefix (e.g. "AM", "AF").
// The threshold is computed once from all impostor scores pooled.
DemographicReport demographic_breakdown(const std::map<std::string, ScoreSet>& groups,
                                        double fpr_target);

}  // namespace facegen

#include "facegen/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace facegen {

SeparabilityReport separability(const VectorStore& id_features, double threshold,
                                std::size_t block) {
  if (id_features.count() == 0) throw std::invalid_argument("separability: empty store");
  SeparabilityReport report;
  report.threshold = threshold;
  report.n_total = id_features.count();
  if (report.n_total == 1) {
    report.n_sep = 1;
    report.d_sep = 1.0;
    report.max_sims = {-1.0};
    return report;
  }
  report.max_sims = all_pairs_max_cosine(id_features, block);
  for (double s : report.max_sims) {
    if (s < threshold) ++report.n_sep;
  }
  report.d_sep = static_cast<double>(report.n_sep) / static_cast<double>(report.n_total);
  return report;
}

VectorStore identity_mean_features(const DatasetManifest& manifest, const VectorStore& embeddings) {
  if (embeddings.count() != manifest.size()) {
    throw std::invalid_argument("identity_mean_features: embeddings not aligned with manifest");
  }
  VectorStore means(embeddings.dim());
  for (const auto& [id, rows] : manifest.by_identity()) {
    Vec mean(embeddings.dim(), 0.0);
    for (auto r : rows) {
      const Vec e = embeddings.row(r);
      for (std::size_t j = 0; j < mean.size(); ++j) mean[j] += e[j];
    }
    for (auto& v : mean) v /= static_cast<double>(rows.size());
    means.append(mean, id);
  }
  return means;
}

ConsistencyReport consistency(const DatasetManifest& manifest, const VectorStore& embeddings,
                              ConsistencyMode mode) {
  if (embeddings.count() != manifest.size()) {
    throw std::invalid_argument("consistency: embeddings not aligned with manifest");
  }
  if (manifest.size() == 0) throw std::invalid_argument("consistency: empty manifest");
  ConsistencyReport report;
  for (const auto& [id, rows] : manifest.by_identity()) {
    double acc = 0.0;
    if (mode == ConsistencyMode::centroid) {
      Vec mean(embeddings.dim(), 0.0);
      for (auto r : rows) {
        const Vec e = embeddings.row(r);
        for (std::size_t j = 0; j < mean.size(); ++j) mean[j] += e[j];
      }
      for (auto& v : mean) v /= static_cast<double>(rows.size());
      if (l2norm(mean) == 0.0) {
        throw std::runtime_error("consistency: identity " + id + " has a zero mean feature");
      }
      for (auto r : rows) acc += cosine_sim(embeddings.row(r), mean);
      acc /= static_cast<double>(rows.size());
    } else {
      if (rows.size() == 1) {
        acc = 1.0;
      } else {
        std::size_t pairs = 0;
        for (std::size_t a = 0; a < rows.size(); ++a) {
          for (std::size_t b = a + 1; b < rows.size(); ++b) {
            acc += cosine_sim(embeddings.row(rows[a]), embeddings.row(rows[b]));
            ++pairs;
          }
        }
        acc /= static_cast<double>(pairs);
      }
    }
    report.per_identity.push_back(acc);
  }
  report.identities = report.per_identity.size();
  double total = 0.0;
  for (double v : report.per_identity) total += v;
  report.d_consis = total / static_cast<double>(report.identities);
  return report;
}

AttributeTable AttributeTable::load_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("attribute table: cannot open " + path.string());
  AttributeTable t;
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("attribute table: empty file");
  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string field;
    while (std::getline(ss, field, ',')) out.push_back(field);
    if (!s.empty() && s.back() == ',') out.push_back("");
    return out;
  };
  auto header = split(line);
  if (header.size() < 3 || header[0] != "identity_id" || header[1] != "image_id") {
    throw std::runtime_error("attribute table: header must start with identity_id,image_id");
  }
  t.attributes.assign(header.begin() + 2, header.end());
  t.values.resize(t.attributes.size());
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto fields = split(line);
    if (fields.size() != header.size()) {
      throw std::runtime_error("attribute table: " + path.string() + ":" + std::to_string(lineno) +
                               ": field count mismatch");
    }
    t.identity_ids.push_back(fields[0]);
    t.image_ids.push_back(fields[1]);
    for (std::size_t a = 0; a < t.attributes.size(); ++a) t.values[a].push_back(fields[a + 2]);
  }
  return t;
}

FiveNumber five_number_summary(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("five_number_summary: empty input");
  std::sort(values.begin(), values.end());
  auto quantile = [&](double q) {
    const double pos = q * static_cast<double>(values.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = static_cast<std::size_t>(std::ceil(pos));
    const double frac = pos - static_cast<double>(lo);
    return values[lo] * (1.0 - frac) + values[hi] * frac;
  };
  return {values.front(), quantile(0.25), quantile(0.5), quantile(0.75), values.back()};
}

namespace {

bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  std::size_t pos = 0;
  try {
    out = std::stod(s, &pos);
  } catch (...) {
    return false;
  }
  return pos == s.size();
}

}  // namespace

AttributeStats attribute_stats(const AttributeTable& table) {
  if (table.identity_ids.empty()) throw std::invalid_argument("attribute_stats: empty table");
  // Row indices per identity, first-appearance order.
  std::vector<std::pair<std::string, std::vector<std::size_t>>> groups;
  {
    std::map<std::string, std::size_t> where;
    for (std::size_t i = 0; i < table.identity_ids.size(); ++i) {
      auto it = where.find(table.identity_ids[i]);
      if (it == where.end()) {
        where.emplace(table.identity_ids[i], groups.size());
        groups.push_back({table.identity_ids[i], {i}});
      } else {
        groups[it->second].second.push_back(i);
      }
    }
  }
  AttributeStats stats;
  for (std::size_t a = 0; a < table.attributes.size(); ++a) {
    const auto& column = table.values[a];
    bool continuous = true;
    double tmp;
    for (const auto& v : column) {
      if (!parse_double(v, tmp)) {
        continuous = false;
        break;
      }
    }
    if (continuous) {
      std::vector<double> means, stds;
      means.reserve(groups.size());
      stds.reserve(groups.size());
      for (const auto& [id, rows] : groups) {
        double mean = 0.0;
        for (auto r : rows) {
          parse_double(column[r], tmp);
          mean += tmp;
        }
        mean /= static_cast<double>(rows.size());
        double var = 0.0;
        for (auto r : rows) {
          parse_double(column[r], tmp);
          var += (tmp - mean) * (tmp - mean);
        }
        var /= static_cast<double>(rows.size());  // population std; 0 for singletons
        means.push_back(mean);
        stds.push_back(std::sqrt(var));
      }
      ContinuousAttributeSummary s;
      for (double m : means) s.avg_intra_mean += m;
      for (double d : stds) s.avg_intra_std += d;
      s.avg_intra_mean /= static_cast<double>(means.size());
      s.avg_intra_std /= static_cast<double>(stds.size());
      s.mean_summary = five_number_summary(means);
      s.std_summary = five_number_summary(stds);
      stats.continuous.emplace(table.attributes[a], std::move(s));
    } else {
      CategoricalAttributeSummary s;
      for (const auto& [id, rows] : groups) {
        std::map<std::string, std::size_t> counts;
        for (auto r : rows) counts[column[r]]++;
        for (const auto& [cat, cnt] : counts) {
          s.avg_fraction[cat] +=
              static_cast<double>(cnt) / static_cast<double>(rows.size());
        }
      }
      for (auto& [cat, total] : s.avg_fraction) total /= static_cast<double>(groups.size());
      stats.categorical.emplace(table.attributes[a], std::move(s));
    }
  }
  return stats;
}

TprResult tpr_at_fpr(const ScoreSet& scores, double fpr_target) {
  if (scores.genuine.empty() || scores.impostor.empty()) {
    throw std::invalid_argument("tpr_at_fpr: genuine and impostor scores must be non-empty");
  }
  if (!(fpr_target > 0.0) || !(fpr_target < 1.0)) {
    throw std::invalid_argument("tpr_at_fpr: fpr_target must be in (0, 1)");
  }
  std::vector<double> imp(scores.impostor);
  std::sort(imp.begin(), imp.end());
  const auto m = static_cast<double>(imp.size());
  // Candidate thresholds are the impostor scores in ascending order; the
  // strictly-above count is monotone non-increasing along the scan.
  double threshold = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < imp.size(); ++i) {
    const double t = imp[i];
    // Number of impostors strictly above t.
    const auto above = static_cast<double>(imp.end() - std::upper_bound(imp.begin(), imp.end(), t));
    if (above / m <= fpr_target) {
      threshold = t;
      break;
    }
  }
  TprResult r;
  r.threshold = threshold;
  std::size_t tp = 0;
  for (double g : scores.genuine) {
    if (g >= threshold) ++tp;
  }
  r.tpr = static_cast<double>(tp) / static_cast<double>(scores.genuine.size());
  std::size_t fp = 0;
  for (double s : scores.impostor) {
    if (s > threshold) ++fp;
  }
  r.realized_fpr = static_cast<double>(fp) / m;
  return r;
}

double kfold_accuracy(const std::vector<LabeledScore>& pairs, std::size_t k) {
  if (k < 2) throw std::invalid_argument("kfold_accuracy: need k >= 2");
  if (pairs.size() < k) throw std::invalid_argument("kfold_accuracy: fewer pairs than folds");
  const std::size_t n = pairs.size();
  // Contiguous fold boundaries in input order.
  auto fold_begin = [&](std::size_t f) { return f * n / k; };
  for (std::size_t f = 0; f < k; ++f) {
    bool has_g = false, has_i = false;
    for (std::size_t i = fold_begin(f); i < fold_begin(f + 1); ++i) {
      (pairs[i].genuine ? has_g : has_i) = true;
    }
    if (!has_g || !has_i) {
      throw std::runtime_error("kfold_accuracy: fold " + std::to_string(f) +
                               " contains a single class only");
    }
  }
  auto accuracy_at = [](const std::vector<LabeledScore>& set, double threshold) {
    std::size_t correct = 0;
    for (const auto& p : set) {
      const bool predicted = p.score >= threshold;
      if (predicted == p.genuine) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(set.size());
  };
  double total = 0.0;
  for (std::size_t f = 0; f < k; ++f) {
    std::vector<LabeledScore> train, test;
    for (std::size_t i = 0; i < n; ++i) {
      if (i >= fold_begin(f) && i < fold_begin(f + 1)) {
        test.push_back(pairs[i]);
      } else {
        train.push_back(pairs[i]);
      }
    }
    std::vector<double> sorted;
    sorted.reserve(train.size());
    for (const auto& p : train) sorted.push_back(p.score);
    std::sort(sorted.begin(), sorted.end());
    sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
    // Midpoints of adjacent distinct scores plus both outer extremes.
    std::vector<double> candidates;
    candidates.push_back(sorted.front() - 1.0);
    for (std::size_t i = 0; i + 1 < sorted.size(); ++i) {
      candidates.push_back(0.5 * (sorted[i] + sorted[i + 1]));
    }
    candidates.push_back(sorted.back() + 1.0);
    double best_threshold = candidates.front();
    double best_acc = -1.0;
    for (double c : candidates) {
      const double acc = accuracy_at(train, c);
      if (acc > best_acc) {
        best_acc = acc;
        best_threshold = c;
      }
    }
    total += accuracy_at(test, best_threshold);
  }
  return total / static_cast<double>(k);
}

DemographicReport demographic_breakdown(const std::map<std::string, ScoreSet>& groups,
                                        double fpr_target) {
  if (groups.empty()) throw std::invalid_argument("demographic_breakdown: no groups");
  ScoreSet pooled;
  for (const auto& [name, set] : groups) {
    if (set.genuine.empty() || set.impostor.empty()) {
      throw std::invalid_argument("demographic_breakdown: group " + name +
                                  " lacks genuine or impostor scores");
    }
    pooled.genuine.insert(pooled.genuine.end(), set.genuine.begin(), set.genuine.end());
    pooled.impostor.insert(pooled.impostor.end(), set.impostor.begin(), set.impostor.end());
  }
  DemographicReport report;
  report.threshold = tpr_at_fpr(pooled, fpr_target).threshold;
  for (const auto& [name, set] : groups) {
    std::size_t tp = 0;
    for (double g : set.genuine) {
      if (g >= report.threshold) ++tp;
    }
    report.per_group[name] = {static_cast<double>(tp) / static_cast<double>(set.genuine.size()),
                              set.genuine.size()};
  }
  // Gender gap per race: TPR(<race>M) - TPR(<race>F).
  for (const auto& [name, rate] : report.per_group) {
    if (name.empty() || name.back() != 'M') continue;
    const std::string race = name.substr(0, name.size() - 1);
    auto female = report.per_group.find(race + "F");
    if (female == report.per_group.end()) {
      throw std::invalid_argument("demographic_breakdown: group " + name + " has no " + race +
                                  "F counterpart");
    }
    report.gender_gap[race] = rate.tpr - female->second.tpr;
  }
  return report;
}

}  // namespace facegen

#include "facegen/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <deque>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "facegen/rng.hpp"

namespace facegen {

void DatasetManifest::append(ManifestRow row) {
  auto key = std::make_pair(row.identity_id, row.image_id);
  if (!keys_.emplace(std::move(key), rows_.size()).second) {
    throw std::invalid_argument("manifest: duplicate (identity_id, image_id) = (" +
                                row.identity_id + ", " + row.image_id + ")");
  }
  if (!(row.sim_to_identity >= -1.0 - 1e-12) || !(row.sim_to_identity <= 1.0 + 1e-12)) {
    throw std::invalid_argument("manifest: sim_to_identity outside [-1, 1]");
  }
  rows_.push_back(std::move(row));
}

std::vector<std::pair<std::string, std::vector<std::size_t>>> DatasetManifest::by_identity() const {
  std::vector<std::pair<std::string, std::vector<std::size_t>>> out;
  std::map<std::string, std::size_t> where;
  for (std::size_t i = 0; i < rows_.size(); ++i) {
    auto it = where.find(rows_[i].identity_id);
    if (it == where.end()) {
      where.emplace(rows_[i].identity_id, out.size());
      out.push_back({rows_[i].identity_id, {i}});
    } else {
      out[it->second].second.push_back(i);
    }
  }
  return out;
}

namespace {

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

void DatasetManifest::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("manifest: cannot open " + path.string() + " for writing");
  for (const auto& r : rows_) {
    os << r.identity_id << '\t' << r.image_id << '\t' << r.stage << '\t'
       << format_double(r.sim_to_identity) << '\t' << format_double(r.quality) << '\t'
       << r.archive_ref << '\n';
  }
}

DatasetManifest DatasetManifest::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("manifest: cannot open " + path.string());
  DatasetManifest m;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (;;) {
      const auto tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab == std::string::npos ? tab : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (fields.size() != 6) {
      throw std::runtime_error("manifest: " + path.string() + ":" + std::to_string(lineno) +
                               ": expected 6 tab-separated fields, got " +
                               std::to_string(fields.size()));
    }
    ManifestRow r;
    r.identity_id = fields[0];
    r.image_id = fields[1];
    r.stage = fields[2];
    r.sim_to_identity = std::stod(fields[3]);
    r.quality = std::stod(fields[4]);
    r.archive_ref = fields[5];
    m.append(std::move(r));
  }
  return m;
}

std::string make_archive_ref(const std::string& path, std::size_t index) {
  return path + "#" + std::to_string(index);
}

std::pair<std::string, std::size_t> parse_archive_ref(const std::string& ref) {
  const auto hash = ref.rfind('#');
  if (hash == std::string::npos) {
    throw std::invalid_argument("archive ref '" + ref + "' lacks '#<index>'");
  }
  return {ref.substr(0, hash), static_cast<std::size_t>(std::stoull(ref.substr(hash + 1)))};
}

namespace {

constexpr char kArchiveMagic[4] = {'I', 'M', 'G', 'A'};
constexpr std::uint32_t kArchiveVersion = 1;

template <class T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("image archive: truncated file");
  return v;
}

}  // namespace

std::size_t ImageArchive::append(const Vec& image) {
  if (image.size() != record_size()) {
    throw std::invalid_argument("image archive: record has " + std::to_string(image.size()) +
                                " values, expected " + std::to_string(record_size()));
  }
  const std::size_t index = count();
  for (double v : image) data_.push_back(static_cast<float>(v));
  return index;
}

Vec ImageArchive::get(std::size_t index) const {
  if (index >= count()) throw std::out_of_range("image archive: record index out of range");
  const std::size_t n = record_size();
  Vec out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<double>(data_[index * n + i]);
  return out;
}

void ImageArchive::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("image archive: cannot open " + path.string() + " for writing");
  os.write(kArchiveMagic, 4);
  write_pod(os, kArchiveVersion);
  write_pod(os, static_cast<std::uint32_t>(h_));
  write_pod(os, static_cast<std::uint32_t>(w_));
  write_pod(os, static_cast<std::uint32_t>(ch_));
  write_pod(os, static_cast<std::uint64_t>(count()));
  os.write(reinterpret_cast<const char*>(data_.data()),
           static_cast<std::streamsize>(data_.size() * sizeof(float)));
  if (!os) throw std::runtime_error("image archive: write failed for " + path.string());
}

ImageArchive ImageArchive::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("image archive: cannot open " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kArchiveMagic, 4) != 0) {
    throw std::runtime_error("image archive: bad magic in " + path.string());
  }
  const auto version = read_pod<std::uint32_t>(is);
  if (version != kArchiveVersion) {
    throw std::runtime_error("image archive: unsupported version " + std::to_string(version));
  }
  const auto h = read_pod<std::uint32_t>(is);
  const auto w = read_pod<std::uint32_t>(is);
  const auto ch = read_pod<std::uint32_t>(is);
  const auto cnt = read_pod<std::uint64_t>(is);
  ImageArchive a(h, w, ch);
  a.data_.resize(static_cast<std::size_t>(cnt) * a.record_size());
  is.read(reinterpret_cast<char*>(a.data_.data()),
          static_cast<std::streamsize>(a.data_.size() * sizeof(float)));
  if (!is) throw std::runtime_error("image archive: payload shorter than header count");
  return a;
}

void GateConfig::validate() const {
  if (identity_min_sim < perturb_min_sim) {
    throw std::invalid_argument("GateConfig: identity gate must be at least as strict as the "
                                "perturbation gate");
  }
}

GateDecision gate_identity(const Vec& image, const Vec& v_id, const OracleEmbedder& oracle,
                           const GateConfig& gate) {
  const Vec f = oracle.embed(image);
  GateDecision d;
  d.sim = cosine_sim(f, v_id);
  d.quality = l2norm(f);
  d.accept = d.sim > gate.identity_min_sim && d.quality > gate.identity_min_quality;
  return d;
}

GateDecision gate_perturbation(const Vec& image, const Vec& identity_feature,
                               const OracleEmbedder& oracle, const GateConfig& gate) {
  const Vec f = oracle.embed(image);
  GateDecision d;
  d.sim = cosine_sim(f, identity_feature);
  d.quality = l2norm(f);
  d.accept = d.sim > gate.perturb_min_sim && d.quality > gate.perturb_min_quality;
  return d;
}

void AssembleConfig::validate() const {
  if (images_per_identity == 0) throw std::invalid_argument("assemble: K must be positive");
  if (replace > images_per_identity) {
    throw std::invalid_argument("assemble: replace cannot exceed images per identity");
  }
  if (attrop_share > replace) {
    throw std::invalid_argument("assemble: attrop share cannot exceed the replaced count");
  }
}

namespace {

// Seeded subset of `want` indices out of [0, have), returned in ascending
// order so source ordering is preserved.
std::vector<std::size_t> pick_sorted(std::size_t want, std::size_t have, Rng& rng) {
  auto picks = rng.sample_without_replacement(want, have);
  std::sort(picks.begin(), picks.end());
  return picks;
}

}  // namespace

DatasetManifest assemble(const DatasetManifest& base1, const DatasetManifest& base2,
                         const DatasetManifest& base3, const AssembleConfig& cfg) {
  cfg.validate();
  const auto ids1 = base1.by_identity();
  std::map<std::string, std::vector<std::size_t>> ids2, ids3;
  for (const auto& [id, rows] : base2.by_identity()) ids2.emplace(id, rows);
  for (const auto& [id, rows] : base3.by_identity()) ids3.emplace(id, rows);

  const std::size_t keep = cfg.images_per_identity - cfg.replace;
  const std::size_t from3 = cfg.replace - cfg.attrop_share;
  DatasetManifest out;
  std::size_t identity_index = 0;
  for (const auto& [id, rows1] : ids1) {
    Rng rng(derive_seed(cfg.seed, identity_index++));
    if (rows1.size() < keep) {
      throw std::runtime_error("assemble: identity " + id + " has " +
                               std::to_string(rows1.size()) + " base-1 images, needs " +
                               std::to_string(keep));
    }
    for (auto k : pick_sorted(keep, rows1.size(), rng)) out.append(base1.row(rows1[k]));
    if (cfg.attrop_share > 0) {
      auto it = ids2.find(id);
      if (it == ids2.end() || it->second.size() < cfg.attrop_share) {
        throw std::runtime_error("assemble: identity " + id + " lacks adjusted-base supply (" +
                                 std::to_string(it == ids2.end() ? 0 : it->second.size()) + "/" +
                                 std::to_string(cfg.attrop_share) + ")");
      }
      for (auto k : pick_sorted(cfg.attrop_share, it->second.size(), rng)) {
        out.append(base2.row(it->second[k]));
      }
    }
    if (from3 > 0) {
      auto it = ids3.find(id);
      if (it == ids3.end() || it->second.size() < from3) {
        throw std::runtime_error("assemble: identity " + id + " lacks pose-base supply (" +
                                 std::to_string(it == ids3.end() ? 0 : it->second.size()) + "/" +
                                 std::to_string(from3) + ")");
      }
      for (auto k : pick_sorted(from3, it->second.size(), rng)) out.append(base3.row(it->second[k]));
    }
  }
  return out;
}

std::vector<int> dbscan_labels(const std::vector<Vec>& points, double eps, std::size_t min_pts) {
  const std::size_t n = points.size();
  std::vector<std::vector<std::size_t>> neighbors(n);
  std::vector<double> norms(n);
  for (std::size_t i = 0; i < n; ++i) {
    norms[i] = l2norm(points[i]);
    if (norms[i] == 0.0) throw std::invalid_argument("dbscan: zero vector at index " + std::to_string(i));
  }
  for (std::size_t i = 0; i < n; ++i) {
    neighbors[i].push_back(i);
    for (std::size_t j = i + 1; j < n; ++j) {
      const double c = dot(points[i], points[j]) / (norms[i] * norms[j]);
      if (1.0 - c <= eps) {
        neighbors[i].push_back(j);
        neighbors[j].push_back(i);
      }
    }
  }
  std::vector<int> label(n, -2);  // -2 unvisited, -1 noise
  int cluster = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (label[i] != -2) continue;
    if (neighbors[i].size() < min_pts) {
      label[i] = -1;
      continue;
    }
    label[i] = cluster;
    std::deque<std::size_t> queue(neighbors[i].begin(), neighbors[i].end());
    while (!queue.empty()) {
      const std::size_t q = queue.front();
      queue.pop_front();
      if (label[q] == -1) label[q] = cluster;  // border point
      if (label[q] != -2) continue;
      label[q] = cluster;
      if (neighbors[q].size() >= min_pts) {
        queue.insert(queue.end(), neighbors[q].begin(), neighbors[q].end());
      }
    }
    ++cluster;
  }
  return label;
}

namespace {

void check_alignment(const DatasetManifest& manifest, const VectorStore& embeddings,
                     const char* what) {
  if (embeddings.count() != manifest.size()) {
    throw std::invalid_argument(std::string(what) + ": embeddings rows (" +
                                std::to_string(embeddings.count()) +
                                ") do not match manifest rows (" + std::to_string(manifest.size()) +
                                ")");
  }
}

}  // namespace

CleanResult dbscan_clean(const DatasetManifest& manifest, const VectorStore& embeddings,
                         double eps, std::size_t min_pts) {
  check_alignment(manifest, embeddings, "dbscan_clean");
  CleanResult result;
  for (const auto& [id, rows] : manifest.by_identity()) {
    if (rows.size() < min_pts) {
      result.warnings.push_back("identity " + id + " has only " + std::to_string(rows.size()) +
                                " images (< min_pts); kept unchanged");
      for (auto r : rows) result.kept.append(manifest.row(r));
      continue;
    }
    std::vector<Vec> pts;
    pts.reserve(rows.size());
    for (auto r : rows) pts.push_back(embeddings.row(r));
    const auto labels = dbscan_labels(pts, eps, min_pts);
    for (std::size_t k = 0; k < rows.size(); ++k) {
      if (labels[k] == -1) {
        result.dropped.push_back(manifest.row(rows[k]));
      } else {
        result.kept.append(manifest.row(rows[k]));
      }
    }
  }
  return result;
}

CleanResult leakage_check(const DatasetManifest& manifest, const VectorStore& embeddings,
                          const VectorStore& reference_ids, double threshold, std::size_t block) {
  check_alignment(manifest, embeddings, "leakage_check");
  if (reference_ids.count() == 0) throw std::invalid_argument("leakage_check: empty reference set");
  if (reference_ids.dim() != embeddings.dim()) {
    throw std::invalid_argument("leakage_check: reference dim " +
                                std::to_string(reference_ids.dim()) + " vs embeddings dim " +
                                std::to_string(embeddings.dim()));
  }
  const std::size_t dim = embeddings.dim();
  const std::size_t nref = reference_ids.count();
  const auto& ref = reference_ids.data();
  std::vector<double> ref_inv_norm(nref);
  for (std::size_t i = 0; i < nref; ++i) {
    double s = 0.0;
    const double* row = ref.data() + i * dim;
    for (std::size_t j = 0; j < dim; ++j) s += row[j] * row[j];
    if (s == 0.0) throw std::invalid_argument("leakage_check: zero reference vector");
    ref_inv_norm[i] = 1.0 / std::sqrt(s);
  }
  CleanResult result;
  for (std::size_t r = 0; r < manifest.size(); ++r) {
    const Vec emb = embeddings.row(r);
    const double en = l2norm(emb);
    if (en == 0.0) throw std::invalid_argument("leakage_check: zero embedding at row " + std::to_string(r));
    bool leaked = false;
    for (std::size_t b0 = 0; b0 < nref && !leaked; b0 += block) {
      const std::size_t b1 = std::min(nref, b0 + block);
      for (std::size_t i = b0; i < b1; ++i) {
        const double* row = ref.data() + i * dim;
        double d = 0.0;
        for (std::size_t j = 0; j < dim; ++j) d += row[j] * emb[j];
        if (d * ref_inv_norm[i] / en > threshold) {
          leaked = true;
          break;
        }
      }
    }
    if (leaked) {
      result.dropped.push_back(manifest.row(r));
    } else {
      result.kept.append(manifest.row(r));
    }
  }
  return result;
}

}  // namespace facegen

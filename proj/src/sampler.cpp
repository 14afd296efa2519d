#include "facegen/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "facegen/rng.hpp"

namespace facegen {

std::vector<std::size_t> mixture_counts(std::size_t k, const std::vector<SigmaShare>& mixture) {
  if (mixture.empty()) throw std::invalid_argument("mixture_counts: empty mixture");
  double total = 0.0;
  for (const auto& m : mixture) {
    if (!(m.sigma > 0.0)) throw std::invalid_argument("mixture_counts: sigma must be positive");
    if (m.fraction < 0.0) throw std::invalid_argument("mixture_counts: negative fraction");
    total += m.fraction;
  }
  if (std::fabs(total - 1.0) > 1e-9) {
    throw std::invalid_argument("mixture_counts: fractions sum to " + std::to_string(total) +
                                ", expected 1");
  }
  std::vector<std::size_t> counts(mixture.size());
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < mixture.size(); ++i) {
    const double exact = mixture[i].fraction * static_cast<double>(k);
    counts[i] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    assigned += counts[i];
    remainders.emplace_back(exact - std::floor(exact + 1e-9), i);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t j = 0; assigned < k; ++j, ++assigned) counts[remainders[j % remainders.size()].second]++;
  return counts;
}

VectorStore sample_identities(const SamplerConfig& cfg) {
  if (cfg.dim == 0) throw std::invalid_argument("sample_identities: dim must be positive");
  if (cfg.count == 0) throw std::invalid_argument("sample_identities: count must be positive");
  if (!(cfg.max_id_similarity > 0.0) || !(cfg.max_id_similarity < 1.0)) {
    throw std::invalid_argument("sample_identities: max_id_similarity must be in (0, 1)");
  }
  constexpr std::size_t kStallLimit = 10000;
  Rng rng(cfg.seed);
  VectorStore store(cfg.dim);
  // Unit directions of accepted rows, kept for the blocked rejection scan.
  std::vector<double> unit;
  unit.reserve(cfg.dim * cfg.count);
  std::size_t rejects = 0;
  Vec cand(cfg.dim);
  while (store.count() < cfg.count) {
    for (auto& x : cand) x = rng.normal();
    double n2 = 0.0;
    for (double x : cand) n2 += x * x;
    const double inv = 1.0 / std::sqrt(n2);
    bool ok = true;
    const std::size_t accepted = store.count();
    for (std::size_t i = 0; i < accepted && ok; ++i) {
      const double* row = unit.data() + i * cfg.dim;
      double d = 0.0;
      for (std::size_t j = 0; j < cfg.dim; ++j) d += row[j] * cand[j];
      if (d * inv >= cfg.max_id_similarity) ok = false;
    }
    if (!ok) {
      if (++rejects >= kStallLimit) {
        throw std::runtime_error(
            "sample_identities: no acceptance in " + std::to_string(kStallLimit) +
            " consecutive draws after " + std::to_string(accepted) +
            " identities; lower the count or raise max_id_similarity");
      }
      continue;
    }
    rejects = 0;
    store.append(cand, std::to_string(accepted));
    for (double x : cand) unit.push_back(x * inv);
  }
  return store;
}

std::vector<Vec> perturb_identity(const Vec& v_id, const PerturbationSpec& spec,
                                  std::uint64_t seed) {
  const double idn = l2norm(v_id);
  if (idn == 0.0) throw std::invalid_argument("perturb_identity: zero identity vector");
  for (double x : v_id) {
    if (!std::isfinite(x)) throw std::invalid_argument("perturb_identity: non-finite identity vector");
  }
  if (!(spec.norm_lo > 0.0) || spec.norm_lo > spec.norm_hi) {
    throw std::invalid_argument("perturb_identity: invalid norm band");
  }
  const auto counts = mixture_counts(spec.k, spec.mixture);
  constexpr std::size_t kTries = 1000;
  Rng rng(seed);
  std::vector<Vec> out;
  out.reserve(spec.k);
  const double target = spec.norm_target();
  Vec v(v_id.size());
  for (std::size_t m = 0; m < spec.mixture.size(); ++m) {
    const double sigma = spec.mixture[m].sigma;
    for (std::size_t slot = 0; slot < counts[m]; ++slot) {
      bool placed = false;
      for (std::size_t attempt = 0; attempt < kTries; ++attempt) {
        for (std::size_t j = 0; j < v.size(); ++j) v[j] = v_id[j] + sigma * rng.normal();
        const double n = l2norm(v);
        if (n == 0.0) continue;
        double d = 0.0;
        for (std::size_t j = 0; j < v.size(); ++j) d += v[j] * v_id[j];
        if (d / (n * idn) < spec.min_similarity_to_identity) continue;
        const double f = target / n;
        Vec p(v);
        for (auto& x : p) x *= f;
        out.push_back(std::move(p));
        placed = true;
        break;
      }
      if (!placed) {
        throw std::runtime_error("perturb_identity: similarity floor " +
                                 std::to_string(spec.min_similarity_to_identity) +
                                 " not met in " + std::to_string(kTries) + " tries (sigma " +
                                 std::to_string(sigma) + ")");
      }
    }
  }
  return out;
}

VectorStore perturb_store(const VectorStore& ids, const PerturbationSpec& spec,
                          std::uint64_t master_seed) {
  VectorStore out(ids.dim());
  for (std::size_t i = 0; i < ids.count(); ++i) {
    const std::string label = ids.has_labels() ? ids.label(i) : std::to_string(i);
    const auto perturbed = perturb_identity(ids.row(i), spec, derive_seed(master_seed, i));
    for (const auto& p : perturbed) out.append(p, label);
  }
  return out;
}

}  // namespace facegen

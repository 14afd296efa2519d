#pragma once

#include <cstdint>
#include <vector>

#include "facegen/vector_store.hpp"

namespace facegen {

struct SamplerConfig {
  std::size_t dim = 512;
  std::size_t count = 1;
  double max_id_similarity = 0.3;
  std::uint64_t seed = 0;
};

struct SigmaShare {
  double sigma;
  double fraction;
};

struct PerturbationSpec {
  std::size_t k = 50;
  std::vector<SigmaShare> mixture = {{0.3, 0.4}, {0.5, 0.4}, {0.7, 0.2}};
  double min_similarity_to_identity = 0.5;
  double norm_lo = kDefaultNormLo;
  double norm_hi = kDefaultNormHi;
  // Perturbed vectors are unit-normalized and then scaled to this norm;
  // defaults to the midpoint of [norm_lo, norm_hi].
  double norm_target() const { return 0.5 * (norm_lo + norm_hi); }
};

// Exact per-sigma slot counts for k draws; floors plus largest-remainder
// distribution, so k=50 with the default mixture gives 20/20/10.
std::vector<std::size_t> mixture_counts(std::size_t k, const std::vector<SigmaShare>& mixture);

// I.i.d. standard Gaussian identity vectors accepted only when their cosine
// against every previously accepted vector stays below cfg.max_id_similarity.
// Deterministic under cfg.seed. Throws after 10000 consecutive rejections.
VectorStore sample_identities(const SamplerConfig& cfg);

// K perturbed vectors for one identity: v_id + noise with the sigma mixture,
// unit-normalized, scaled into the norm band, and resampled (per slot, up to
// 1000 tries) until cosine(v_id, out) >= min_similarity_to_identity.
std::vector<Vec> perturb_identity(const Vec& v_id, const PerturbationSpec& spec,
                                  std::uint64_t seed);

// Perturbs every row of `ids`; per-identity seeds are derive_seed(master, i).
// Output rows are labeled with the source identity's label (or row index).
VectorStore perturb_store(const VectorStore& ids, const PerturbationSpec& spec,
                          std::uint64_t master_seed);

}  // namespace facegen

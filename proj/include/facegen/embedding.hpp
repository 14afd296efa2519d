#pragma once

#include <cstdint>
#include <vector>

#include "facegen/tensor.hpp"

namespace facegen {

using Vec = std::vector<double>;

double dot(const Vec& a, const Vec& b);
double l2norm(const Vec& a);
// Throws on a zero vector instead of returning NaN.
double cosine_sim(const Vec& a, const Vec& b);

// Default vector-norm control band for the 512-d space.
inline constexpr double kDefaultNormLo = 18.0;
inline constexpr double kDefaultNormHi = 24.0;

// Rescales v so that its norm lies in [lo, hi]; direction is unchanged and
// vectors already inside the band are returned as-is. Idempotent.
Vec norm_clamp(Vec v, double lo = kDefaultNormLo, double hi = kDefaultNormHi);

// Frozen seed-derived linear map from flattened image space to embedding
// space. Stands in for the pre-trained feature extractor: deterministic,
// never updated, and differentiable through the tape.
class OracleEmbedder {
 public:
  OracleEmbedder(std::size_t dim_in, std::size_t dim_out, std::uint64_t seed);
  static OracleEmbedder from_matrix(std::size_t dim_in, std::size_t dim_out,
                                    std::vector<double> weight);

  std::size_t dim_in() const { return dim_in_; }
  std::size_t dim_out() const { return dim_out_; }

  Vec embed(const Vec& image) const;
  // Embedding magnitude, used as the image quality score.
  double quality(const Vec& image) const;

  // Tape versions: image may have any shape with dim_in elements.
  Tensor embed_op(Tape& tape, const Tensor& image) const;
  Tensor quality_op(Tape& tape, const Tensor& image) const;

 private:
  std::size_t dim_in_, dim_out_;
  std::vector<double> weight_;  // dim_out x dim_in, row-major
};

}  // namespace facegen

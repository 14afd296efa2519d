#include "facegen/embedding.hpp"

#include <cmath>
#include <stdexcept>

#include "facegen/rng.hpp"

namespace facegen {

double dot(const Vec& a, const Vec& b) {
  if (a.size() != b.size()) throw std::invalid_argument("dot: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double l2norm(const Vec& a) {
  double s = 0.0;
  for (double v : a) s += v * v;
  return std::sqrt(s);
}

double cosine_sim(const Vec& a, const Vec& b) {
  if (a.size() != b.size()) throw std::invalid_argument("cosine_sim: size mismatch");
  double d = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw std::invalid_argument("cosine_sim: undefined for a zero vector");
  return d / (std::sqrt(na) * std::sqrt(nb));
}

Vec norm_clamp(Vec v, double lo, double hi) {
  if (!(lo > 0.0) || lo > hi) throw std::invalid_argument("norm_clamp: need 0 < lo <= hi");
  const double n = l2norm(v);
  if (n == 0.0) throw std::invalid_argument("norm_clamp: undefined for a zero vector");
  // The relative slack keeps the projection exactly idempotent: a vector
  // already rescaled onto a bound lands inside the band on re-check.
  constexpr double kSlack = 1e-12;
  if (n >= lo * (1.0 - kSlack) && n <= hi * (1.0 + kSlack)) return v;
  const double target = n < lo ? lo : hi;
  const double f = target / n;
  for (auto& x : v) x *= f;
  return v;
}

OracleEmbedder::OracleEmbedder(std::size_t dim_in, std::size_t dim_out, std::uint64_t seed)
    : dim_in_(dim_in), dim_out_(dim_out) {
  if (dim_in == 0 || dim_out == 0) throw std::invalid_argument("OracleEmbedder: zero dimension");
  Rng rng(seed);
  weight_.resize(dim_in * dim_out);
  const double sigma = 1.0 / std::sqrt(static_cast<double>(dim_in));
  for (auto& w : weight_) w = sigma * rng.normal();
}

OracleEmbedder OracleEmbedder::from_matrix(std::size_t dim_in, std::size_t dim_out,
                                           std::vector<double> weight) {
  if (weight.size() != dim_in * dim_out) {
    throw std::invalid_argument("OracleEmbedder::from_matrix: weight size mismatch");
  }
  OracleEmbedder e(dim_in, dim_out, 0);
  e.weight_ = std::move(weight);
  return e;
}

Vec OracleEmbedder::embed(const Vec& image) const {
  if (image.size() != dim_in_) {
    throw std::invalid_argument("OracleEmbedder::embed: image has " + std::to_string(image.size()) +
                                " values, expected " + std::to_string(dim_in_));
  }
  Vec out(dim_out_, 0.0);
  for (std::size_t i = 0; i < dim_out_; ++i) {
    const double* row = weight_.data() + i * dim_in_;
    double s = 0.0;
    for (std::size_t j = 0; j < dim_in_; ++j) s += row[j] * image[j];
    out[i] = s;
  }
  return out;
}

double OracleEmbedder::quality(const Vec& image) const { return l2norm(embed(image)); }

Tensor OracleEmbedder::embed_op(Tape& tape, const Tensor& image) const {
  if (image.size() != dim_in_) {
    throw std::invalid_argument("OracleEmbedder::embed_op: image has " +
                                std::to_string(image.size()) + " values, expected " +
                                std::to_string(dim_in_));
  }
  Tensor w = tape.constant({dim_out_, dim_in_}, weight_);
  Tensor col = tape.reshape(image, {dim_in_, 1});
  return tape.reshape(tape.matmul(w, col), {dim_out_});
}

Tensor OracleEmbedder::quality_op(Tape& tape, const Tensor& image) const {
  return tape.l2_norm(embed_op(tape, image));
}

}  // namespace facegen

#pragma once

#include <cstdint>
#include <vector>

#include "facegen/embedding.hpp"
#include "facegen/generator.hpp"
#include "facegen/pose_lora.hpp"

namespace facegen {

// Frozen seed-derived world tying a latent space, a procedural image
// renderer and the oracle embedder together. Supplies the supervised
// (feature, image) pairs the generator trains on.
struct ToySpaceConfig {
  std::size_t embed_dim = 64;
  std::size_t image_h = 16;
  std::size_t image_w = 16;
  std::size_t image_ch = 1;
  std::uint64_t seed = 77;
  double render_gain = 1.0;
};

class ToySpace {
 public:
  explicit ToySpace(const ToySpaceConfig& cfg);

  const ToySpaceConfig& config() const { return cfg_; }
  const OracleEmbedder& oracle() const { return oracle_; }
  std::size_t image_size() const { return cfg_.image_h * cfg_.image_w * cfg_.image_ch; }

  // latent -> tanh(gain * R latent), columns modulated by (1 + asym * x) so
  // the horizontal asymmetry statistic tracks `asym`.
  Vec render(const Vec& latent, double asym = 0.0) const;

  // Identity latents with per-image latent noise and a per-image asymmetry
  // drawn uniformly from [-asym_range, asym_range].
  std::vector<TrainPair> reconstruction_dataset(std::size_t identities, std::size_t images_each,
                                                double noise_sigma, double asym_range,
                                                std::uint64_t seed) const;

  // Triples for pose-conditional training: the feature comes from the
  // frontal rendering, the target image carries the layout's asymmetry.
  std::vector<PoseTriple> pose_dataset(std::size_t identities, std::size_t images_each,
                                       double noise_sigma, double asym_gain,
                                       std::uint64_t seed) const;

  // Asymmetry a landmark layout asks for: lateral centroid offset scaled by
  // `gain`, clamped to [-0.85, 0.85].
  static double landmark_asym(const LandmarkImage& landmark, double gain);

 private:
  ToySpaceConfig cfg_;
  OracleEmbedder oracle_;
  std::vector<double> render_matrix_;  // pixels x dim
};

}  // namespace facegen

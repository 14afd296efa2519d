#include "facegen/toy_space.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "facegen/rng.hpp"

namespace facegen {

ToySpace::ToySpace(const ToySpaceConfig& cfg)
    : cfg_(cfg),
      oracle_(cfg.image_h * cfg.image_w * cfg.image_ch, cfg.embed_dim, derive_seed(cfg.seed, 1)) {
  Rng rng(derive_seed(cfg.seed, 2));
  const std::size_t n = image_size();
  render_matrix_.resize(n * cfg.embed_dim);
  const double sigma = 1.0 / std::sqrt(static_cast<double>(cfg.embed_dim));
  for (auto& x : render_matrix_) x = sigma * rng.normal();
}

Vec ToySpace::render(const Vec& latent, double asym) const {
  if (latent.size() != cfg_.embed_dim) {
    throw std::invalid_argument("ToySpace::render: latent has " + std::to_string(latent.size()) +
                                " values, expected " + std::to_string(cfg_.embed_dim));
  }
  const std::size_t n = image_size();
  Vec out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = render_matrix_.data() + i * cfg_.embed_dim;
    double s = 0.0;
    for (std::size_t j = 0; j < cfg_.embed_dim; ++j) s += row[j] * latent[j];
    out[i] = std::tanh(cfg_.render_gain * s);
  }
  if (asym != 0.0) {
    for (std::size_t i = 0; i < cfg_.image_h; ++i) {
      for (std::size_t j = 0; j < cfg_.image_w; ++j) {
        const double x = cfg_.image_w == 1
                             ? 0.0
                             : 2.0 * static_cast<double>(j) / static_cast<double>(cfg_.image_w - 1) -
                                   1.0;
        for (std::size_t c = 0; c < cfg_.image_ch; ++c) {
          out[(i * cfg_.image_w + j) * cfg_.image_ch + c] *= 1.0 + asym * x;
        }
      }
    }
  }
  return out;
}

std::vector<TrainPair> ToySpace::reconstruction_dataset(std::size_t identities,
                                                        std::size_t images_each,
                                                        double noise_sigma, double asym_range,
                                                        std::uint64_t seed) const {
  Rng rng(seed);
  std::vector<TrainPair> out;
  out.reserve(identities * images_each);
  Vec latent(cfg_.embed_dim);
  for (std::size_t id = 0; id < identities; ++id) {
    const Vec base = rng.normal_vec(cfg_.embed_dim);
    for (std::size_t k = 0; k < images_each; ++k) {
      for (std::size_t j = 0; j < cfg_.embed_dim; ++j) {
        latent[j] = base[j] + noise_sigma * rng.normal();
      }
      const double asym = asym_range == 0.0 ? 0.0 : (2.0 * rng.uniform() - 1.0) * asym_range;
      Vec image = render(latent, asym);
      Vec feature = oracle_.embed(image);
      out.push_back({std::move(feature), std::move(image)});
    }
  }
  return out;
}

std::vector<PoseTriple> ToySpace::pose_dataset(std::size_t identities, std::size_t images_each,
                                               double noise_sigma, double asym_gain,
                                               std::uint64_t seed) const {
  Rng rng(seed);
  const LandmarkImage layouts[3] = {LandmarkImage::frontal(cfg_.image_h, cfg_.image_w),
                                    LandmarkImage::profile_left(cfg_.image_h, cfg_.image_w),
                                    LandmarkImage::profile_right(cfg_.image_h, cfg_.image_w)};
  std::vector<PoseTriple> out;
  out.reserve(identities * images_each);
  Vec latent(cfg_.embed_dim);
  for (std::size_t id = 0; id < identities; ++id) {
    const Vec base = rng.normal_vec(cfg_.embed_dim);
    for (std::size_t k = 0; k < images_each; ++k) {
      for (std::size_t j = 0; j < cfg_.embed_dim; ++j) {
        latent[j] = base[j] + noise_sigma * rng.normal();
      }
      const LandmarkImage& layout = layouts[k % 3];
      const double asym = landmark_asym(layout, asym_gain);
      Vec target = render(latent, asym);
      Vec feature = oracle_.embed(render(latent, 0.0));
      out.push_back({std::move(feature), layout, std::move(target)});
    }
  }
  return out;
}

double ToySpace::landmark_asym(const LandmarkImage& landmark, double gain) {
  const double offset = 2.0 * (landmark.centroid_x_fraction() - 0.5);
  return std::clamp(gain * offset, -0.85, 0.85);
}

}  // namespace facegen

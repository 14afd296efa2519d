#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "facegen/generator.hpp"

namespace facegen {

struct AttrOpConfig {
  double quality_target = 0.0;
  double pose_target = 0.0;
  std::size_t iterations = 30;
  double step_size = 1e-2;
  // Hard iteration cap; the effective loop count is min(iterations, cap).
  std::size_t early_stop_cap = 30;
  // Optional additional stop once the loss falls at or below this value.
  std::optional<double> loss_stop;

  void validate() const;
};

// All three evaluators are differentiable image -> value maps built on the
// caller's tape, so the adjustment loop can push gradients into the vector.
struct EvaluatorSet {
  std::function<Tensor(Tape&, const Tensor& image)> quality;  // scalar
  std::function<Tensor(Tape&, const Tensor& image)> pose;     // scalar, signed
  std::function<Tensor(Tape&, const Tensor& image)> identity;  // embedding vector
};

// Default evaluators for the toy space: quality = embedding magnitude, pose =
// signed horizontal center-of-mass asymmetry of squared intensity, identity =
// the oracle embedding.
EvaluatorSet default_evaluators(const OracleEmbedder& oracle, std::size_t image_h,
                                std::size_t image_w, std::size_t image_ch);

// Standalone pose statistic (plain and differentiable versions).
double pose_statistic(const Vec& image, std::size_t h, std::size_t w, std::size_t ch);
Tensor pose_statistic_op(Tape& tape, const Tensor& image, std::size_t h, std::size_t w,
                         std::size_t ch);

// [1 - cos(identity(im), v_id)] + [Q - quality(im)] + |P - |pose(im)||.
// The quality term is signed, so over-quality images contribute negatively.
Tensor attrop_loss(Tape& tape, const Tensor& image, const Vec& v_id, const EvaluatorSet& evals,
                   const AttrOpConfig& cfg);

using GenerateFn = std::function<Tensor(Tape&, const Tensor& vector)>;

struct AttrOpResult {
  Vec vector;
  std::vector<double> trace;  // loss per executed iteration
};

// Plain gradient descent on the vector through a fixed differentiable
// generator; neither v_id nor the generator is mutated.
AttrOpResult attrop(const Vec& v_id, const Vec& v_im, const GenerateFn& generate,
                    const EvaluatorSet& evals, const AttrOpConfig& cfg);

// Generator-model entry point: images come from an unmasked forward pass with
// the vector itself as (unused) condition.
AttrOpResult attrop(const Vec& v_id, const Vec& v_im, const GeneratorModel& model,
                    const EvaluatorSet& evals, const AttrOpConfig& cfg);

}  // namespace facegen

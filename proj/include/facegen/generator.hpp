#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "facegen/embedding.hpp"
#include "facegen/rng.hpp"
#include "facegen/tensor.hpp"

namespace facegen {

// Truncated normal over the row-mask ratio.
struct MaskConfig {
  double min = 0.5;
  double max = 1.0;
  double mean = 0.75;
  double std = 0.25;
};

double sample_mask_ratio(const MaskConfig& cfg, Rng& rng);

struct LossWeights {
  double lambda_lpips = 0.2;
};

struct GeneratorConfig {
  std::size_t embed_dim = 64;    // input feature width
  std::size_t tokens = 8;        // token rows after expansion
  std::size_t channels = 32;     // token width
  std::size_t encoder_blocks = 2;
  std::size_t expansion_hidden = 64;
  std::size_t image_h = 16;
  std::size_t image_w = 16;
  std::size_t image_ch = 1;
  // Input channel width of each of the four decoder stages. Each stage is a
  // x2 nearest-neighbor upsample followed by a learned per-offset channel
  // mix (together a 2x2 stride-2 deconvolution).
  std::vector<std::size_t> decoder_channels = {128, 64, 32, 16};
  MaskConfig mask;
  std::uint64_t init_seed = 1;

  void validate() const;
  std::size_t image_size() const { return image_h * image_w * image_ch; }
};

struct Array {
  Shape shape;
  std::vector<double> v;
};

// Expansion layers, token-mixing encoder blocks, condition projector and the
// four-stage upsampling decoder, stored as named parameter arrays in a fixed
// order (the checkpoint payload order).
class GeneratorModel {
 public:
  static GeneratorModel init(const GeneratorConfig& cfg);

  const GeneratorConfig& config() const { return cfg_; }
  Array& param(const std::string& name);
  const Array& param(const std::string& name) const;
  const std::vector<std::pair<std::string, Array>>& params() const { return params_; }
  std::vector<std::pair<std::string, Array>>& mutable_params() { return params_; }

  // FNV-1a over the raw parameter bytes; used to assert frozen weights.
  std::uint64_t param_hash() const;

  // Checkpoint: magic "V2FP", version, config block, shape table, float64
  // little-endian payload. See README for the exact layout.
  void save(const std::filesystem::path& path) const;
  static GeneratorModel load(const std::filesystem::path& path);

 private:
  GeneratorConfig cfg_;
  std::vector<std::pair<std::string, Array>> params_;
  std::unordered_map<std::string, std::size_t> index_;
  void add(std::string name, Shape shape, std::vector<double> values);
};

// Frozen random multi-scale image features for the perceptual term: per scale
// an average-pooling followed by a fixed random projection, composed into one
// matrix, with per-channel weights (all ones by default).
class PerceptualBank {
 public:
  PerceptualBank(std::size_t h, std::size_t w, std::size_t ch, std::size_t scales,
                 std::size_t feat_dim, std::uint64_t seed);

  std::size_t scales() const { return proj_.size(); }
  Vec features(const Vec& image, std::size_t level) const;
  Tensor features_op(Tape& tape, const Tensor& image, std::size_t level) const;
  const Vec& channel_weights(std::size_t level) const { return weights_[level]; }

 private:
  std::size_t pixels_, feat_dim_;
  std::vector<std::vector<double>> proj_;  // feat_dim x pixels per scale
  std::vector<Vec> weights_;
};

// Per-tape binding of model parameters, either as gradient leaves (training)
// or constants (inference). LoRA wiring swaps individual handles for
// adapted expressions before the forward pass.
struct BoundGenerator {
  BoundGenerator(Tape& tape, const GeneratorModel& model, bool trainable);

  Tensor p(const std::string& name) const;
  void replace(const std::string& name, Tensor t);

  Tape* tape;
  const GeneratorModel* model;
  std::unordered_map<std::string, Tensor> handles;
};

// The condition filled into dropped token rows: either a feature vector run
// through the model's projector, or an externally projected width-c vector
// (the landmark-encoder path).
struct ConditionInput {
  std::optional<Tensor> embedding;
  std::optional<Tensor> projected;
};

std::vector<std::size_t> choose_dropped_rows(std::size_t tokens, double mask_ratio, Rng& rng);

// Expansion -> row masking -> encoder blocks -> condition fill-in -> decoder.
// Dropped rows are zeroed through every encoder sub-layer and overwritten by
// the projected condition afterwards. With no dropped rows the condition
// input is never touched, so the output is bitwise condition-invariant.
Tensor generator_forward(Tape& tape, const BoundGenerator& g, const Tensor& feature,
                         const ConditionInput& condition,
                         const std::vector<std::size_t>& dropped_rows);

// Convenience overload: samples the dropped rows for `mask_ratio` from rng.
Tensor generator_forward(Tape& tape, const BoundGenerator& g, const Tensor& feature,
                         const ConditionInput& condition, double mask_ratio, Rng& rng);

struct GeneratorLoss {
  Tensor rec, id, lpips, total;
};

// rec: squared pixel error; id: 1 - cosine in the oracle feature space;
// lpips: weighted squared multi-scale feature differences; total adds them
// with the lpips weight. All differentiable.
GeneratorLoss generator_loss(Tape& tape, const Tensor& recon, const Vec& image_gt,
                             const Vec& feature_gt, const OracleEmbedder& oracle,
                             const PerceptualBank& bank, const LossWeights& weights);

struct TrainPair {
  Vec feature;  // oracle embedding of the target image
  Vec image;
};

// Deterministic Adam state for one named-parameter collection. Plain
// constant-rate descent stalls on the decoder's badly conditioned stages, so
// both trainers use this instead (fixed beta1=0.9, beta2=0.999, eps=1e-8).
class AdamState {
 public:
  explicit AdamState(const std::vector<std::pair<std::string, Array>>& params);
  void step(std::vector<std::pair<std::string, Array>>& params,
            const std::vector<const std::vector<double>*>& grads, double lr);

 private:
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

struct LossTracePoint {
  double rec, id, lpips, total;
};

// Plain constant-rate gradient descent, one pair per step, mask ratio drawn
// per step; deterministic under `seed`. Throws with the step index if the
// loss stops being finite.
std::vector<LossTracePoint> train_generator(GeneratorModel& model,
                                            const std::vector<TrainPair>& data,
                                            const OracleEmbedder& oracle,
                                            const PerceptualBank& bank, std::size_t steps,
                                            double lr, std::uint64_t seed,
                                            const LossWeights& weights = {});

void save_loss_trace_csv(const std::filesystem::path& path,
                         const std::vector<LossTracePoint>& trace);

}  // namespace facegen

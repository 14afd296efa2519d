#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "facegen/generator.hpp"

namespace facegen {

// Single-channel grid with exactly five lit landmark points, values in {0,1},
// optionally followed by a 1-pixel box blur. Validation counts the connected
// lit regions of the pre-blur grid.
class LandmarkImage {
 public:
  LandmarkImage(std::size_t h, std::size_t w,
                std::vector<std::pair<std::size_t, std::size_t>> points,  // (row, col)
                bool blur = false);

  std::size_t h() const { return h_; }
  std::size_t w() const { return w_; }
  const Vec& pixels() const { return pixels_; }
  const std::vector<std::pair<std::size_t, std::size_t>>& points() const { return points_; }
  // Mean lit-column position as a fraction of the width, in [0, 1].
  double centroid_x_fraction() const;

  // Fixed five-point templates; the profile variants shift the nose point
  // laterally.
  static LandmarkImage frontal(std::size_t h, std::size_t w, bool blur = false);
  static LandmarkImage profile_left(std::size_t h, std::size_t w, bool blur = false);
  static LandmarkImage profile_right(std::size_t h, std::size_t w, bool blur = false);
  static LandmarkImage from_template(const std::string& name, std::size_t h, std::size_t w,
                                     bool blur = false);

 private:
  std::size_t h_, w_;
  std::vector<std::pair<std::size_t, std::size_t>> points_;
  Vec pixels_;
};

struct LoraConfig {
  std::size_t rank = 4;
  double alpha = 8.0;
  std::uint64_t init_seed = 2;
};

// Rank-r factor pairs for the cross-token mixing matrix of every encoder
// block; effective weight is W + (alpha/rank) * B * A with B zero-initialized.
class LoraAdapter {
 public:
  static LoraAdapter init(const GeneratorModel& base, const LoraConfig& cfg);

  const LoraConfig& config() const { return cfg_; }
  std::size_t blocks() const { return blocks_; }
  const std::vector<std::pair<std::string, Array>>& params() const { return params_; }
  std::vector<std::pair<std::string, Array>>& mutable_params() { return params_; }
  const Array& param(const std::string& name) const;
  double scaling() const { return cfg_.alpha / static_cast<double>(cfg_.rank); }

  // Base model with the adapted matrices materialized (or restored).
  GeneratorModel merged(const GeneratorModel& base) const;
  GeneratorModel unmerged(const GeneratorModel& merged) const;

 private:
  LoraConfig cfg_;
  std::size_t blocks_ = 0;
  std::vector<std::pair<std::string, Array>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Four-stage convolution-like reduction (average pool x2, learned linear mix,
// softplus) from a landmark grid down to a width-c condition vector.
class ConditionEncoder {
 public:
  ConditionEncoder(std::size_t h, std::size_t w, std::size_t out_width, std::uint64_t seed);

  std::size_t out_width() const { return out_width_; }
  const std::vector<std::pair<std::string, Array>>& params() const { return params_; }
  std::vector<std::pair<std::string, Array>>& mutable_params() { return params_; }

  Vec encode(const LandmarkImage& landmark) const;

 private:
  friend struct BoundEncoder;
  std::size_t h_, w_, out_width_;
  std::vector<std::size_t> stage_channels_;  // {1, 4, 8, 16}
  std::vector<std::pair<std::string, Array>> params_;
};

struct BoundParams {
  BoundParams() = default;
  BoundParams(Tape& tape, const std::vector<std::pair<std::string, Array>>& params, bool trainable);
  Tensor p(const std::string& name) const;
  std::unordered_map<std::string, Tensor> handles;
};

struct BoundEncoder {
  BoundEncoder(Tape& tape, const ConditionEncoder& enc, bool trainable);
  Tensor encode_op(const LandmarkImage& landmark) const;
  Tape* tape;
  const ConditionEncoder* enc;
  BoundParams bound;
};

// Binds the frozen base with the adapter's low-rank updates wired into the
// mixing matrices; adapter (and encoder) leaves are trainable, base is not.
BoundGenerator bind_adapted(Tape& tape, const GeneratorModel& base, const LoraAdapter& adapter,
                            const BoundParams& adapter_params);

// generator_forward against the adapted weights with the landmark-encoder
// condition. Inference-only convenience (nothing trainable).
Tensor lora_forward(Tape& tape, const GeneratorModel& base, const LoraAdapter& adapter,
                    const ConditionEncoder& encoder, const Tensor& feature,
                    const LandmarkImage& landmark, const std::vector<std::size_t>& dropped_rows);

struct PoseTriple {
  Vec feature;
  LandmarkImage landmark;
  Vec image;
};

// Same objective as the main model; only adapter factors and encoder
// parameters move, the base stays bit-identical.
std::vector<LossTracePoint> train_pose_lora(LoraAdapter& adapter, ConditionEncoder& encoder,
                                            const GeneratorModel& base,
                                            const std::vector<PoseTriple>& data,
                                            const OracleEmbedder& oracle,
                                            const PerceptualBank& bank, std::size_t steps,
                                            double lr, std::uint64_t seed,
                                            const LossWeights& weights = {});

// Checkpoint section appended after the base model payload, tag "LORA".
void save_adapter(const std::filesystem::path& model_path, const LoraAdapter& adapter,
                  const ConditionEncoder& encoder);
std::pair<LoraAdapter, ConditionEncoder> load_adapter(const std::filesystem::path& model_path,
                                                      const GeneratorModel& base);

}  // namespace facegen

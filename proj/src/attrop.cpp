#include "facegen/attrop.hpp"

#include <cmath>
#include <stdexcept>

namespace facegen {

void AttrOpConfig::validate() const {
  if (iterations == 0) throw std::invalid_argument("AttrOpConfig: iterations must be >= 1");
  if (!(step_size >= 0.0)) throw std::invalid_argument("AttrOpConfig: negative step size");
  if (early_stop_cap == 0) throw std::invalid_argument("AttrOpConfig: early_stop_cap must be >= 1");
}

namespace {

std::vector<double> column_offsets(std::size_t h, std::size_t w, std::size_t ch) {
  // Signed column position in [-1, 1] replicated over rows and channels.
  std::vector<double> s(h * w * ch);
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      const double x = w == 1 ? 0.0
                              : 2.0 * static_cast<double>(j) / static_cast<double>(w - 1) - 1.0;
      for (std::size_t c = 0; c < ch; ++c) s[(i * w + j) * ch + c] = x;
    }
  }
  return s;
}

}  // namespace

double pose_statistic(const Vec& image, std::size_t h, std::size_t w, std::size_t ch) {
  if (image.size() != h * w * ch) throw std::invalid_argument("pose_statistic: size mismatch");
  const auto offsets = column_offsets(h, w, ch);
  double num = 0.0, den = 1e-8;
  for (std::size_t i = 0; i < image.size(); ++i) {
    const double e = image[i] * image[i];
    num += offsets[i] * e;
    den += e;
  }
  return num / den;
}

Tensor pose_statistic_op(Tape& tape, const Tensor& image, std::size_t h, std::size_t w,
                         std::size_t ch) {
  if (image.size() != h * w * ch) throw std::invalid_argument("pose_statistic_op: size mismatch");
  Tensor flat = tape.reshape(image, {h * w * ch});
  Tensor energy = tape.mul(flat, flat);
  Tensor offsets = tape.constant({h * w * ch}, column_offsets(h, w, ch));
  Tensor num = tape.reduce_sum(tape.mul(offsets, energy));
  Tensor den = tape.add(tape.reduce_sum(energy), tape.scalar_leaf(1e-8));
  return tape.div(num, den);
}

EvaluatorSet default_evaluators(const OracleEmbedder& oracle, std::size_t image_h,
                                std::size_t image_w, std::size_t image_ch) {
  EvaluatorSet evals;
  evals.quality = [&oracle](Tape& t, const Tensor& im) {
    return oracle.quality_op(t, t.reshape(im, {im.size()}));
  };
  evals.pose = [image_h, image_w, image_ch](Tape& t, const Tensor& im) {
    return pose_statistic_op(t, im, image_h, image_w, image_ch);
  };
  evals.identity = [&oracle](Tape& t, const Tensor& im) {
    return oracle.embed_op(t, t.reshape(im, {im.size()}));
  };
  return evals;
}

Tensor attrop_loss(Tape& tape, const Tensor& image, const Vec& v_id, const EvaluatorSet& evals,
                   const AttrOpConfig& cfg) {
  Tensor id_term =
      tape.sub(tape.scalar_leaf(1.0),
               tape.cosine(evals.identity(tape, image), tape.constant({v_id.size()}, v_id)));
  Tensor quality_term = tape.sub(tape.scalar_leaf(cfg.quality_target), evals.quality(tape, image));
  Tensor pose_term = tape.abs(
      tape.sub(tape.scalar_leaf(cfg.pose_target), tape.abs(evals.pose(tape, image))));
  return tape.add(tape.add(id_term, quality_term), pose_term);
}

AttrOpResult attrop(const Vec& v_id, const Vec& v_im, const GenerateFn& generate,
                    const EvaluatorSet& evals, const AttrOpConfig& cfg) {
  cfg.validate();
  for (double x : v_im) {
    if (!std::isfinite(x)) throw std::invalid_argument("attrop: non-finite input vector");
  }
  AttrOpResult result;
  result.vector = v_im;
  const std::size_t rounds = std::min(cfg.iterations, cfg.early_stop_cap);
  for (std::size_t t = 0; t < rounds; ++t) {
    Tape tape;
    Tensor v = tape.leaf({result.vector.size()}, result.vector, true);
    Tensor image = generate(tape, v);
    Tensor loss = attrop_loss(tape, image, v_id, evals, cfg);
    const double value = loss.scalar();
    if (!std::isfinite(value)) {
      throw std::runtime_error("attrop: non-finite loss at iteration " + std::to_string(t));
    }
    result.trace.push_back(value);
    auto grads = tape.backward(loss);
    const auto& g = grads.at(v.id());
    for (std::size_t i = 0; i < result.vector.size(); ++i) {
      const double next = result.vector[i] - cfg.step_size * g[i];
      if (!std::isfinite(next)) {
        throw std::runtime_error("attrop: non-finite update at iteration " + std::to_string(t));
      }
      result.vector[i] = next;
    }
    if (cfg.loss_stop && value <= *cfg.loss_stop) break;
  }
  return result;
}

AttrOpResult attrop(const Vec& v_id, const Vec& v_im, const GeneratorModel& model,
                    const EvaluatorSet& evals, const AttrOpConfig& cfg) {
  GenerateFn generate = [&model](Tape& tape, const Tensor& v) {
    BoundGenerator bound(tape, model, false);
    ConditionInput cond;
    cond.embedding = v;  // unused at mask ratio zero
    return generator_forward(tape, bound, v, cond, {});
  };
  return attrop(v_id, v_im, generate, evals, cfg);
}

}  // namespace facegen

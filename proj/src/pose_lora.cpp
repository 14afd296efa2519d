#include "facegen/pose_lora.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <set>
#include <stdexcept>

namespace facegen {

namespace {

std::size_t count_lit_regions(const Vec& grid, std::size_t h, std::size_t w) {
  std::vector<char> seen(h * w, 0);
  std::size_t regions = 0;
  for (std::size_t start = 0; start < h * w; ++start) {
    if (grid[start] == 0.0 || seen[start]) continue;
    ++regions;
    std::queue<std::size_t> q;
    q.push(start);
    seen[start] = 1;
    while (!q.empty()) {
      const std::size_t p = q.front();
      q.pop();
      const std::size_t i = p / w, j = p % w;
      const std::size_t nbrs[4][2] = {{i > 0 ? i - 1 : i, j},
                                      {i + 1 < h ? i + 1 : i, j},
                                      {i, j > 0 ? j - 1 : j},
                                      {i, j + 1 < w ? j + 1 : j}};
      for (const auto& nb : nbrs) {
        const std::size_t np = nb[0] * w + nb[1];
        if (np == p || seen[np] || grid[np] == 0.0) continue;
        seen[np] = 1;
        q.push(np);
      }
    }
  }
  return regions;
}

}  // namespace

LandmarkImage::LandmarkImage(std::size_t h, std::size_t w,
                             std::vector<std::pair<std::size_t, std::size_t>> points, bool blur)
    : h_(h), w_(w), points_(std::move(points)) {
  if (points_.size() != 5) {
    throw std::invalid_argument("LandmarkImage: expected exactly 5 points, got " +
                                std::to_string(points_.size()));
  }
  pixels_.assign(h * w, 0.0);
  for (const auto& [i, j] : points_) {
    if (i >= h || j >= w) throw std::invalid_argument("LandmarkImage: point outside the grid");
    pixels_[i * w + j] = 1.0;
  }
  if (count_lit_regions(pixels_, h, w) != 5) {
    throw std::invalid_argument("LandmarkImage: points must form 5 separate lit regions");
  }
  if (blur) {
    Vec blurred(pixels_.size(), 0.0);
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < w; ++j) {
        const double v = pixels_[i * w + j];
        if (v == 0.0) continue;
        blurred[i * w + j] += v;
        if (i > 0) blurred[(i - 1) * w + j] += 0.5 * v;
        if (i + 1 < h) blurred[(i + 1) * w + j] += 0.5 * v;
        if (j > 0) blurred[i * w + j - 1] += 0.5 * v;
        if (j + 1 < w) blurred[i * w + j + 1] += 0.5 * v;
      }
    }
    for (auto& v : blurred) v = std::min(v, 1.0);
    pixels_ = std::move(blurred);
  }
}

double LandmarkImage::centroid_x_fraction() const {
  double s = 0.0;
  for (const auto& [i, j] : points_) s += static_cast<double>(j);
  return s / (5.0 * static_cast<double>(w_ - 1));
}

namespace {

LandmarkImage make_layout(std::size_t h, std::size_t w, double nose_x, bool blur) {
  auto at = [&](double fy, double fx) {
    return std::make_pair(static_cast<std::size_t>(std::lround(fy * static_cast<double>(h - 1))),
                          static_cast<std::size_t>(std::lround(fx * static_cast<double>(w - 1))));
  };
  return LandmarkImage(h, w,
                       {at(0.35, 0.30), at(0.35, 0.70), at(0.55, nose_x), at(0.75, 0.35),
                        at(0.75, 0.65)},
                       blur);
}

}  // namespace

LandmarkImage LandmarkImage::frontal(std::size_t h, std::size_t w, bool blur) {
  return make_layout(h, w, 0.50, blur);
}
LandmarkImage LandmarkImage::profile_left(std::size_t h, std::size_t w, bool blur) {
  return make_layout(h, w, 0.10, blur);
}
LandmarkImage LandmarkImage::profile_right(std::size_t h, std::size_t w, bool blur) {
  return make_layout(h, w, 0.90, blur);
}

LandmarkImage LandmarkImage::from_template(const std::string& name, std::size_t h, std::size_t w,
                                           bool blur) {
  if (name == "frontal") return frontal(h, w, blur);
  if (name == "profile_left") return profile_left(h, w, blur);
  if (name == "profile_right") return profile_right(h, w, blur);
  throw std::invalid_argument("LandmarkImage: unknown template '" + name + "'");
}

LoraAdapter LoraAdapter::init(const GeneratorModel& base, const LoraConfig& cfg) {
  if (cfg.rank == 0) throw std::invalid_argument("LoraAdapter: rank must be positive");
  if (!(cfg.alpha > 0.0)) throw std::invalid_argument("LoraAdapter: alpha must be positive");
  LoraAdapter a;
  a.cfg_ = cfg;
  a.blocks_ = base.config().encoder_blocks;
  const std::size_t r = base.config().tokens;
  Rng rng(cfg.init_seed);
  for (std::size_t b = 0; b < a.blocks_; ++b) {
    const std::string pre = "lora.enc" + std::to_string(b);
    a.index_.emplace(pre + ".B", a.params_.size());
    a.params_.emplace_back(pre + ".B", Array{{r, cfg.rank}, std::vector<double>(r * cfg.rank, 0.0)});
    std::vector<double> av(cfg.rank * r);
    const double sigma = 0.01;
    for (auto& x : av) x = sigma * rng.normal();
    a.index_.emplace(pre + ".A", a.params_.size());
    a.params_.emplace_back(pre + ".A", Array{{cfg.rank, r}, std::move(av)});
  }
  return a;
}

const Array& LoraAdapter::param(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::invalid_argument("LoraAdapter: no parameter " + name);
  return params_[it->second].second;
}

GeneratorModel LoraAdapter::merged(const GeneratorModel& base) const {
  GeneratorModel out = base;
  const double s = scaling();
  const std::size_t r = base.config().tokens;
  for (std::size_t b = 0; b < blocks_; ++b) {
    const auto& B = param("lora.enc" + std::to_string(b) + ".B");
    const auto& A = param("lora.enc" + std::to_string(b) + ".A");
    auto& w = out.param("enc" + std::to_string(b) + ".mix.w");
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < r; ++j) {
        double acc = 0.0;
        for (std::size_t k = 0; k < cfg_.rank; ++k) {
          acc += B.v[i * cfg_.rank + k] * A.v[k * r + j];
        }
        w.v[i * r + j] += s * acc;
      }
    }
  }
  return out;
}

GeneratorModel LoraAdapter::unmerged(const GeneratorModel& merged_model) const {
  GeneratorModel out = merged_model;
  const double s = scaling();
  const std::size_t r = merged_model.config().tokens;
  for (std::size_t b = 0; b < blocks_; ++b) {
    const auto& B = param("lora.enc" + std::to_string(b) + ".B");
    const auto& A = param("lora.enc" + std::to_string(b) + ".A");
    auto& w = out.param("enc" + std::to_string(b) + ".mix.w");
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < r; ++j) {
        double acc = 0.0;
        for (std::size_t k = 0; k < cfg_.rank; ++k) {
          acc += B.v[i * cfg_.rank + k] * A.v[k * r + j];
        }
        w.v[i * r + j] -= s * acc;
      }
    }
  }
  return out;
}

ConditionEncoder::ConditionEncoder(std::size_t h, std::size_t w, std::size_t out_width,
                                   std::uint64_t seed)
    : h_(h), w_(w), out_width_(out_width), stage_channels_({1, 4, 8, 16}) {
  if (h % 16 != 0 || w % 16 != 0) {
    throw std::invalid_argument("ConditionEncoder: grid sides must be multiples of 16");
  }
  if (out_width == 0) throw std::invalid_argument("ConditionEncoder: zero output width");
  Rng rng(seed);
  std::size_t sh = h, sw = w;
  for (std::size_t s = 0; s < 4; ++s) {
    sh /= 2;
    sw /= 2;
    const std::size_t cin = stage_channels_[s];
    const std::size_t rows = sh * sw * cin;  // flattened pooled input
    const std::size_t cols = s + 1 < 4 ? sh * sw * stage_channels_[s + 1] : out_width;
    std::vector<double> wv(rows * cols);
    const double sigma = 1.0 / std::sqrt(static_cast<double>(rows));
    for (auto& x : wv) x = sigma * rng.normal();
    const std::string pre = "cnn" + std::to_string(s);
    params_.emplace_back(pre + ".w", Array{{rows, cols}, std::move(wv)});
    params_.emplace_back(pre + ".b", Array{{cols}, std::vector<double>(cols, 0.0)});
  }
}

BoundParams::BoundParams(Tape& tape, const std::vector<std::pair<std::string, Array>>& params,
                         bool trainable) {
  for (const auto& [name, arr] : params) {
    handles.emplace(name, tape.leaf(arr.shape, arr.v, trainable));
  }
}

Tensor BoundParams::p(const std::string& name) const {
  auto it = handles.find(name);
  if (it == handles.end()) throw std::invalid_argument("BoundParams: no handle " + name);
  return it->second;
}

BoundEncoder::BoundEncoder(Tape& t, const ConditionEncoder& e, bool trainable)
    : tape(&t), enc(&e), bound(t, e.params(), trainable) {}

namespace {

// Average-pooling matrix (h/2*w/2) x (h*w), composed as a constant.
std::vector<double> pool_matrix(std::size_t h, std::size_t w) {
  const std::size_t ph = h / 2, pw = w / 2;
  std::vector<double> m(ph * pw * h * w, 0.0);
  for (std::size_t i = 0; i < ph; ++i) {
    for (std::size_t j = 0; j < pw; ++j) {
      for (std::size_t di = 0; di < 2; ++di) {
        for (std::size_t dj = 0; dj < 2; ++dj) {
          m[(i * pw + j) * h * w + (2 * i + di) * w + 2 * j + dj] = 0.25;
        }
      }
    }
  }
  return m;
}

}  // namespace

Tensor BoundEncoder::encode_op(const LandmarkImage& landmark) const {
  if (landmark.h() != enc->h_ || landmark.w() != enc->w_) {
    throw std::invalid_argument("ConditionEncoder: landmark grid size mismatch");
  }
  Tape& t = *tape;
  std::size_t sh = enc->h_, sw = enc->w_;
  // (pixels x channels) layout throughout.
  Tensor x = t.constant({sh * sw, 1}, landmark.pixels());
  for (std::size_t s = 0; s < 4; ++s) {
    const std::size_t cin = enc->stage_channels_[s];
    Tensor pool = t.constant({(sh / 2) * (sw / 2), sh * sw}, pool_matrix(sh, sw));
    sh /= 2;
    sw /= 2;
    Tensor pooled = t.matmul(pool, x);  // (sh*sw, cin)
    const std::string pre = "cnn" + std::to_string(s);
    const std::size_t cols = bound.p(pre + ".b").size();
    Tensor flat = t.reshape(pooled, {1, sh * sw * cin});
    Tensor z = t.add(t.matmul(flat, bound.p(pre + ".w")), t.reshape(bound.p(pre + ".b"), {1, cols}));
    if (s + 1 < 4) {
      x = t.reshape(t.softplus(z), {sh * sw, cols / (sh * sw)});
    } else {
      x = z;  // (1, out_width), linear output
    }
  }
  return t.reshape(x, {enc->out_width_});
}

Vec ConditionEncoder::encode(const LandmarkImage& landmark) const {
  Tape tape;
  BoundEncoder be(tape, *this, false);
  return be.encode_op(landmark).values();
}

BoundGenerator bind_adapted(Tape& tape, const GeneratorModel& base, const LoraAdapter& adapter,
                            const BoundParams& adapter_params) {
  BoundGenerator bound(tape, base, false);
  const double s = adapter.scaling();
  for (std::size_t b = 0; b < adapter.blocks(); ++b) {
    const std::string enc_name = "enc" + std::to_string(b) + ".mix.w";
    const std::string pre = "lora.enc" + std::to_string(b);
    Tensor low = tape.matmul(adapter_params.p(pre + ".B"), adapter_params.p(pre + ".A"));
    bound.replace(enc_name, tape.add(bound.p(enc_name), tape.scale(low, s)));
  }
  return bound;
}

Tensor lora_forward(Tape& tape, const GeneratorModel& base, const LoraAdapter& adapter,
                    const ConditionEncoder& encoder, const Tensor& feature,
                    const LandmarkImage& landmark, const std::vector<std::size_t>& dropped_rows) {
  BoundParams ap(tape, adapter.params(), false);
  BoundGenerator bound = bind_adapted(tape, base, adapter, ap);
  BoundEncoder be(tape, encoder, false);
  ConditionInput cond;
  cond.projected = be.encode_op(landmark);
  return generator_forward(tape, bound, feature, cond, dropped_rows);
}

std::vector<LossTracePoint> train_pose_lora(LoraAdapter& adapter, ConditionEncoder& encoder,
                                            const GeneratorModel& base,
                                            const std::vector<PoseTriple>& data,
                                            const OracleEmbedder& oracle,
                                            const PerceptualBank& bank, std::size_t steps,
                                            double lr, std::uint64_t seed,
                                            const LossWeights& weights) {
  if (data.empty()) throw std::invalid_argument("train_pose_lora: empty dataset");
  Rng rng(seed);
  AdamState adapter_opt(adapter.params());
  AdamState encoder_opt(encoder.params());
  std::vector<LossTracePoint> trace;
  trace.reserve(steps);
  for (std::size_t step = 0; step < steps; ++step) {
    try {
      const PoseTriple& triple = data[rng.index(data.size())];
      const double ratio = sample_mask_ratio(base.config().mask, rng);
      const auto dropped = choose_dropped_rows(base.config().tokens, ratio, rng);
      Tape tape;
      BoundParams ap(tape, adapter.params(), true);
      BoundGenerator bound = bind_adapted(tape, base, adapter, ap);
      BoundEncoder be(tape, encoder, true);
      Tensor feature = tape.constant({triple.feature.size()}, triple.feature);
      ConditionInput cond;
      cond.projected = be.encode_op(triple.landmark);
      Tensor recon = generator_forward(tape, bound, feature, cond, dropped);
      GeneratorLoss loss =
          generator_loss(tape, recon, triple.image, triple.feature, oracle, bank, weights);
      if (!std::isfinite(loss.total.scalar())) throw std::runtime_error("non-finite loss");
      trace.push_back({loss.rec.scalar(), loss.id.scalar(), loss.lpips.scalar(), loss.total.scalar()});
      auto grads = tape.backward(loss.total);
      std::vector<const std::vector<double>*> adapter_grads, encoder_grads;
      for (const auto& [name, arr] : adapter.params()) {
        adapter_grads.push_back(&grads.at(ap.p(name).id()));
      }
      for (const auto& [name, arr] : encoder.params()) {
        encoder_grads.push_back(&grads.at(be.bound.p(name).id()));
      }
      adapter_opt.step(adapter.mutable_params(), adapter_grads, lr);
      encoder_opt.step(encoder.mutable_params(), encoder_grads, lr);
    } catch (const std::runtime_error& e) {
      throw std::runtime_error("train_pose_lora: diverged at step " + std::to_string(step) + ": " +
                               e.what());
    }
  }
  return trace;
}

}  // namespace facegen

#include "facegen/generator.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <stdexcept>

namespace facegen {

double sample_mask_ratio(const MaskConfig& cfg, Rng& rng) {
  if (!(cfg.min >= 0.0) || !(cfg.min < cfg.max) || !(cfg.max <= 1.0)) {
    throw std::invalid_argument("sample_mask_ratio: need 0 <= min < max <= 1");
  }
  if (cfg.std <= 0.0) return cfg.mean;
  for (;;) {
    const double x = rng.normal(cfg.mean, cfg.std);
    if (x >= cfg.min && x <= cfg.max) return x;
  }
}

void GeneratorConfig::validate() const {
  if (embed_dim == 0 || tokens == 0 || channels == 0 || encoder_blocks == 0 ||
      expansion_hidden == 0) {
    throw std::invalid_argument("GeneratorConfig: zero-sized component");
  }
  if (decoder_channels.size() != 4) {
    throw std::invalid_argument("GeneratorConfig: decoder has exactly four stages");
  }
  if (image_h % 16 != 0 || image_w % 16 != 0 || image_h == 0 || image_w == 0 || image_ch == 0) {
    throw std::invalid_argument("GeneratorConfig: image sides must be positive multiples of 16");
  }
}

void GeneratorModel::add(std::string name, Shape shape, std::vector<double> values) {
  index_.emplace(name, params_.size());
  params_.emplace_back(std::move(name), Array{std::move(shape), std::move(values)});
}

Array& GeneratorModel::param(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::invalid_argument("GeneratorModel: no parameter " + name);
  return params_[it->second].second;
}

const Array& GeneratorModel::param(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::invalid_argument("GeneratorModel: no parameter " + name);
  return params_[it->second].second;
}

GeneratorModel GeneratorModel::init(const GeneratorConfig& cfg) {
  cfg.validate();
  GeneratorModel m;
  m.cfg_ = cfg;
  Rng rng(cfg.init_seed);
  auto dense = [&](std::size_t rows, std::size_t cols) {
    std::vector<double> v(rows * cols);
    const double sigma = 1.0 / std::sqrt(static_cast<double>(rows));
    for (auto& x : v) x = sigma * rng.normal();
    return v;
  };
  const std::size_t d = cfg.embed_dim, hdn = cfg.expansion_hidden;
  const std::size_t r = cfg.tokens, c = cfg.channels, rc = r * c;
  m.add("exp.w1", {d, hdn}, dense(d, hdn));
  m.add("exp.b1", {hdn}, std::vector<double>(hdn, 0.0));
  m.add("exp.w2", {hdn, rc}, dense(hdn, rc));
  m.add("exp.b2", {rc}, std::vector<double>(rc, 0.0));
  m.add("cond.w", {d, c}, dense(d, c));
  m.add("cond.b", {c}, std::vector<double>(c, 0.0));
  for (std::size_t b = 0; b < cfg.encoder_blocks; ++b) {
    const std::string pre = "enc" + std::to_string(b);
    m.add(pre + ".tok.w", {c, c}, dense(c, c));
    m.add(pre + ".tok.b", {c}, std::vector<double>(c, 0.0));
    m.add(pre + ".mix.w", {r, r}, dense(r, r));
    m.add(pre + ".mix.b", {r}, std::vector<double>(r, 0.0));
  }
  const std::size_t h0 = cfg.image_h / 16, w0 = cfg.image_w / 16;
  const std::size_t c0 = cfg.decoder_channels[0];
  m.add("dec.in.w", {rc, h0 * w0 * c0}, dense(rc, h0 * w0 * c0));
  m.add("dec.in.b", {h0 * w0 * c0}, std::vector<double>(h0 * w0 * c0, 0.0));
  for (std::size_t s = 0; s < 4; ++s) {
    const std::size_t cin = cfg.decoder_channels[s];
    const std::size_t cout = s + 1 < 4 ? cfg.decoder_channels[s + 1] : cfg.image_ch;
    const std::string pre = "dec" + std::to_string(s);
    for (std::size_t k = 0; k < 4; ++k) {
      m.add(pre + ".off" + std::to_string(k) + ".w", {cin, cout}, dense(cin, cout));
    }
    m.add(pre + ".b", {cout}, std::vector<double>(cout, 0.0));
  }
  return m;
}

std::uint64_t GeneratorModel::param_hash() const {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto feed = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ull;
    }
  };
  for (const auto& [name, arr] : params_) {
    feed(name.data(), name.size());
    feed(arr.v.data(), arr.v.size() * sizeof(double));
  }
  return h;
}

PerceptualBank::PerceptualBank(std::size_t h, std::size_t w, std::size_t ch, std::size_t scales,
                               std::size_t feat_dim, std::uint64_t seed)
    : pixels_(h * w * ch), feat_dim_(feat_dim) {
  if (scales == 0 || feat_dim == 0) throw std::invalid_argument("PerceptualBank: empty bank");
  Rng rng(seed);
  for (std::size_t level = 0; level < scales; ++level) {
    const std::size_t factor = std::size_t{1} << level;
    if (h % factor != 0 || w % factor != 0) {
      throw std::invalid_argument("PerceptualBank: image not divisible by pooling factor");
    }
    const std::size_t ph = h / factor, pw = w / factor;
    const std::size_t pooled = ph * pw * ch;
    // Random projection of the pooled image, composed with the (constant)
    // average-pooling map into a single feat_dim x pixels matrix.
    std::vector<double> rand_proj(feat_dim * pooled);
    const double sigma = 1.0 / std::sqrt(static_cast<double>(pooled));
    for (auto& x : rand_proj) x = sigma * rng.normal();
    std::vector<double> composed(feat_dim * pixels_, 0.0);
    const double inv_area = 1.0 / static_cast<double>(factor * factor);
    for (std::size_t f = 0; f < feat_dim; ++f) {
      for (std::size_t pi = 0; pi < ph; ++pi) {
        for (std::size_t pj = 0; pj < pw; ++pj) {
          for (std::size_t cc = 0; cc < ch; ++cc) {
            const double coeff = rand_proj[f * pooled + (pi * pw + pj) * ch + cc] * inv_area;
            for (std::size_t di = 0; di < factor; ++di) {
              for (std::size_t dj = 0; dj < factor; ++dj) {
                const std::size_t px = ((pi * factor + di) * w + pj * factor + dj) * ch + cc;
                composed[f * pixels_ + px] += coeff;
              }
            }
          }
        }
      }
    }
    proj_.push_back(std::move(composed));
    weights_.emplace_back(feat_dim, 1.0);
  }
}

Vec PerceptualBank::features(const Vec& image, std::size_t level) const {
  if (image.size() != pixels_) throw std::invalid_argument("PerceptualBank: image size mismatch");
  const auto& m = proj_.at(level);
  Vec out(feat_dim_, 0.0);
  for (std::size_t f = 0; f < feat_dim_; ++f) {
    const double* row = m.data() + f * pixels_;
    double s = 0.0;
    for (std::size_t j = 0; j < pixels_; ++j) s += row[j] * image[j];
    out[f] = s;
  }
  return out;
}

Tensor PerceptualBank::features_op(Tape& tape, const Tensor& image, std::size_t level) const {
  if (image.size() != pixels_) throw std::invalid_argument("PerceptualBank: image size mismatch");
  Tensor m = tape.constant({feat_dim_, pixels_}, proj_.at(level));
  Tensor col = tape.reshape(image, {pixels_, 1});
  return tape.reshape(tape.matmul(m, col), {feat_dim_});
}

BoundGenerator::BoundGenerator(Tape& t, const GeneratorModel& m, bool trainable)
    : tape(&t), model(&m) {
  for (const auto& [name, arr] : m.params()) {
    handles.emplace(name, t.leaf(arr.shape, arr.v, trainable));
  }
}

Tensor BoundGenerator::p(const std::string& name) const {
  auto it = handles.find(name);
  if (it == handles.end()) throw std::invalid_argument("BoundGenerator: no handle " + name);
  return it->second;
}

void BoundGenerator::replace(const std::string& name, Tensor t) {
  auto it = handles.find(name);
  if (it == handles.end()) throw std::invalid_argument("BoundGenerator: no handle " + name);
  it->second = t;
}

std::vector<std::size_t> choose_dropped_rows(std::size_t tokens, double mask_ratio, Rng& rng) {
  if (!(mask_ratio >= 0.0) || !(mask_ratio <= 1.0)) {
    throw std::invalid_argument("choose_dropped_rows: mask_ratio must be in [0, 1]");
  }
  const auto k = static_cast<std::size_t>(std::ceil(mask_ratio * static_cast<double>(tokens)));
  auto rows = rng.sample_without_replacement(k, tokens);
  std::sort(rows.begin(), rows.end());
  return rows;
}

namespace {

// Per-row bias over an (rows x c) map: ones(rows x 1) @ b(1 x c).
Tensor tile_row_bias(Tape& t, const Tensor& b, std::size_t rows) {
  const std::size_t c = b.size();
  Tensor ones = t.constant({rows, 1}, std::vector<double>(rows, 1.0));
  return t.matmul(ones, t.reshape(b, {1, c}));
}

// Per-token bias over an (r x cols) map: b(r x 1) @ ones(1 x cols).
Tensor tile_col_bias(Tape& t, const Tensor& b, std::size_t cols) {
  const std::size_t r = b.size();
  Tensor ones = t.constant({1, cols}, std::vector<double>(cols, 1.0));
  return t.matmul(t.reshape(b, {r, 1}), ones);
}

}  // namespace

Tensor generator_forward(Tape& tape, const BoundGenerator& g, const Tensor& feature,
                         const ConditionInput& condition,
                         const std::vector<std::size_t>& dropped_rows) {
  const GeneratorConfig& cfg = g.model->config();
  if (feature.size() != cfg.embed_dim) {
    throw std::invalid_argument("generator_forward: feature has " + std::to_string(feature.size()) +
                                " values, expected " + std::to_string(cfg.embed_dim));
  }
  const std::size_t r = cfg.tokens, c = cfg.channels;
  for (auto row : dropped_rows) {
    if (row >= r) throw std::invalid_argument("generator_forward: dropped row out of range");
  }

  // Feature expansion: two linear layers up to the token map.
  Tensor x = tape.reshape(feature, {1, cfg.embed_dim});
  Tensor h = tape.softplus(
      tape.add(tape.matmul(x, g.p("exp.w1")), tape.reshape(g.p("exp.b1"), {1, cfg.expansion_hidden})));
  Tensor expanded = tape.add(tape.matmul(h, g.p("exp.w2")), tape.reshape(g.p("exp.b2"), {1, r * c}));
  Tensor tokens = tape.reshape(expanded, {r, c});

  const bool masking = !dropped_rows.empty();
  Tensor zero_mask, mix_mask;
  if (masking) {
    std::vector<double> zeros_at_dropped(r * c, 1.0);
    for (auto row : dropped_rows) {
      std::fill_n(zeros_at_dropped.begin() + static_cast<std::ptrdiff_t>(row * c), c, 0.0);
    }
    // Kept rows enter the cross-token mix with weight r/k (inverted-dropout
    // scaling) so the mixing statistics match the unmasked configuration.
    const std::size_t kept = r - dropped_rows.size();
    const double keep_value = kept == 0 ? 1.0 : static_cast<double>(r) / static_cast<double>(kept);
    std::vector<double> scaled(zeros_at_dropped);
    for (auto& v : scaled) v *= keep_value;
    zero_mask = tape.constant({r, c}, std::move(zeros_at_dropped));
    mix_mask = tape.constant({r, c}, std::move(scaled));
    tokens = tape.mul(tokens, zero_mask);
  }

  // Token-mixing encoder. Dropped rows are zeroed before every affine so
  // they carry nothing through the mixing step.
  Tensor t = tokens;
  for (std::size_t b = 0; b < cfg.encoder_blocks; ++b) {
    const std::string pre = "enc" + std::to_string(b);
    Tensor u = tape.softplus(
        tape.add(tape.matmul(t, g.p(pre + ".tok.w")), tile_row_bias(tape, g.p(pre + ".tok.b"), r)));
    if (masking) u = tape.mul(u, mix_mask);
    t = tape.add(tape.matmul(g.p(pre + ".mix.w"), u), tile_col_bias(tape, g.p(pre + ".mix.b"), c));
    if (masking) t = tape.mul(t, zero_mask);
  }

  // Condition fill-in at the dropped positions (training device; skipped
  // entirely when nothing was masked so the condition cannot leak through).
  if (masking) {
    Tensor cond_row;
    if (condition.projected) {
      if (condition.projected->size() != c) {
        throw std::invalid_argument("generator_forward: projected condition width mismatch");
      }
      cond_row = tape.reshape(*condition.projected, {1, c});
    } else if (condition.embedding) {
      if (condition.embedding->size() != cfg.embed_dim) {
        throw std::invalid_argument("generator_forward: condition embedding width mismatch");
      }
      Tensor ce = tape.reshape(*condition.embedding, {1, cfg.embed_dim});
      cond_row = tape.add(tape.matmul(ce, g.p("cond.w")), tape.reshape(g.p("cond.b"), {1, c}));
    } else {
      throw std::invalid_argument("generator_forward: rows were dropped but no condition given");
    }
    std::vector<double> drop_col(r, 0.0);
    for (auto row : dropped_rows) drop_col[row] = 1.0;
    Tensor fill = tape.matmul(tape.constant({r, 1}, std::move(drop_col)), cond_row);
    t = tape.add(t, fill);
  }

  // Decoder: project to the base grid, then four x2 deconvolution stages
  // (nearest-neighbor upsample, learned channel mix per 2x2 offset).
  const std::size_t h0 = cfg.image_h / 16, w0 = cfg.image_w / 16;
  const std::size_t c0 = cfg.decoder_channels[0];
  Tensor flat = tape.reshape(t, {1, r * c});
  Tensor d = tape.softplus(tape.add(tape.matmul(flat, g.p("dec.in.w")),
                                    tape.reshape(g.p("dec.in.b"), {1, h0 * w0 * c0})));
  Tensor grid = tape.reshape(d, {h0, w0, c0});
  std::size_t gh = h0, gw = w0;
  for (std::size_t s = 0; s < 4; ++s) {
    const std::size_t cin = cfg.decoder_channels[s];
    const std::size_t cout = s + 1 < 4 ? cfg.decoder_channels[s + 1] : cfg.image_ch;
    const std::string pre = "dec" + std::to_string(s);
    Tensor pixels = tape.reshape(grid, {gh * gw, cin});
    Tensor mixed;
    for (std::size_t k = 0; k < 4; ++k) {
      Tensor y = tape.matmul(pixels, g.p(pre + ".off" + std::to_string(k) + ".w"));
      Tensor up = tape.upsample_nn(tape.reshape(y, {gh, gw, cout}), 2);
      // 0/1 pattern selecting this offset's positions in each 2x2 block.
      std::vector<double> sel(4 * gh * gw * cout, 0.0);
      const std::size_t di = k / 2, dj = k % 2;
      for (std::size_t i = di; i < 2 * gh; i += 2) {
        for (std::size_t j = dj; j < 2 * gw; j += 2) {
          for (std::size_t cc = 0; cc < cout; ++cc) sel[(i * 2 * gw + j) * cout + cc] = 1.0;
        }
      }
      Tensor picked = tape.mul(up, tape.constant({2 * gh, 2 * gw, cout}, std::move(sel)));
      mixed = k == 0 ? picked : tape.add(mixed, picked);
    }
    gh *= 2;
    gw *= 2;
    Tensor bias = tape.matmul(tape.constant({gh * gw, 1}, std::vector<double>(gh * gw, 1.0)),
                              tape.reshape(g.p(pre + ".b"), {1, cout}));
    Tensor z = tape.add(tape.reshape(mixed, {gh * gw, cout}), bias);
    // Hidden stages stay softplus; the image itself is bounded to (-2, 2),
    // which covers the procedural target range and keeps the embedding
    // magnitude (the quality score) saturating like a real pixel range.
    z = s + 1 < 4 ? tape.softplus(z) : tape.scale(tape.tanh(z), 2.0);
    grid = tape.reshape(z, {gh, gw, cout});
  }
  return grid;
}

Tensor generator_forward(Tape& tape, const BoundGenerator& g, const Tensor& feature,
                         const ConditionInput& condition, double mask_ratio, Rng& rng) {
  const auto dropped = choose_dropped_rows(g.model->config().tokens, mask_ratio, rng);
  return generator_forward(tape, g, feature, condition, dropped);
}

GeneratorLoss generator_loss(Tape& tape, const Tensor& recon, const Vec& image_gt,
                             const Vec& feature_gt, const OracleEmbedder& oracle,
                             const PerceptualBank& bank, const LossWeights& weights) {
  if (recon.size() != image_gt.size()) {
    throw std::invalid_argument("generator_loss: reconstruction/target size mismatch");
  }
  Tensor flat = tape.reshape(recon, {image_gt.size()});
  Tensor gt = tape.constant({image_gt.size()}, image_gt);
  Tensor diff = tape.sub(flat, gt);
  Tensor rec = tape.reduce_sum(tape.mul(diff, diff));

  Tensor emb = oracle.embed_op(tape, flat);
  Tensor fgt = tape.constant({feature_gt.size()}, feature_gt);
  Tensor id = tape.sub(tape.scalar_leaf(1.0), tape.cosine(emb, fgt));

  Tensor lpips = tape.scalar_leaf(0.0);
  for (std::size_t level = 0; level < bank.scales(); ++level) {
    Tensor fr = bank.features_op(tape, flat, level);
    Tensor fg = tape.constant({bank.channel_weights(level).size()}, bank.features(image_gt, level));
    Tensor w = tape.constant({bank.channel_weights(level).size()}, bank.channel_weights(level));
    Tensor wd = tape.mul(w, tape.sub(fr, fg));
    lpips = tape.add(lpips, tape.reduce_sum(tape.mul(wd, wd)));
  }

  Tensor total = tape.add(tape.add(rec, id), tape.scale(lpips, weights.lambda_lpips));
  return {rec, id, lpips, total};
}

AdamState::AdamState(const std::vector<std::pair<std::string, Array>>& params) {
  for (const auto& [name, arr] : params) {
    m_.emplace_back(arr.v.size(), 0.0);
    v_.emplace_back(arr.v.size(), 0.0);
  }
}

void AdamState::step(std::vector<std::pair<std::string, Array>>& params,
                     const std::vector<const std::vector<double>*>& grads, double lr) {
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  ++t_;
  const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto& arr = params[p].second.v;
    const auto& g = *grads[p];
    auto& m = m_[p];
    auto& v = v_[p];
    for (std::size_t i = 0; i < arr.size(); ++i) {
      m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * g[i];
      v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * g[i] * g[i];
      arr[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + kEps);
    }
  }
}

std::vector<LossTracePoint> train_generator(GeneratorModel& model,
                                            const std::vector<TrainPair>& data,
                                            const OracleEmbedder& oracle,
                                            const PerceptualBank& bank, std::size_t steps,
                                            double lr, std::uint64_t seed,
                                            const LossWeights& weights) {
  if (data.empty()) throw std::invalid_argument("train_generator: empty dataset");
  Rng rng(seed);
  AdamState opt(model.params());
  std::vector<LossTracePoint> trace;
  trace.reserve(steps);
  for (std::size_t step = 0; step < steps; ++step) {
    try {
      const TrainPair& pair = data[rng.index(data.size())];
      const double ratio = sample_mask_ratio(model.config().mask, rng);
      const auto dropped = choose_dropped_rows(model.config().tokens, ratio, rng);
      Tape tape;
      BoundGenerator bound(tape, model, true);
      Tensor feature = tape.constant({pair.feature.size()}, pair.feature);
      ConditionInput cond;
      cond.embedding = feature;
      Tensor recon = generator_forward(tape, bound, feature, cond, dropped);
      GeneratorLoss loss = generator_loss(tape, recon, pair.image, pair.feature, oracle, bank, weights);
      if (!std::isfinite(loss.total.scalar())) throw std::runtime_error("non-finite loss");
      trace.push_back({loss.rec.scalar(), loss.id.scalar(), loss.lpips.scalar(), loss.total.scalar()});
      auto grads = tape.backward(loss.total);
      std::vector<const std::vector<double>*> by_param;
      by_param.reserve(model.params().size());
      for (const auto& [name, arr] : model.params()) {
        by_param.push_back(&grads.at(bound.p(name).id()));
      }
      opt.step(model.mutable_params(), by_param, lr);
    } catch (const std::runtime_error& e) {
      throw std::runtime_error("train_generator: diverged at step " + std::to_string(step) + ": " +
                               e.what());
    }
  }
  return trace;
}

void save_loss_trace_csv(const std::filesystem::path& path,
                         const std::vector<LossTracePoint>& trace) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os << "step,L_rec,L_id,L_lpips,L_total\n";
  os.precision(17);
  for (std::size_t i = 0; i < trace.size(); ++i) {
    os << i << ',' << trace[i].rec << ',' << trace[i].id << ',' << trace[i].lpips << ','
       << trace[i].total << '\n';
  }
}

}  // namespace facegen

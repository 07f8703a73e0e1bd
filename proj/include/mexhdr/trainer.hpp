#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "mexhdr/config.hpp"
#include "mexhdr/losses.hpp"
#include "mexhdr/manifest.hpp"
#include "mexhdr/mask.hpp"
#include "mexhdr/model.hpp"

namespace mexhdr {

struct AugmentConfig {
  bool enabled = true;
  double max_rot_deg = 10.0;  // continuous rotation on top of 90-degree steps
  double scale_lo = 0.9;
  double scale_hi = 1.1;
  double max_shift = 0.1;  // fraction of the image size
};

struct TrainConfig {
  std::uint64_t seed = 0;
  int batch_size = 64;
  double learning_rate = 1e-4;
  double plateau_factor = 0.5;
  int plateau_patience = 2000;
  int crop_size = 256;
  int max_steps = 200000;
  int checkpoint_every = 1000;
  std::string data_manifest;
  AugmentConfig augment;
  // When nonempty, training pairs are drawn from this EV pair list instead
  // of all stack combinations.
  std::vector<std::pair<double, double>> pair_evs;
  LossConfig loss;
  NetConfig net;
  MaskConfig mask;

  void validate() const {
    net.validate();
    loss.validate();
    mask.validate();
    if (batch_size < 1) throw Error("TrainConfig: batch_size must be positive");
    if (!(learning_rate >= 0.0)) throw Error("TrainConfig: bad learning rate");
    if (!(plateau_factor > 0.0 && plateau_factor <= 1.0))
      throw Error("TrainConfig: plateau_factor must lie in (0,1]");
    if (plateau_patience < 1) throw Error("TrainConfig: plateau_patience must be positive");
    if (max_steps < 0) throw Error("TrainConfig: max_steps must be nonnegative");
    if (checkpoint_every < 1) throw Error("TrainConfig: checkpoint_every must be positive");
    if (crop_size < 1 || crop_size % net.spatial_multiple())
      throw Error("TrainConfig: crop_size must be a positive multiple of " +
                  std::to_string(net.spatial_multiple()));
    for (const auto& [a, b] : pair_evs)
      if (!(b > a)) throw Error("TrainConfig: pair EVs must satisfy ev2 > ev1");
  }
};

inline MaskVariant mask_variant_from_string(const std::string& s) {
  if (s == "min") return MaskVariant::kMinCombination;
  if (s == "max") return MaskVariant::kPaperLiteralMax;
  throw Error("mask variant must be 'min' or 'max', got '" + s + "'");
}

inline std::string mask_variant_to_string(MaskVariant v) {
  return v == MaskVariant::kMinCombination ? "min" : "max";
}

/// Reads a TrainConfig from key=value text; unknown keys are rejected.
inline TrainConfig train_config_from_kv(KvConfig& kv) {
  TrainConfig c;
  c.seed = static_cast<std::uint64_t>(kv.get_int("seed", 0));
  c.batch_size = static_cast<int>(kv.get_int("batch_size", c.batch_size));
  c.learning_rate = kv.get_double("learning_rate", c.learning_rate);
  c.plateau_factor = kv.get_double("plateau_factor", c.plateau_factor);
  c.plateau_patience = static_cast<int>(kv.get_int("plateau_patience", c.plateau_patience));
  c.crop_size = static_cast<int>(kv.get_int("crop_size", c.crop_size));
  c.max_steps = static_cast<int>(kv.get_int("max_steps", c.max_steps));
  c.checkpoint_every = static_cast<int>(kv.get_int("checkpoint_every", c.checkpoint_every));
  c.data_manifest = kv.get_string("data_manifest", "");
  c.augment.enabled = kv.get_bool("augment.enabled", c.augment.enabled);
  c.augment.max_rot_deg = kv.get_double("augment.max_rot_deg", c.augment.max_rot_deg);
  c.augment.scale_lo = kv.get_double("augment.scale_lo", c.augment.scale_lo);
  c.augment.scale_hi = kv.get_double("augment.scale_hi", c.augment.scale_hi);
  c.augment.max_shift = kv.get_double("augment.max_shift", c.augment.max_shift);
  auto pairs = kv.get_strings("pair_evs", {});
  for (const auto& p : pairs) {
    auto colon = p.find(':');
    if (colon == std::string::npos)
      throw Error("pair_evs entries must look like 'ev1:ev2', got '" + p + "'");
    c.pair_evs.emplace_back(std::stod(p.substr(0, colon)), std::stod(p.substr(colon + 1)));
  }
  c.loss.lambda_h = kv.get_double("loss.lambda_h", c.loss.lambda_h);
  c.loss.lambda_r = kv.get_double("loss.lambda_r", c.loss.lambda_r);
  c.loss.lambda_p = kv.get_double("loss.lambda_p", c.loss.lambda_p);
  c.loss.lambda_tv = kv.get_double("loss.lambda_tv", c.loss.lambda_tv);
  c.loss.epsilon = kv.get_double("loss.epsilon", c.loss.epsilon);
  c.loss.vgg_layers = kv.get_strings("loss.vgg_layers", c.loss.vgg_layers);
  c.loss.vgg_weights_path = kv.get_string("loss.vgg_weights", "");
  c.loss.pyramid_base = static_cast<int>(kv.get_int("loss.pyramid_base", c.loss.pyramid_base));
  c.loss.pyramid_seed =
      static_cast<std::uint64_t>(kv.get_int("loss.pyramid_seed", c.loss.pyramid_seed));
  c.net.levels = static_cast<int>(kv.get_int("net.levels", c.net.levels));
  c.net.base_features_encoder =
      static_cast<int>(kv.get_int("net.base_features_encoder", c.net.base_features_encoder));
  c.net.base_features_exposure =
      static_cast<int>(kv.get_int("net.base_features_exposure", c.net.base_features_exposure));
  c.net.max_features_encoder =
      static_cast<int>(kv.get_int("net.max_features_encoder", c.net.max_features_encoder));
  c.net.max_features_exposure =
      static_cast<int>(kv.get_int("net.max_features_exposure", c.net.max_features_exposure));
  c.net.share_exposure_nets = kv.get_bool("net.share_exposure_nets", c.net.share_exposure_nets);
  c.net.leaky_slope = kv.get_double("net.leaky_slope", c.net.leaky_slope);
  c.net.bn_momentum = kv.get_double("net.bn_momentum", c.net.bn_momentum);
  c.net.bn_eps = kv.get_double("net.bn_eps", c.net.bn_eps);
  c.net.icnr_init = kv.get_bool("net.icnr_init", c.net.icnr_init);
  c.mask.gamma = kv.get_double("mask.gamma", c.mask.gamma);
  c.mask.variant =
      mask_variant_from_string(kv.get_string("mask.variant", mask_variant_to_string(c.mask.variant)));
  kv.reject_unknown();
  c.validate();
  return c;
}

/// Writes the fully resolved configuration (reparsable by train_config_from_kv).
inline void write_train_config(std::ostream& out, const TrainConfig& c) {
  char buf[256];
  auto put = [&](const char* key, const std::string& v) { out << key << " = " << v << "\n"; };
  auto putd = [&](const char* key, double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    put(key, buf);
  };
  put("seed", std::to_string(c.seed));
  put("batch_size", std::to_string(c.batch_size));
  putd("learning_rate", c.learning_rate);
  putd("plateau_factor", c.plateau_factor);
  put("plateau_patience", std::to_string(c.plateau_patience));
  put("crop_size", std::to_string(c.crop_size));
  put("max_steps", std::to_string(c.max_steps));
  put("checkpoint_every", std::to_string(c.checkpoint_every));
  if (!c.data_manifest.empty()) put("data_manifest", c.data_manifest);
  put("augment.enabled", c.augment.enabled ? "true" : "false");
  putd("augment.max_rot_deg", c.augment.max_rot_deg);
  putd("augment.scale_lo", c.augment.scale_lo);
  putd("augment.scale_hi", c.augment.scale_hi);
  putd("augment.max_shift", c.augment.max_shift);
  if (!c.pair_evs.empty()) {
    std::string s;
    for (const auto& [a, b] : c.pair_evs) {
      std::snprintf(buf, sizeof(buf), "%s%g:%g", s.empty() ? "" : ",", a, b);
      s += buf;
    }
    put("pair_evs", s);
  }
  putd("loss.lambda_h", c.loss.lambda_h);
  putd("loss.lambda_r", c.loss.lambda_r);
  putd("loss.lambda_p", c.loss.lambda_p);
  putd("loss.lambda_tv", c.loss.lambda_tv);
  putd("loss.epsilon", c.loss.epsilon);
  {
    std::string s;
    for (const auto& l : c.loss.vgg_layers) s += (s.empty() ? "" : ",") + l;
    put("loss.vgg_layers", s);
  }
  if (!c.loss.vgg_weights_path.empty()) put("loss.vgg_weights", c.loss.vgg_weights_path);
  put("loss.pyramid_base", std::to_string(c.loss.pyramid_base));
  put("loss.pyramid_seed", std::to_string(c.loss.pyramid_seed));
  put("net.levels", std::to_string(c.net.levels));
  put("net.base_features_encoder", std::to_string(c.net.base_features_encoder));
  put("net.base_features_exposure", std::to_string(c.net.base_features_exposure));
  put("net.max_features_encoder", std::to_string(c.net.max_features_encoder));
  put("net.max_features_exposure", std::to_string(c.net.max_features_exposure));
  put("net.share_exposure_nets", c.net.share_exposure_nets ? "true" : "false");
  putd("net.leaky_slope", c.net.leaky_slope);
  putd("net.bn_momentum", c.net.bn_momentum);
  putd("net.bn_eps", c.net.bn_eps);
  put("net.icnr_init", c.net.icnr_init ? "true" : "false");
  putd("mask.gamma", c.mask.gamma);
  put("mask.variant", mask_variant_to_string(c.mask.variant));
}

// ---------------------------------------------------------------------------
// Pair sampling.

/// Uniform unordered index pair (i < j) over n stack slots.
inline std::pair<int, int> sample_pair_indices(std::size_t n, Rng& rng) {
  if (n < 2) throw Error("sample_pair: need at least 2 images in a stack");
  std::uint64_t total = n * (n - 1) / 2;
  std::uint64_t k = rng.uniform_index(total);
  // Row-by-row walk of the upper triangle.
  std::size_t i = 0;
  std::uint64_t row = n - 1;
  while (k >= row) {
    k -= row;
    ++i;
    --row;
  }
  return {static_cast<int>(i), static_cast<int>(i + 1 + k)};
}

/// Samples two distinct images from a stack, short exposure first.
inline std::pair<const LdrImage*, const LdrImage*> sample_pair(const ExposureStack& stack,
                                                               Rng& rng) {
  auto [i, j] = sample_pair_indices(stack.images.size(), rng);
  return {&stack.images[i], &stack.images[j]};  // stack is sorted by delta_t
}

// ---------------------------------------------------------------------------
// Augmentation: one geometric transform sampled per pair and applied
// identically to both images.

struct AugmentParams {
  int rot90 = 0;  // quarter turns
  bool flip_h = false, flip_v = false;
  double angle_deg = 0.0;
  double scale = 1.0;
  double shift_x = 0.0, shift_y = 0.0;  // fractions of width/height
  int crop_x = 0, crop_y = 0;
};

inline AugmentParams sample_augment(Rng& rng, const AugmentConfig& cfg, int h, int w,
                                    int crop_size) {
  AugmentParams p;
  if (cfg.enabled) {
    p.rot90 = static_cast<int>(rng.uniform_index(4));
    p.flip_h = rng.bernoulli(0.5);
    p.flip_v = rng.bernoulli(0.5);
    p.angle_deg = rng.uniform(-cfg.max_rot_deg, cfg.max_rot_deg);
    p.scale = rng.uniform(cfg.scale_lo, cfg.scale_hi);
    p.shift_x = rng.uniform(-cfg.max_shift, cfg.max_shift);
    p.shift_y = rng.uniform(-cfg.max_shift, cfg.max_shift);
  }
  int eff_h = std::max(h, crop_size), eff_w = std::max(w, crop_size);
  p.crop_y = eff_h > crop_size ? static_cast<int>(rng.uniform_index(eff_h - crop_size + 1)) : 0;
  p.crop_x = eff_w > crop_size ? static_cast<int>(rng.uniform_index(eff_w - crop_size + 1)) : 0;
  return p;
}

namespace detail {

inline int reflect_index(int v, int n) {
  if (n == 1) return 0;
  int period = 2 * n - 2;
  v %= period;
  if (v < 0) v += period;
  return v < n ? v : period - v;
}

inline float sample_bilinear_reflect(const Image& img, double y, double x, int c) {
  int y0 = static_cast<int>(std::floor(y)), x0 = static_cast<int>(std::floor(x));
  double fy = y - y0, fx = x - x0;
  int y0r = reflect_index(y0, img.height), y1r = reflect_index(y0 + 1, img.height);
  int x0r = reflect_index(x0, img.width), x1r = reflect_index(x0 + 1, img.width);
  double v00 = img.at(y0r, x0r, c), v01 = img.at(y0r, x1r, c);
  double v10 = img.at(y1r, x0r, c), v11 = img.at(y1r, x1r, c);
  double v = v00 * (1 - fy) * (1 - fx) + v01 * (1 - fy) * fx + v10 * fy * (1 - fx) +
             v11 * fy * fx;
  return static_cast<float>(v);
}

inline Image upscale_to_min(const Image& img, int min_size) {
  double factor = static_cast<double>(min_size) / std::min(img.height, img.width);
  int nh = std::max(min_size, static_cast<int>(std::ceil(img.height * factor)));
  int nw = std::max(min_size, static_cast<int>(std::ceil(img.width * factor)));
  Image out(nh, nw, img.channels);
  for (int y = 0; y < nh; ++y)
    for (int x = 0; x < nw; ++x) {
      double sy = (y + 0.5) * img.height / nh - 0.5;
      double sx = (x + 0.5) * img.width / nw - 0.5;
      for (int c = 0; c < img.channels; ++c)
        out.at(y, x, c) = sample_bilinear_reflect(img, sy, sx, c);
    }
  return out;
}

}  // namespace detail

/// Applies the sampled transform (flips, quarter turns, rotation, scale,
/// shift) followed by an aligned crop. Images smaller than the crop are
/// upscaled first (with a warning).
inline Image apply_augment(const Image& img, const AugmentParams& p, int crop_size) {
  const Image* src = &img;
  Image upscaled;
  if (img.height < crop_size || img.width < crop_size) {
    std::cerr << "warning: image " << img.width << "x" << img.height
              << " smaller than crop " << crop_size << ", upscaling\n";
    upscaled = detail::upscale_to_min(img, crop_size);
    src = &upscaled;
  }
  const int h = src->height, w = src->width;
  const double cy = 0.5 * (h - 1), cx = 0.5 * (w - 1);
  const double theta = (p.angle_deg + 90.0 * p.rot90) * 3.14159265358979323846 / 180.0;
  const double cos_t = std::cos(-theta), sin_t = std::sin(-theta);  // inverse rotation
  const double inv_scale = 1.0 / p.scale;
  const double tx = p.shift_x * w, ty = p.shift_y * h;

  Image out(crop_size, crop_size, src->channels);
  bool identity = p.rot90 == 0 && !p.flip_h && !p.flip_v && p.angle_deg == 0.0 &&
                  p.scale == 1.0 && p.shift_x == 0.0 && p.shift_y == 0.0;
  for (int y = 0; y < crop_size; ++y)
    for (int x = 0; x < crop_size; ++x) {
      double py = y + p.crop_y, px = x + p.crop_x;
      if (identity) {
        for (int c = 0; c < src->channels; ++c)
          out.at(y, x, c) = src->at(static_cast<int>(py), static_cast<int>(px), c);
        continue;
      }
      // Undo shift, then scale, then rotation, about the image center.
      double dy = (py - cy - ty) * inv_scale;
      double dx = (px - cx - tx) * inv_scale;
      double ry = sin_t * dx + cos_t * dy;
      double rx = cos_t * dx - sin_t * dy;
      double sy = ry + cy, sx = rx + cx;
      if (p.flip_h) sx = (w - 1) - sx;
      if (p.flip_v) sy = (h - 1) - sy;
      for (int c = 0; c < src->channels; ++c)
        out.at(y, x, c) = detail::sample_bilinear_reflect(*src, sy, sx, c);
    }
  return out;
}

// ---------------------------------------------------------------------------
// Adam.

struct AdamState {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::uint64_t t = 0;
  std::vector<std::vector<float>> m, v;  // aligned with the param visit order

  void init(const std::vector<nn::ParamRef>& params) {
    m.clear();
    v.clear();
    for (const auto& p : params) {
      m.emplace_back(p.value->size(), 0.0f);
      v.emplace_back(p.value->size(), 0.0f);
    }
    t = 0;
  }

  void step(const std::vector<nn::ParamRef>& params, double lr) {
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& value = *params[i].value;
      auto& grad = *params[i].grad;
      for (std::size_t j = 0; j < value.size(); ++j) {
        double g = grad[j];
        double mj = beta1 * m[i][j] + (1.0 - beta1) * g;
        double vj = beta2 * v[i][j] + (1.0 - beta2) * g * g;
        m[i][j] = static_cast<float>(mj);
        v[i][j] = static_cast<float>(vj);
        value[j] -= static_cast<float>(lr * (mj / bc1) / (std::sqrt(vj / bc2) + eps));
      }
    }
  }
};

// ---------------------------------------------------------------------------
// Training state and the optimization step.

/// One stack held in memory for training.
struct TrainScene {
  std::string scene_id, crf_name;
  std::vector<Image> images;  // aligned with evs, ascending
  std::vector<double> evs, dts;

  int ev_index(double ev) const {
    for (std::size_t i = 0; i < evs.size(); ++i)
      if (std::abs(evs[i] - ev) < 1e-9) return static_cast<int>(i);
    return -1;
  }
};

inline std::vector<TrainScene> load_training_scenes(const Manifest& manifest) {
  std::vector<TrainScene> scenes;
  for (const auto& [key, entries] : manifest.stacks()) {
    TrainScene s;
    s.scene_id = key.first;
    s.crf_name = key.second;
    for (const auto& e : entries) {
      LdrImage img = read_ldr(e.path);
      s.images.push_back(std::move(img.pixels));
      s.evs.push_back(e.ev);
      s.dts.push_back(std::exp2(e.ev));
    }
    scenes.push_back(std::move(s));
  }
  if (scenes.empty()) throw Error("load_training_scenes: manifest references no stacks");
  return scenes;
}

/// One training example: an aligned exposure pair with dt2 > dt1.
struct BatchPair {
  Image i1, i2;
  double dt1 = 1.0, dt2 = 2.0;
  std::string desc;
};

/// Halves the learning rate whenever an exponential running loss fails to
/// improve for `patience` consecutive steps.
struct PlateauSchedule {
  double lr = 1e-4;
  double factor = 0.5;
  std::uint64_t patience = 2000;
  double loss_ema = 0.0;
  double best_ema = std::numeric_limits<double>::infinity();
  std::uint64_t last_improve_step = 0;

  void update(std::uint64_t step, double loss) {
    loss_ema = step == 1 ? loss : 0.99 * loss_ema + 0.01 * loss;
    if (loss_ema < best_ema - 1e-12) {
      best_ema = loss_ema;
      last_improve_step = step;
    } else if (step - last_improve_step >= patience) {
      lr *= factor;
      last_improve_step = step;
    }
  }
};

struct TrainState {
  Model model;
  AdamState adam;
  FeaturePyramid<float> features;
  PlateauSchedule sched;
  std::uint64_t step = 0;

  double lr() const { return sched.lr; }
};

inline FeaturePyramid<float> build_feature_pyramid(const LossConfig& cfg) {
  if (!cfg.vgg_weights_path.empty()) return FeaturePyramid<float>::from_file(cfg.vgg_weights_path);
  return FeaturePyramid<float>::seeded(cfg.pyramid_base, cfg.pyramid_seed);
}

inline TrainState init_train_state(const TrainConfig& cfg) {
  cfg.validate();
  TrainState st;
  st.model = build_model(cfg.net, cfg.seed);
  std::vector<nn::ParamRef> params;
  st.model.visit_params(params);
  st.adam.init(params);
  st.features = build_feature_pyramid(cfg.loss);
  st.sched.lr = cfg.learning_rate;
  st.sched.factor = cfg.plateau_factor;
  st.sched.patience = static_cast<std::uint64_t>(cfg.plateau_patience);
  return st;
}

namespace detail {

inline Tensor sample_slice(const Tensor& t, int i) {
  Tensor out(1, t.c, t.h, t.w);
  std::copy(t.data.begin() + i * t.sample_size(), t.data.begin() + (i + 1) * t.sample_size(),
            out.data.begin());
  return out;
}

inline void add_sample(Tensor& dst, int i, const Tensor& src) {
  float* d = dst.data.data() + i * dst.sample_size();
  for (std::size_t j = 0; j < src.data.size(); ++j) d[j] += src.data[j];
}

inline void scale_sample(Tensor& t, int i, float factor) {
  float* d = t.data.data() + i * t.sample_size();
  for (std::size_t j = 0; j < t.sample_size(); ++j) d[j] *= factor;
}

}  // namespace detail

/// One optimization step on a batch of pairs: mask, encode both exposures,
/// cross-scale the latents by the exposure-time ratios, decode with the up-
/// and down-exposure nets, evaluate the combined objective, and apply one
/// Adam update. Deterministic given (state, batch).
inline LossBreakdown train_step(TrainState& st, const TrainConfig& cfg,
                                const std::vector<BatchPair>& batch) {
  if (batch.empty()) throw Error("train_step: empty batch");
  const int B = static_cast<int>(batch.size());
  const int h = batch[0].i1.height, w = batch[0].i1.width;

  Tensor i1(B, 3, h, w), i2(B, 3, h, w), m1(B, 3, h, w), m2(B, 3, h, w);
  for (int b = 0; b < B; ++b) {
    const auto& pair = batch[b];
    if (pair.i1.height != h || pair.i1.width != w || !pair.i1.same_shape(pair.i2))
      throw Error("train_step: inconsistent batch shapes");
    if (!(pair.dt2 > pair.dt1)) throw Error("train_step: pair exposure times must be ordered");
    set_tensor_sample(i1, b, pair.i1);
    set_tensor_sample(i2, b, pair.i2);
    LdrImage tmp;
    tmp.pixels = pair.i1;
    set_tensor_sample(m1, b, mask_input(tmp, cfg.mask).pixels);
    tmp.pixels = pair.i2;
    set_tensor_sample(m2, b, mask_input(tmp, cfg.mask).pixels);
  }

  st.model.zero_grads();

  // Backward mapping: both masked exposures through the encoder in one pass.
  Tensor enc_in = concat_batch(m1, m2);
  Tensor latents = st.model.encode_forward(enc_in, /*training=*/true);
  auto [x1, x2] = split_batch(latents, B);

  // Cross-scaling by the exposure-time ratios.
  Tensor x1s = x1, x2s = x2;
  for (int b = 0; b < B; ++b) {
    detail::scale_sample(x1s, b, static_cast<float>(batch[b].dt2 / batch[b].dt1));
    detail::scale_sample(x2s, b, static_cast<float>(batch[b].dt1 / batch[b].dt2));
  }

  // Forward mapping: scaled latents to the opposite exposures.
  Tensor pred2, pred1;
  const bool shared = st.model.config.share_exposure_nets;
  if (shared) {
    Tensor both = st.model.exposure_forward_tensor(concat_batch(x1s, x2s),
                                                   ExposureDirection::kUp, true);
    auto parts = split_batch(both, B);
    pred2 = std::move(parts.first);
    pred1 = std::move(parts.second);
  } else {
    pred2 = st.model.exposure_forward_tensor(x1s, ExposureDirection::kUp, true);
    pred1 = st.model.exposure_forward_tensor(x2s, ExposureDirection::kDown, true);
  }

  // Loss terms (means, batch-averaged).
  double l_h = 0.0;
  for (int b = 0; b < B; ++b) {
    Tensor xa = detail::sample_slice(x1, b), xb = detail::sample_slice(x2, b);
    l_h += hdr_representation_loss(xa, xb, batch[b].dt1, batch[b].dt2, cfg.loss.epsilon);
  }
  l_h /= B;
  double l_r = reconstruction_loss(pred1, i1, pred2, i2);
  double l_p = cfg.loss.lambda_p > 0.0
                   ? static_cast<double>(
                         perceptual_loss(st.features, pred1, i1, pred2, i2, cfg.loss.vgg_layers))
                   : 0.0;
  double l_tv = tv_loss(pred1, pred2);
  LossBreakdown breakdown = combined_loss(cfg.loss, l_h, l_r, l_p, l_tv);

  if (!std::isfinite(breakdown.total)) {
    std::string dump;
    for (const auto& p : batch) dump += " [" + p.desc + "]";
    throw Error("train_step: non-finite loss at step " + std::to_string(st.step + 1) +
                "; batch:" + dump);
  }

  // Gradients into the predictions.
  Tensor d_pred1(B, 3, h, w), d_pred2(B, 3, h, w);
  reconstruction_loss_grad(pred1, i1, pred2, i2, static_cast<float>(cfg.loss.lambda_r), d_pred1,
                           d_pred2);
  if (cfg.loss.lambda_p > 0.0)
    perceptual_loss_grad(st.features, pred1, i1, pred2, i2, cfg.loss.vgg_layers,
                         static_cast<float>(cfg.loss.lambda_p), d_pred1, d_pred2);
  if (cfg.loss.lambda_tv > 0.0)
    tv_loss_grad(pred1, pred2, static_cast<float>(cfg.loss.lambda_tv), d_pred1, d_pred2);

  // Through the exposure nets back to the scaled latents.
  Tensor d_x1s, d_x2s;
  if (shared) {
    Tensor d_both = concat_batch(d_pred2, d_pred1);
    Tensor d_in = st.model.up.backward(st.model.up_head.backward(d_both));
    auto parts = split_batch(d_in, B);
    d_x1s = std::move(parts.first);
    d_x2s = std::move(parts.second);
  } else {
    d_x1s = st.model.up.backward(st.model.up_head.backward(d_pred2));
    d_x2s = st.model.down.backward(st.model.down_head.backward(d_pred1));
  }

  // Undo the scaling and add the representation-loss gradients.
  Tensor d_x1 = d_x1s, d_x2 = d_x2s;
  for (int b = 0; b < B; ++b) {
    detail::scale_sample(d_x1, b, static_cast<float>(batch[b].dt2 / batch[b].dt1));
    detail::scale_sample(d_x2, b, static_cast<float>(batch[b].dt1 / batch[b].dt2));
  }
  if (cfg.loss.lambda_h > 0.0) {
    for (int b = 0; b < B; ++b) {
      Tensor xa = detail::sample_slice(x1, b), xb = detail::sample_slice(x2, b);
      Tensor ga(1, 3, h, w), gb(1, 3, h, w);
      hdr_representation_loss_grad(xa, xb, batch[b].dt1, batch[b].dt2, cfg.loss.epsilon,
                                   static_cast<float>(cfg.loss.lambda_h / B), ga, gb);
      detail::add_sample(d_x1, b, ga);
      detail::add_sample(d_x2, b, gb);
    }
  }

  // Through the encoder (both exposures in the one batched pass).
  Tensor d_latents = concat_batch(d_x1, d_x2);
  st.model.encoder.backward(st.model.encoder_head.backward(d_latents));

  std::vector<nn::ParamRef> params;
  st.model.visit_params(params);
  st.adam.step(params, st.sched.lr);
  st.step += 1;
  st.model.step = st.step;
  return breakdown;
}

// ---------------------------------------------------------------------------
// Checkpointing with optimizer state.

inline CheckpointBlob train_state_to_blob(TrainState& st) {
  CheckpointBlob blob = model_to_blob(st.model);
  blob.has_trainer_state = true;
  std::vector<nn::ParamRef> params;
  st.model.visit_params(params);
  for (std::size_t i = 0; i < params.size(); ++i) {
    blob.arrays.emplace_back("adam." + params[i].name + ".m", st.adam.m[i]);
    blob.arrays.emplace_back("adam." + params[i].name + ".v", st.adam.v[i]);
  }
  blob.scalars.emplace_back("lr", st.sched.lr);
  blob.scalars.emplace_back("adam.t", static_cast<double>(st.adam.t));
  blob.scalars.emplace_back("loss_ema", st.sched.loss_ema);
  blob.scalars.emplace_back("best_ema", st.sched.best_ema);
  blob.scalars.emplace_back("last_improve_step", static_cast<double>(st.sched.last_improve_step));
  return blob;
}

inline TrainState train_state_from_blob(const CheckpointBlob& blob, const TrainConfig& cfg) {
  if (!blob.has_trainer_state)
    throw Error("resume: checkpoint has no trainer state (inference-only checkpoint)");
  TrainState st;
  st.model = model_from_blob(blob);
  st.step = blob.step;
  st.features = build_feature_pyramid(cfg.loss);
  std::vector<nn::ParamRef> params;
  st.model.visit_params(params);
  st.adam.init(params);
  auto find_array = [&](const std::string& name) -> const std::vector<float>& {
    for (const auto& [n, v] : blob.arrays)
      if (n == name) return v;
    throw Error("resume: missing array '" + name + "'");
  };
  for (std::size_t i = 0; i < params.size(); ++i) {
    st.adam.m[i] = find_array("adam." + params[i].name + ".m");
    st.adam.v[i] = find_array("adam." + params[i].name + ".v");
  }
  auto scalar = [&](const std::string& name) {
    for (const auto& [n, v] : blob.scalars)
      if (n == name) return v;
    throw Error("resume: missing scalar '" + name + "'");
  };
  st.sched.lr = scalar("lr");
  st.sched.factor = cfg.plateau_factor;
  st.sched.patience = static_cast<std::uint64_t>(cfg.plateau_patience);
  st.adam.t = static_cast<std::uint64_t>(scalar("adam.t"));
  st.sched.loss_ema = scalar("loss_ema");
  st.sched.best_ema = scalar("best_ema");
  st.sched.last_improve_step = static_cast<std::uint64_t>(scalar("last_improve_step"));
  return st;
}

// ---------------------------------------------------------------------------
// The training loop.

/// Builds the batch for `step` (1-based). Every sample derives its own RNG
/// from (seed, step, index), so batches are reproducible and independent of
/// execution order.
inline std::vector<BatchPair> make_batch(const TrainConfig& cfg,
                                         const std::vector<TrainScene>& scenes,
                                         std::uint64_t step) {
  std::vector<BatchPair> batch;
  for (int b = 0; b < cfg.batch_size; ++b) {
    Rng rng(hash_seed(cfg.seed, step, static_cast<std::uint64_t>(b)));
    const TrainScene& scene = scenes[rng.uniform_index(scenes.size())];
    int ia, ib;
    if (!cfg.pair_evs.empty()) {
      const auto& [ev_a, ev_b] = cfg.pair_evs[rng.uniform_index(cfg.pair_evs.size())];
      ia = scene.ev_index(ev_a);
      ib = scene.ev_index(ev_b);
      if (ia < 0 || ib < 0)
        throw Error("make_batch: configured pair EVs " + format_ev(ev_a) + "/" + format_ev(ev_b) +
                    " not present in stack " + scene.scene_id + "/" + scene.crf_name);
    } else {
      auto [i, j] = sample_pair_indices(scene.images.size(), rng);
      ia = i;
      ib = j;
    }
    AugmentParams params = sample_augment(rng, cfg.augment, scene.images[ia].height,
                                          scene.images[ia].width, cfg.crop_size);
    BatchPair pair;
    pair.i1 = apply_augment(scene.images[ia], params, cfg.crop_size);
    pair.i2 = apply_augment(scene.images[ib], params, cfg.crop_size);
    pair.dt1 = scene.dts[ia];
    pair.dt2 = scene.dts[ib];
    pair.desc = scene.scene_id + "/" + scene.crf_name + " " + format_ev(scene.evs[ia]) + ":" +
                format_ev(scene.evs[ib]);
    batch.push_back(std::move(pair));
  }
  return batch;
}

/// Per-step metrics line (tab-separated; byte-stable across same-seed runs).
inline std::string metrics_line(std::uint64_t step, double lr, const LossBreakdown& b) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%llu\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g\n",
                static_cast<unsigned long long>(step), lr, b.l_h, b.l_r, b.l_p, b.l_tv, b.total);
  return buf;
}

using StepCallback = std::function<bool(const TrainState&, const LossBreakdown&)>;

/// Runs the optimization to max_steps, halving the learning rate whenever
/// the running loss fails to improve for plateau_patience steps. Writes
/// periodic checkpoints plus final.ckpt under out_dir and per-step metric
/// lines to `metrics`. A callback returning false stops early.
inline TrainState fit(const TrainConfig& cfg, const std::vector<TrainScene>& scenes,
                      const std::string& out_dir, std::ostream* metrics = nullptr,
                      const std::string& resume_path = "", const StepCallback& callback = {}) {
  cfg.validate();
  if (scenes.empty()) throw Error("fit: no training scenes");
  std::filesystem::create_directories(out_dir);

  TrainState st = resume_path.empty()
                      ? init_train_state(cfg)
                      : train_state_from_blob(read_checkpoint(resume_path), cfg);

  while (st.step < static_cast<std::uint64_t>(cfg.max_steps)) {
    auto batch = make_batch(cfg, scenes, st.step + 1);
    LossBreakdown b = train_step(st, cfg, batch);
    if (metrics) *metrics << metrics_line(st.step, st.sched.lr, b);
    st.sched.update(st.step, b.total);

    if (st.step % static_cast<std::uint64_t>(cfg.checkpoint_every) == 0)
      write_checkpoint(out_dir + "/checkpoint_" + std::to_string(st.step) + ".ckpt",
                       train_state_to_blob(st));
    if (callback && !callback(st, b)) break;
  }
  write_checkpoint(out_dir + "/final.ckpt", train_state_to_blob(st));
  return st;
}

}  // namespace mexhdr

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "mexhdr/model.hpp"
#include "mexhdr/nn.hpp"
#include "mexhdr/tensor.hpp"

namespace mexhdr {

struct LossConfig {
  double lambda_h = 1.0;
  double lambda_r = 1.0;
  double lambda_p = 0.05;
  double lambda_tv = 1e-4;
  double epsilon = 1e-6;  // log guard in the transformation loss
  std::vector<std::string> vgg_layers = {"pool1", "pool2", "pool3"};
  // Feature source: a pretrained weights container when given, otherwise a
  // seeded fixed random pyramid of this base width.
  std::string vgg_weights_path;
  int pyramid_base = 8;
  std::uint64_t pyramid_seed = 7;

  void validate() const {
    if (!(epsilon > 0.0)) throw Error("LossConfig: epsilon must be positive");
    if (lambda_h < 0 || lambda_r < 0 || lambda_p < 0 || lambda_tv < 0)
      throw Error("LossConfig: loss weights must be nonnegative");
    if (pyramid_base < 1) throw Error("LossConfig: pyramid_base must be positive");
  }
};

template <typename T>
inline T sign_of(T v) {
  return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0));
}

// ---------------------------------------------------------------------------
// Transformation / HDR representation losses (log-domain latent agreement).

/// mean | log(x1 * dt2/dt1 + eps) - log(x2 + eps) |
template <typename T>
T transformation_loss(const TensorT<T>& x1, const TensorT<T>& x2, double dt1, double dt2,
                      double eps) {
  if (!x1.same_shape(x2)) throw Error("transformation_loss: shape mismatch");
  const T r = static_cast<T>(dt2 / dt1);
  const T e = static_cast<T>(eps);
  T sum = T(0);
  for (std::size_t i = 0; i < x1.data.size(); ++i)
    sum += std::abs(std::log(x1.data[i] * r + e) - std::log(x2.data[i] + e));
  return sum / static_cast<T>(x1.data.size());
}

/// Accumulates `weight` times the gradients of transformation_loss.
template <typename T>
void transformation_loss_grad(const TensorT<T>& x1, const TensorT<T>& x2, double dt1, double dt2,
                              double eps, T weight, TensorT<T>& gx1, TensorT<T>& gx2) {
  const T r = static_cast<T>(dt2 / dt1);
  const T e = static_cast<T>(eps);
  const T scale = weight / static_cast<T>(x1.data.size());
  for (std::size_t i = 0; i < x1.data.size(); ++i) {
    T s = sign_of(std::log(x1.data[i] * r + e) - std::log(x2.data[i] + e));
    gx1.data[i] += scale * s * r / (x1.data[i] * r + e);
    gx2.data[i] -= scale * s / (x2.data[i] + e);
  }
}

/// L_t(x1, x2) + L_t(x2, x1); zero exactly when the latents agree after
/// exposure-time scaling.
template <typename T>
T hdr_representation_loss(const TensorT<T>& x1, const TensorT<T>& x2, double dt1, double dt2,
                          double eps) {
  return transformation_loss(x1, x2, dt1, dt2, eps) +
         transformation_loss(x2, x1, dt2, dt1, eps);
}

template <typename T>
void hdr_representation_loss_grad(const TensorT<T>& x1, const TensorT<T>& x2, double dt1,
                                  double dt2, double eps, T weight, TensorT<T>& gx1,
                                  TensorT<T>& gx2) {
  transformation_loss_grad(x1, x2, dt1, dt2, eps, weight, gx1, gx2);
  transformation_loss_grad(x2, x1, dt2, dt1, eps, weight, gx2, gx1);
}

// ---------------------------------------------------------------------------
// Reconstruction loss (pixelwise L1, means so weights are resolution-free).

template <typename T>
T l1_mean(const TensorT<T>& a, const TensorT<T>& b) {
  if (!a.same_shape(b)) throw Error("l1_mean: shape mismatch");
  T sum = T(0);
  for (std::size_t i = 0; i < a.data.size(); ++i) sum += std::abs(a.data[i] - b.data[i]);
  return sum / static_cast<T>(a.data.size());
}

/// Accumulates `weight` times d/da of l1_mean(a, b).
template <typename T>
void l1_mean_grad(const TensorT<T>& a, const TensorT<T>& b, T weight, TensorT<T>& ga) {
  const T scale = weight / static_cast<T>(a.data.size());
  for (std::size_t i = 0; i < a.data.size(); ++i)
    ga.data[i] += scale * sign_of(a.data[i] - b.data[i]);
}

template <typename T>
T reconstruction_loss(const TensorT<T>& pred1, const TensorT<T>& gt1, const TensorT<T>& pred2,
                      const TensorT<T>& gt2) {
  return l1_mean(pred1, gt1) + l1_mean(pred2, gt2);
}

template <typename T>
void reconstruction_loss_grad(const TensorT<T>& pred1, const TensorT<T>& gt1,
                              const TensorT<T>& pred2, const TensorT<T>& gt2, T weight,
                              TensorT<T>& gp1, TensorT<T>& gp2) {
  l1_mean_grad(pred1, gt1, weight, gp1);
  l1_mean_grad(pred2, gt2, weight, gp2);
}

// ---------------------------------------------------------------------------
// Total variation (anisotropic L1 over the two forward differences).

/// Raw sum over samples, channels and in-bounds neighbor differences.
template <typename T>
T total_variation(const TensorT<T>& y) {
  if (y.h < 1 || y.w < 1) throw Error("total_variation: empty image");
  T sum = T(0);
  for (int i = 0; i < y.n; ++i)
    for (int c = 0; c < y.c; ++c)
      for (int yy = 0; yy < y.h; ++yy)
        for (int xx = 0; xx < y.w; ++xx) {
          if (yy + 1 < y.h) sum += std::abs(y.at(i, c, yy + 1, xx) - y.at(i, c, yy, xx));
          if (xx + 1 < y.w) sum += std::abs(y.at(i, c, yy, xx + 1) - y.at(i, c, yy, xx));
        }
  return sum;
}

/// Image-level convenience overload.
inline double total_variation(const Image& img) {
  TensorT<double> t(1, img.channels, img.height, img.width);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c) t.at(0, c, y, x) = img.at(y, x, c);
  return total_variation(t);
}

/// Pixel-count-normalized TV of a batch (sum / (n*h*w)).
template <typename T>
T tv_mean(const TensorT<T>& y) {
  return total_variation(y) / static_cast<T>(static_cast<std::size_t>(y.n) * y.h * y.w);
}

template <typename T>
void tv_mean_grad(const TensorT<T>& y, T weight, TensorT<T>& gy) {
  const T scale = weight / static_cast<T>(static_cast<std::size_t>(y.n) * y.h * y.w);
  for (int i = 0; i < y.n; ++i)
    for (int c = 0; c < y.c; ++c)
      for (int yy = 0; yy < y.h; ++yy)
        for (int xx = 0; xx < y.w; ++xx) {
          if (yy + 1 < y.h) {
            T s = sign_of(y.at(i, c, yy + 1, xx) - y.at(i, c, yy, xx));
            gy.at(i, c, yy + 1, xx) += scale * s;
            gy.at(i, c, yy, xx) -= scale * s;
          }
          if (xx + 1 < y.w) {
            T s = sign_of(y.at(i, c, yy, xx + 1) - y.at(i, c, yy, xx));
            gy.at(i, c, yy, xx + 1) += scale * s;
            gy.at(i, c, yy, xx) -= scale * s;
          }
        }
}

/// Smoothness term over both predictions, normalized per pixel.
template <typename T>
T tv_loss(const TensorT<T>& pred1, const TensorT<T>& pred2) {
  return tv_mean(pred1) + tv_mean(pred2);
}

template <typename T>
void tv_loss_grad(const TensorT<T>& pred1, const TensorT<T>& pred2, T weight, TensorT<T>& gp1,
                  TensorT<T>& gp2) {
  tv_mean_grad(pred1, weight, gp1);
  tv_mean_grad(pred2, weight, gp2);
}

// ---------------------------------------------------------------------------
// Fixed feature pyramid for the perceptual loss. Stages downsample by 2, 4
// and 8 ("pool1".."pool3"); each stage runs its 3x3 convolutions with ReLU
// and ends in a 2x2 max pool. Weights come from a pretrained container when
// configured, otherwise from a seeded random init, and are never trained.

template <typename T>
class FeaturePyramid {
public:
  FeaturePyramid() = default;

  /// Seeded random pyramid with 2 convolutions per stage, widths
  /// base, 2*base, 4*base.
  static FeaturePyramid seeded(int base, std::uint64_t seed) {
    FeaturePyramid p;
    Rng rng(hash_seed(seed, 0x9e37));
    int in_ch = 3;
    for (int s = 0; s < 3; ++s) {
      int width = base << s;
      StageSpec stage;
      stage.convs.push_back(Conv::random(in_ch, width, rng));
      stage.convs.push_back(Conv::random(width, width, rng));
      p.stages_.push_back(std::move(stage));
      in_ch = width;
    }
    return p;
  }

  /// Pyramid from a checkpoint-format container holding conv arrays named
  /// conv<stage>_<index>.w / .b (3x3 kernels), e.g. the first three blocks
  /// of a pretrained VGG-19 up to pool3.
  static FeaturePyramid from_file(const std::string& path) {
    CheckpointBlob blob = read_checkpoint(path);
    auto find = [&](const std::string& name) -> const std::vector<float>* {
      for (const auto& [n, v] : blob.arrays)
        if (n == name) return &v;
      return nullptr;
    };
    FeaturePyramid p;
    int in_ch = 3;
    for (int s = 1; s <= 3; ++s) {
      StageSpec stage;
      for (int k = 1;; ++k) {
        std::string base = "conv" + std::to_string(s) + "_" + std::to_string(k);
        const auto* w = find(base + ".w");
        const auto* b = find(base + ".b");
        if (!w) break;
        if (!b) throw Error("FeaturePyramid: missing bias for " + base + " in '" + path + "'");
        if (w->size() % (static_cast<std::size_t>(in_ch) * 9))
          throw Error("FeaturePyramid: bad kernel size for " + base + " in '" + path + "'");
        int out_ch = static_cast<int>(w->size() / (static_cast<std::size_t>(in_ch) * 9));
        if (b->size() != static_cast<std::size_t>(out_ch))
          throw Error("FeaturePyramid: bias size mismatch for " + base + " in '" + path + "'");
        Conv conv;
        conv.in_ch = in_ch;
        conv.out_ch = out_ch;
        conv.weight.assign(w->begin(), w->end());
        conv.bias.assign(b->begin(), b->end());
        stage.convs.push_back(std::move(conv));
        in_ch = out_ch;
      }
      if (stage.convs.empty())
        throw Error("FeaturePyramid: no convolutions for stage " + std::to_string(s) + " in '" +
                    path + "'");
      p.stages_.push_back(std::move(stage));
    }
    return p;
  }

  static std::vector<std::string> stage_names() { return {"pool1", "pool2", "pool3"}; }

  /// Stage outputs after each pooling step; caches intermediates for
  /// backward.
  std::vector<TensorT<T>> forward(const TensorT<T>& x) {
    conv_inputs_.clear();
    relu_inputs_.clear();
    pool_argmax_.clear();
    pool_in_shapes_.clear();
    std::vector<TensorT<T>> outputs;
    TensorT<T> t = x;
    for (auto& stage : stages_) {
      for (auto& conv : stage.convs) {
        conv_inputs_.push_back(t);
        t = nn::conv2d_forward(t, conv.weight, conv.bias, conv.out_ch, 3, 1);
        relu_inputs_.push_back(t);
        for (auto& v : t.data)
          if (v < T(0)) v = T(0);
      }
      t = maxpool(t);
      outputs.push_back(t);
    }
    return outputs;
  }

  /// Backpropagates per-stage gradients to the input (weights stay fixed).
  TensorT<T> backward(const std::vector<TensorT<T>>& stage_grads) {
    TensorT<T> dt;
    int conv_idx = static_cast<int>(conv_inputs_.size());
    for (int s = static_cast<int>(stages_.size()) - 1; s >= 0; --s) {
      if (dt.size() == 0)
        dt = stage_grads[s];
      else
        for (std::size_t i = 0; i < dt.data.size(); ++i) dt.data[i] += stage_grads[s].data[i];
      dt = maxpool_backward(dt, s);
      for (int k = static_cast<int>(stages_[s].convs.size()) - 1; k >= 0; --k) {
        --conv_idx;
        const auto& relu_in = relu_inputs_[conv_idx];
        for (std::size_t i = 0; i < dt.data.size(); ++i)
          if (relu_in.data[i] < T(0)) dt.data[i] = T(0);
        dt = nn::conv2d_backward(conv_inputs_[conv_idx], stages_[s].convs[k].weight,
                                 stages_[s].convs[k].out_ch, 3, 1, dt);
      }
    }
    return dt;
  }

private:
  struct Conv {
    int in_ch = 0, out_ch = 0;
    std::vector<T> weight, bias;

    static Conv random(int in_ch, int out_ch, Rng& rng) {
      Conv c;
      c.in_ch = in_ch;
      c.out_ch = out_ch;
      const int fan_in = in_ch * 9;
      const double std_dev = std::sqrt(2.0 / fan_in);
      c.weight.resize(static_cast<std::size_t>(out_ch) * fan_in);
      c.bias.assign(out_ch, T(0));
      for (auto& v : c.weight) v = static_cast<T>(rng.normal(0.0, std_dev));
      return c;
    }
  };
  struct StageSpec {
    std::vector<Conv> convs;
  };

  TensorT<T> maxpool(const TensorT<T>& x) {
    pool_in_shapes_.push_back({x.n, x.c, x.h, x.w});
    TensorT<T> y(x.n, x.c, x.h / 2, x.w / 2);
    std::vector<std::size_t> argmax(y.size());
    std::size_t o = 0;
    for (int i = 0; i < x.n; ++i)
      for (int c = 0; c < x.c; ++c)
        for (int yy = 0; yy < y.h; ++yy)
          for (int xx = 0; xx < y.w; ++xx, ++o) {
            T best = x.at(i, c, yy * 2, xx * 2);
            std::size_t bi =
                ((static_cast<std::size_t>(i) * x.c + c) * x.h + yy * 2) * x.w + xx * 2;
            for (int dy = 0; dy < 2; ++dy)
              for (int dx = 0; dx < 2; ++dx) {
                std::size_t idx =
                    ((static_cast<std::size_t>(i) * x.c + c) * x.h + yy * 2 + dy) * x.w + xx * 2 +
                    dx;
                if (x.data[idx] > best) {
                  best = x.data[idx];
                  bi = idx;
                }
              }
            y.data[o] = best;
            argmax[o] = bi;
          }
    pool_argmax_.push_back(std::move(argmax));
    return y;
  }

  TensorT<T> maxpool_backward(const TensorT<T>& dy, int stage) {
    const auto& shape = pool_in_shapes_[stage];
    TensorT<T> dx(shape[0], shape[1], shape[2], shape[3]);
    const auto& argmax = pool_argmax_[stage];
    for (std::size_t o = 0; o < dy.data.size(); ++o) dx.data[argmax[o]] += dy.data[o];
    return dx;
  }

  std::vector<StageSpec> stages_;
  std::vector<TensorT<T>> conv_inputs_, relu_inputs_;
  std::vector<std::vector<std::size_t>> pool_argmax_;
  std::vector<std::array<int, 4>> pool_in_shapes_;
};

/// Resolves configured stage names to pyramid stage indices; unknown names
/// error out listing what is available.
inline std::vector<int> resolve_stages(const std::vector<std::string>& wanted) {
  auto names = FeaturePyramid<float>::stage_names();
  std::vector<int> idx;
  for (const auto& w : wanted) {
    auto it = std::find(names.begin(), names.end(), w);
    if (it == names.end()) {
      std::string all;
      for (const auto& n : names) all += n + " ";
      throw Error("perceptual_loss: unknown stage '" + w + "' (available: " + all + ")");
    }
    idx.push_back(static_cast<int>(it - names.begin()));
  }
  if (idx.empty()) throw Error("perceptual_loss: no stages configured");
  return idx;
}

/// Sum over configured stages and both pairs of mean-|.| feature differences.
template <typename T>
T perceptual_loss(FeaturePyramid<T>& pyramid, const TensorT<T>& pred1, const TensorT<T>& gt1,
                  const TensorT<T>& pred2, const TensorT<T>& gt2,
                  const std::vector<std::string>& layers) {
  auto stages = resolve_stages(layers);
  T total = T(0);
  for (auto [pred, gt] : {std::pair{&pred1, &gt1}, std::pair{&pred2, &gt2}}) {
    auto fp = pyramid.forward(*pred);
    auto fg = pyramid.forward(*gt);
    for (int s : stages) total += l1_mean(fp[s], fg[s]);
  }
  return total;
}

/// Accumulates `weight` times the perceptual gradients into gp1/gp2.
template <typename T>
void perceptual_loss_grad(FeaturePyramid<T>& pyramid, const TensorT<T>& pred1,
                          const TensorT<T>& gt1, const TensorT<T>& pred2, const TensorT<T>& gt2,
                          const std::vector<std::string>& layers, T weight, TensorT<T>& gp1,
                          TensorT<T>& gp2) {
  auto stages = resolve_stages(layers);
  for (auto [pred, gt, gp] : {std::tuple{&pred1, &gt1, &gp1}, std::tuple{&pred2, &gt2, &gp2}}) {
    auto fg = pyramid.forward(*gt);
    auto fp = pyramid.forward(*pred);  // last, so caches describe pred
    std::vector<TensorT<T>> stage_grads;
    for (std::size_t s = 0; s < fp.size(); ++s)
      stage_grads.emplace_back(fp[s].n, fp[s].c, fp[s].h, fp[s].w);
    for (int s : stages) l1_mean_grad(fp[s], fg[s], weight, stage_grads[s]);
    TensorT<T> dx = pyramid.backward(stage_grads);
    for (std::size_t i = 0; i < dx.data.size(); ++i) gp->data[i] += dx.data[i];
  }
}

// ---------------------------------------------------------------------------
// Combined objective.

struct LossBreakdown {
  double l_h = 0.0, l_r = 0.0, l_p = 0.0, l_tv = 0.0;
  double total = 0.0;
};

/// Weighted combination; the unweighted terms are kept for logging and
/// ablation bookkeeping.
inline LossBreakdown combined_loss(const LossConfig& cfg, double l_h, double l_r, double l_p,
                                   double l_tv) {
  LossBreakdown b;
  b.l_h = l_h;
  b.l_r = l_r;
  b.l_p = l_p;
  b.l_tv = l_tv;
  b.total = cfg.lambda_h * l_h + cfg.lambda_r * l_r + cfg.lambda_p * l_p + cfg.lambda_tv * l_tv;
  return b;
}

}  // namespace mexhdr

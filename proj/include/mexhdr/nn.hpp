#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "mexhdr/rng.hpp"
#include "mexhdr/tensor.hpp"

namespace mexhdr::nn {

template <typename T>
using MatrixCM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>;
template <typename T>
using MapCM = Eigen::Map<MatrixCM<T>>;
template <typename T>
using ConstMapCM = Eigen::Map<const MatrixCM<T>>;
template <typename T>
using MapRM = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using ConstMapRM =
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

// ---------------------------------------------------------------------------
// Convolution core (stride 1, square kernel, zero padding), shared by the
// float layers and the double-precision loss-side feature pyramid.

/// col(kk, m) for sample `i`: kk = c*k*k + ky*k + kx, m = y*w + x, laid out
/// row-major (kk rows of hw values), so every (kk, y) span is a contiguous
/// copy of an input row segment.
template <typename T>
void im2col(const TensorT<T>& x, int i, int k, int pad, std::vector<T>& col) {
  const int h = x.h, w = x.w, cin = x.c;
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  col.assign(static_cast<std::size_t>(cin) * k * k * hw, T(0));
  const T* sample = x.data.data() + static_cast<std::size_t>(i) * x.sample_size();
  for (int c = 0; c < cin; ++c) {
    const T* plane = sample + static_cast<std::size_t>(c) * hw;
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        T* row_base = col.data() + (static_cast<std::size_t>(c) * k * k + ky * k + kx) * hw;
        const int x_lo = std::max(0, pad - kx);
        const int x_hi = std::min(w, w + pad - kx);
        for (int y = 0; y < h; ++y) {
          int sy = y + ky - pad;
          if (sy < 0 || sy >= h) continue;  // buffer is pre-zeroed
          if (x_hi > x_lo)
            std::copy_n(plane + static_cast<std::size_t>(sy) * w + (x_lo + kx - pad),
                        x_hi - x_lo, row_base + static_cast<std::size_t>(y) * w + x_lo);
        }
      }
  }
}

/// Scatter-add of a col buffer back into sample `i` of `dx`.
template <typename T>
void col2im_add(const std::vector<T>& col, int i, int k, int pad, TensorT<T>& dx) {
  const int h = dx.h, w = dx.w, cin = dx.c;
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  T* sample = dx.data.data() + static_cast<std::size_t>(i) * dx.sample_size();
  for (int c = 0; c < cin; ++c) {
    T* plane = sample + static_cast<std::size_t>(c) * hw;
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const T* row_base = col.data() + (static_cast<std::size_t>(c) * k * k + ky * k + kx) * hw;
        const int x_lo = std::max(0, pad - kx);
        const int x_hi = std::min(w, w + pad - kx);
        for (int y = 0; y < h; ++y) {
          int sy = y + ky - pad;
          if (sy < 0 || sy >= h) continue;
          T* dst = plane + static_cast<std::size_t>(sy) * w + (x_lo + kx - pad);
          const T* src = row_base + static_cast<std::size_t>(y) * w + x_lo;
          for (int n = 0; n < x_hi - x_lo; ++n) dst[n] += src[n];
        }
      }
  }
}

/// y = W * im2col(x) + b per sample; the row-major col layout makes the
/// per-sample output plane exactly the NCHW block. weight layout
/// [out][in][k][k]. `col_cache`, when given, keeps each sample's col matrix
/// for reuse in the weight-gradient pass.
template <typename T>
TensorT<T> conv2d_forward(const TensorT<T>& x, const std::vector<T>& weight,
                          const std::vector<T>& bias, int out_ch, int k, int pad,
                          std::vector<std::vector<T>>* col_cache = nullptr) {
  const int K = x.c * k * k;
  const std::size_t hw = x.plane();
  TensorT<T> y(x.n, out_ch, x.h, x.w);
  ConstMapRM<T> W(weight.data(), out_ch, K);
  if (col_cache) col_cache->resize(x.n);
  std::vector<T> scratch;
  for (int i = 0; i < x.n; ++i) {
    std::vector<T>& col = col_cache ? (*col_cache)[i] : scratch;
    im2col(x, i, k, pad, col);
    ConstMapRM<T> C(col.data(), K, static_cast<Eigen::Index>(hw));
    MapRM<T> Y(y.data.data() + static_cast<std::size_t>(i) * y.sample_size(), out_ch,
               static_cast<Eigen::Index>(hw));
    Y.noalias() = W * C;
  }
  for (int i = 0; i < x.n; ++i)
    for (int oc = 0; oc < out_ch; ++oc) {
      T* plane = y.data.data() + (static_cast<std::size_t>(i) * out_ch + oc) * hw;
      for (std::size_t m = 0; m < hw; ++m) plane[m] += bias[oc];
    }
  return y;
}

/// Input gradient; also accumulates weight/bias gradients when given.
/// `col_cache` reuses the forward's im2col buffers.
template <typename T>
TensorT<T> conv2d_backward(const TensorT<T>& x, const std::vector<T>& weight, int out_ch, int k,
                           int pad, const TensorT<T>& dy, std::vector<T>* grad_weight = nullptr,
                           std::vector<T>* grad_bias = nullptr,
                           std::vector<std::vector<T>>* col_cache = nullptr) {
  const int K = x.c * k * k;
  const std::size_t hw = x.plane();
  TensorT<T> dx(x.n, x.c, x.h, x.w);
  ConstMapRM<T> W(weight.data(), out_ch, K);
  std::vector<T> col, dcol(static_cast<std::size_t>(K) * hw);
  for (int i = 0; i < x.n; ++i) {
    ConstMapRM<T> dY(dy.data.data() + static_cast<std::size_t>(i) * dy.sample_size(), out_ch,
                     static_cast<Eigen::Index>(hw));
    MapRM<T> dC(dcol.data(), K, static_cast<Eigen::Index>(hw));
    dC.noalias() = W.transpose() * dY;
    col2im_add(dcol, i, k, pad, dx);
    if (grad_weight) {
      const std::vector<T>* use = nullptr;
      if (col_cache && i < static_cast<int>(col_cache->size()) && !(*col_cache)[i].empty()) {
        use = &(*col_cache)[i];
      } else {
        im2col(x, i, k, pad, col);
        use = &col;
      }
      ConstMapRM<T> C(use->data(), K, static_cast<Eigen::Index>(hw));
      MapRM<T> dW(grad_weight->data(), out_ch, K);
      dW.noalias() += dY * C.transpose();
    }
    if (grad_bias) {
      for (int oc = 0; oc < out_ch; ++oc) {
        const T* plane = dy.data.data() + (static_cast<std::size_t>(i) * out_ch + oc) * hw;
        T s = T(0);
        for (std::size_t m = 0; m < hw; ++m) s += plane[m];
        (*grad_bias)[oc] += s;
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Layers. Each owns its parameters and the caches from its last forward pass;
// a layer instance serves one position in one network.

/// Named views over a layer's trainable parameters and their gradients.
struct ParamRef {
  std::string name;
  std::vector<float>* value;
  std::vector<float>* grad;
};

/// Named views over non-trained state (batch-norm running statistics).
struct StateRef {
  std::string name;
  std::vector<float>* value;
};

class Conv2d {
public:
  Conv2d() = default;
  Conv2d(int in_ch, int out_ch, int k, Rng& rng) : in_(in_ch), out_(out_ch), k_(k), pad_(k / 2) {
    const int fan_in = in_ch * k * k;
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    weight.resize(static_cast<std::size_t>(out_ch) * fan_in);
    bias.resize(out_ch);
    for (auto& v : weight) v = static_cast<float>(rng.uniform(-bound, bound));
    for (auto& v : bias) v = static_cast<float>(rng.uniform(-bound, bound));
    grad_weight.assign(weight.size(), 0.0f);
    grad_bias.assign(bias.size(), 0.0f);
  }

  /// Re-initializes so that the r*r sub-pixel shuffle groups share one
  /// kernel (checkerboard-free start for upsampling convolutions).
  void init_icnr(int r, Rng& rng) {
    const int groups = r * r;
    const int out_base = out_ / groups;
    const int fan_in = in_ * k_ * k_;
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (int ob = 0; ob < out_base; ++ob) {
      std::vector<float> kernel(fan_in);
      for (auto& v : kernel) v = static_cast<float>(rng.uniform(-bound, bound));
      for (int g = 0; g < groups; ++g)
        std::copy(kernel.begin(), kernel.end(),
                  weight.begin() + (static_cast<std::size_t>(ob) * groups + g) * fan_in);
    }
  }

  /// `keep_cols` retains the im2col buffers for the weight-gradient pass;
  /// leave it off for inference-only forwards.
  Tensor forward(const Tensor& x, bool keep_cols = false) {
    cached_input_ = x;
    if (!keep_cols) {
      col_cache_.clear();
      return conv2d_forward(x, weight, bias, out_, k_, pad_);
    }
    return conv2d_forward(x, weight, bias, out_, k_, pad_, &col_cache_);
  }

  Tensor backward(const Tensor& dy) {
    return conv2d_backward(cached_input_, weight, out_, k_, pad_, dy, &grad_weight, &grad_bias,
                           &col_cache_);
  }

  void visit_params(const std::string& prefix, std::vector<ParamRef>& out) {
    out.push_back({prefix + ".w", &weight, &grad_weight});
    out.push_back({prefix + ".b", &bias, &grad_bias});
  }

  int out_channels() const { return out_; }

  std::vector<float> weight, bias, grad_weight, grad_bias;

private:
  int in_ = 0, out_ = 0, k_ = 3, pad_ = 1;
  Tensor cached_input_;
  std::vector<std::vector<float>> col_cache_;
};

class BatchNorm2d {
public:
  BatchNorm2d() = default;
  explicit BatchNorm2d(int channels, double momentum = 0.1, double eps = 1e-5)
      : c_(channels), momentum_(momentum), eps_(eps) {
    gamma.assign(channels, 1.0f);
    beta.assign(channels, 0.0f);
    running_mean.assign(channels, 0.0f);
    running_var.assign(channels, 1.0f);
    grad_gamma.assign(channels, 0.0f);
    grad_beta.assign(channels, 0.0f);
  }

  Tensor forward(const Tensor& x, bool training) {
    Tensor y(x.n, x.c, x.h, x.w);
    const std::size_t plane = x.plane();
    const std::size_t m = static_cast<std::size_t>(x.n) * plane;
    if (training) {
      xhat_ = Tensor(x.n, x.c, x.h, x.w);
      inv_std_.assign(c_, 0.0f);
      for (int ch = 0; ch < c_; ++ch) {
        double mean = 0.0, var = 0.0;
        for (int i = 0; i < x.n; ++i) {
          const float* p = plane_ptr(x, i, ch);
          for (std::size_t j = 0; j < plane; ++j) mean += p[j];
        }
        mean /= static_cast<double>(m);
        for (int i = 0; i < x.n; ++i) {
          const float* p = plane_ptr(x, i, ch);
          for (std::size_t j = 0; j < plane; ++j) {
            double d = p[j] - mean;
            var += d * d;
          }
        }
        var /= static_cast<double>(m);
        const double inv = 1.0 / std::sqrt(var + eps_);
        inv_std_[ch] = static_cast<float>(inv);
        for (int i = 0; i < x.n; ++i) {
          const float* p = plane_ptr(x, i, ch);
          float* xh = plane_ptr(xhat_, i, ch);
          float* py = plane_ptr(y, i, ch);
          for (std::size_t j = 0; j < plane; ++j) {
            xh[j] = static_cast<float>((p[j] - mean) * inv);
            py[j] = gamma[ch] * xh[j] + beta[ch];
          }
        }
        // Unbiased variance feeds the running estimate.
        const double unbiased = m > 1 ? var * static_cast<double>(m) / (m - 1) : var;
        running_mean[ch] =
            static_cast<float>((1.0 - momentum_) * running_mean[ch] + momentum_ * mean);
        running_var[ch] =
            static_cast<float>((1.0 - momentum_) * running_var[ch] + momentum_ * unbiased);
      }
    } else {
      for (int ch = 0; ch < c_; ++ch) {
        const float scale =
            static_cast<float>(gamma[ch] / std::sqrt(static_cast<double>(running_var[ch]) + eps_));
        const float shift = beta[ch] - scale * running_mean[ch];
        for (int i = 0; i < x.n; ++i) {
          const float* p = plane_ptr(x, i, ch);
          float* py = plane_ptr(y, i, ch);
          for (std::size_t j = 0; j < plane; ++j) py[j] = scale * p[j] + shift;
        }
      }
    }
    return y;
  }

  Tensor backward(const Tensor& dy) {
    Tensor dx(dy.n, dy.c, dy.h, dy.w);
    const std::size_t plane = dy.plane();
    const double m = static_cast<double>(dy.n) * plane;
    for (int ch = 0; ch < c_; ++ch) {
      double sum_dy = 0.0, sum_dy_xhat = 0.0;
      for (int i = 0; i < dy.n; ++i) {
        const float* pdy = plane_ptr(dy, i, ch);
        const float* xh = plane_ptr(xhat_, i, ch);
        for (std::size_t j = 0; j < plane; ++j) {
          sum_dy += pdy[j];
          sum_dy_xhat += static_cast<double>(pdy[j]) * xh[j];
        }
      }
      grad_gamma[ch] += static_cast<float>(sum_dy_xhat);
      grad_beta[ch] += static_cast<float>(sum_dy);
      const double k = gamma[ch] * inv_std_[ch] / m;
      for (int i = 0; i < dy.n; ++i) {
        const float* pdy = plane_ptr(dy, i, ch);
        const float* xh = plane_ptr(xhat_, i, ch);
        float* pdx = plane_ptr(dx, i, ch);
        for (std::size_t j = 0; j < plane; ++j)
          pdx[j] = static_cast<float>(k * (m * pdy[j] - sum_dy - xh[j] * sum_dy_xhat));
      }
    }
    return dx;
  }

  void visit_params(const std::string& prefix, std::vector<ParamRef>& out) {
    out.push_back({prefix + ".g", &gamma, &grad_gamma});
    out.push_back({prefix + ".be", &beta, &grad_beta});
  }
  void visit_state(const std::string& prefix, std::vector<StateRef>& out) {
    out.push_back({prefix + ".rm", &running_mean});
    out.push_back({prefix + ".rv", &running_var});
  }

  std::vector<float> gamma, beta, running_mean, running_var, grad_gamma, grad_beta;

private:
  static float* plane_ptr(Tensor& t, int i, int ch) {
    return t.data.data() + (static_cast<std::size_t>(i) * t.c + ch) * t.plane();
  }
  static const float* plane_ptr(const Tensor& t, int i, int ch) {
    return t.data.data() + (static_cast<std::size_t>(i) * t.c + ch) * t.plane();
  }

  int c_ = 0;
  double momentum_ = 0.1, eps_ = 1e-5;
  Tensor xhat_;
  std::vector<float> inv_std_;
};

/// ReLU (slope 0) or leaky rectifier.
class Relu {
public:
  Relu() = default;
  explicit Relu(double negative_slope) : slope_(static_cast<float>(negative_slope)) {}

  Tensor forward(const Tensor& x) {
    cached_input_ = x;
    Tensor y = x;
    for (auto& v : y.data)
      if (v < 0.0f) v *= slope_;
    return y;
  }

  Tensor backward(const Tensor& dy) {
    Tensor dx = dy;
    for (std::size_t i = 0; i < dx.data.size(); ++i)
      if (cached_input_.data[i] < 0.0f) dx.data[i] *= slope_;
    return dx;
  }

private:
  float slope_ = 0.0f;
  Tensor cached_input_;
};

/// 2x2 max pooling, stride 2. Input spatial size must be even.
class MaxPool2 {
public:
  Tensor forward(const Tensor& x) {
    if (x.h % 2 || x.w % 2) throw Error("MaxPool2: spatial size must be even");
    in_shape_ = x;
    Tensor y(x.n, x.c, x.h / 2, x.w / 2);
    argmax_.resize(y.size());
    std::size_t o = 0;
    for (int i = 0; i < x.n; ++i)
      for (int c = 0; c < x.c; ++c)
        for (int yy = 0; yy < y.h; ++yy)
          for (int xx = 0; xx < y.w; ++xx, ++o) {
            float best = -std::numeric_limits<float>::infinity();
            std::size_t best_idx = 0;
            for (int dy = 0; dy < 2; ++dy)
              for (int dx = 0; dx < 2; ++dx) {
                std::size_t idx = ((static_cast<std::size_t>(i) * x.c + c) * x.h + yy * 2 + dy) *
                                      x.w +
                                  xx * 2 + dx;
                if (x.data[idx] > best) {
                  best = x.data[idx];
                  best_idx = idx;
                }
              }
            y.data[o] = best;
            argmax_[o] = best_idx;
          }
    return y;
  }

  Tensor backward(const Tensor& dy) {
    Tensor dx(in_shape_.n, in_shape_.c, in_shape_.h, in_shape_.w);
    for (std::size_t o = 0; o < dy.data.size(); ++o) dx.data[argmax_[o]] += dy.data[o];
    return dx;
  }

private:
  Tensor in_shape_;
  std::vector<std::size_t> argmax_;
};

/// Sub-pixel rearrangement: (N, r^2*C, H, W) -> (N, C, rH, rW).
class PixelShuffle {
public:
  explicit PixelShuffle(int r = 2) : r_(r) {}

  Tensor forward(const Tensor& x) {
    if (x.c % (r_ * r_)) throw Error("PixelShuffle: channels not divisible by r^2");
    in_shape_ = {x.n, x.c, x.h, x.w};
    Tensor y(x.n, x.c / (r_ * r_), x.h * r_, x.w * r_);
    for (int i = 0; i < x.n; ++i)
      for (int c = 0; c < y.c; ++c)
        for (int dy = 0; dy < r_; ++dy)
          for (int dx = 0; dx < r_; ++dx) {
            const int ic = c * r_ * r_ + dy * r_ + dx;
            for (int yy = 0; yy < x.h; ++yy)
              for (int xx = 0; xx < x.w; ++xx)
                y.at(i, c, yy * r_ + dy, xx * r_ + dx) = x.at(i, ic, yy, xx);
          }
    return y;
  }

  Tensor backward(const Tensor& dy) {
    Tensor dx(in_shape_[0], in_shape_[1], in_shape_[2], in_shape_[3]);
    for (int i = 0; i < dx.n; ++i)
      for (int c = 0; c < dy.c; ++c)
        for (int py = 0; py < r_; ++py)
          for (int px = 0; px < r_; ++px) {
            const int ic = c * r_ * r_ + py * r_ + px;
            for (int yy = 0; yy < dx.h; ++yy)
              for (int xx = 0; xx < dx.w; ++xx)
                dx.at(i, ic, yy, xx) = dy.at(i, c, yy * r_ + py, xx * r_ + px);
          }
    return dx;
  }

private:
  int r_ = 2;
  std::array<int, 4> in_shape_{};
};

// ---------------------------------------------------------------------------
// Output heads.

/// Irradiance head: xhat = (tanh(f) + input + 1) / 3, in [0,1] by construction.
class IrradianceHead {
public:
  Tensor forward(const Tensor& f, const Tensor& input) {
    if (!f.same_shape(input)) throw Error("IrradianceHead: shape mismatch");
    tanh_f_ = f;
    Tensor y(f.n, f.c, f.h, f.w);
    for (std::size_t i = 0; i < f.data.size(); ++i) {
      tanh_f_.data[i] = std::tanh(f.data[i]);
      y.data[i] = (tanh_f_.data[i] + input.data[i] + 1.0f) / 3.0f;
    }
    return y;
  }

  /// Gradient w.r.t. the pre-activation f (the masked image input carries no
  /// trainable parameters upstream).
  Tensor backward(const Tensor& dy) {
    Tensor df = dy;
    for (std::size_t i = 0; i < df.data.size(); ++i)
      df.data[i] *= (1.0f - tanh_f_.data[i] * tanh_f_.data[i]) / 3.0f;
    return df;
  }

private:
  Tensor tanh_f_;
};

/// Normalized tanh head: y = (tanh(x) + 1) / 2, in [0,1] by construction.
class TanhNormHead {
public:
  Tensor forward(const Tensor& x) {
    tanh_x_ = x;
    Tensor y(x.n, x.c, x.h, x.w);
    for (std::size_t i = 0; i < x.data.size(); ++i) {
      tanh_x_.data[i] = std::tanh(x.data[i]);
      y.data[i] = (tanh_x_.data[i] + 1.0f) / 2.0f;
    }
    return y;
  }

  Tensor backward(const Tensor& dy) {
    Tensor dx = dy;
    for (std::size_t i = 0; i < dx.data.size(); ++i)
      dx.data[i] *= (1.0f - tanh_x_.data[i] * tanh_x_.data[i]) / 2.0f;
    return dx;
  }

private:
  Tensor tanh_x_;
};

}  // namespace mexhdr::nn

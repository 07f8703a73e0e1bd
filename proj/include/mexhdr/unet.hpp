#pragma once

#include <algorithm>
#include <memory>
#include <string>
#include <vector>

#include "mexhdr/nn.hpp"

namespace mexhdr {

/// U-shaped encoder-decoder. Per level the encoder applies two 3x3
/// convolutions with batch norm and ReLU, halving resolution between levels
/// with 2x2 max pooling; the decoder upsamples with a sub-pixel convolution,
/// concatenates the matching encoder features, and applies one 3x3
/// convolution with batch norm and a leaky rectifier. A final 1x1
/// convolution produces the 3-channel pre-activation output.
class UNet {
public:
  UNet() = default;

  UNet(int levels, int in_channels, int base_features, int max_features, double leaky_slope,
       double bn_momentum, double bn_eps, Rng& rng, bool icnr_init = false)
      : levels_(levels), leaky_slope_(leaky_slope) {
    if (levels < 2) throw Error("UNet: need at least 2 levels");
    auto width = [&](int level) {  // level is 0-based
      long w = static_cast<long>(base_features) << level;
      return static_cast<int>(std::min<long>(w, max_features));
    };
    for (int l = 0; l < levels; ++l) {
      int cin = l == 0 ? in_channels : width(l - 1);
      enc1_.emplace_back(cin, width(l), 3, rng);
      enc1_bn_.emplace_back(width(l), bn_momentum, bn_eps);
      enc2_.emplace_back(width(l), width(l), 3, rng);
      enc2_bn_.emplace_back(width(l), bn_momentum, bn_eps);
    }
    pools_.resize(levels - 1);
    for (int l = levels - 2; l >= 0; --l) {
      int c_below = l == levels - 2 ? width(levels - 1) : width(l + 1);
      up_conv_.emplace_back(c_below, 4 * width(l), 3, rng);
      if (icnr_init) up_conv_.back().init_icnr(2, rng);
      shuffles_.emplace_back(2);
      dec_.emplace_back(2 * width(l), width(l), 3, rng);
      dec_bn_.emplace_back(width(l), bn_momentum, bn_eps);
    }
    final_ = nn::Conv2d(width(0), 3, 1, rng);
  }

  /// Spatial divisibility the network needs: 2^(levels-1).
  int spatial_multiple() const { return 1 << (levels_ - 1); }

  /// Pre-activation output (heads live with the model).
  Tensor forward(const Tensor& x, bool training) {
    if (x.h % spatial_multiple() || x.w % spatial_multiple())
      throw Error("UNet: input size must be divisible by " + std::to_string(spatial_multiple()));
    skips_.clear();
    Tensor t = x;
    for (int l = 0; l < levels_; ++l) {
      t = relu(enc1_bn_[l].forward(enc1_[l].forward(t, training), training), enc1_relu_, l);
      t = relu(enc2_bn_[l].forward(enc2_[l].forward(t, training), training), enc2_relu_, l);
      if (l < levels_ - 1) {
        skips_.push_back(t);
        t = pools_[l].forward(t);
      }
    }
    skip_channels_.clear();
    for (int d = 0; d < levels_ - 1; ++d) {
      t = shuffles_[d].forward(up_conv_[d].forward(t, training));
      const Tensor& skip = skips_[levels_ - 2 - d];
      skip_channels_.push_back(t.c);
      t = concat_channels(t, skip);
      t = leaky(dec_bn_[d].forward(dec_[d].forward(t, training), training), d);
    }
    return final_.forward(t, training);
  }

  /// Backpropagates from the pre-activation gradient; accumulates parameter
  /// gradients and returns the input gradient.
  Tensor backward(const Tensor& d_out) {
    Tensor dt = final_.backward(d_out);
    std::vector<Tensor> d_skips(levels_ - 1);
    for (int d = levels_ - 2; d >= 0; --d) {
      dt = dec_[d].backward(dec_bn_[d].backward(leaky_back(dt, d)));
      auto [d_up, d_skip] = split_channels(dt, skip_channels_[d]);
      d_skips[levels_ - 2 - d] = std::move(d_skip);
      dt = up_conv_[d].backward(shuffles_[d].backward(d_up));
    }
    for (int l = levels_ - 1; l >= 0; --l) {
      if (l < levels_ - 1) {
        dt = pools_[l].backward(dt);
        for (std::size_t i = 0; i < dt.data.size(); ++i) dt.data[i] += d_skips[l].data[i];
      }
      dt = enc2_[l].backward(enc2_bn_[l].backward(relu_back(dt, enc2_relu_, l)));
      dt = enc1_[l].backward(enc1_bn_[l].backward(relu_back(dt, enc1_relu_, l)));
    }
    return dt;
  }

  void visit_params(const std::string& prefix, std::vector<nn::ParamRef>& out) {
    for (int l = 0; l < levels_; ++l) {
      std::string p = prefix + ".e" + std::to_string(l);
      enc1_[l].visit_params(p + ".c1", out);
      enc1_bn_[l].visit_params(p + ".n1", out);
      enc2_[l].visit_params(p + ".c2", out);
      enc2_bn_[l].visit_params(p + ".n2", out);
    }
    for (int d = 0; d < levels_ - 1; ++d) {
      std::string p = prefix + ".d" + std::to_string(d);
      up_conv_[d].visit_params(p + ".up", out);
      dec_[d].visit_params(p + ".c", out);
      dec_bn_[d].visit_params(p + ".n", out);
    }
    final_.visit_params(prefix + ".out", out);
  }

  void visit_state(const std::string& prefix, std::vector<nn::StateRef>& out) {
    for (int l = 0; l < levels_; ++l) {
      std::string p = prefix + ".e" + std::to_string(l);
      enc1_bn_[l].visit_state(p + ".n1", out);
      enc2_bn_[l].visit_state(p + ".n2", out);
    }
    for (int d = 0; d < levels_ - 1; ++d)
      dec_bn_[d].visit_state(prefix + ".d" + std::to_string(d) + ".n", out);
  }

private:
  // Activation caches are per call site, stored in growable pools.
  Tensor relu(const Tensor& x, std::vector<nn::Relu>& pool, int slot) {
    if (static_cast<int>(pool.size()) <= slot) pool.resize(slot + 1, nn::Relu(0.0));
    return pool[slot].forward(x);
  }
  Tensor relu_back(const Tensor& dy, std::vector<nn::Relu>& pool, int slot) {
    return pool[slot].backward(dy);
  }
  Tensor leaky(const Tensor& x, int slot) {
    if (static_cast<int>(leaky_.size()) <= slot)
      leaky_.resize(slot + 1, nn::Relu(leaky_slope_));
    return leaky_[slot].forward(x);
  }
  Tensor leaky_back(const Tensor& dy, int slot) { return leaky_[slot].backward(dy); }

  int levels_ = 0;
  double leaky_slope_ = 0.2;
  std::vector<nn::Conv2d> enc1_, enc2_, up_conv_, dec_;
  std::vector<nn::BatchNorm2d> enc1_bn_, enc2_bn_, dec_bn_;
  std::vector<nn::MaxPool2> pools_;
  std::vector<nn::PixelShuffle> shuffles_;
  std::vector<nn::Relu> enc1_relu_, enc2_relu_, leaky_;
  nn::Conv2d final_;
  std::vector<Tensor> skips_;
  std::vector<int> skip_channels_;
};

}  // namespace mexhdr

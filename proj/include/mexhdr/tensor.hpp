#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "mexhdr/image.hpp"

namespace mexhdr {

/// Dense NCHW tensor.
template <typename T>
struct TensorT {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<T> data;

  TensorT() = default;
  TensorT(int n_, int c_, int h_, int w_, T fill = T(0))
      : n(n_), c(c_), h(h_), w(w_),
        data(static_cast<std::size_t>(n_) * c_ * h_ * w_, fill) {}

  std::size_t size() const { return data.size(); }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  std::size_t sample_size() const { return static_cast<std::size_t>(c) * h * w; }

  T& at(int i, int ch, int y, int x) {
    return data[((static_cast<std::size_t>(i) * c + ch) * h + y) * w + x];
  }
  T at(int i, int ch, int y, int x) const {
    return data[((static_cast<std::size_t>(i) * c + ch) * h + y) * w + x];
  }

  bool same_shape(const TensorT& o) const {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }
};

using Tensor = TensorT<float>;

/// HWC image -> 1CHW tensor.
inline Tensor image_to_tensor(const Image& img) {
  Tensor t(1, img.channels, img.height, img.width);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c) t.at(0, c, y, x) = img.at(y, x, c);
  return t;
}

/// Sample `i` of an NCHW tensor -> HWC image.
inline Image tensor_to_image(const Tensor& t, int i = 0) {
  Image img(t.h, t.w, t.c);
  for (int y = 0; y < t.h; ++y)
    for (int x = 0; x < t.w; ++x)
      for (int c = 0; c < t.c; ++c) img.at(y, x, c) = t.at(i, c, y, x);
  return img;
}

/// Copies image `img` into batch slot `i` of `t` (shapes must agree).
inline void set_tensor_sample(Tensor& t, int i, const Image& img) {
  if (img.height != t.h || img.width != t.w || img.channels != t.c)
    throw Error("set_tensor_sample: shape mismatch");
  for (int y = 0; y < t.h; ++y)
    for (int x = 0; x < t.w; ++x)
      for (int c = 0; c < t.c; ++c) t.at(i, c, y, x) = img.at(y, x, c);
}

template <typename T>
TensorT<T> concat_batch(const TensorT<T>& a, const TensorT<T>& b) {
  if (a.c != b.c || a.h != b.h || a.w != b.w) throw Error("concat_batch: shape mismatch");
  TensorT<T> out(a.n + b.n, a.c, a.h, a.w);
  std::copy(a.data.begin(), a.data.end(), out.data.begin());
  std::copy(b.data.begin(), b.data.end(), out.data.begin() + a.data.size());
  return out;
}

template <typename T>
std::pair<TensorT<T>, TensorT<T>> split_batch(const TensorT<T>& x, int n_first) {
  TensorT<T> a(n_first, x.c, x.h, x.w), b(x.n - n_first, x.c, x.h, x.w);
  std::copy(x.data.begin(), x.data.begin() + a.data.size(), a.data.begin());
  std::copy(x.data.begin() + a.data.size(), x.data.end(), b.data.begin());
  return {std::move(a), std::move(b)};
}

template <typename T>
TensorT<T> concat_channels(const TensorT<T>& a, const TensorT<T>& b) {
  if (a.n != b.n || a.h != b.h || a.w != b.w) throw Error("concat_channels: shape mismatch");
  TensorT<T> out(a.n, a.c + b.c, a.h, a.w);
  const std::size_t pa = a.plane();
  for (int i = 0; i < a.n; ++i) {
    std::copy(a.data.begin() + i * a.sample_size(), a.data.begin() + (i + 1) * a.sample_size(),
              out.data.begin() + i * out.sample_size());
    std::copy(b.data.begin() + i * b.sample_size(), b.data.begin() + (i + 1) * b.sample_size(),
              out.data.begin() + i * out.sample_size() + a.c * pa);
  }
  return out;
}

template <typename T>
std::pair<TensorT<T>, TensorT<T>> split_channels(const TensorT<T>& x, int c_first) {
  TensorT<T> a(x.n, c_first, x.h, x.w), b(x.n, x.c - c_first, x.h, x.w);
  const std::size_t pl = x.plane();
  for (int i = 0; i < x.n; ++i) {
    std::copy(x.data.begin() + i * x.sample_size(),
              x.data.begin() + i * x.sample_size() + c_first * pl,
              a.data.begin() + i * a.sample_size());
    std::copy(x.data.begin() + i * x.sample_size() + c_first * pl,
              x.data.begin() + (i + 1) * x.sample_size(), b.data.begin() + i * b.sample_size());
  }
  return {std::move(a), std::move(b)};
}

}  // namespace mexhdr

#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "mexhdr/image.hpp"
#include "mexhdr/unet.hpp"

namespace mexhdr {

struct NetConfig {
  int levels = 7;
  int base_features_encoder = 16;
  int base_features_exposure = 32;
  int max_features_encoder = 256;
  int max_features_exposure = 512;
  bool share_exposure_nets = false;
  double leaky_slope = 0.2;
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;
  bool icnr_init = false;

  void validate() const {
    if (levels < 2) throw Error("NetConfig: levels must be >= 2");
    if (base_features_encoder < 1 || base_features_exposure < 1 ||
        max_features_encoder < base_features_encoder ||
        max_features_exposure < base_features_exposure)
      throw Error("NetConfig: invalid feature widths");
    if (!(leaky_slope >= 0.0 && leaky_slope < 1.0)) throw Error("NetConfig: bad leaky slope");
    if (!(bn_momentum > 0.0 && bn_momentum < 1.0) || !(bn_eps > 0.0))
      throw Error("NetConfig: bad batch-norm constants");
  }

  int spatial_multiple() const { return 1 << (levels - 1); }
};

/// The network's sensor-exposure estimate referenced to an exposure time.
/// Values are in [0,1] straight out of the encoder and may exceed 1 after
/// scaling to a longer exposure.
struct LatentExposure {
  Image values;
  ExposureMeta meta;
};

enum class ExposureDirection { kUp, kDown };

/// The three subnetworks: an irradiance-encoding net plus up/down exposure
/// nets (optionally one shared exposure net).
class Model {
public:
  NetConfig config;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
  UNet encoder, up, down;
  nn::IrradianceHead encoder_head;
  nn::TanhNormHead up_head, down_head;

  UNet& exposure_net(ExposureDirection d) {
    return (d == ExposureDirection::kUp || config.share_exposure_nets) ? up : down;
  }
  nn::TanhNormHead& exposure_head(ExposureDirection d) {
    return (d == ExposureDirection::kUp || config.share_exposure_nets) ? up_head : down_head;
  }

  /// Tensor-level forward passes used by both training and inference.
  Tensor encode_forward(const Tensor& masked_input, bool training) {
    Tensor f = encoder.forward(masked_input, training);
    return encoder_head.forward(f, masked_input);
  }
  Tensor exposure_forward_tensor(const Tensor& latent_scaled, ExposureDirection d, bool training) {
    Tensor g = exposure_net(d).forward(latent_scaled, training);
    return exposure_head(d).forward(g);
  }

  void visit_params(std::vector<nn::ParamRef>& out) {
    encoder.visit_params("n1", out);
    up.visit_params("n2", out);
    if (!config.share_exposure_nets) down.visit_params("n3", out);
  }
  void visit_state(std::vector<nn::StateRef>& out) {
    encoder.visit_state("n1", out);
    up.visit_state("n2", out);
    if (!config.share_exposure_nets) down.visit_state("n3", out);
  }

  void zero_grads() {
    std::vector<nn::ParamRef> params;
    visit_params(params);
    for (auto& p : params) std::fill(p.grad->begin(), p.grad->end(), 0.0f);
  }
};

/// Deterministically initializes the three networks from a seed.
inline Model build_model(const NetConfig& config, std::uint64_t seed) {
  config.validate();
  Model m;
  m.config = config;
  m.seed = seed;
  Rng enc_rng(hash_seed(seed, 1));
  Rng up_rng(hash_seed(seed, 2));
  Rng down_rng(hash_seed(seed, 3));
  m.encoder = UNet(config.levels, 3, config.base_features_encoder, config.max_features_encoder,
                   config.leaky_slope, config.bn_momentum, config.bn_eps, enc_rng,
                   config.icnr_init);
  m.up = UNet(config.levels, 3, config.base_features_exposure, config.max_features_exposure,
              config.leaky_slope, config.bn_momentum, config.bn_eps, up_rng, config.icnr_init);
  if (!config.share_exposure_nets)
    m.down = UNet(config.levels, 3, config.base_features_exposure, config.max_features_exposure,
                  config.leaky_slope, config.bn_momentum, config.bn_eps, down_rng,
                  config.icnr_init);
  return m;
}

// ---------------------------------------------------------------------------
// Reflect padding to the network's spatial multiple (inference-size rule).

inline Image pad_reflect(const Image& img, int target_h, int target_w) {
  if (target_h == img.height && target_w == img.width) return img;
  Image out(target_h, target_w, img.channels);
  auto reflect = [](int v, int n) {
    // Reflection without edge repeat; safe for any pad < n.
    if (v >= n) v = 2 * n - 2 - v;
    return v < 0 ? -v : v;
  };
  for (int y = 0; y < target_h; ++y) {
    int sy = reflect(y, img.height);
    for (int x = 0; x < target_w; ++x) {
      int sx = reflect(x, img.width);
      for (int c = 0; c < img.channels; ++c) out.at(y, x, c) = img.at(sy, sx, c);
    }
  }
  return out;
}

inline Image crop_topleft(const Image& img, int h, int w) {
  if (h == img.height && w == img.width) return img;
  Image out(h, w, img.channels);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < img.channels; ++c) out.at(y, x, c) = img.at(y, x, c);
  return out;
}

inline int round_up(int v, int multiple) { return (v + multiple - 1) / multiple * multiple; }

// ---------------------------------------------------------------------------
// The spec'd operations at image level (inference mode).

/// Encodes a masked input image into its latent sensor exposure. Sizes not
/// divisible by the network's spatial multiple are reflect-padded and the
/// output cropped back.
inline LatentExposure encode_irradiance(Model& model, const LdrImage& masked_input) {
  const int mult = model.config.spatial_multiple();
  const Image& src = masked_input.pixels;
  Image padded = pad_reflect(src, round_up(src.height, mult), round_up(src.width, mult));
  Tensor x = image_to_tensor(padded);
  Tensor latent = model.encode_forward(x, /*training=*/false);
  LatentExposure out;
  out.values = crop_topleft(tensor_to_image(latent), src.height, src.width);
  out.meta = masked_input.meta;
  return out;
}

/// Rescales a latent to a different exposure time (eq. scaling by the ratio
/// of exposure times).
inline LatentExposure scale_latent(const LatentExposure& x, const ExposureMeta& target) {
  if (!(x.meta.delta_t > 0.0)) throw Error("scale_latent: source delta_t must be positive");
  if (!(target.delta_t > 0.0)) throw Error("scale_latent: target delta_t must be positive");
  LatentExposure out;
  out.meta = target;
  out.values = x.values;
  const float ratio = static_cast<float>(target.delta_t / x.meta.delta_t);
  for (auto& v : out.values.data) v *= ratio;
  return out;
}

/// Decodes a (scaled) latent into a display image with the up- or
/// down-exposure net; output is in [0,1] by the head construction.
inline LdrImage exposure_forward(Model& model, const LatentExposure& latent_scaled,
                                 ExposureDirection direction) {
  const int mult = model.config.spatial_multiple();
  const Image& src = latent_scaled.values;
  Image padded = pad_reflect(src, round_up(src.height, mult), round_up(src.width, mult));
  Tensor x = image_to_tensor(padded);
  Tensor y = model.exposure_forward_tensor(x, direction, /*training=*/false);
  LdrImage out;
  out.pixels = crop_topleft(tensor_to_image(y), src.height, src.width);
  out.meta = latent_scaled.meta;
  out.bit_depth = 0;
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoint container: versioned magic header, config, seed/step, named
// float arrays and named double scalars.

inline constexpr char kCheckpointMagic[8] = {'M', 'X', 'H', 'D', 'R', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointBlob {
  NetConfig config;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
  bool has_trainer_state = false;
  std::vector<std::pair<std::string, std::vector<float>>> arrays;
  std::vector<std::pair<std::string, double>> scalars;
};

namespace detail {

template <typename T>
void write_pod(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
void read_pod(std::ifstream& in, T& v) {
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
}
inline void write_name(std::ofstream& out, const std::string& s) {
  std::uint16_t len = static_cast<std::uint16_t>(s.size());
  write_pod(out, len);
  out.write(s.data(), len);
}
inline std::string read_name(std::ifstream& in) {
  std::uint16_t len = 0;
  read_pod(in, len);
  std::string s(len, '\0');
  in.read(s.data(), len);
  return s;
}

}  // namespace detail

inline void write_checkpoint(const std::string& path, const CheckpointBlob& blob) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("write_checkpoint: cannot open '" + path + "' for writing");
  out.write(kCheckpointMagic, 8);
  detail::write_pod(out, kCheckpointVersion);
  detail::write_pod(out, static_cast<std::uint8_t>(blob.has_trainer_state));
  const NetConfig& c = blob.config;
  detail::write_pod(out, static_cast<std::int32_t>(c.levels));
  detail::write_pod(out, static_cast<std::int32_t>(c.base_features_encoder));
  detail::write_pod(out, static_cast<std::int32_t>(c.base_features_exposure));
  detail::write_pod(out, static_cast<std::int32_t>(c.max_features_encoder));
  detail::write_pod(out, static_cast<std::int32_t>(c.max_features_exposure));
  detail::write_pod(out, static_cast<std::uint8_t>(c.share_exposure_nets));
  detail::write_pod(out, static_cast<std::uint8_t>(c.icnr_init));
  detail::write_pod(out, c.leaky_slope);
  detail::write_pod(out, c.bn_momentum);
  detail::write_pod(out, c.bn_eps);
  detail::write_pod(out, blob.seed);
  detail::write_pod(out, blob.step);
  detail::write_pod(out, static_cast<std::uint32_t>(blob.arrays.size()));
  for (const auto& [name, values] : blob.arrays) {
    detail::write_name(out, name);
    detail::write_pod(out, static_cast<std::uint64_t>(values.size()));
    out.write(reinterpret_cast<const char*>(values.data()), values.size() * sizeof(float));
  }
  detail::write_pod(out, static_cast<std::uint32_t>(blob.scalars.size()));
  for (const auto& [name, value] : blob.scalars) {
    detail::write_name(out, name);
    detail::write_pod(out, value);
  }
  if (!out) throw Error("write_checkpoint: write failed for '" + path + "'");
}

inline CheckpointBlob read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("read_checkpoint: cannot open '" + path + "'");
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw Error("read_checkpoint: '" + path + "' is not a checkpoint file");
  std::uint32_t version = 0;
  detail::read_pod(in, version);
  if (version != kCheckpointVersion)
    throw Error("read_checkpoint: unsupported version in '" + path + "'");
  CheckpointBlob blob;
  std::uint8_t trainer = 0, share = 0, icnr = 0;
  detail::read_pod(in, trainer);
  blob.has_trainer_state = trainer != 0;
  std::int32_t levels, be, bx, me, mx;
  detail::read_pod(in, levels);
  detail::read_pod(in, be);
  detail::read_pod(in, bx);
  detail::read_pod(in, me);
  detail::read_pod(in, mx);
  detail::read_pod(in, share);
  detail::read_pod(in, icnr);
  blob.config.levels = levels;
  blob.config.base_features_encoder = be;
  blob.config.base_features_exposure = bx;
  blob.config.max_features_encoder = me;
  blob.config.max_features_exposure = mx;
  blob.config.share_exposure_nets = share != 0;
  blob.config.icnr_init = icnr != 0;
  detail::read_pod(in, blob.config.leaky_slope);
  detail::read_pod(in, blob.config.bn_momentum);
  detail::read_pod(in, blob.config.bn_eps);
  detail::read_pod(in, blob.seed);
  detail::read_pod(in, blob.step);
  std::uint32_t n_arrays = 0;
  detail::read_pod(in, n_arrays);
  for (std::uint32_t i = 0; i < n_arrays; ++i) {
    std::string name = detail::read_name(in);
    std::uint64_t count = 0;
    detail::read_pod(in, count);
    std::vector<float> values(count);
    in.read(reinterpret_cast<char*>(values.data()), count * sizeof(float));
    blob.arrays.emplace_back(std::move(name), std::move(values));
  }
  std::uint32_t n_scalars = 0;
  detail::read_pod(in, n_scalars);
  for (std::uint32_t i = 0; i < n_scalars; ++i) {
    std::string name = detail::read_name(in);
    double value = 0.0;
    detail::read_pod(in, value);
    blob.scalars.emplace_back(std::move(name), value);
  }
  if (!in) throw Error("read_checkpoint: truncated file '" + path + "'");
  return blob;
}

/// Serializes the model (parameters + batch-norm statistics).
inline CheckpointBlob model_to_blob(Model& model) {
  CheckpointBlob blob;
  blob.config = model.config;
  blob.seed = model.seed;
  blob.step = model.step;
  std::vector<nn::ParamRef> params;
  model.visit_params(params);
  for (auto& p : params) blob.arrays.emplace_back(p.name, *p.value);
  std::vector<nn::StateRef> state;
  model.visit_state(state);
  for (auto& s : state) blob.arrays.emplace_back(s.name, *s.value);
  return blob;
}

/// Rebuilds a model from a checkpoint blob; array names and sizes must match
/// the architecture implied by the stored config.
inline Model model_from_blob(const CheckpointBlob& blob) {
  Model model = build_model(blob.config, blob.seed);
  model.step = blob.step;
  std::vector<nn::ParamRef> params;
  model.visit_params(params);
  std::vector<nn::StateRef> state;
  model.visit_state(state);
  auto fill = [&](const std::string& name, std::vector<float>* dst) {
    for (const auto& [n, values] : blob.arrays)
      if (n == name) {
        if (values.size() != dst->size())
          throw Error("checkpoint: size mismatch for array '" + name + "'");
        *dst = values;
        return;
      }
    throw Error("checkpoint: missing array '" + name + "'");
  };
  for (auto& p : params) fill(p.name, p.value);
  for (auto& s : state) fill(s.name, s.value);
  return model;
}

inline void save_model(const std::string& path, Model& model) {
  write_checkpoint(path, model_to_blob(model));
}

inline Model load_model(const std::string& path) { return model_from_blob(read_checkpoint(path)); }

}  // namespace mexhdr

#pragma once

#include <cmath>
#include <vector>

#include "mexhdr/mask.hpp"
#include "mexhdr/model.hpp"

namespace mexhdr {

/// Synthesizes the input scene at a different exposure: mask, encode, scale
/// the latent by 2^(ev_out - ev_in), then decode with the up-exposure net
/// (longer exposures) or the down-exposure net (shorter ones). The input EV
/// is taken from its metadata (0 when unknown); asking for the input's own
/// EV returns it unchanged.
inline LdrImage generate_exposure(Model& model, const LdrImage& input, double ev_out,
                                  const MaskConfig& mask_cfg = {}) {
  const double ev_in = input.meta.ev_offset;
  if (std::abs(ev_out - ev_in) < 1e-12) {
    LdrImage out = input;
    out.meta = ExposureMeta::from_ev(ev_out);
    return out;
  }
  LdrImage masked = mask_input(input, mask_cfg);
  LatentExposure latent = encode_irradiance(model, masked);
  LatentExposure scaled = scale_latent(latent, ExposureMeta::from_ev(ev_out));
  ExposureDirection direction =
      ev_out > ev_in ? ExposureDirection::kUp : ExposureDirection::kDown;
  LdrImage out = exposure_forward(model, scaled, direction);
  out.crf_name = input.crf_name;
  return out;
}

/// One generate_exposure per EV offset (sorted, distinct); the input image
/// is inserted verbatim where its own EV is listed.
inline ExposureStack generate_stack(Model& model, const LdrImage& input,
                                    const std::vector<double>& ev_offsets,
                                    const MaskConfig& mask_cfg = {}) {
  if (ev_offsets.empty()) throw Error("generate_stack: no EV offsets given");
  for (std::size_t i = 1; i < ev_offsets.size(); ++i) {
    if (ev_offsets[i] == ev_offsets[i - 1])
      throw Error("generate_stack: duplicate EV offsets");
    if (ev_offsets[i] < ev_offsets[i - 1])
      throw Error("generate_stack: EV offsets must be ascending");
  }
  ExposureStack stack;
  for (double ev : ev_offsets)
    stack.images.push_back(generate_exposure(model, input, ev, mask_cfg));
  stack.validate();
  return stack;
}

}  // namespace mexhdr

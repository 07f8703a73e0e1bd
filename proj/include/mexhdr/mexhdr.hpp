#pragma once

// Umbrella header: single-image multi-exposure generation and classical HDR
// reconstruction.

#include "mexhdr/brackets.hpp"
#include "mexhdr/config.hpp"
#include "mexhdr/crf.hpp"
#include "mexhdr/image.hpp"
#include "mexhdr/io.hpp"
#include "mexhdr/losses.hpp"
#include "mexhdr/manifest.hpp"
#include "mexhdr/mask.hpp"
#include "mexhdr/merge.hpp"
#include "mexhdr/metrics.hpp"
#include "mexhdr/model.hpp"
#include "mexhdr/rng.hpp"
#include "mexhdr/simulate.hpp"
#include "mexhdr/tensor.hpp"
#include "mexhdr/trainer.hpp"
#include "mexhdr/unet.hpp"

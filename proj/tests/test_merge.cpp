#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "mexhdr/merge.hpp"
#include "mexhdr/simulate.hpp"
#include "support.hpp"

using namespace mexhdr;

namespace {

LdrImage flat_ldr(double value, double delta_t, int h = 4, int w = 4) {
  LdrImage img;
  img.pixels = Image(h, w, 3, static_cast<float>(value));
  img.meta = ExposureMeta::from_delta_t(delta_t);
  img.bit_depth = 0;
  return img;
}

ExposureStack two_image_stack(double z1, double z2, double dt1 = 1.0, double dt2 = 2.0) {
  ExposureStack s;
  s.images.push_back(flat_ldr(z1, dt1));
  s.images.push_back(flat_ldr(z2, dt2));
  return s;
}

}  // namespace

TEST_CASE("consistent linear stack merges exactly under both methods") {
  auto stack = two_image_stack(0.2, 0.4);
  for (auto method : {MergeMethod::kDebevecWeighted, MergeMethod::kRobertsonMl}) {
    auto merged = merge(stack, identity_crf(), {.method = method});
    for (float v : merged.pixels.data) CHECK(v == Catch::Approx(0.2).margin(1e-6));
  }
}

TEST_CASE("fully saturated pixels fall back to the shortest exposure") {
  auto stack = two_image_stack(1.0, 1.0, 0.5, 2.0);
  Mask fallback;
  auto merged = merge(stack, identity_crf(), {}, &fallback);
  // invert(1)/0.5 = 2
  for (float v : merged.pixels.data) CHECK(v == Catch::Approx(2.0).margin(1e-6));
  for (float f : fallback.values) CHECK(f == 1.0f);
}

TEST_CASE("fully black pixels fall back to the longest exposure") {
  auto stack = two_image_stack(0.0, 0.0, 0.5, 2.0);
  Mask fallback;
  auto merged = merge(stack, identity_crf(), {}, &fallback);
  for (float v : merged.pixels.data) CHECK(v == 0.0f);
  for (float f : fallback.values) CHECK(f == 1.0f);
}

TEST_CASE("well-exposed pixels are not flagged") {
  auto stack = two_image_stack(0.2, 0.4);
  Mask fallback;
  merge(stack, identity_crf(), {}, &fallback);
  for (float f : fallback.values) CHECK(f == 0.0f);
}

TEST_CASE("merge recovers synthesized radiance up to quantization") {
  RadianceMap source = testsup::make_radiance(32, 32, 77);
  Crf crf = gamma_crf(2.2);
  std::vector<double> evs = {-4, -3, -2, -1, 0, 1, 2, 3, 4};
  auto stack = synth_stack(source, evs, crf, 16);

  for (auto method : {MergeMethod::kDebevecWeighted, MergeMethod::kRobertsonMl}) {
    auto merged = merge(stack, crf, {.method = method});
    // Compare up to a global scale on pixels some exposure saw unclipped.
    std::vector<double> ratios;
    for (std::size_t i = 0; i < source.pixels.data.size(); ++i) {
      double e = source.pixels.data[i];
      bool covered = false;
      for (double ev : evs) {
        double x = e * std::exp2(ev);
        if (x > 0.05 && x < 0.95) covered = true;
      }
      if (covered && merged.pixels.data[i] > 0)
        ratios.push_back(merged.pixels.data[i] / e);
    }
    REQUIRE(ratios.size() > 100);
    std::nth_element(ratios.begin(), ratios.begin() + ratios.size() / 2, ratios.end());
    double scale = ratios[ratios.size() / 2];
    for (double r : ratios) CHECK(std::abs(r / scale - 1.0) <= 0.005);
  }
}

TEST_CASE("merge scales with a global EV shift") {
  RadianceMap source = testsup::make_radiance(16, 16, 3);
  auto stack = synth_stack(source, {-2, 0, 2}, gamma_crf(1.8), 16);
  auto merged = merge(stack, gamma_crf(1.8));

  const double k = 1.5;
  ExposureStack shifted = stack;
  for (auto& img : shifted.images)
    img.meta = ExposureMeta::from_ev(img.meta.ev_offset - k);
  auto merged_shift = merge(shifted, gamma_crf(1.8));
  const double f = std::exp2(k);
  for (std::size_t i = 0; i < merged.pixels.data.size(); ++i) {
    if (merged.pixels.data[i] <= 0) continue;
    CHECK(merged_shift.pixels.data[i] / merged.pixels.data[i] ==
          Catch::Approx(f).epsilon(1e-3));
  }
}

TEST_CASE("merge input validation") {
  ExposureStack single;
  single.images.push_back(flat_ldr(0.5, 1.0));
  CHECK_THROWS_AS(merge(single, identity_crf()), Error);

  auto stack = two_image_stack(0.2, 0.4);
  stack.images[1].pixels = Image(2, 2, 3, 0.4f);
  CHECK_THROWS_AS(merge(stack, identity_crf()), Error);
}

TEST_CASE("reinhard curve hits the printed anchor values") {
  CHECK(reinhard_curve(1.0, 0.0) == Catch::Approx(0.5).margin(1e-12));
  CHECK(reinhard_curve(0.18, 0.0) == Catch::Approx(0.18 / 1.18).margin(1e-12));
}

TEST_CASE("tonemap maps the key to the expected display value") {
  RadianceMap map;
  map.pixels = Image(8, 8, 3, 0.7f);  // constant: L equals its geometric mean
  auto ldr = tonemap_reinhard(map, {.key_a = 0.18, .l_white = 1e12});
  for (float v : ldr.pixels.data) CHECK(v == Catch::Approx(0.1526).margin(1e-4));
}

TEST_CASE("tonemap is monotone in luminance") {
  RadianceMap map;
  map.pixels = Image(1, 64, 3);
  for (int x = 0; x < 64; ++x)
    for (int c = 0; c < 3; ++c) map.pixels.at(0, x, c) = 0.01f + 0.2f * x;
  auto ldr = tonemap_reinhard(map, {});
  for (int x = 1; x < 64; ++x)
    CHECK(ldr.pixels.at(0, x, 0) >= ldr.pixels.at(0, x - 1, 0) - 1e-7f);
}

TEST_CASE("tonemap preserves gray and survives black input") {
  RadianceMap map = testsup::make_radiance(8, 8, 12);
  for (std::size_t i = 0; i < map.pixels.data.size(); i += 3)
    map.pixels.data[i + 1] = map.pixels.data[i + 2] = map.pixels.data[i];
  auto ldr = tonemap_reinhard(map, {});
  for (std::size_t i = 0; i < ldr.pixels.data.size(); i += 3) {
    CHECK(ldr.pixels.data[i] == ldr.pixels.data[i + 1]);
    CHECK(ldr.pixels.data[i] == ldr.pixels.data[i + 2]);
  }

  RadianceMap black;
  black.pixels = Image(4, 4, 3, 0.0f);
  auto out = tonemap_reinhard(black, {});
  for (float v : out.pixels.data) CHECK(v == 0.0f);
}

TEST_CASE("tonemap output stays in range") {
  RadianceMap map = testsup::make_radiance(16, 16, 9, 50.0);
  auto ldr = tonemap_reinhard(map, {});
  for (float v : ldr.pixels.data) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
}

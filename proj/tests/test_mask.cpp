#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "mexhdr/mask.hpp"
#include "support.hpp"

using namespace mexhdr;

namespace {

LdrImage gray_image(double v, int h = 2, int w = 2) {
  LdrImage img;
  img.pixels = Image(h, w, 3, static_cast<float>(v));
  return img;
}

// Brute-force evaluation of the printed formulas, independent of mask.hpp.
double oracle_lambda1(double y, double g) { return 1.0 - std::max(0.0, (1.0 - g) - y) / (1.0 - g); }
double oracle_lambda2(double y, double g) { return 1.0 - std::max(0.0, y - g) / (1.0 - g); }

}  // namespace

TEST_CASE("mid-gray mask value matches the direct evaluation") {
  const double y = 0.5, g = 0.05;
  const double expected = oracle_lambda1(y, g);  // == oracle_lambda2 at 0.5
  CHECK(expected == Catch::Approx(0.5263).margin(1e-4));
  for (auto variant : {MaskVariant::kPaperLiteralMax, MaskVariant::kMinCombination}) {
    auto m = well_exposed_mask(gray_image(y), {.gamma = g, .variant = variant});
    CHECK(m.at(0, 0) == Catch::Approx(expected).margin(1e-7));
  }
}

TEST_CASE("the variants split at the exposure extremes") {
  for (double y : {0.0, 1.0}) {
    auto mx = well_exposed_mask(gray_image(y),
                                {.gamma = 0.05, .variant = MaskVariant::kPaperLiteralMax});
    auto mn = well_exposed_mask(gray_image(y),
                                {.gamma = 0.05, .variant = MaskVariant::kMinCombination});
    CHECK(mx.at(0, 0) == Catch::Approx(1.0).margin(1e-7));
    CHECK(mn.at(0, 0) == Catch::Approx(0.0).margin(1e-7));
  }
}

TEST_CASE("pixelwise brute force matches both variants on boundary values") {
  const double g = 0.05;
  const double boundary[] = {0.0, g, 0.5, 1.0 - g, 1.0};
  LdrImage img;
  img.pixels = Image(1, 5, 3);
  for (int x = 0; x < 5; ++x)
    for (int c = 0; c < 3; ++c) img.pixels.at(0, x, c) = static_cast<float>(boundary[x]);

  for (auto variant : {MaskVariant::kPaperLiteralMax, MaskVariant::kMinCombination}) {
    auto m = well_exposed_mask(img, {.gamma = g, .variant = variant});
    for (int x = 0; x < 5; ++x) {
      double y = img.pixels.at(0, x, 0);  // gray: luma == channel value
      double l1 = oracle_lambda1(y, g), l2 = oracle_lambda2(y, g);
      double expected = variant == MaskVariant::kPaperLiteralMax ? std::max(l1, l2)
                                                                 : std::min(l1, l2);
      CHECK(m.at(0, x) == Catch::Approx(expected).margin(1e-7));
    }
  }
}

TEST_CASE("mask depends only on luma") {
  // Two pixels with identical BT.601 luma but different hue.
  LdrImage img;
  img.pixels = Image(1, 2, 3);
  img.pixels.at(0, 0, 0) = 0.5f;
  img.pixels.at(0, 0, 1) = 0.5f;
  img.pixels.at(0, 0, 2) = 0.5f;
  const double t = 0.1;
  img.pixels.at(0, 1, 0) = static_cast<float>(0.5 + 0.587 * t);
  img.pixels.at(0, 1, 1) = static_cast<float>(0.5 - 0.299 * t);
  img.pixels.at(0, 1, 2) = 0.5f;
  auto m = well_exposed_mask(img, {});
  CHECK(m.at(0, 0) == Catch::Approx(m.at(0, 1)).margin(1e-7));
}

TEST_CASE("min combination peaks at mid-gray and vanishes at the ends") {
  MaskConfig cfg{.gamma = 0.05, .variant = MaskVariant::kMinCombination};
  CHECK(mask_value(0.0, cfg) == 0.0);
  CHECK(mask_value(1.0, cfg) == 0.0);
  double peak = mask_value(0.5, cfg);
  for (double y = 0.0; y <= 1.0; y += 0.01) CHECK(mask_value(y, cfg) <= peak + 1e-12);
}

TEST_CASE("apply_mask multiplies per pixel and channel") {
  LdrImage img = gray_image(0.8);

  SECTION("identity and zero masks") {
    Mask ones{2, 2, std::vector<float>(4, 1.0f)};
    Mask zeros{2, 2, std::vector<float>(4, 0.0f)};
    CHECK(apply_mask(img, ones).pixels.data == img.pixels.data);
    for (float v : apply_mask(img, zeros).pixels.data) CHECK(v == 0.0f);
  }

  SECTION("scalar product") {
    Mask half{2, 2, std::vector<float>(4, 0.5263f)};
    for (float v : apply_mask(img, half).pixels.data)
      CHECK(v == Catch::Approx(0.8 * 0.5263).margin(1e-6));
  }

  SECTION("shape mismatch is an error") {
    Mask wrong{3, 3, std::vector<float>(9, 1.0f)};
    CHECK_THROWS_AS(apply_mask(img, wrong), Error);
  }

  SECTION("re-masking with ones is a no-op") {
    Mask half{2, 2, std::vector<float>(4, 0.5f)};
    Mask ones{2, 2, std::vector<float>(4, 1.0f)};
    auto once = apply_mask(img, half);
    auto twice = apply_mask(once, ones);
    CHECK(once.pixels.data == twice.pixels.data);
  }
}

TEST_CASE("gamma outside (0, 0.5) is rejected") {
  CHECK_THROWS_AS(well_exposed_mask(gray_image(0.5), {.gamma = 0.6}), Error);
  CHECK_THROWS_AS(well_exposed_mask(gray_image(0.5), {.gamma = 0.0}), Error);
}

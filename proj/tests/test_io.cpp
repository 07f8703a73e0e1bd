#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <fstream>

#include "mexhdr/io.hpp"
#include "mexhdr/manifest.hpp"
#include "support.hpp"

using namespace mexhdr;

TEST_CASE("pfm round trip is bit exact") {
  std::string dir = testsup::scratch_dir("pfm");
  Image img = testsup::random_image(13, 17, 3, 3, 0.0, 100.0);
  img.data[0] = 1e-20f;
  img.data[1] = 3.4e20f;
  write_pfm(dir + "/x.pfm", img);
  Image back = read_pfm(dir + "/x.pfm");
  REQUIRE(back.same_shape(img));
  CHECK(back.data == img.data);

  Image gray = testsup::random_image(5, 7, 1, 4);
  write_pfm(dir + "/g.pfm", gray);
  CHECK(read_pfm(dir + "/g.pfm").data == gray.data);
}

TEST_CASE("rgbe round trips a power of two exactly") {
  std::string dir = testsup::scratch_dir("rgbe_exact");
  Image img(4, 8, 3, 1.0f);
  write_rgbe(dir + "/one.hdr", img);
  Image back = read_rgbe(dir + "/one.hdr");
  for (float v : back.data) CHECK(v == 1.0f);
}

TEST_CASE("rgbe precision follows the shared exponent") {
  // Channels within one octave of each other, so the shared exponent
  // quantizes all three at mantissa precision.
  std::string dir = testsup::scratch_dir("rgbe_prec");
  Rng rng(9);
  Image img(32, 48, 3);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      double base = std::exp2(rng.uniform(-6.0, 6.0));
      for (int c = 0; c < 3; ++c)
        img.at(y, x, c) = static_cast<float>(base * rng.uniform(0.5, 1.0));
    }
  write_rgbe(dir + "/r.hdr", img);
  Image back = read_rgbe(dir + "/r.hdr");
  double worst = 0.0;
  for (std::size_t i = 0; i < img.data.size(); ++i)
    worst = std::max(worst, std::abs(static_cast<double>(back.data[i]) - img.data[i]) /
                                img.data[i]);
  CHECK(worst <= std::exp2(-7.0));
}

TEST_CASE("rgbe rle handles runs and tiny widths") {
  std::string dir = testsup::scratch_dir("rgbe_rle");

  SECTION("compressible rows") {
    Image img(6, 64, 3);
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x)
        for (int c = 0; c < 3; ++c) img.at(y, x, c) = (x / 16) * 0.25f + 0.25f;
    write_rgbe(dir + "/runs.hdr", img);
    Image back = read_rgbe(dir + "/runs.hdr");
    for (std::size_t i = 0; i < img.data.size(); ++i)
      CHECK(back.data[i] == Catch::Approx(img.data[i]).epsilon(0.01));
  }

  SECTION("width below the RLE minimum uses flat scanlines") {
    // Channels within one octave so the shared exponent covers all three.
    Image img(3, 4, 3);
    Rng rng(5);
    for (std::size_t i = 0; i < img.data.size(); ++i)
      img.data[i] = static_cast<float>(rng.uniform(0.5, 1.0));
    write_rgbe(dir + "/flat.hdr", img);
    Image back = read_rgbe(dir + "/flat.hdr");
    REQUIRE(back.same_shape(img));
    for (std::size_t i = 0; i < img.data.size(); ++i)
      CHECK(back.data[i] == Catch::Approx(img.data[i]).epsilon(0.01));
  }
}

TEST_CASE("png round trips quantized images") {
  std::string dir = testsup::scratch_dir("png");

  SECTION("8-bit rgb") {
    Image img = testsup::random_image(9, 11, 3, 6);
    for (auto& v : img.data) v = quantize_level(v, 8);
    write_png(dir + "/a.png", img, 8);
    PngImage back = read_png(dir + "/a.png");
    CHECK(back.bit_depth == 8);
    CHECK(back.image.data == img.data);
  }

  SECTION("16-bit rgb is lossless") {
    Image img = testsup::random_image(9, 11, 3, 7);
    for (auto& v : img.data) v = quantize_level(v, 16);
    write_png(dir + "/b.png", img, 16);
    PngImage back = read_png(dir + "/b.png");
    CHECK(back.bit_depth == 16);
    CHECK(back.image.data == img.data);
  }

  SECTION("grayscale") {
    Image img = testsup::random_image(5, 6, 1, 8);
    for (auto& v : img.data) v = quantize_level(v, 8);
    write_png(dir + "/g.png", img, 8);
    PngImage back = read_png(dir + "/g.png");
    CHECK(back.image.channels == 1);
    CHECK(back.image.data == img.data);
  }
}

TEST_CASE("codec errors name the file") {
  std::string dir = testsup::scratch_dir("io_err");
  std::ofstream(dir + "/trunc.png") << "\x89PNG then nothing";
  CHECK_THROWS_WITH(read_png(dir + "/trunc.png"), Catch::Matchers::ContainsSubstring("trunc.png"));
  std::ofstream(dir + "/bad.hdr") << "?not radiance";
  CHECK_THROWS_WITH(read_rgbe(dir + "/bad.hdr"), Catch::Matchers::ContainsSubstring("bad.hdr"));
  CHECK_THROWS_AS(read_hdr(dir + "/scene.exr"), Error);
  CHECK_THROWS_AS(write_ldr(dir + "/x.jpg", LdrImage{}), Error);
}

TEST_CASE("hdr dispatch picks the codec by extension") {
  std::string dir = testsup::scratch_dir("dispatch");
  RadianceMap map = testsup::make_radiance(8, 8, 10);
  write_hdr(dir + "/m.pfm", map);
  write_hdr(dir + "/m.hdr", map);
  CHECK(read_hdr(dir + "/m.pfm").pixels.data == map.pixels.data);
  RadianceMap rgbe = read_hdr(dir + "/m.hdr");
  for (std::size_t i = 0; i < map.pixels.data.size(); ++i)
    CHECK(rgbe.pixels.data[i] == Catch::Approx(map.pixels.data[i]).epsilon(0.01).margin(1e-6));
}

TEST_CASE("manifest round trip resolves relative paths") {
  std::string dir = testsup::scratch_dir("manifest");
  Manifest m;
  m.entries.push_back({"sceneA", "gamma2.2", -2.0, "a_m2.png", 8});
  m.entries.push_back({"sceneA", "gamma2.2", 0.0, "a_0.png", 8});
  m.entries.push_back({"sceneB", "identity", 0.75, "b_p075.png", 16});
  write_manifest(dir + "/manifest.tsv", m);

  Manifest back = read_manifest(dir + "/manifest.tsv");
  REQUIRE(back.entries.size() == 3);
  CHECK(back.entries[0].scene_id == "sceneA");
  CHECK(back.entries[2].ev == Catch::Approx(0.75));
  CHECK(back.entries[2].bit_depth == 16);
  // Relative paths resolve against the manifest directory.
  CHECK(back.entries[0].path.find(dir) == 0);
  auto groups = back.stacks();
  CHECK(groups.size() == 2);

  SECTION("missing magic header is rejected") {
    std::ofstream(dir + "/plain.tsv") << "sceneA\tcrf\t0\tx.png\t8\n";
    CHECK_THROWS_WITH(read_manifest(dir + "/plain.tsv"),
                      Catch::Matchers::ContainsSubstring("magic"));
  }

  SECTION("malformed rows are rejected with a line number") {
    std::ofstream out(dir + "/short.tsv");
    out << kManifestMagic << "\nonly\ttwo\n";
    out.close();
    CHECK_THROWS_WITH(read_manifest(dir + "/short.tsv"),
                      Catch::Matchers::ContainsSubstring("line 2"));
  }
}

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <fstream>
#include <sstream>

#include "mexhdr/simulate.hpp"
#include "mexhdr/trainer.hpp"
#include "support.hpp"

using namespace mexhdr;

namespace {

// Tiny setup shared by the trainer tests: two synthetic scenes rendered at
// five EVs, images exactly crop-sized so crops are the identity.
struct TinySetup {
  TrainConfig cfg;
  std::vector<TrainScene> scenes;

  explicit TinySetup(int size = 16, int n_scenes = 1) {
    cfg.seed = 5;
    cfg.batch_size = 2;
    cfg.crop_size = size;
    cfg.max_steps = 4;
    cfg.checkpoint_every = 2;
    cfg.plateau_patience = 1000;
    cfg.augment.enabled = false;
    cfg.net.levels = 2;
    cfg.net.base_features_encoder = 4;
    cfg.net.base_features_exposure = 4;
    cfg.net.max_features_encoder = 8;
    cfg.net.max_features_exposure = 8;
    cfg.loss.pyramid_base = 4;
    for (int s = 0; s < n_scenes; ++s) {
      RadianceMap map = testsup::make_radiance(size, size, 100 + s);
      auto stack = synth_stack(map, {-2, -1, 0, 1, 2}, gamma_crf(2.2), 16,
                               "scene" + std::to_string(s));
      TrainScene scene;
      scene.scene_id = stack.scene_id;
      scene.crf_name = "gamma2.2";
      for (const auto& img : stack.images) {
        scene.images.push_back(img.pixels);
        scene.evs.push_back(img.meta.ev_offset);
        scene.dts.push_back(img.meta.delta_t);
      }
      scenes.push_back(std::move(scene));
    }
  }
};

std::vector<float> snapshot_params(Model& m) {
  std::vector<nn::ParamRef> params;
  m.visit_params(params);
  std::vector<float> all;
  for (const auto& p : params) all.insert(all.end(), p.value->begin(), p.value->end());
  return all;
}

}  // namespace

TEST_CASE("sample_pair orders by exposure time") {
  RadianceMap map = testsup::make_radiance(8, 8, 1);
  auto stack = synth_stack(map, {-1, 1}, identity_crf(), 8);
  Rng rng(2);
  for (int i = 0; i < 10; ++i) {
    auto [lo, hi] = sample_pair(stack, rng);
    CHECK(lo->meta.delta_t < hi->meta.delta_t);
    CHECK(lo == &stack.images[0]);
    CHECK(hi == &stack.images[1]);
  }

  ExposureStack single;
  single.images.push_back(stack.images[0]);
  CHECK_THROWS_AS(sample_pair(single, rng), Error);
}

TEST_CASE("pair sampling is uniform over the 36 pairs of a 9-image stack") {
  const int n = 9, draws = 10000;
  std::map<std::pair<int, int>, int> counts;
  Rng rng(3);
  for (int d = 0; d < draws; ++d) counts[sample_pair_indices(n, rng)]++;
  REQUIRE(counts.size() == 36);
  const double p = 1.0 / 36, expected = draws * p;
  const double sigma = std::sqrt(draws * p * (1 - p));
  for (const auto& [pair, count] : counts) {
    CHECK(pair.first < pair.second);
    CHECK(std::abs(count - expected) <= 3.0 * sigma);
  }
}

TEST_CASE("augmentation transforms") {
  Image img = testsup::random_image(24, 24, 3, 4, 0.0, 1.0);

  SECTION("identity draw is a plain aligned crop") {
    AugmentParams p;
    p.crop_x = 3;
    p.crop_y = 5;
    Image out = apply_augment(img, p, 16);
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x)
        for (int c = 0; c < 3; ++c) CHECK(out.at(y, x, c) == img.at(y + 5, x + 3, c));
  }

  SECTION("horizontal flip applied twice is the identity") {
    AugmentParams p;
    p.flip_h = true;
    Image once = apply_augment(img, p, 24);
    Image twice = apply_augment(once, p, 24);
    for (std::size_t i = 0; i < img.data.size(); ++i)
      CHECK(twice.data[i] == Catch::Approx(img.data[i]).margin(1e-6));
  }

  SECTION("per-pixel exposure ordering survives any draw") {
    RadianceMap map = testsup::make_radiance(24, 24, 6);
    auto stack = synth_stack(map, {-1, 1}, gamma_crf(2.2), 16);
    Rng rng(7);
    AugmentConfig cfg;
    for (int trial = 0; trial < 5; ++trial) {
      AugmentParams p = sample_augment(rng, cfg, 24, 24, 16);
      Image a1 = apply_augment(stack.images[0].pixels, p, 16);
      Image a2 = apply_augment(stack.images[1].pixels, p, 16);
      for (std::size_t i = 0; i < a1.data.size(); ++i)
        CHECK(a2.data[i] >= a1.data[i] - 1e-5f);
    }
  }

  SECTION("images smaller than the crop upscale with a warning") {
    Image small = testsup::random_image(8, 8, 3, 9, 0.0, 1.0);
    AugmentParams p;
    Image out = apply_augment(small, p, 16);
    CHECK(out.height == 16);
    CHECK(out.width == 16);
  }
}

TEST_CASE("train config kv round trip") {
  TrainConfig c;
  c.seed = 42;
  c.batch_size = 4;
  c.crop_size = 64;
  c.pair_evs = {{-2, 0}, {0, 2}};
  c.net.levels = 4;
  c.net.base_features_encoder = 8;
  c.loss.lambda_p = 0.01;
  std::ostringstream out;
  write_train_config(out, c);

  KvConfig kv = KvConfig::parse(out.str(), "test");
  TrainConfig back = train_config_from_kv(kv);
  CHECK(back.seed == 42);
  CHECK(back.batch_size == 4);
  CHECK(back.crop_size == 64);
  CHECK(back.pair_evs == c.pair_evs);
  CHECK(back.net.levels == 4);
  CHECK(back.loss.lambda_p == 0.01);

  SECTION("unknown keys are rejected") {
    KvConfig bad = KvConfig::parse("batch_size = 4\nbatch_sise = 8\n", "test");
    CHECK_THROWS_WITH(train_config_from_kv(bad),
                      Catch::Matchers::ContainsSubstring("batch_sise"));
  }

  SECTION("crop must match the network's spatial multiple") {
    KvConfig bad = KvConfig::parse("crop_size = 100\nnet.levels = 4\n", "test");
    CHECK_THROWS_AS(train_config_from_kv(bad), Error);
  }
}

TEST_CASE("zero learning rate leaves weights unchanged") {
  TinySetup t;
  t.cfg.learning_rate = 0.0;
  TrainState st = init_train_state(t.cfg);
  auto before = snapshot_params(st.model);
  auto batch = make_batch(t.cfg, t.scenes, 1);
  LossBreakdown b = train_step(st, t.cfg, batch);
  CHECK(b.total > 0.0);
  CHECK(snapshot_params(st.model) == before);
}

TEST_CASE("plateau schedule halves twice to a quarter of the rate") {
  PlateauSchedule sched;
  sched.lr = 1e-4;
  sched.factor = 0.5;
  sched.patience = 5;
  // Constant loss improves only at step 1; plateaus then fire at steps 6
  // and 11 (every `patience` steps while stuck).
  for (std::uint64_t step = 1; step <= 15; ++step) sched.update(step, 1.0);
  CHECK(sched.lr == Catch::Approx(2.5e-5).margin(1e-20));

  PlateauSchedule improving;
  improving.lr = 1e-4;
  improving.patience = 5;
  for (std::uint64_t step = 1; step <= 50; ++step) improving.update(step, 1.0 / step);
  CHECK(improving.lr == 1e-4);  // steadily improving loss never triggers
}

TEST_CASE("gradient reaches every parameter group") {
  TinySetup t;
  t.cfg.learning_rate = 1e-4;
  for (bool share : {false, true}) {
    t.cfg.net.share_exposure_nets = share;
    TrainState st = init_train_state(t.cfg);
    std::vector<nn::ParamRef> params;
    st.model.visit_params(params);
    std::vector<std::vector<float>> before;
    for (const auto& p : params) before.push_back(*p.value);

    train_step(st, t.cfg, make_batch(t.cfg, t.scenes, 1));
    int unchanged = 0;
    for (std::size_t i = 0; i < params.size(); ++i) {
      float delta = 0.0f;
      for (std::size_t j = 0; j < before[i].size(); ++j)
        delta = std::max(delta, std::abs((*params[i].value)[j] - before[i][j]));
      if (delta == 0.0f) ++unchanged;
    }
    CHECK(unchanged == 0);
  }
}

TEST_CASE("training runs are deterministic given the seed") {
  TinySetup t;
  std::string dir = testsup::scratch_dir("fit_det");
  std::ostringstream log1, log2;
  fit(t.cfg, t.scenes, dir + "/a", &log1);
  fit(t.cfg, t.scenes, dir + "/b", &log2);
  CHECK(log1.str() == log2.str());
  CHECK(!log1.str().empty());
}

TEST_CASE("resume reproduces the continued run exactly") {
  TinySetup t;
  t.cfg.max_steps = 4;
  t.cfg.checkpoint_every = 2;
  std::string dir = testsup::scratch_dir("fit_resume");

  std::ostringstream full_log;
  fit(t.cfg, t.scenes, dir + "/full", &full_log);

  std::ostringstream tail_log;
  fit(t.cfg, t.scenes, dir + "/resumed", &tail_log, dir + "/full/checkpoint_2.ckpt");

  // Lines 3..4 of the full run equal the resumed run's lines.
  std::istringstream full(full_log.str());
  std::string line, expected_tail;
  int n = 0;
  while (std::getline(full, line))
    if (++n > 2) expected_tail += line + "\n";
  CHECK(tail_log.str() == expected_tail);
  CHECK(!expected_tail.empty());
}

TEST_CASE("overfitting a fixed pair drives the loss down") {
  TinySetup t;
  t.cfg.max_steps = 50;
  t.cfg.batch_size = 1;
  t.cfg.pair_evs = {{0, 1}};  // one fixed pair, no augmentation
  t.cfg.loss.lambda_p = 0.0;  // pixel losses only for the smoke run
  TrainState st = init_train_state(t.cfg);
  std::vector<double> losses;
  auto batch = make_batch(t.cfg, t.scenes, 1);
  for (int i = 0; i < 50; ++i) losses.push_back(train_step(st, t.cfg, batch).total);
  int decreasing = 0;
  for (std::size_t i = 1; i < losses.size(); ++i)
    if (losses[i] <= losses[i - 1] + 1e-12) ++decreasing;
  CHECK(decreasing >= 45);
  CHECK(losses.back() < losses.front());
}

TEST_CASE("configured pair EVs restrict sampling") {
  TinySetup t;
  t.cfg.pair_evs = {{-2, 0}, {0, 2}};
  auto batch = make_batch(t.cfg, t.scenes, 1);
  for (const auto& p : batch) {
    bool first = std::abs(p.dt1 - std::exp2(-2.0)) < 1e-9 && std::abs(p.dt2 - 1.0) < 1e-9;
    bool second = std::abs(p.dt1 - 1.0) < 1e-9 && std::abs(p.dt2 - 4.0) < 1e-9;
    CHECK((first || second));
  }

  t.cfg.pair_evs = {{-3, 0}};  // EV -3 not in the stacks
  CHECK_THROWS_WITH(make_batch(t.cfg, t.scenes, 1),
                    Catch::Matchers::ContainsSubstring("-3.00"));
}

TEST_CASE("non-finite losses abort with the offending batch") {
  TinySetup t;
  TrainState st = init_train_state(t.cfg);
  std::vector<nn::ParamRef> params;
  st.model.visit_params(params);
  (*params[0].value)[0] = std::numeric_limits<float>::quiet_NaN();
  auto batch = make_batch(t.cfg, t.scenes, 1);
  CHECK_THROWS_WITH(train_step(st, t.cfg, batch),
                    Catch::Matchers::ContainsSubstring("non-finite") &&
                        Catch::Matchers::ContainsSubstring("scene0"));
}

TEST_CASE("max_steps zero returns the initialized checkpoint") {
  TinySetup t;
  t.cfg.max_steps = 0;
  std::string dir = testsup::scratch_dir("fit_zero");
  TrainState st = fit(t.cfg, t.scenes, dir);
  CHECK(st.step == 0);
  CHECK(std::filesystem::exists(dir + "/final.ckpt"));
  Model m = load_model(dir + "/final.ckpt");
  CHECK(m.step == 0);
}

TEST_CASE("training scenes load from a manifest") {
  std::string hdr_dir = testsup::scratch_dir("ts_hdr");
  std::string out_dir = testsup::scratch_dir("ts_out");
  write_hdr(hdr_dir + "/s1.hdr", testsup::make_radiance(16, 16, 31));
  auto manifest = synth_dataset(hdr_dir, {gamma_crf(2.2)}, {-1, 0, 1}, out_dir, 16);
  auto scenes = load_training_scenes(manifest);
  REQUIRE(scenes.size() == 1);
  CHECK(scenes[0].images.size() == 3);
  CHECK(scenes[0].evs == std::vector<double>{-1, 0, 1});
  CHECK(scenes[0].ev_index(0.0) == 1);
  CHECK(scenes[0].ev_index(3.0) == -1);
}

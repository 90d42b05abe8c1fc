#include <doctest.h>

#include <cmath>

#include "fg/lcnn.hpp"
#include "support.hpp"

using namespace fg;

namespace {

// Linearly separable synthetic features: the class shifts a band of bins.
FixedFeature class_feature(fg::Rng& rng, Key key, int bins, int frames) {
  FixedFeature f;
  f.bins = bins;
  f.frames = frames;
  f.m.resize(static_cast<size_t>(bins) * frames);
  const double shift = key == Key::kBonafide ? 2.0 : -2.0;
  for (int b = 0; b < bins; ++b)
    for (int t = 0; t < frames; ++t) {
      double v = 0.3 * rng.normal();
      if (b >= bins / 4 && b < bins / 2) v += shift;
      f.at(b, t) = v;
    }
  return f;
}

std::vector<LabeledFeature> class_set(fg::Rng& rng, int n_each, int bins, int frames) {
  std::vector<LabeledFeature> out;
  for (int i = 0; i < n_each; ++i) {
    for (Key key : {Key::kBonafide, Key::kSpoof}) {
      auto f = class_feature(rng, key, bins, frames);
      f.utterance_id = str(key_name(key), "_", i);
      out.push_back({std::move(f), key});
    }
  }
  return out;
}

}  // namespace

TEST_CASE("desk preset: builds, 2 logits, mfm channel halving by construction") {
  const LcnnArch arch = LcnnArch::desk();
  const auto shapes = infer_stack_shapes(arch.specs, {1, 1, 863, 256});
  CHECK(shapes.back() == Shape{1, 2});
  // channel ladder after each MFM: 8, 12, 16
  std::vector<int> mfm_channels;
  for (size_t i = 0; i < arch.specs.size(); ++i)
    if (arch.specs[i].kind == LayerKind::kMfm && shapes[i].size() == 4)
      mfm_channels.push_back(shapes[i][1]);
  CHECK(mfm_channels == std::vector<int>{8, 12, 16});

  LcnnModel m = build_lcnn(arch, 3);
  FixedFeature f;
  f.m.assign(static_cast<size_t>(863) * 256, 0.1);
  const CmScore s = score(m, f, /*allow_untrained=*/true);
  CHECK(std::isfinite(s.score));
}

TEST_CASE("full preset: shape-checks and ends in 2 logits") {
  const LcnnArch arch = LcnnArch::full();
  const auto shapes = infer_stack_shapes(arch.specs, {1, 1, 863, 256});
  CHECK(shapes.back() == Shape{1, 2});
}

TEST_CASE("build: odd channels into mfm and missing dropout are rejected") {
  LcnnArch arch;
  arch.specs = {LayerSpec::conv2d(1, 3, 3, 1, 1), LayerSpec::mfm(),
                LayerSpec::affine(3, 2)};
  arch.input_bins = 8;
  arch.input_frames = 8;
  CHECK_THROWS_AS(build_lcnn(arch, 1), ShapeError);

  LcnnArch no_dropout;
  no_dropout.specs = {LayerSpec::conv2d(1, 4, 3, 1, 1), LayerSpec::mfm(),
                      LayerSpec::affine(2 * 8 * 8, 2)};
  no_dropout.input_bins = 8;
  no_dropout.input_frames = 8;
  CHECK_THROWS_WITH_AS(build_lcnn(no_dropout, 1), doctest::Contains("dropout"),
                       ConfigError);

  LcnnArch early_dropout;
  early_dropout.specs = {LayerSpec::conv2d(1, 4, 3, 1, 1), LayerSpec::dropout(0.4),
                         LayerSpec::mfm(), LayerSpec::affine(2 * 8 * 8, 2)};
  early_dropout.input_bins = 8;
  early_dropout.input_frames = 8;
  CHECK_THROWS_WITH_AS(build_lcnn(early_dropout, 1),
                       doctest::Contains("fully connected"), ConfigError);

  // seed determinism
  const LcnnArch desk = LcnnArch::desk(64, 64);
  LcnnModel a = build_lcnn(desk, 7), b = build_lcnn(desk, 7);
  for (size_t i = 0; i < a.params.params.size(); ++i) {
    auto av = a.params.params[i].second.values();
    auto bv = b.params.params[i].second.values();
    for (size_t j = 0; j < av.size(); ++j) REQUIRE(av[j] == bv[j]);
  }
}

TEST_CASE("train: single-class data is a contract error") {
  fg::Rng rng(19);
  std::vector<LabeledFeature> only_bona;
  for (int i = 0; i < 4; ++i)
    only_bona.push_back({class_feature(rng, Key::kBonafide, 64, 64), Key::kBonafide});
  LcnnModel m = build_lcnn(LcnnArch::desk(64, 64), 1);
  TrainRunConfig cfg;
  cfg.epochs = 1;
  CHECK_THROWS_WITH_AS(train_lcnn(m, only_bona, nullptr, cfg),
                       doctest::Contains("both keys"), ContractError);
}

TEST_CASE("train: separable classes reach high accuracy quickly (desk preset)") {
  fg::Rng rng(23);
  const auto train_set = class_set(rng, 8, 863, 256);
  LcnnModel m = build_lcnn(LcnnArch::desk(), 29);
  TrainRunConfig cfg;
  cfg.epochs = 4;
  cfg.batch = 4;
  cfg.lr = 1e-3;
  cfg.seed = 12;
  const auto curve = train_lcnn(m, train_set, nullptr, cfg);
  CHECK(curve.back().train_acc >= 0.95);
  CHECK(m.trained());
}

TEST_CASE("train: shuffled labels keep cross entropy near ln 2") {
  fg::Rng rng(27);
  auto train_set = class_set(rng, 6, 128, 64);
  // destroy the signal: reshuffle keys independently of the features
  fg::Rng lab_rng(5);
  for (auto& lf : train_set)
    lf.key = lab_rng.uniform() < 0.5 ? Key::kBonafide : Key::kSpoof;
  bool has_b = false, has_s = false;
  for (auto& lf : train_set) (lf.key == Key::kBonafide ? has_b : has_s) = true;
  if (!has_b) train_set.front().key = Key::kBonafide;
  if (!has_s) train_set.back().key = Key::kSpoof;

  LcnnModel m = build_lcnn(LcnnArch::desk(128, 64), 31);
  TrainRunConfig cfg;
  cfg.epochs = 8;
  cfg.batch = 4;
  cfg.lr = 1e-4;
  cfg.seed = 8;
  const auto curve = train_lcnn(m, train_set, nullptr, cfg);
  CHECK(std::abs(curve.back().train_loss - std::log(2.0)) <= 0.1);
}

TEST_CASE("score: eval determinism, batch invariance, logit-shift invariance") {
  fg::Rng rng(33);
  const auto train_set = class_set(rng, 4, 96, 64);
  LcnnModel m = build_lcnn(LcnnArch::desk(96, 64), 37);
  TrainRunConfig cfg;
  cfg.epochs = 2;
  cfg.batch = 4;
  cfg.seed = 3;
  train_lcnn(m, train_set, nullptr, cfg);

  const CmScore s1 = score(m, train_set[0].feat);
  const CmScore s2 = score(m, train_set[0].feat);
  CHECK(s1.score == s2.score);
  CHECK(s1.utterance_id == train_set[0].feat.utterance_id);

  std::vector<const FixedFeature*> batch;
  for (const auto& lf : train_set) batch.push_back(&lf.feat);
  const auto batched = score_batch(m, batch);
  for (size_t i = 0; i < batch.size(); ++i) {
    const CmScore single = score(m, *batch[i]);
    CHECK(std::abs(batched[i].score - single.score) <= 1e-5);
  }

  // shifting both logits by the same constant leaves the score unchanged
  const std::string last = "l" + std::to_string(m.arch.specs.size() - 1) + ".bias";
  auto bias = m.params.at(last).values();
  const CmScore before = score(m, train_set[1].feat);
  bias[0] += 3.25;
  bias[1] += 3.25;
  const CmScore after = score(m, train_set[1].feat);
  CHECK(after.score == doctest::Approx(before.score).epsilon(1e-9));
}

TEST_CASE("score: untrained model refused unless overridden") {
  LcnnModel m = build_lcnn(LcnnArch::desk(64, 64), 1);
  FixedFeature f;
  f.bins = 64;
  f.frames = 64;
  f.m.assign(64 * 64, 0.0);
  CHECK_THROWS_AS(score(m, f), ContractError);
  CHECK_NOTHROW(score(m, f, /*allow_untrained=*/true));
}

TEST_CASE("score_pipeline: mode compatibility contracts") {
  fg::Rng rng(41);
  const int bins = 64, frames = 64;
  const auto train_set = class_set(rng, 3, bins, frames);

  GenuinizerArch garch;
  garch.channels = {4};
  garch.input_bins = bins;
  garch.input_frames = frames;
  garch.pad_bins_to = bins;
  std::vector<LabeledFeature> bona_only;
  for (const auto& lf : train_set)
    if (lf.key == Key::kBonafide) bona_only.push_back(lf);
  GenuinizerModel fg_t = build_genuinizer(garch, 2, Key::kBonafide);
  TrainRunConfig tcfg;
  tcfg.epochs = 1;
  tcfg.batch = 2;
  train_genuinizer(fg_t, bona_only, tcfg);

  LcnnModel baseline = build_lcnn(LcnnArch::desk(bins, frames), 5, PipelineMode::kBaseline);
  LcnnModel fg_c = build_lcnn(LcnnArch::desk(bins, frames), 5, PipelineMode::kFg);
  TrainRunConfig ccfg;
  ccfg.epochs = 1;
  ccfg.batch = 3;
  train_lcnn(baseline, train_set, nullptr, ccfg);
  train_lcnn(fg_c, train_set, nullptr, ccfg);

  const FixedFeature& probe = train_set[0].feat;
  // baseline composition equals calling score directly
  CHECK(score_pipeline(nullptr, baseline, probe).score == score(baseline, probe).score);
  CHECK_THROWS_AS(score_pipeline(&fg_t, baseline, probe), ContractError);
  CHECK_THROWS_AS(score_pipeline(nullptr, fg_c, probe), ContractError);

  // FG output differs from baseline composition (transformer is not identity)
  const double direct = score(fg_c, probe).score;
  const double transformed = score_pipeline(&fg_t, fg_c, probe).score;
  CHECK(direct != transformed);

  // a spoof-trained transformer is rejected in FG mode
  GenuinizerModel fs_t = build_genuinizer(garch, 2, Key::kSpoof);
  std::vector<LabeledFeature> spoof_only;
  for (const auto& lf : train_set)
    if (lf.key == Key::kSpoof) spoof_only.push_back(lf);
  train_genuinizer(fs_t, spoof_only, tcfg);
  CHECK_THROWS_AS(score_pipeline(&fs_t, fg_c, probe), ContractError);
}

TEST_CASE("checkpoint: lcnn round trip preserves scores and mode tag") {
  fgtest::TempDir dir("lcnn_ckpt");
  fg::Rng rng(47);
  const auto train_set = class_set(rng, 3, 64, 64);
  LcnnModel m = build_lcnn(LcnnArch::desk(64, 64), 53, PipelineMode::kFs);
  TrainRunConfig cfg;
  cfg.epochs = 1;
  cfg.batch = 3;
  train_lcnn(m, train_set, nullptr, cfg);
  save_lcnn(m, dir.file("c.fgt"));
  const LcnnModel loaded = load_lcnn(dir.file("c.fgt"));
  CHECK(loaded.mode == PipelineMode::kFs);
  CHECK(loaded.epochs_seen == m.epochs_seen);
  CHECK(score(loaded, train_set[0].feat).score ==
        score(m, train_set[0].feat).score);
}

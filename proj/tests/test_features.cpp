#include <doctest.h>

#include <cmath>
#include <fstream>

#include "fg/cqt.hpp"
#include "fg/feature_cache.hpp"
#include "support.hpp"

using namespace fg;

namespace {

LpsFeature tagged_feature(int bins, int frames) {
  LpsFeature f;
  f.bins = bins;
  f.frames = frames;
  f.m.resize(static_cast<size_t>(bins) * frames);
  for (int b = 0; b < bins; ++b)
    for (int t = 0; t < frames; ++t) f.at(b, t) = b + 10000.0 * t;
  return f;
}

}  // namespace

TEST_CASE("lps: log-power mapping with floor and top-bin trim") {
  MagMatrix mag;
  mag.bins = 864;
  mag.frames = 3;
  mag.m.assign(static_cast<size_t>(864) * 3, 1.0);
  mag.at(0, 0) = 0.0;
  const LpsFeature f = lps(mag, 1e-10, true, "u1");
  CHECK(f.bins == 863);
  CHECK(f.frames == 3);
  CHECK(f.utterance_id == "u1");
  CHECK(f.at(0, 0) == doctest::Approx(std::log(1e-10)));
  CHECK(f.at(0, 1) == doctest::Approx(0.0));  // log(1^2)
  CHECK(f.at(5, 2) == doctest::Approx(0.0));
}

TEST_CASE("fix_frames: truncate keeps the first frames") {
  const LpsFeature f = tagged_feature(kLpsBins, 300);
  const FixedFeature out = fix_frames(f);
  CHECK(out.bins == kLpsBins);
  CHECK(out.frames == 256);
  for (int t : {0, 100, 255}) CHECK(out.at(7, t) == f.at(7, t));
}

TEST_CASE("fix_frames: pad repeats the final frame") {
  const LpsFeature f = tagged_feature(kLpsBins, 100);
  const FixedFeature out = fix_frames(f);
  for (int t = 100; t < 256; ++t)
    for (int b : {0, 431, 862}) CHECK(out.at(b, t) == f.at(b, 99));
  for (int t = 0; t < 100; ++t) CHECK(out.at(3, t) == f.at(3, t));
}

TEST_CASE("fix_frames: exact length is the identity, zero frames rejected") {
  const LpsFeature f = tagged_feature(kLpsBins, 256);
  const FixedFeature out = fix_frames(f);
  for (size_t i = 0; i < f.m.size(); i += 2477) CHECK(out.m[i] == f.m[i]);
  LpsFeature empty;
  empty.bins = kLpsBins;
  empty.frames = 0;
  CHECK_THROWS_AS(fix_frames(empty), ContractError);
}

TEST_CASE("fix_frames: every input length 1..600 yields exactly 863x256") {
  for (int len = 1; len <= 600; ++len) {
    const LpsFeature f = tagged_feature(kLpsBins, len);
    const FixedFeature out = fix_frames(f);
    REQUIRE(out.bins == 863);
    REQUIRE(out.frames == 256);
    const int copy = std::min(len, 256);
    REQUIRE(out.at(13, copy - 1) == f.at(13, copy - 1));
    if (len < 256) REQUIRE(out.at(13, 255) == f.at(13, len - 1));
  }
}

TEST_CASE("norm stats: single-feature standardization and round trip") {
  fg::Rng rng(12);
  FixedFeature f;
  f.bins = 8;
  f.frames = 32;
  f.m = fgtest::random_values(rng, 8 * 32, -5.0, 5.0);
  for (int t = 0; t < 32; ++t) f.at(3, t) = 2.5;  // constant bin

  const NormStats stats = compute_stats({f}, "unit");
  const FixedFeature z = apply_stats(f, stats);
  for (int b = 0; b < 8; ++b) {
    double s = 0.0, s2 = 0.0;
    for (int t = 0; t < 32; ++t) {
      s += z.at(b, t);
      s2 += z.at(b, t) * z.at(b, t);
    }
    const double mean = s / 32.0;
    CHECK(std::abs(mean) < 1e-9);
    if (b == 3) {
      for (int t = 0; t < 32; ++t) CHECK(z.at(3, t) == 0.0);  // clamped stddev
    } else {
      CHECK(s2 / 32.0 == doctest::Approx(1.0).epsilon(1e-9));
    }
  }

  const FixedFeature back = unapply_stats(z, stats);
  for (size_t i = 0; i < f.m.size(); ++i)
    CHECK(back.m[i] == doctest::Approx(f.m[i]).epsilon(1e-6));

  CHECK_THROWS_AS(compute_stats({}, "x"), ContractError);
}

TEST_CASE("feature cache round trip and format rejection") {
  fgtest::TempDir dir("lps");
  fg::Rng rng(14);
  FixedFeature f;
  f.utterance_id = "utt_42";
  f.bins = 13;
  f.frames = 7;
  f.m = fgtest::random_values(rng, 13 * 7);
  write_feature_cache(dir.file("a.lps"), f);
  const FixedFeature back = read_feature_cache(dir.file("a.lps"));
  CHECK(back.utterance_id == "utt_42");
  CHECK(back.bins == 13);
  CHECK(back.frames == 7);
  for (size_t i = 0; i < f.m.size(); ++i)
    CHECK(back.m[i] == doctest::Approx(f.m[i]).epsilon(1e-6));  // f32 storage

  std::ofstream os(dir.file("bad.lps"), std::ios::binary);
  os << "XXXX1234";
  os.close();
  CHECK_THROWS_AS(read_feature_cache(dir.file("bad.lps")), FormatError);
}

TEST_CASE("norm stats io round trip") {
  fgtest::TempDir dir("stats");
  NormStats stats;
  stats.source = "train-bonafide";
  stats.mean = {1.0, -2.0, 0.25};
  stats.stddev = {0.5, 1.5, 2.0};
  write_norm_stats(dir.file("s.json"), stats);
  const NormStats back = read_norm_stats(dir.file("s.json"));
  CHECK(back.source == stats.source);
  CHECK(back.mean == stats.mean);
  CHECK(back.stddev == stats.stddev);
}

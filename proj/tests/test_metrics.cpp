#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>

#include "fg/metrics.hpp"
#include "metric_oracles.hpp"
#include "support.hpp"

using namespace fg;
using fgtest::brute_force_eer;
using fgtest::brute_force_min_tdcf;
using fgtest::random_trials;
using fgtest::rates_at;

TEST_CASE("det_curve: separable, degenerate, and invariant shapes") {
  std::vector<Trial> sep{{"b", Key::kBonafide, 1.0}, {"s", Key::kSpoof, 0.0}};
  const DetCurve c = det_curve(sep);
  bool perfect = false;
  for (size_t i = 0; i < c.thresholds.size(); ++i)
    if (c.p_miss[i] == 0.0 && c.p_fa[i] == 0.0) perfect = true;
  CHECK(perfect);

  std::vector<Trial> same{{"b", Key::kBonafide, 0.5}, {"s", Key::kSpoof, 0.5}};
  const DetCurve c2 = det_curve(same);
  for (size_t i = 0; i < c2.thresholds.size(); ++i) {
    const bool a = c2.p_miss[i] == 0.0 && c2.p_fa[i] == 1.0;
    const bool b = c2.p_miss[i] == 1.0 && c2.p_fa[i] == 0.0;
    CHECK((a || b));
  }

  std::vector<Trial> single{{"b", Key::kBonafide, 1.0}};
  CHECK_THROWS_AS(det_curve(single), ContractError);
}

TEST_CASE("det_curve: monotone and equal to brute-force counting") {
  fg::Rng rng(41);
  const auto trials = random_trials(rng, 25, 25);
  const DetCurve c = det_curve(trials);
  for (size_t i = 1; i < c.thresholds.size(); ++i) {
    CHECK(c.p_miss[i] >= c.p_miss[i - 1]);
    CHECK(c.p_fa[i] <= c.p_fa[i - 1]);
  }
  for (size_t i = 0; i + 1 < c.thresholds.size(); ++i) {  // skip guard point
    const auto [pm, pf] = rates_at(trials, c.thresholds[i]);
    CHECK(c.p_miss[i] == pm);
    CHECK(c.p_fa[i] == pf);
  }
}

TEST_CASE("eer: perfect separation, inversion, and a hand-computed crossing") {
  std::vector<Trial> perfect{{"b1", Key::kBonafide, 0.9}, {"b2", Key::kBonafide, 0.8},
                             {"s1", Key::kSpoof, 0.1}, {"s2", Key::kSpoof, 0.2}};
  CHECK(compute_eer(perfect).eer == doctest::Approx(0.0));

  std::vector<Trial> inverted{{"b1", Key::kBonafide, 0.1}, {"b2", Key::kBonafide, 0.2},
                              {"s1", Key::kSpoof, 0.8}, {"s2", Key::kSpoof, 0.9}};
  CHECK(compute_eer(inverted).eer == doctest::Approx(1.0));

  std::vector<Trial> mixed{{"b1", Key::kBonafide, 0.6}, {"b2", Key::kBonafide, 0.4},
                           {"b3", Key::kBonafide, 0.8}, {"s1", Key::kSpoof, 0.5},
                           {"s2", Key::kSpoof, 0.3}, {"s3", Key::kSpoof, 0.7}};
  const EerResult r = compute_eer(mixed);
  CHECK(r.eer == doctest::Approx(brute_force_eer(mixed)).epsilon(1e-12));
  CHECK(r.eer == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("eer and min t-DCF match brute force on 200 random trial sets") {
  fg::Rng rng(42);
  TdcfParams params;
  for (int trial = 0; trial < 200; ++trial) {
    const int nb = 2 + static_cast<int>(rng.uniform_int(40));
    const int ns = 2 + static_cast<int>(rng.uniform_int(40));
    const int levels = trial % 3 == 0 ? 2 + static_cast<int>(rng.uniform_int(6)) : 0;
    const auto trials = random_trials(rng, nb, ns, levels);
    CHECK(std::abs(compute_eer(trials).eer - brute_force_eer(trials)) < 1e-12);
    CHECK(std::abs(min_tdcf(trials, params).min_tdcf -
                   brute_force_min_tdcf(trials, params)) < 1e-12);
  }
}

TEST_CASE("min t-DCF: perfect CM scores 0 and a constant CM scores exactly 1") {
  TdcfParams params;
  std::vector<Trial> perfect{{"b", Key::kBonafide, 2.0}, {"s", Key::kSpoof, -2.0}};
  CHECK(min_tdcf(perfect, params).min_tdcf == 0.0);

  std::vector<Trial> constant{{"b1", Key::kBonafide, 0.0}, {"b2", Key::kBonafide, 0.0},
                              {"s1", Key::kSpoof, 0.0}, {"s2", Key::kSpoof, 0.0}};
  CHECK(min_tdcf(constant, params).min_tdcf == 1.0);
}

TEST_CASE("min t-DCF: degenerate tandem costs are parameter errors") {
  TdcfParams params;
  params.p_miss_asv = 1.0;  // C1 goes non-positive
  std::vector<Trial> t{{"b", Key::kBonafide, 1.0}, {"s", Key::kSpoof, 0.0}};
  CHECK_THROWS_AS(min_tdcf(t, params), ConfigError);
  TdcfParams bad;
  bad.pi_tar = 0.5;  // priors no longer sum to 1
  CHECK_THROWS_AS(min_tdcf(t, bad), ConfigError);
}

TEST_CASE("metrics depend only on rank order of the scores") {
  fg::Rng rng(43);
  TdcfParams params;
  for (int trial = 0; trial < 20; ++trial) {
    const auto trials = random_trials(rng, 15, 20, trial % 2 ? 4 : 0);
    std::vector<Trial> warped = trials;
    for (auto& t : warped) t.score = std::exp(0.7 * t.score) + 3.0;  // monotone
    CHECK(compute_eer(trials).eer ==
          doctest::Approx(compute_eer(warped).eer).epsilon(1e-13));
    CHECK(min_tdcf(trials, params).min_tdcf ==
          doctest::Approx(min_tdcf(warped, params).min_tdcf).epsilon(1e-13));
  }
}

TEST_CASE("label-swap duality: negate scores and swap keys keeps the EER") {
  fg::Rng rng(44);
  for (int trial = 0; trial < 30; ++trial) {
    const auto trials = random_trials(rng, 12, 9, trial % 2 ? 3 : 0);
    std::vector<Trial> swapped;
    for (const auto& t : trials)
      swapped.push_back({t.utterance_id,
                         t.key == Key::kBonafide ? Key::kSpoof : Key::kBonafide,
                         -t.score});
    CHECK(std::abs(compute_eer(trials).eer - compute_eer(swapped).eer) < 1e-12);
  }
}

TEST_CASE("score files: round trip, parse errors with line numbers, empty file") {
  fgtest::TempDir dir("scores");
  fg::Rng rng(45);
  const auto trials = random_trials(rng, 50, 50);
  write_scores(trials, dir.file("s.txt"));
  const auto back = read_scores(dir.file("s.txt"));
  REQUIRE(back.size() == trials.size());
  for (size_t i = 0; i < trials.size(); ++i) {
    CHECK(back[i].utterance_id == trials[i].utterance_id);
    CHECK(back[i].key == trials[i].key);
    CHECK(std::abs(back[i].score - trials[i].score) < 1e-9);
  }

  {
    std::ofstream os(dir.file("bad.txt"));
    os << "u1 bonafide 0.5\nu2 spoof\n";
  }
  CHECK_THROWS_WITH_AS(read_scores(dir.file("bad.txt")), doctest::Contains(":2:"),
                       FormatError);

  {
    std::ofstream os(dir.file("badkey.txt"));
    os << "u1 target 0.5\n";
  }
  CHECK_THROWS_AS(read_scores(dir.file("badkey.txt")), FormatError);

  { std::ofstream os(dir.file("empty.txt")); }
  CHECK(read_scores(dir.file("empty.txt")).empty());
}

TEST_CASE("ASV operating point: derived at the ASV EER threshold") {
  // Separable ASV: targets high, nontargets low, spoofs mostly below.
  std::vector<AsvTrial> asv;
  for (int i = 0; i < 10; ++i) asv.push_back({"t", AsvKey::kTarget, 5.0 + 0.1 * i});
  for (int i = 0; i < 10; ++i) asv.push_back({"n", AsvKey::kNontarget, -5.0 - 0.1 * i});
  for (int i = 0; i < 10; ++i)
    asv.push_back({"s", AsvKey::kSpoof, i < 8 ? -1.0 : 6.0});
  TdcfParams p = with_asv_operating_point(TdcfParams{}, asv);
  CHECK(p.p_miss_asv == doctest::Approx(0.0));
  CHECK(p.p_fa_asv == doctest::Approx(0.0));
  CHECK(p.p_miss_spoof_asv == doctest::Approx(0.8));

  std::vector<AsvTrial> no_tar{{"n", AsvKey::kNontarget, 0.0}};
  CHECK_THROWS_AS(with_asv_operating_point(TdcfParams{}, no_tar), ContractError);
}

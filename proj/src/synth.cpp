#include "fg/synth.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <mutex>
#include <numbers>

namespace fg {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

std::mutex& fftw_mutex() {
  static std::mutex m;
  return m;
}

// Dense comb of tones with random phases, rendered as one tile of length
// sample_rate/spacing (every tone completes an integer cycle count, so the
// sum is exactly periodic and cheap to extend). Per-bin spectral levels are
// steady within a clip and vary across clips, which keeps the corpus
// learnable by design.
struct CombTile {
  std::vector<double> samples;
  double at(int64_t i) const { return samples[static_cast<size_t>(i % samples.size())]; }
};

CombTile comb_tile(Rng& rng, int sample_rate, double lo_hz, double hi_hz,
                   double spacing_hz, double tone_amp) {
  const double period_d = sample_rate / spacing_hz;
  const int64_t period = std::llround(period_d);
  if (std::abs(period_d - static_cast<double>(period)) > 1e-9)
    throw ConfigError("synth: comb spacing must divide the sample rate");
  CombTile tile;
  tile.samples.assign(static_cast<size_t>(period), 0.0);
  int n_tones = 0;
  for (double f = lo_hz; f < hi_hz; f += spacing_hz) ++n_tones;
  if (n_tones < 1) throw ConfigError("synth: empty comb band");
  for (double f = lo_hz; f < hi_hz; f += spacing_hz) {
    const double phase = rng.uniform(0.0, kTwoPi);
    for (int64_t i = 0; i < period; ++i)
      tile.samples[static_cast<size_t>(i)] +=
          tone_amp * std::sin(kTwoPi * f * i / sample_rate + phase);
  }
  return tile;
}

// Noise bed covering every constant-Q bin: comb segments whose spacing
// tracks the constant-Q bandwidth (finer grid at low frequency) so no bin
// falls into a spectral gap and onto the log-power floor.
struct NoiseBed {
  std::vector<CombTile> segments;
  double at(int64_t i) const {
    double v = 0.0;
    for (const auto& s : segments) v += s.at(i);
    return v;
  }
};

NoiseBed noise_bed(Rng& rng, int sample_rate, double rms) {
  struct Segment {
    double lo, hi, spacing;
  };
  const double top = sample_rate / 2.0 - 100.0;
  const std::vector<Segment> plan{{10.0, 40.0, 0.25},
                                  {40.0, 160.0, 0.5},
                                  {160.0, 640.0, 2.0},
                                  {640.0, top, 10.0}};
  int total_tones = 0;
  for (const auto& seg : plan)
    for (double f = seg.lo; f < seg.hi; f += seg.spacing) ++total_tones;
  const double tone_amp = rms * std::sqrt(2.0 / total_tones);
  NoiseBed bed;
  for (const auto& seg : plan)
    bed.segments.push_back(comb_tile(rng, sample_rate, seg.lo, seg.hi, seg.spacing, tone_amp));
  return bed;
}

}  // namespace

AudioClip synth_clip(Key key, Rng& rng, const SynthConfig& cfg) {
  const int sr = cfg.sample_rate;
  const double dur = rng.uniform(cfg.min_dur_sec, cfg.max_dur_sec);
  const int64_t n = std::llround(dur * sr);

  // Small fixed f0 inventory: a low-entropy body that desk-scale models can
  // actually learn, with per-clip variety from level, duration, and phase.
  const double f0_set[3] = {130.0, 165.0, 200.0};
  const double f0 = f0_set[rng.uniform_int(3)];
  const double vib_rate = rng.uniform(4.0, 7.0);
  const double vib_depth = 0.003;  // slow, gentle f0 drift
  const double vib_phase = rng.uniform(0.0, kTwoPi);
  const int n_harm = std::min<int>(16, static_cast<int>(3800.0 / f0));

  std::vector<double> amp(n_harm), phase_off(n_harm);
  for (int h = 0; h < n_harm; ++h) {
    amp[h] = 1.0 / static_cast<double>(h + 1);
    phase_off[h] = rng.uniform(0.0, kTwoPi);
  }

  // Noise bed: low-level dither combs across every analysis bin. Phases are
  // frozen corpus-wide (only the level varies per clip), keeping the bed a
  // stable class-shared prototype.
  const double noise_rms = rng.uniform(cfg.noise_sigma_lo, cfg.noise_sigma_hi);
  Rng dither_rng(0xd17e5);
  const NoiseBed dither = noise_bed(dither_rng, sr, noise_rms);

  // Spoof artifact 1: partial phase discontinuities on a fixed schedule
  // (every 0.7 s) with frozen per-jump shifts, another stable class
  // signature.
  std::vector<int64_t> jumps;
  Rng jump_rng(0x7a3b1);
  if (key == Key::kSpoof) {
    for (double t = 0.7; t < dur; t += 0.7) jumps.push_back(std::llround(t * sr));
  }

  // Spoof artifact 2: band-limited buzz. One steady tone per fourth
  // analysis bin of the 9x96 ladder inside the band, snapped onto the 10 Hz
  // grid: a sharp fixed row comb, far above the noise bed.
  CombTile buzz;
  if (key == Key::kSpoof) {
    std::vector<double> tone_freqs;
    const double f_min = sr / 2.0 / 512.0;
    for (int k = 0; k < 864; k += 4) {
      const double fc = f_min * std::exp2(static_cast<double>(k) / 96.0);
      if (fc < cfg.buzz_lo_hz || fc >= cfg.buzz_hi_hz) continue;
      tone_freqs.push_back(std::round(fc / 10.0) * 10.0);
    }
    if (tone_freqs.empty()) throw ConfigError("synth: empty buzz band");
    buzz.samples.assign(static_cast<size_t>(sr / 10), 0.0);
    const double amp = cfg.buzz_rms * std::sqrt(2.0 / static_cast<double>(tone_freqs.size()));
    Rng buzz_rng(0xb422f);  // frozen pattern: the artifact is a class constant
    for (double f : tone_freqs) {
      const double phase = buzz_rng.uniform(0.0, kTwoPi);
      for (size_t i = 0; i < buzz.samples.size(); ++i)
        buzz.samples[i] += amp * std::sin(kTwoPi * f * i / sr + phase);
    }
  }

  AudioClip clip;
  clip.sample_rate = sr;
  clip.samples.resize(static_cast<size_t>(n));
  double base_phase = 0.0;
  size_t jump_idx = 0;
  for (int64_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / sr;
    if (jump_idx < jumps.size() && i == jumps[jump_idx]) {
      ++jump_idx;
      for (int h = 0; h < n_harm; ++h) phase_off[h] += jump_rng.uniform(-0.6, 0.6);
    }
    const double f_inst = f0 * (1.0 + vib_depth * std::sin(kTwoPi * vib_rate * t + vib_phase));
    base_phase += kTwoPi * f_inst / sr;
    double s = 0.0;
    for (int h = 0; h < n_harm; ++h)
      s += amp[h] * std::sin(static_cast<double>(h + 1) * base_phase + phase_off[h]);
    s += dither.at(i);
    if (key == Key::kSpoof) s += buzz.at(i);
    clip.samples[static_cast<size_t>(i)] = s;
  }

  // 50 ms raised-cosine attack/release, then peak normalization to 0.5.
  const int64_t ramp = std::min<int64_t>(n / 2, sr / 20);
  for (int64_t i = 0; i < ramp; ++i) {
    const double w = 0.5 - 0.5 * std::cos(std::numbers::pi * i / static_cast<double>(ramp));
    clip.samples[i] *= w;
    clip.samples[n - 1 - i] *= w;
  }
  double peak = 0.0;
  for (double v : clip.samples) peak = std::max(peak, std::abs(v));
  if (peak > 0.0) {
    const double scale = 0.5 / peak;
    for (auto& v : clip.samples) v *= scale;
  }
  return clip;
}

SynthResult synth_corpus(const std::string& out_dir, const SynthConfig& cfg) {
  if (cfg.n_per_class_per_subset < 1)
    throw ConfigError("synth corpus: n_per_class_per_subset must be >= 1");
  if (cfg.min_dur_sec <= 0.0 || cfg.max_dur_sec < cfg.min_dur_sec)
    throw ConfigError("synth corpus: bad duration range");
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(fs::path(out_dir) / "audio", ec);
  if (ec) throw IoError(str("cannot create '", out_dir, "/audio': ", ec.message()));

  const Rng master(cfg.seed);
  SynthResult result;
  for (Subset subset : {Subset::kTrain, Subset::kDev, Subset::kEval}) {
    for (Key key : {Key::kBonafide, Key::kSpoof}) {
      for (int i = 0; i < cfg.n_per_class_per_subset; ++i) {
        char utt[64];
        std::snprintf(utt, sizeof(utt), "%s_%s_%04d", subset_name(subset),
                      key == Key::kBonafide ? "bona" : "spoof", i);
        Rng clip_rng = master.fork(str(subset_name(subset), "/", key_name(key), "/", i));
        const AudioClip clip = synth_clip(key, clip_rng, cfg);
        const std::string rel = str("audio/", utt, ".wav");
        write_wav((fs::path(out_dir) / rel).string(), clip);
        result.rows.push_back({utt, rel, key, subset, ""});
      }
    }
  }
  result.manifest_path = (fs::path(out_dir) / "manifest.txt").string();
  write_manifest(result.rows, result.manifest_path);
  return result;
}

double band_energy_ratio_db(const AudioClip& clip, double lo_hz, double hi_hz) {
  const int64_t n = static_cast<int64_t>(clip.samples.size());
  if (n < 2) throw ContractError("band_energy_ratio_db: clip too short");
  int64_t L = 1;
  while (L < n) L <<= 1;
  double* in = fftw_alloc_real(static_cast<size_t>(L));
  fftw_complex* out = fftw_alloc_complex(static_cast<size_t>(L / 2) + 1);
  for (int64_t i = 0; i < n; ++i) {
    const double w = 0.5 - 0.5 * std::cos(kTwoPi * i / static_cast<double>(n - 1));
    in[i] = clip.samples[i] * w;
  }
  std::fill(in + n, in + L, 0.0);
  fftw_plan plan;
  {
    std::lock_guard<std::mutex> lock(fftw_mutex());
    plan = fftw_plan_dft_r2c_1d(static_cast<int>(L), in, out, FFTW_ESTIMATE);
  }
  fftw_execute(plan);
  {
    std::lock_guard<std::mutex> lock(fftw_mutex());
    fftw_destroy_plan(plan);
  }
  double total = 0.0, band = 0.0;
  for (int64_t j = 0; j <= L / 2; ++j) {
    const double p = out[j][0] * out[j][0] + out[j][1] * out[j][1];
    total += p;
    const double f = static_cast<double>(j) * clip.sample_rate / static_cast<double>(L);
    if (f >= lo_hz && f <= hi_hz) band += p;
  }
  fftw_free(in);
  fftw_free(out);
  if (total <= 0.0) throw ContractError("band_energy_ratio_db: silent clip");
  const double floor_ratio = 1e-300;
  return 10.0 * std::log10(std::max(band / total, floor_ratio));
}

}  // namespace fg

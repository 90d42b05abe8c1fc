#ifndef FG_SYNTH_HPP
#define FG_SYNTH_HPP

#include <string>
#include <vector>

#include "fg/audio_io.hpp"
#include "fg/manifest.hpp"
#include "fg/rng.hpp"

namespace fg {

// Seeded toy-corpus generator. Bonafide clips are vibrato harmonic stacks
// over a low noise floor; spoof clips share the harmonic body and add two
// artifacts: amplitude-modulated narrowband buzz inside
// [buzz_lo_hz, buzz_hi_hz] and periodic phase discontinuities. See the
// project docs for the generator equations (versioned with the code so
// test expectations stay stable).
struct SynthConfig {
  int sample_rate = 16000;
  int n_per_class_per_subset = 10;
  uint64_t seed = 0;
  double min_dur_sec = 2.0;
  double max_dur_sec = 4.2;      // > 256 frames at hop 256, so both framing
                                 // directions occur in a corpus
  double buzz_lo_hz = 3000.0;
  double buzz_hi_hz = 7900.0;
  // Absolute waveform levels; the harmonic part is normalized separately, so
  // the buzz level is identical across spoof clips.
  double buzz_rms = 0.1;
  double noise_sigma_lo = 0.014;
  double noise_sigma_hi = 0.02;
};

AudioClip synth_clip(Key key, Rng& rng, const SynthConfig& cfg);

struct SynthResult {
  std::string manifest_path;
  std::vector<ManifestRow> rows;
};

// Writes <out_dir>/audio/*.wav and <out_dir>/manifest.txt; byte-identical
// for identical (config, seed).
SynthResult synth_corpus(const std::string& out_dir, const SynthConfig& cfg);

// Energy inside [lo_hz, hi_hz] relative to total energy, in dB; used to
// verify the generated classes are separable in the artifact band.
double band_energy_ratio_db(const AudioClip& clip, double lo_hz, double hi_hz);

}  // namespace fg

#endif  // FG_SYNTH_HPP

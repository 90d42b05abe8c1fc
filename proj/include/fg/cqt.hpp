#ifndef FG_CQT_HPP
#define FG_CQT_HPP

#include <string>
#include <vector>

#include "fg/audio_io.hpp"
#include "fg/common.hpp"

namespace fg {

constexpr int kLpsBins = 863;
constexpr int kLpsFrames = 256;

struct CqtConfig {
  int octaves = 9;
  int bins_per_octave = 96;
  double f_max = 0.0;  // 0 selects Nyquist
  int hop = 256;
  double q_scale = 1.0;
  // Fast-path tuning; results stay within 1e-6 of the direct summation.
  int direct_threshold = 24576;  // kernels at or below run in the time domain
  double spectral_tol = 1e-7;   // support cutoff for spectral-domain kernels

  int n_bins() const { return octaves * bins_per_octave; }
};

void validate_cqt_config(const CqtConfig& cfg, int sample_rate);

double cqt_f_min(const CqtConfig& cfg, int sample_rate);
// Geometric bin ladder; f(k + bins_per_octave) / f(k) == 2 holds exactly.
double cqt_center_frequency(const CqtConfig& cfg, int sample_rate, int k);
double cqt_quality(const CqtConfig& cfg);
int cqt_kernel_length(const CqtConfig& cfg, int sample_rate, int k);
int cqt_frame_count(const CqtConfig& cfg, int64_t n_samples);

// Row-major [bins x frames] magnitude matrix; row 0 is the lowest bin.
struct MagMatrix {
  int bins = 0;
  int frames = 0;
  std::vector<double> m;

  double& at(int b, int t) { return m[static_cast<size_t>(b) * frames + t]; }
  double at(int b, int t) const { return m[static_cast<size_t>(b) * frames + t]; }
};

// Reference transform: for every bin and frame, the inner product of the
// Hann-windowed complex exponential with the signal centered at t*hop,
// normalized by the window sum. The signal is taken as zero outside its
// extent, so kernels overhanging the edges see zeros.
MagMatrix cqt_direct(const AudioClip& clip, const CqtConfig& cfg);

// Production transform: identical definition, computed through one FFT of
// the padded signal plus sparse spectral kernels for long (low-frequency)
// bins and time-domain kernels for short ones.
MagMatrix cqt(const AudioClip& clip, const CqtConfig& cfg);

// --- log-power features -----------------------------------------------------

struct LpsFeature {
  std::string utterance_id;
  int bins = 0;
  int frames = 0;
  std::vector<double> m;  // row-major [bins x frames]

  double& at(int b, int t) { return m[static_cast<size_t>(b) * frames + t]; }
  double at(int b, int t) const { return m[static_cast<size_t>(b) * frames + t]; }
};

struct FixedFeature {
  std::string utterance_id;
  int bins = kLpsBins;
  int frames = kLpsFrames;
  std::vector<double> m;

  double& at(int b, int t) { return m[static_cast<size_t>(b) * frames + t]; }
  double at(int b, int t) const { return m[static_cast<size_t>(b) * frames + t]; }
};

// log(max(mag^2, eps_floor)); drop_top_bin removes the highest-frequency row
// (864 -> 863 with the default ladder).
LpsFeature lps(const MagMatrix& mag, double eps_floor = 1e-10,
               bool drop_top_bin = true, const std::string& utterance_id = "");

// Frame-count fixing: longer inputs keep their first `target` frames, shorter
// ones are right-filled with copies of the final frame.
FixedFeature fix_frames(const LpsFeature& feat, int target = kLpsFrames);

struct NormStats {
  std::vector<double> mean;
  std::vector<double> stddev;  // clamped to >= kStdFloor
  std::string source;          // subset tag, e.g. "train-bonafide"
};

constexpr double kStdFloor = 1e-3;

NormStats compute_stats(const std::vector<FixedFeature>& features,
                        const std::string& source_tag = "");
FixedFeature apply_stats(const FixedFeature& feat, const NormStats& stats);
FixedFeature unapply_stats(const FixedFeature& feat, const NormStats& stats);

}  // namespace fg

#endif  // FG_CQT_HPP

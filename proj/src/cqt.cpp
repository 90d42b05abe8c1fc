#include "fg/cqt.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <mutex>
#include <numbers>

namespace fg {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

std::mutex& fftw_mutex() {
  static std::mutex m;
  return m;
}

double hann(int m, int n) {
  if (n <= 1) return 1.0;
  return 0.5 - 0.5 * std::cos(kTwoPi * m / static_cast<double>(n - 1));
}

// Hann-windowed exponential kernel in the time domain: kr + i*ki with
// kr(m) = w(m) cos(theta m), ki(m) = w(m) sin(theta m). Returns the window
// sum. Incremental rotation with periodic exact refresh keeps the cost at a
// few flops per sample.
double build_kernel(double theta, int n, std::vector<double>& kr,
                    std::vector<double>& ki) {
  kr.resize(n);
  ki.resize(n);
  const double cr = std::cos(theta), ci = std::sin(theta);
  double c = 1.0, s = 0.0, wsum = 0.0;
  for (int m = 0; m < n; ++m) {
    if ((m & 255) == 0) {  // refresh against drift
      c = std::cos(theta * m);
      s = std::sin(theta * m);
    }
    const double w = hann(m, n);
    wsum += w;
    kr[m] = w * c;
    ki[m] = w * s;
    const double cn = c * cr - s * ci;
    s = s * cr + c * ci;
    c = cn;
  }
  return wsum;
}

// One bin of the reference transform over all frames.
void direct_bin(const double* x, int64_t len, int hop, int frames,
                const std::vector<double>& kr, const std::vector<double>& ki,
                double wsum, double* out_row) {
  const int n = static_cast<int>(kr.size());
  for (int t = 0; t < frames; ++t) {
    const int64_t s0 = static_cast<int64_t>(t) * hop - n / 2;
    const int64_t lo = std::max<int64_t>(0, s0);
    const int64_t hi = std::min<int64_t>(len, s0 + n);
    double re = 0.0, im = 0.0;
    for (int64_t i = lo; i < hi; ++i) {
      const int m = static_cast<int>(i - s0);
      re += x[i] * kr[m];
      im -= x[i] * ki[m];
    }
    out_row[t] = std::sqrt(re * re + im * im) / wsum;
  }
}

// Dirichlet-style geometric sum D(phi) = sum_{m<n} e^{-i phi m}.
std::complex<double> dirichlet(double phi, int n) {
  const double half = 0.5 * phi;
  if (std::abs(std::sin(half)) < 1e-12) {
    // phi at a multiple of 2*pi: all terms align.
    return std::polar(static_cast<double>(n), -half * (n - 1));
  }
  const double mag = std::sin(n * half) / std::sin(half);
  return std::polar(mag, -half * (n - 1));
}

// Closed-form spectrum of the Hann-windowed exponential at digital frequency
// omega (radians/sample): the window is a three-term exponential sum, so the
// spectrum is a weighted sum of three Dirichlet kernels.
std::complex<double> kernel_spectrum(double omega, double theta, int n) {
  const double phi = omega - theta;
  if (n <= 1) return std::complex<double>(1.0, 0.0);
  const double alpha = kTwoPi / static_cast<double>(n - 1);
  return 0.5 * dirichlet(phi, n) - 0.25 * dirichlet(phi - alpha, n) -
         0.25 * dirichlet(phi + alpha, n);
}

int64_t floor_mod(int64_t a, int64_t m) {
  int64_t r = a % m;
  return r < 0 ? r + m : r;
}

}  // namespace

void validate_cqt_config(const CqtConfig& cfg, int sample_rate) {
  if (sample_rate <= 0) throw ConfigError("cqt: sample rate must be positive");
  if (cfg.octaves < 1 || cfg.bins_per_octave < 1 || cfg.n_bins() < 1)
    throw ConfigError("cqt: octaves and bins_per_octave must be >= 1");
  if (cfg.hop < 1) throw ConfigError(str("cqt: hop must be >= 1, got ", cfg.hop));
  if (cfg.q_scale <= 0.0) throw ConfigError("cqt: q_scale must be positive");
  const double fmax = cfg.f_max > 0.0 ? cfg.f_max : sample_rate / 2.0;
  if (fmax > sample_rate / 2.0 + 1e-9)
    throw ConfigError(str("cqt: f_max ", fmax, " Hz exceeds Nyquist ",
                          sample_rate / 2.0, " Hz"));
  if (cqt_f_min(cfg, sample_rate) <= 0.0)
    throw ConfigError("cqt: f_min must be positive");
}

double cqt_f_min(const CqtConfig& cfg, int sample_rate) {
  const double fmax = cfg.f_max > 0.0 ? cfg.f_max : sample_rate / 2.0;
  return std::ldexp(fmax, -cfg.octaves);
}

double cqt_center_frequency(const CqtConfig& cfg, int sample_rate, int k) {
  const int b = cfg.bins_per_octave;
  // ldexp keeps octave doubling exact: f(k+b)/f(k) == 2 bit-for-bit.
  const double frac = std::exp2(static_cast<double>(k % b) / b);
  return std::ldexp(cqt_f_min(cfg, sample_rate) * frac, k / b);
}

double cqt_quality(const CqtConfig& cfg) {
  return cfg.q_scale / (std::exp2(1.0 / cfg.bins_per_octave) - 1.0);
}

int cqt_kernel_length(const CqtConfig& cfg, int sample_rate, int k) {
  const double f = cqt_center_frequency(cfg, sample_rate, k);
  return static_cast<int>(std::ceil(cqt_quality(cfg) * sample_rate / f));
}

int cqt_frame_count(const CqtConfig& cfg, int64_t n_samples) {
  if (n_samples < 1) throw ContractError("cqt: empty signal");
  return static_cast<int>(1 + (n_samples - 1) / cfg.hop);
}

MagMatrix cqt_direct(const AudioClip& clip, const CqtConfig& cfg) {
  validate_cqt_config(cfg, clip.sample_rate);
  if (clip.samples.empty()) throw ContractError("cqt: empty clip");
  const int64_t len = static_cast<int64_t>(clip.samples.size());
  const int frames = cqt_frame_count(cfg, len);
  const int bins = cfg.n_bins();

  MagMatrix out;
  out.bins = bins;
  out.frames = frames;
  out.m.assign(static_cast<size_t>(bins) * frames, 0.0);

#pragma omp parallel for schedule(dynamic)
  for (int k = 0; k < bins; ++k) {
    const double theta = kTwoPi * cqt_center_frequency(cfg, clip.sample_rate, k) /
                         clip.sample_rate;
    const int n = cqt_kernel_length(cfg, clip.sample_rate, k);
    std::vector<double> kr, ki;
    const double wsum = build_kernel(theta, n, kr, ki);
    direct_bin(clip.samples.data(), len, cfg.hop, frames, kr, ki, wsum,
               out.m.data() + static_cast<size_t>(k) * frames);
  }
  return out;
}

MagMatrix cqt(const AudioClip& clip, const CqtConfig& cfg) {
  validate_cqt_config(cfg, clip.sample_rate);
  if (clip.samples.empty()) throw ContractError("cqt: empty clip");
  const int64_t len = static_cast<int64_t>(clip.samples.size());
  const int frames = cqt_frame_count(cfg, len);
  const int bins = cfg.n_bins();
  const int n_max = cqt_kernel_length(cfg, clip.sample_rate, 0);

  // Padded length: linear correlation must not wrap for any kernel.
  int64_t L = 1;
  while (L < len + n_max + 1) L <<= 1;
  const int64_t half = L / 2;

  std::vector<std::complex<double>> spec(static_cast<size_t>(half) + 1);
  {
    double* in = fftw_alloc_real(static_cast<size_t>(L));
    fftw_complex* fout = fftw_alloc_complex(static_cast<size_t>(half) + 1);
    std::copy(clip.samples.begin(), clip.samples.end(), in);
    std::fill(in + len, in + L, 0.0);
    fftw_plan plan;
    {
      std::lock_guard<std::mutex> lock(fftw_mutex());
      plan = fftw_plan_dft_r2c_1d(static_cast<int>(L), in, fout, FFTW_ESTIMATE);
    }
    fftw_execute(plan);
    {
      std::lock_guard<std::mutex> lock(fftw_mutex());
      fftw_destroy_plan(plan);
    }
    for (int64_t j = 0; j <= half; ++j)
      spec[static_cast<size_t>(j)] = {fout[j][0], fout[j][1]};
    fftw_free(in);
    fftw_free(fout);
  }
  // Hermitian fetch for any integer frequency index.
  auto spec_at = [&](int64_t j) -> std::complex<double> {
    const int64_t jj = floor_mod(j, L);
    return jj <= half ? spec[static_cast<size_t>(jj)]
                      : std::conj(spec[static_cast<size_t>(L - jj)]);
  };

  MagMatrix out;
  out.bins = bins;
  out.frames = frames;
  out.m.assign(static_cast<size_t>(bins) * frames, 0.0);

#pragma omp parallel for schedule(dynamic)
  for (int k = 0; k < bins; ++k) {
    const double fc = cqt_center_frequency(cfg, clip.sample_rate, k);
    const double theta = kTwoPi * fc / clip.sample_rate;
    const int n = cqt_kernel_length(cfg, clip.sample_rate, k);
    double* row = out.m.data() + static_cast<size_t>(k) * frames;

    if (n <= cfg.direct_threshold) {
      std::vector<double> kr, ki;
      const double wsum = build_kernel(theta, n, kr, ki);
      direct_bin(clip.samples.data(), len, cfg.hop, frames, kr, ki, wsum, row);
      continue;
    }

    // Sparse spectral support around the bin center. The Hann spectrum decays
    // fast, so the scan stops once a run of points falls below the cutoff.
    double wsum_exact = 0.0;
    for (int m = 0; m < n; ++m) wsum_exact += hann(m, n);
    const double cutoff = cfg.spectral_tol * wsum_exact;
    const int64_t j_center = static_cast<int64_t>(std::llround(fc / clip.sample_rate * L));

    std::vector<int64_t> idx;
    std::vector<std::complex<double>> coef;  // X(j) * conj(G(j))
    auto push = [&](int64_t j) -> bool {
      const std::complex<double> g =
          kernel_spectrum(kTwoPi * j / static_cast<double>(L), theta, n);
      if (std::abs(g) < cutoff) return false;
      idx.push_back(j);
      coef.push_back(spec_at(j) * std::conj(g));
      return true;
    };
    constexpr int kRun = 24;  // tolerated run of sub-cutoff points (envelope nulls)
    for (int dir = 0; dir < 2; ++dir) {
      int below = 0;
      for (int64_t stepi = (dir == 0 ? 0 : 1);; ++stepi) {
        const int64_t j = dir == 0 ? j_center + stepi : j_center - stepi;
        if (push(j))
          below = 0;
        else if (++below >= kRun)
          break;
        if (stepi > L) break;  // safety, never reached in practice
      }
    }

    const double norm = 1.0 / (static_cast<double>(L) * wsum_exact);
    for (int t = 0; t < frames; ++t) {
      const int64_t s0 = static_cast<int64_t>(t) * cfg.hop - n / 2;
      std::complex<double> acc(0.0, 0.0);
      // Incremental twiddle e^{2*pi*i*j*s0/L}, refreshed periodically.
      const std::complex<double> step =
          std::polar(1.0, kTwoPi * static_cast<double>(floor_mod(s0, L)) / L);
      std::complex<double> tw(0.0, 0.0);
      for (size_t i = 0; i < idx.size(); ++i) {
        if ((i & 511) == 0) {
          const int64_t ang = floor_mod(idx[i] * s0, L);
          tw = std::polar(1.0, kTwoPi * static_cast<double>(ang) / L);
        } else if (i > 0 && idx[i] == idx[i - 1] + 1) {
          tw *= step;
        } else {
          const int64_t ang = floor_mod(idx[i] * s0, L);
          tw = std::polar(1.0, kTwoPi * static_cast<double>(ang) / L);
        }
        acc += coef[i] * tw;
      }
      row[t] = std::abs(acc) * norm;
    }
  }
  return out;
}

LpsFeature lps(const MagMatrix& mag, double eps_floor, bool drop_top_bin,
               const std::string& utterance_id) {
  if (eps_floor <= 0.0) throw ConfigError("lps: eps_floor must be positive");
  if (mag.bins < 1 || mag.frames < 1) throw ContractError("lps: empty magnitude matrix");
  const int out_bins = drop_top_bin ? mag.bins - 1 : mag.bins;
  if (out_bins < 1) throw ContractError("lps: nothing left after bin trim");
  LpsFeature f;
  f.utterance_id = utterance_id;
  f.bins = out_bins;
  f.frames = mag.frames;
  f.m.resize(static_cast<size_t>(out_bins) * mag.frames);
  for (int b = 0; b < out_bins; ++b) {
    for (int t = 0; t < mag.frames; ++t) {
      const double v = mag.at(b, t);
      f.at(b, t) = std::log(std::max(v * v, eps_floor));
    }
  }
  return f;
}

FixedFeature fix_frames(const LpsFeature& feat, int target) {
  if (target < 1) throw ConfigError("fix_frames: target must be >= 1");
  if (feat.frames < 1) throw ContractError("fix_frames: feature has no frames");
  FixedFeature out;
  out.utterance_id = feat.utterance_id;
  out.bins = feat.bins;
  out.frames = target;
  out.m.resize(static_cast<size_t>(feat.bins) * target);
  const int copy = std::min(feat.frames, target);
  for (int b = 0; b < feat.bins; ++b) {
    for (int t = 0; t < copy; ++t) out.at(b, t) = feat.at(b, t);
    const double last = feat.at(b, feat.frames - 1);
    for (int t = copy; t < target; ++t) out.at(b, t) = last;
  }
  return out;
}

NormStats compute_stats(const std::vector<FixedFeature>& features,
                        const std::string& source_tag) {
  if (features.empty()) throw ContractError("compute_stats: empty feature set");
  const int bins = features.front().bins;
  const int frames = features.front().frames;
  for (const auto& f : features) {
    if (f.bins != bins || f.frames != frames)
      throw ShapeError(str("compute_stats: feature '", f.utterance_id,
                           "' has shape ", f.bins, "x", f.frames, ", expected ",
                           bins, "x", frames));
  }
  NormStats stats;
  stats.source = source_tag;
  stats.mean.assign(bins, 0.0);
  stats.stddev.assign(bins, 0.0);
  const double count = static_cast<double>(features.size()) * frames;
  for (int b = 0; b < bins; ++b) {
    double s = 0.0, s2 = 0.0;
    for (const auto& f : features) {
      for (int t = 0; t < frames; ++t) {
        const double v = f.at(b, t);
        s += v;
        s2 += v * v;
      }
    }
    const double mu = s / count;
    double var = s2 / count - mu * mu;
    if (var < 0.0) var = 0.0;
    stats.mean[b] = mu;
    stats.stddev[b] = std::max(std::sqrt(var), kStdFloor);
  }
  return stats;
}

FixedFeature apply_stats(const FixedFeature& feat, const NormStats& stats) {
  if (static_cast<int>(stats.mean.size()) != feat.bins)
    throw ShapeError(str("apply_stats: stats track ", stats.mean.size(),
                         " bins, feature has ", feat.bins));
  FixedFeature out = feat;
  for (int b = 0; b < feat.bins; ++b) {
    const double mu = stats.mean[b], sd = stats.stddev[b];
    for (int t = 0; t < feat.frames; ++t) out.at(b, t) = (feat.at(b, t) - mu) / sd;
  }
  return out;
}

FixedFeature unapply_stats(const FixedFeature& feat, const NormStats& stats) {
  if (static_cast<int>(stats.mean.size()) != feat.bins)
    throw ShapeError(str("unapply_stats: stats track ", stats.mean.size(),
                         " bins, feature has ", feat.bins));
  FixedFeature out = feat;
  for (int b = 0; b < feat.bins; ++b) {
    const double mu = stats.mean[b], sd = stats.stddev[b];
    for (int t = 0; t < feat.frames; ++t) out.at(b, t) = feat.at(b, t) * sd + mu;
  }
  return out;
}

}  // namespace fg

#ifndef FG_METRICS_HPP
#define FG_METRICS_HPP

#include <string>
#include <vector>

#include "fg/common.hpp"

namespace fg {

enum class Key { kBonafide, kSpoof };

const char* key_name(Key k);
Key key_from_name(const std::string& name);

struct Trial {
  std::string utterance_id;
  Key key = Key::kBonafide;
  double score = 0.0;  // higher means more bonafide
};

// Step-function DET sweep evaluated at every distinct score plus one guard
// threshold above the maximum. The tie convention is fixed: a trial with
// score == threshold is accepted as bonafide, so
//   p_miss(t) = fraction of bonafide scores <  t   (non-decreasing)
//   p_fa(t)   = fraction of spoof    scores >= t   (non-increasing).
struct DetCurve {
  std::vector<double> thresholds;
  std::vector<double> p_miss;
  std::vector<double> p_fa;
};

DetCurve det_curve(const std::vector<Trial>& trials);

struct EerResult {
  double eer = 0.0;
  double threshold = 0.0;
};

// Crossing of p_miss and p_fa with linear interpolation between adjacent DET
// points; depends only on the rank order of the scores.
EerResult compute_eer(const std::vector<Trial>& trials);

struct TdcfParams {
  // ASVspoof 2019 evaluation convention; externally sourced defaults.
  double pi_tar = 0.9405;
  double pi_non = 0.0095;
  double pi_spoof = 0.05;
  double c_miss_asv = 1.0;
  double c_fa_asv = 10.0;
  double c_miss_cm = 1.0;
  double c_fa_cm = 10.0;
  // ASV operating point: given directly, or derived from an ASV score file
  // at its EER threshold (see with_asv_operating_point).
  double p_fa_asv = 0.01;
  double p_miss_asv = 0.01;
  double p_miss_spoof_asv = 0.05;
};

void validate_tdcf_params(const TdcfParams& p);

struct TdcfResult {
  double min_tdcf = 0.0;
  double threshold = 0.0;
};

// Normalized minimum tandem detection cost:
//   C1 = pi_tar*(C_miss_cm - C_miss_asv*P_miss_asv) - pi_non*C_fa_asv*P_fa_asv
//   C2 = C_fa_cm*pi_spoof*(1 - P_miss_spoof_asv)
//   tdcf_norm(t) = (C1*p_miss_cm(t) + C2*p_fa_cm(t)) / min(C1, C2)
// minimized over the DET sweep. C1 <= 0 or C2 <= 0 is a parameter error.
TdcfResult min_tdcf(const std::vector<Trial>& trials, const TdcfParams& params);

enum class AsvKey { kTarget, kNontarget, kSpoof };

struct AsvTrial {
  std::string trial_id;
  AsvKey key = AsvKey::kTarget;
  double score = 0.0;
};

// Fixes the ASV threshold at its EER over target/non-target trials, then
// measures the three operating-point rates there.
TdcfParams with_asv_operating_point(TdcfParams base,
                                    const std::vector<AsvTrial>& asv_trials);

// CM score file: one `utterance_id key score` line per trial, key in
// {bonafide, spoof}; scores are written with 12 significant digits.
std::vector<Trial> read_scores(const std::string& path);
void write_scores(const std::vector<Trial>& trials, const std::string& path);

// ASV score file: `trial_id key score` with key in {target, nontarget, spoof}.
std::vector<AsvTrial> read_asv_scores(const std::string& path);

}  // namespace fg

#endif  // FG_METRICS_HPP

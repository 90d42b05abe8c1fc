#include "fg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace fg {

const char* key_name(Key k) {
  return k == Key::kBonafide ? "bonafide" : "spoof";
}

Key key_from_name(const std::string& name) {
  if (name == "bonafide") return Key::kBonafide;
  if (name == "spoof") return Key::kSpoof;
  throw FormatError(str("unknown trial key '", name, "' (expected bonafide|spoof)"));
}

namespace {

void split_scores(const std::vector<Trial>& trials, std::vector<double>& bona,
                  std::vector<double>& spoof) {
  for (const auto& t : trials) {
    if (!std::isfinite(t.score))
      throw ContractError(str("non-finite score for trial '", t.utterance_id, "'"));
    (t.key == Key::kBonafide ? bona : spoof).push_back(t.score);
  }
  if (bona.empty() || spoof.empty())
    throw ContractError("metric computation needs at least one trial of each key");
}

}  // namespace

DetCurve det_curve(const std::vector<Trial>& trials) {
  std::vector<double> bona, spoof;
  split_scores(trials, bona, spoof);
  std::sort(bona.begin(), bona.end());
  std::sort(spoof.begin(), spoof.end());

  std::vector<double> all;
  all.reserve(bona.size() + spoof.size());
  all.insert(all.end(), bona.begin(), bona.end());
  all.insert(all.end(), spoof.begin(), spoof.end());
  std::sort(all.begin(), all.end());
  all.erase(std::unique(all.begin(), all.end()), all.end());

  DetCurve c;
  c.thresholds.reserve(all.size() + 1);
  c.p_miss.reserve(all.size() + 1);
  c.p_fa.reserve(all.size() + 1);
  const double nb = static_cast<double>(bona.size());
  const double ns = static_cast<double>(spoof.size());
  for (double t : all) {
    const auto below = std::lower_bound(bona.begin(), bona.end(), t) - bona.begin();
    const auto at_or_above = spoof.end() - std::lower_bound(spoof.begin(), spoof.end(), t);
    c.thresholds.push_back(t);
    c.p_miss.push_back(static_cast<double>(below) / nb);
    c.p_fa.push_back(static_cast<double>(at_or_above) / ns);
  }
  // Guard point above the top score closes the sweep at (1, 0).
  c.thresholds.push_back(all.back() + 1.0);
  c.p_miss.push_back(1.0);
  c.p_fa.push_back(0.0);
  return c;
}

EerResult compute_eer(const std::vector<Trial>& trials) {
  const DetCurve c = det_curve(trials);
  for (size_t i = 0; i < c.thresholds.size(); ++i) {
    if (c.p_miss[i] < c.p_fa[i]) continue;
    if (i == 0) return {0.5 * (c.p_miss[0] + c.p_fa[0]), c.thresholds[0]};
    const double dm = c.p_miss[i] - c.p_miss[i - 1];
    const double df = c.p_fa[i] - c.p_fa[i - 1];
    const double denom = dm - df;
    if (denom <= 0.0) return {0.5 * (c.p_miss[i] + c.p_fa[i]), c.thresholds[i]};
    const double t = (c.p_fa[i - 1] - c.p_miss[i - 1]) / denom;
    return {c.p_miss[i - 1] + t * dm,
            c.thresholds[i - 1] + t * (c.thresholds[i] - c.thresholds[i - 1])};
  }
  // Unreachable: the guard point always has p_miss >= p_fa.
  return {1.0, c.thresholds.back()};
}

void validate_tdcf_params(const TdcfParams& p) {
  if (p.pi_tar < 0.0 || p.pi_non < 0.0 || p.pi_spoof < 0.0)
    throw ConfigError("t-DCF priors must be non-negative");
  if (std::abs(p.pi_tar + p.pi_non + p.pi_spoof - 1.0) > 1e-9)
    throw ConfigError(str("t-DCF priors must sum to 1, got ",
                          p.pi_tar + p.pi_non + p.pi_spoof));
  if (p.c_miss_asv <= 0.0 || p.c_fa_asv <= 0.0 || p.c_miss_cm <= 0.0 || p.c_fa_cm <= 0.0)
    throw ConfigError("t-DCF costs must be positive");
  for (double r : {p.p_fa_asv, p.p_miss_asv, p.p_miss_spoof_asv}) {
    if (r < 0.0 || r > 1.0)
      throw ConfigError(str("ASV operating-point rate ", r, " outside [0,1]"));
  }
}

TdcfResult min_tdcf(const std::vector<Trial>& trials, const TdcfParams& params) {
  validate_tdcf_params(params);
  const double c1 = params.pi_tar * (params.c_miss_cm - params.c_miss_asv * params.p_miss_asv) -
                    params.pi_non * params.c_fa_asv * params.p_fa_asv;
  const double c2 = params.c_fa_cm * params.pi_spoof * (1.0 - params.p_miss_spoof_asv);
  if (c1 <= 0.0 || c2 <= 0.0)
    throw ConfigError(str("degenerate tandem cost: C1=", c1, ", C2=", c2,
                          " (both must be positive)"));
  const DetCurve c = det_curve(trials);
  const double norm = std::min(c1, c2);
  double best = std::numeric_limits<double>::infinity();
  double best_t = c.thresholds.front();
  for (size_t i = 0; i < c.thresholds.size(); ++i) {
    const double v = (c1 * c.p_miss[i] + c2 * c.p_fa[i]) / norm;
    if (v < best) {
      best = v;
      best_t = c.thresholds[i];
    }
  }
  return {best, best_t};
}

TdcfParams with_asv_operating_point(TdcfParams base,
                                    const std::vector<AsvTrial>& asv_trials) {
  std::vector<double> tar, non, spoof;
  for (const auto& t : asv_trials) {
    if (!std::isfinite(t.score))
      throw ContractError(str("non-finite ASV score for trial '", t.trial_id, "'"));
    switch (t.key) {
      case AsvKey::kTarget: tar.push_back(t.score); break;
      case AsvKey::kNontarget: non.push_back(t.score); break;
      case AsvKey::kSpoof: spoof.push_back(t.score); break;
    }
  }
  if (tar.empty() || non.empty())
    throw ContractError("ASV operating point needs target and nontarget trials");

  // ASV EER threshold over target/non-target, same tie convention as the CM
  // sweep (score == threshold accepted).
  std::vector<Trial> tn;
  tn.reserve(tar.size() + non.size());
  for (double s : tar) tn.push_back({"", Key::kBonafide, s});
  for (double s : non) tn.push_back({"", Key::kSpoof, s});
  const EerResult eer = compute_eer(tn);
  const double thr = eer.threshold;

  auto frac_below = [](const std::vector<double>& v, double t) {
    int64_t n = 0;
    for (double s : v) n += s < t ? 1 : 0;
    return static_cast<double>(n) / static_cast<double>(v.size());
  };
  base.p_miss_asv = frac_below(tar, thr);
  base.p_fa_asv = 1.0 - frac_below(non, thr);
  base.p_miss_spoof_asv = spoof.empty() ? 0.0 : frac_below(spoof, thr);
  return base;
}

std::vector<Trial> read_scores(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError(str("cannot open score file '", path, "'"));
  std::vector<Trial> out;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    Trial t;
    std::string key, extra;
    if (!(ls >> t.utterance_id >> key >> t.score) || (ls >> extra))
      throw FormatError(str(path, ":", lineno, ": expected 'utt key score', got '",
                            line, "'"));
    try {
      t.key = key_from_name(key);
    } catch (const FormatError& e) {
      throw FormatError(str(path, ":", lineno, ": ", e.what()));
    }
    if (!std::isfinite(t.score))
      throw FormatError(str(path, ":", lineno, ": non-finite score"));
    out.push_back(std::move(t));
  }
  return out;
}

void write_scores(const std::vector<Trial>& trials, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError(str("cannot open '", path, "' for writing"));
  char buf[64];
  for (const auto& t : trials) {
    if (!std::isfinite(t.score))
      throw ContractError(str("non-finite score for trial '", t.utterance_id, "'"));
    std::snprintf(buf, sizeof(buf), "%.12g", t.score);
    os << t.utterance_id << ' ' << key_name(t.key) << ' ' << buf << '\n';
  }
  if (!os) throw IoError(str("write failed for '", path, "'"));
}

std::vector<AsvTrial> read_asv_scores(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError(str("cannot open ASV score file '", path, "'"));
  std::vector<AsvTrial> out;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    AsvTrial t;
    std::string key, extra;
    if (!(ls >> t.trial_id >> key >> t.score) || (ls >> extra))
      throw FormatError(str(path, ":", lineno, ": expected 'trial key score', got '",
                            line, "'"));
    if (key == "target") t.key = AsvKey::kTarget;
    else if (key == "nontarget") t.key = AsvKey::kNontarget;
    else if (key == "spoof") t.key = AsvKey::kSpoof;
    else throw FormatError(str(path, ":", lineno, ": unknown ASV key '", key, "'"));
    if (!std::isfinite(t.score))
      throw FormatError(str(path, ":", lineno, ": non-finite score"));
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace fg

#ifndef FG_PIPELINE_HPP
#define FG_PIPELINE_HPP

#include <string>
#include <vector>

#include "fg/lcnn.hpp"
#include "fg/manifest.hpp"
#include "fg/synth.hpp"

namespace fg {

// Effective experiment configuration. The JSON schema mirrors these fields;
// anything omitted takes the default shown here (see the README for the
// documented schema). The config hash is the FNV-1a digest of the canonical
// JSON dump of the effective config.
struct PipelineConfig {
  uint64_t seed = 1;
  PipelineMode mode = PipelineMode::kFg;
  int sample_rate = 16000;
  CqtConfig cqt;
  double lps_eps_floor = 1e-10;
  int feature_frames = kLpsFrames;
  bool normalize = true;
  // "bonafide-train" fits stats on genuine training rows only; "train" uses
  // every training row.
  std::string norm_source = "bonafide-train";
  GenuinizerArch transformer_arch;
  std::string lcnn_preset = "desk";  // desk | full
  TrainRunConfig transformer_train{/*epochs=*/12, /*batch=*/2, /*seed=*/0,
                                   /*lr=*/1e-3};
  TrainRunConfig classifier_train{/*epochs=*/16, /*batch=*/4, /*seed=*/0,
                                  /*lr=*/3e-4};
  TdcfParams tdcf;
  std::string asv_score_file;  // optional; sets the ASV operating point
  std::vector<Subset> eval_subsets = {Subset::kDev, Subset::kEval};
  bool use_dev_for_selection = true;
};

PipelineConfig load_pipeline_config(const std::string& path);
PipelineConfig parse_pipeline_config(const std::string& json_text);
std::string pipeline_config_json(const PipelineConfig& cfg);  // canonical
std::string config_hash(const PipelineConfig& cfg);

// --- commands ---------------------------------------------------------------

struct ExtractReport {
  int n_ok = 0;
  std::vector<std::pair<std::string, std::string>> failures;  // (utt, error)
  std::string stats_path;
};

// One LPS1 cache per utterance under <out_dir>/cache plus norm_stats.json
// fitted on the configured training rows. Per-file failures are collected,
// not fatal; the command reports them and the CLI exits nonzero.
ExtractReport cmd_extract(const std::vector<ManifestRow>& rows,
                          const PipelineConfig& cfg,
                          const std::string& manifest_dir,
                          const std::string& out_dir);

struct TrainArtifacts {
  std::string transformer_path;  // empty in baseline mode
  std::string classifier_path;
  std::string transformer_curve_path;
  std::string classifier_curve_path;
};

TrainArtifacts cmd_train(const std::vector<ManifestRow>& rows,
                         const PipelineConfig& cfg, const std::string& out_dir);

struct SubsetMetrics {
  std::string subset;
  int n_bonafide = 0;
  int n_spoof = 0;
  double eer = 0.0;
  double eer_threshold = 0.0;
  double min_tdcf = 0.0;
  double tdcf_threshold = 0.0;
};

struct RunReport {
  std::string mode;
  uint64_t seed = 0;
  std::string config_hash;
  std::vector<SubsetMetrics> subsets;
  double wall_seconds = 0.0;  // serialized separately to keep reports stable
};

// Scores every configured subset, writes scores_<subset>.txt, report.json
// (deterministic) and timing.json (wall clock).
RunReport cmd_eval(const std::vector<ManifestRow>& rows, const PipelineConfig& cfg,
                   const std::string& out_dir);

void write_run_report(const RunReport& report, const std::string& path);
RunReport read_run_report(const std::string& path);

// Metrics for an existing score file (the `report` CLI command).
RunReport score_file_report(const std::string& scores_path,
                            const TdcfParams& params,
                            const std::string& asv_scores_path = "");

// DET curve CSV export: threshold,p_miss,p_fa per line.
void write_det_csv(const std::vector<Trial>& trials, const std::string& path);

}  // namespace fg

#endif  // FG_PIPELINE_HPP

// fgt: batch front door for the feature-genuinization toolkit.
//
//   fgt synth-data --out corpus --n 10 --seed 7
//   fgt extract    --manifest corpus/manifest.txt --config cfg.json --out run
//   fgt train      --manifest corpus/manifest.txt --config cfg.json --out run --mode fg
//   fgt eval       --manifest corpus/manifest.txt --config cfg.json --out run
//   fgt report     --scores run/scores_eval.txt [--asv-scores asv.txt]
//
// Exit code 0 only on full success.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>

#include "fg/pipeline.hpp"

namespace {

struct CommonArgs {
  std::string config;
  std::string manifest;
  std::string mode;
  std::string out = "run";
  uint64_t seed = 0;
  bool seed_set = false;
  std::string audio_dir = "audio";
  std::string subset = "train";
};

fg::PipelineConfig effective_config(const CommonArgs& args) {
  fg::PipelineConfig cfg;
  if (!args.config.empty()) cfg = fg::load_pipeline_config(args.config);
  if (!args.mode.empty()) cfg.mode = fg::pipeline_mode_from_name(args.mode);
  if (args.seed_set) cfg.seed = args.seed;
  return cfg;
}

std::vector<fg::ManifestRow> read_manifest(const CommonArgs& args) {
  if (args.manifest.empty())
    throw fg::ConfigError("a --manifest file is required for this command");
  fg::ManifestOptions opts;
  opts.audio_dir = args.audio_dir;
  opts.default_subset = fg::subset_from_name(args.subset);
  auto rows = fg::parse_manifest(args.manifest, opts);
  if (auto warning = fg::speaker_overlap_warning(rows))
    std::cerr << "warning: " << *warning << "\n";
  return rows;
}

std::string manifest_dir(const CommonArgs& args) {
  return std::filesystem::path(args.manifest).parent_path().string();
}

void add_common(CLI::App* cmd, CommonArgs& args, bool needs_manifest) {
  cmd->add_option("--config", args.config, "pipeline config JSON");
  auto* m = cmd->add_option("--manifest", args.manifest, "dataset manifest");
  if (needs_manifest) m->required();
  cmd->add_option("--mode", args.mode, "baseline|fg|fs (overrides config)");
  cmd->add_option("--seed", args.seed, "seed (overrides config)")
      ->each([&args](const std::string&) { args.seed_set = true; });
  cmd->add_option("--out", args.out, "output directory");
  cmd->add_option("--audio-dir", args.audio_dir,
                  "audio directory for protocol-format manifests");
  cmd->add_option("--subset", args.subset,
                  "subset tag for protocol-format manifests");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"feature genuinization toolkit"};
  app.require_subcommand(1);

  CommonArgs args;

  auto* synth = app.add_subcommand("synth-data", "generate a seeded toy corpus");
  int synth_n = 10;
  fg::SynthConfig synth_cfg;
  synth->add_option("--out", args.out, "corpus directory")->required();
  synth->add_option("--n", synth_n, "clips per class per subset");
  synth->add_option("--seed", args.seed, "generator seed");
  synth->add_option("--sample-rate", synth_cfg.sample_rate, "sample rate (Hz)");
  synth->add_option("--min-dur", synth_cfg.min_dur_sec, "minimum clip seconds");
  synth->add_option("--max-dur", synth_cfg.max_dur_sec, "maximum clip seconds");

  auto* extract = app.add_subcommand("extract", "compute LPS feature caches");
  auto* train = app.add_subcommand("train", "train the configured mode");
  auto* eval = app.add_subcommand("eval", "score subsets and report metrics");
  for (auto* cmd : {extract, train, eval}) add_common(cmd, args, true);

  auto* report = app.add_subcommand("report", "metrics for an existing score file");
  std::string scores_path, asv_path, report_out, det_csv;
  report->add_option("--scores", scores_path, "CM score file")->required();
  report->add_option("--asv-scores", asv_path, "ASV score file for the operating point");
  report->add_option("--config", args.config, "pipeline config JSON (t-DCF parameters)");
  report->add_option("--out", report_out, "write the report JSON here");
  report->add_option("--det-csv", det_csv, "export the DET curve as CSV");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) {
      synth_cfg.n_per_class_per_subset = synth_n;
      synth_cfg.seed = args.seed;
      const auto result = fg::synth_corpus(args.out, synth_cfg);
      std::printf("wrote %zu clips and %s\n", result.rows.size(),
                  result.manifest_path.c_str());
      return 0;
    }
    if (extract->parsed()) {
      const auto cfg = effective_config(args);
      const auto rows = read_manifest(args);
      const auto rep = fg::cmd_extract(rows, cfg, manifest_dir(args), args.out);
      std::printf("extracted %d/%zu features; stats at %s\n", rep.n_ok, rows.size(),
                  rep.stats_path.c_str());
      if (!rep.failures.empty()) {
        std::fprintf(stderr, "%zu file(s) failed:\n", rep.failures.size());
        for (const auto& [utt, err] : rep.failures)
          std::fprintf(stderr, "  %s: %s\n", utt.c_str(), err.c_str());
        return 1;
      }
      return 0;
    }
    if (train->parsed()) {
      const auto cfg = effective_config(args);
      const auto rows = read_manifest(args);
      const auto art = fg::cmd_train(rows, cfg, args.out);
      if (!art.transformer_path.empty())
        std::printf("transformer: %s\n", art.transformer_path.c_str());
      std::printf("classifier: %s\n", art.classifier_path.c_str());
      return 0;
    }
    if (eval->parsed()) {
      const auto cfg = effective_config(args);
      const auto rows = read_manifest(args);
      const auto rep = fg::cmd_eval(rows, cfg, args.out);
      for (const auto& m : rep.subsets)
        std::printf("%s: EER %.4f%% (thr %.6g), min t-DCF %.6f (thr %.6g)\n",
                    m.subset.c_str(), 100.0 * m.eer, m.eer_threshold, m.min_tdcf,
                    m.tdcf_threshold);
      return 0;
    }
    if (report->parsed()) {
      fg::TdcfParams params;
      if (!args.config.empty())
        params = fg::load_pipeline_config(args.config).tdcf;
      const auto rep = fg::score_file_report(scores_path, params, asv_path);
      const auto& m = rep.subsets.front();
      std::printf("trials: %d bonafide, %d spoof\n", m.n_bonafide, m.n_spoof);
      std::printf("EER %.4f%% (thr %.6g), min t-DCF %.6f (thr %.6g)\n",
                  100.0 * m.eer, m.eer_threshold, m.min_tdcf, m.tdcf_threshold);
      if (!report_out.empty()) fg::write_run_report(rep, report_out);
      if (!det_csv.empty())
        fg::write_det_csv(fg::read_scores(scores_path), det_csv);
      return 0;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}

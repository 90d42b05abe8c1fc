#include "fg/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "fg/feature_cache.hpp"

namespace fg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

TrainRunConfig train_config_from_json(const json& j, TrainRunConfig base) {
  base.epochs = j.value("epochs", base.epochs);
  base.batch = j.value("batch", base.batch);
  base.lr = j.value("lr", base.lr);
  base.beta1 = j.value("beta1", base.beta1);
  base.beta2 = j.value("beta2", base.beta2);
  base.adam_eps = j.value("adam_eps", base.adam_eps);
  base.weight_decay = j.value("weight_decay", base.weight_decay);
  base.holdout_fraction = j.value("holdout_fraction", base.holdout_fraction);
  base.patience = j.value("patience", base.patience);
  return base;
}

json train_config_to_json(const TrainRunConfig& c) {
  json j;
  j["epochs"] = c.epochs;
  j["batch"] = c.batch;
  j["lr"] = c.lr;
  j["beta1"] = c.beta1;
  j["beta2"] = c.beta2;
  j["adam_eps"] = c.adam_eps;
  j["weight_decay"] = c.weight_decay;
  j["holdout_fraction"] = c.holdout_fraction;
  j["patience"] = c.patience;
  return j;
}

std::string cache_path(const std::string& out_dir, const std::string& utt) {
  return (fs::path(out_dir) / "cache" / (utt + ".lps")).string();
}

std::string stats_path(const std::string& out_dir) {
  return (fs::path(out_dir) / "cache" / "norm_stats.json").string();
}

std::string resolve_audio(const std::string& manifest_dir, const std::string& path) {
  fs::path p(path);
  if (p.is_absolute() || manifest_dir.empty()) return path;
  return (fs::path(manifest_dir) / p).string();
}

uint64_t derive_seed(uint64_t base, const char* role) {
  return fnv1a64(str(base, "/", role));
}

std::vector<LabeledFeature> load_features(const std::vector<ManifestRow>& rows,
                                          const std::string& out_dir,
                                          const NormStats* stats) {
  std::vector<LabeledFeature> out;
  out.reserve(rows.size());
  for (const auto& r : rows) {
    const std::string path = cache_path(out_dir, r.utterance_id);
    if (!fs::exists(path))
      throw ContractError(str("feature cache missing for '", r.utterance_id,
                              "' (", path, "): run the extract command first"));
    FixedFeature f = read_feature_cache(path);
    if (stats != nullptr) f = apply_stats(f, *stats);
    out.push_back({std::move(f), r.key});
  }
  return out;
}

std::vector<LabeledFeature> transform_features(const GenuinizerModel& transformer,
                                               const std::vector<LabeledFeature>& in) {
  std::vector<LabeledFeature> out;
  out.reserve(in.size());
  for (const auto& lf : in)
    out.push_back({genuinize(transformer, lf.feat), lf.key});
  return out;
}

void write_curve_csv(const std::string& path, const std::vector<TrainCurvePoint>& curve,
                     bool with_acc) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError(str("cannot open '", path, "' for writing"));
  os << (with_acc ? "epoch,train_loss,sel_loss,train_acc\n"
                  : "epoch,train_loss,sel_loss\n");
  char buf[128];
  for (const auto& p : curve) {
    if (with_acc)
      std::snprintf(buf, sizeof(buf), "%d,%.12g,%.12g,%.12g\n", p.epoch,
                    p.train_loss, p.sel_loss, p.train_acc);
    else
      std::snprintf(buf, sizeof(buf), "%d,%.12g,%.12g\n", p.epoch, p.train_loss,
                    p.sel_loss);
    os << buf;
  }
}

TdcfParams effective_tdcf(const PipelineConfig& cfg) {
  if (cfg.asv_score_file.empty()) return cfg.tdcf;
  return with_asv_operating_point(cfg.tdcf, read_asv_scores(cfg.asv_score_file));
}

}  // namespace

PipelineConfig parse_pipeline_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(str("invalid config JSON: ", e.what()));
  }
  PipelineConfig cfg;
  cfg.seed = j.value("seed", cfg.seed);
  cfg.mode = pipeline_mode_from_name(j.value("mode", std::string("fg")));
  cfg.sample_rate = j.value("sample_rate", cfg.sample_rate);
  if (j.contains("cqt")) {
    const json& c = j["cqt"];
    cfg.cqt.octaves = c.value("octaves", cfg.cqt.octaves);
    cfg.cqt.bins_per_octave = c.value("bins_per_octave", cfg.cqt.bins_per_octave);
    cfg.cqt.f_max = c.value("f_max", cfg.cqt.f_max);
    cfg.cqt.hop = c.value("hop", cfg.cqt.hop);
    cfg.cqt.q_scale = c.value("q_scale", cfg.cqt.q_scale);
    cfg.cqt.direct_threshold = c.value("direct_threshold", cfg.cqt.direct_threshold);
    cfg.cqt.spectral_tol = c.value("spectral_tol", cfg.cqt.spectral_tol);
  }
  cfg.lps_eps_floor = j.value("lps_eps_floor", cfg.lps_eps_floor);
  cfg.feature_frames = j.value("feature_frames", cfg.feature_frames);
  cfg.normalize = j.value("normalize", cfg.normalize);
  cfg.norm_source = j.value("norm_source", cfg.norm_source);
  if (cfg.norm_source != "bonafide-train" && cfg.norm_source != "train")
    throw ConfigError(str("config: norm_source must be 'bonafide-train' or 'train', got '",
                          cfg.norm_source, "'"));
  if (j.contains("transformer")) {
    const json& t = j["transformer"];
    cfg.transformer_arch.channels =
        t.value("channels", cfg.transformer_arch.channels);
    cfg.transformer_arch.kernel = t.value("kernel", cfg.transformer_arch.kernel);
    cfg.transformer_arch.stride = t.value("stride", cfg.transformer_arch.stride);
    cfg.transformer_arch.padding = t.value("padding", cfg.transformer_arch.padding);
    cfg.transformer_arch.leaky_slope =
        t.value("leaky_slope", cfg.transformer_arch.leaky_slope);
    cfg.transformer_arch.pad_bins_to =
        t.value("pad_bins_to", cfg.transformer_arch.pad_bins_to);
  }
  cfg.lcnn_preset = j.value("lcnn_preset", cfg.lcnn_preset);
  if (cfg.lcnn_preset != "desk" && cfg.lcnn_preset != "full")
    throw ConfigError(str("config: lcnn_preset must be 'desk' or 'full', got '",
                          cfg.lcnn_preset, "'"));
  if (j.contains("transformer_train"))
    cfg.transformer_train = train_config_from_json(j["transformer_train"],
                                                   cfg.transformer_train);
  if (j.contains("classifier_train"))
    cfg.classifier_train = train_config_from_json(j["classifier_train"],
                                                  cfg.classifier_train);
  if (j.contains("tdcf")) {
    const json& t = j["tdcf"];
    cfg.tdcf.pi_tar = t.value("pi_tar", cfg.tdcf.pi_tar);
    cfg.tdcf.pi_non = t.value("pi_non", cfg.tdcf.pi_non);
    cfg.tdcf.pi_spoof = t.value("pi_spoof", cfg.tdcf.pi_spoof);
    cfg.tdcf.c_miss_asv = t.value("c_miss_asv", cfg.tdcf.c_miss_asv);
    cfg.tdcf.c_fa_asv = t.value("c_fa_asv", cfg.tdcf.c_fa_asv);
    cfg.tdcf.c_miss_cm = t.value("c_miss_cm", cfg.tdcf.c_miss_cm);
    cfg.tdcf.c_fa_cm = t.value("c_fa_cm", cfg.tdcf.c_fa_cm);
    cfg.tdcf.p_fa_asv = t.value("p_fa_asv", cfg.tdcf.p_fa_asv);
    cfg.tdcf.p_miss_asv = t.value("p_miss_asv", cfg.tdcf.p_miss_asv);
    cfg.tdcf.p_miss_spoof_asv = t.value("p_miss_spoof_asv", cfg.tdcf.p_miss_spoof_asv);
  }
  cfg.asv_score_file = j.value("asv_score_file", cfg.asv_score_file);
  if (j.contains("eval_subsets")) {
    cfg.eval_subsets.clear();
    for (const auto& s : j["eval_subsets"])
      cfg.eval_subsets.push_back(subset_from_name(s.get<std::string>()));
  }
  cfg.use_dev_for_selection = j.value("use_dev_for_selection", cfg.use_dev_for_selection);
  return cfg;
}

PipelineConfig load_pipeline_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError(str("cannot open config '", path, "'"));
  std::string text((std::istreambuf_iterator<char>(is)),
                   std::istreambuf_iterator<char>());
  return parse_pipeline_config(text);
}

std::string pipeline_config_json(const PipelineConfig& cfg) {
  json j;
  j["seed"] = cfg.seed;
  j["mode"] = pipeline_mode_name(cfg.mode);
  j["sample_rate"] = cfg.sample_rate;
  j["cqt"] = {{"octaves", cfg.cqt.octaves},
              {"bins_per_octave", cfg.cqt.bins_per_octave},
              {"f_max", cfg.cqt.f_max},
              {"hop", cfg.cqt.hop},
              {"q_scale", cfg.cqt.q_scale},
              {"direct_threshold", cfg.cqt.direct_threshold},
              {"spectral_tol", cfg.cqt.spectral_tol}};
  j["lps_eps_floor"] = cfg.lps_eps_floor;
  j["feature_frames"] = cfg.feature_frames;
  j["normalize"] = cfg.normalize;
  j["norm_source"] = cfg.norm_source;
  j["transformer"] = {{"channels", cfg.transformer_arch.channels},
                      {"kernel", cfg.transformer_arch.kernel},
                      {"stride", cfg.transformer_arch.stride},
                      {"padding", cfg.transformer_arch.padding},
                      {"leaky_slope", cfg.transformer_arch.leaky_slope},
                      {"pad_bins_to", cfg.transformer_arch.pad_bins_to}};
  j["lcnn_preset"] = cfg.lcnn_preset;
  j["transformer_train"] = train_config_to_json(cfg.transformer_train);
  j["classifier_train"] = train_config_to_json(cfg.classifier_train);
  j["tdcf"] = {{"pi_tar", cfg.tdcf.pi_tar},
               {"pi_non", cfg.tdcf.pi_non},
               {"pi_spoof", cfg.tdcf.pi_spoof},
               {"c_miss_asv", cfg.tdcf.c_miss_asv},
               {"c_fa_asv", cfg.tdcf.c_fa_asv},
               {"c_miss_cm", cfg.tdcf.c_miss_cm},
               {"c_fa_cm", cfg.tdcf.c_fa_cm},
               {"p_fa_asv", cfg.tdcf.p_fa_asv},
               {"p_miss_asv", cfg.tdcf.p_miss_asv},
               {"p_miss_spoof_asv", cfg.tdcf.p_miss_spoof_asv}};
  j["asv_score_file"] = cfg.asv_score_file;
  json subsets = json::array();
  for (Subset s : cfg.eval_subsets) subsets.push_back(subset_name(s));
  j["eval_subsets"] = subsets;
  j["use_dev_for_selection"] = cfg.use_dev_for_selection;
  return j.dump();
}

std::string config_hash(const PipelineConfig& cfg) {
  return to_hex(fnv1a64(pipeline_config_json(cfg)));
}

ExtractReport cmd_extract(const std::vector<ManifestRow>& rows,
                          const PipelineConfig& cfg,
                          const std::string& manifest_dir,
                          const std::string& out_dir) {
  validate_cqt_config(cfg.cqt, cfg.sample_rate);
  std::error_code ec;
  fs::create_directories(fs::path(out_dir) / "cache", ec);
  if (ec) throw IoError(str("cannot create '", out_dir, "/cache': ", ec.message()));

  std::vector<std::string> errors(rows.size());
  const int n = static_cast<int>(rows.size());
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < n; ++i) {
    try {
      const AudioClip clip =
          load_wav(resolve_audio(manifest_dir, rows[i].audio_path), cfg.sample_rate);
      const MagMatrix mag = cqt(clip, cfg.cqt);
      const LpsFeature feat = lps(mag, cfg.lps_eps_floor, true, rows[i].utterance_id);
      const FixedFeature fixed = fix_frames(feat, cfg.feature_frames);
      write_feature_cache(cache_path(out_dir, rows[i].utterance_id), fixed);
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  }

  ExtractReport report;
  for (int i = 0; i < n; ++i) {
    if (errors[i].empty())
      ++report.n_ok;
    else
      report.failures.emplace_back(rows[i].utterance_id, errors[i]);
  }

  // Normalization stats from the configured training rows (default: genuine
  // training rows only).
  std::vector<FixedFeature> stats_feats;
  for (int i = 0; i < n; ++i) {
    if (!errors[i].empty()) continue;
    if (rows[i].subset != Subset::kTrain) continue;
    if (cfg.norm_source == "bonafide-train" && rows[i].key != Key::kBonafide) continue;
    stats_feats.push_back(read_feature_cache(cache_path(out_dir, rows[i].utterance_id)));
  }
  if (stats_feats.empty())
    throw ContractError(str("extract: no usable ", cfg.norm_source,
                            " rows to fit normalization stats"));
  const NormStats stats = compute_stats(stats_feats, cfg.norm_source);
  report.stats_path = stats_path(out_dir);
  write_norm_stats(report.stats_path, stats);
  return report;
}

TrainArtifacts cmd_train(const std::vector<ManifestRow>& rows,
                         const PipelineConfig& cfg, const std::string& out_dir) {
  NormStats stats;
  if (cfg.normalize) {
    if (!fs::exists(stats_path(out_dir)))
      throw ContractError(str("normalization stats missing (", stats_path(out_dir),
                              "): run the extract command first"));
    stats = read_norm_stats(stats_path(out_dir));
  }
  const NormStats* stats_ptr = cfg.normalize ? &stats : nullptr;

  const auto train_rows = filter_rows(rows, Subset::kTrain);
  if (train_rows.empty()) throw ContractError("train: manifest has no train rows");
  std::vector<LabeledFeature> train_feats = load_features(train_rows, out_dir, stats_ptr);

  std::vector<LabeledFeature> dev_feats;
  if (cfg.use_dev_for_selection) {
    const auto dev_rows = filter_rows(rows, Subset::kDev);
    if (!dev_rows.empty()) dev_feats = load_features(dev_rows, out_dir, stats_ptr);
  }

  const int feat_bins = cfg.cqt.n_bins() - 1;
  TrainArtifacts art;

  if (cfg.mode != PipelineMode::kBaseline) {
    const Key source = cfg.mode == PipelineMode::kFg ? Key::kBonafide : Key::kSpoof;
    std::vector<LabeledFeature> source_feats;
    for (const auto& lf : train_feats)
      if (lf.key == source) source_feats.push_back(lf);
    if (source_feats.empty())
      throw ContractError(str("train: no ", key_name(source),
                              " training rows for the transformer"));
    GenuinizerArch arch = cfg.transformer_arch;
    arch.input_bins = feat_bins;
    arch.input_frames = cfg.feature_frames;
    GenuinizerModel transformer =
        build_genuinizer(arch, derive_seed(cfg.seed, "transformer-init"), source);
    TrainRunConfig tc = cfg.transformer_train;
    tc.seed = derive_seed(cfg.seed, "transformer-train");
    const auto curve = train_genuinizer(transformer, source_feats, tc);
    art.transformer_path = (fs::path(out_dir) / "transformer.fgt").string();
    art.transformer_curve_path = (fs::path(out_dir) / "transformer_curve.csv").string();
    save_genuinizer(transformer, art.transformer_path);
    write_curve_csv(art.transformer_curve_path, curve, false);

    train_feats = transform_features(transformer, train_feats);
    if (!dev_feats.empty()) dev_feats = transform_features(transformer, dev_feats);
  }

  const LcnnArch lcnn_arch = cfg.lcnn_preset == "desk"
                                 ? LcnnArch::desk(feat_bins, cfg.feature_frames)
                                 : LcnnArch::full(feat_bins, cfg.feature_frames);
  LcnnModel classifier =
      build_lcnn(lcnn_arch, derive_seed(cfg.seed, "classifier-init"), cfg.mode);
  TrainRunConfig cc = cfg.classifier_train;
  cc.seed = derive_seed(cfg.seed, "classifier-train");
  const auto curve = train_lcnn(classifier, train_feats,
                                dev_feats.empty() ? nullptr : &dev_feats, cc);
  art.classifier_path = (fs::path(out_dir) / "classifier.fgt").string();
  art.classifier_curve_path = (fs::path(out_dir) / "classifier_curve.csv").string();
  save_lcnn(classifier, art.classifier_path);
  write_curve_csv(art.classifier_curve_path, curve, true);
  return art;
}

RunReport cmd_eval(const std::vector<ManifestRow>& rows, const PipelineConfig& cfg,
                   const std::string& out_dir) {
  const auto t0 = std::chrono::steady_clock::now();

  const std::string classifier_path = (fs::path(out_dir) / "classifier.fgt").string();
  if (!fs::exists(classifier_path))
    throw ContractError(str("classifier checkpoint missing (", classifier_path,
                            "): run the train command first"));
  LcnnModel classifier = load_lcnn(classifier_path);
  if (classifier.mode != cfg.mode)
    throw ContractError(str("eval: checkpoint was trained in mode '",
                            pipeline_mode_name(classifier.mode),
                            "' but the config says '", pipeline_mode_name(cfg.mode), "'"));

  GenuinizerModel transformer;
  bool have_transformer = false;
  if (cfg.mode != PipelineMode::kBaseline) {
    const std::string tpath = (fs::path(out_dir) / "transformer.fgt").string();
    if (!fs::exists(tpath))
      throw ContractError(str("transformer checkpoint missing (", tpath,
                              "): run the train command first"));
    transformer = load_genuinizer(tpath);
    const Key want = cfg.mode == PipelineMode::kFg ? Key::kBonafide : Key::kSpoof;
    if (transformer.source_class != want)
      throw ContractError(str("eval: transformer was trained on ",
                              key_name(transformer.source_class), " but mode '",
                              pipeline_mode_name(cfg.mode), "' needs ", key_name(want)));
    have_transformer = true;
  }

  NormStats stats;
  if (cfg.normalize) stats = read_norm_stats(stats_path(out_dir));
  const NormStats* stats_ptr = cfg.normalize ? &stats : nullptr;
  const TdcfParams tdcf = effective_tdcf(cfg);

  RunReport report;
  report.mode = pipeline_mode_name(cfg.mode);
  report.seed = cfg.seed;
  report.config_hash = config_hash(cfg);

  for (Subset subset : cfg.eval_subsets) {
    const auto srows = filter_rows(rows, subset);
    if (srows.empty()) continue;
    std::vector<LabeledFeature> feats = load_features(srows, out_dir, stats_ptr);
    if (have_transformer) feats = transform_features(transformer, feats);

    std::vector<Trial> trials;
    trials.reserve(feats.size());
    constexpr size_t kScoreBatch = 8;
    for (size_t start = 0; start < feats.size(); start += kScoreBatch) {
      const size_t end = std::min(feats.size(), start + kScoreBatch);
      std::vector<const FixedFeature*> batch;
      for (size_t i = start; i < end; ++i) batch.push_back(&feats[i].feat);
      const auto scores = score_batch(classifier, batch);
      for (size_t i = start; i < end; ++i)
        trials.push_back({scores[i - start].utterance_id, feats[i].key,
                          scores[i - start].score});
    }
    const std::string score_path =
        (fs::path(out_dir) / str("scores_", subset_name(subset), ".txt")).string();
    write_scores(trials, score_path);

    SubsetMetrics m;
    m.subset = subset_name(subset);
    for (const auto& t : trials)
      (t.key == Key::kBonafide ? m.n_bonafide : m.n_spoof) += 1;
    const EerResult eer = compute_eer(trials);
    const TdcfResult td = min_tdcf(trials, tdcf);
    m.eer = eer.eer;
    m.eer_threshold = eer.threshold;
    m.min_tdcf = td.min_tdcf;
    m.tdcf_threshold = td.threshold;
    report.subsets.push_back(std::move(m));
  }

  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_run_report(report, (fs::path(out_dir) / "report.json").string());
  {
    json t;
    t["wall_seconds"] = report.wall_seconds;
    std::ofstream os((fs::path(out_dir) / "timing.json").string(), std::ios::trunc);
    os << t.dump(2) << "\n";
  }
  return report;
}

void write_run_report(const RunReport& report, const std::string& path) {
  json j;
  j["mode"] = report.mode;
  j["seed"] = report.seed;
  j["config_hash"] = report.config_hash;
  json subsets = json::array();
  for (const auto& m : report.subsets) {
    json s;
    s["subset"] = m.subset;
    s["n_bonafide"] = m.n_bonafide;
    s["n_spoof"] = m.n_spoof;
    s["eer"] = m.eer;
    s["eer_threshold"] = m.eer_threshold;
    s["min_tdcf"] = m.min_tdcf;
    s["tdcf_threshold"] = m.tdcf_threshold;
    subsets.push_back(s);
  }
  j["subsets"] = subsets;
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError(str("cannot open '", path, "' for writing"));
  os << j.dump(2) << "\n";
  if (!os) throw IoError(str("write failed for '", path, "'"));
}

RunReport read_run_report(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError(str("cannot open report '", path, "'"));
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw FormatError(str("'", path, "': invalid report: ", e.what()));
  }
  RunReport r;
  r.mode = j.value("mode", "");
  r.seed = j.value("seed", 0ULL);
  r.config_hash = j.value("config_hash", "");
  for (const auto& s : j.value("subsets", json::array())) {
    SubsetMetrics m;
    m.subset = s.value("subset", "");
    m.n_bonafide = s.value("n_bonafide", 0);
    m.n_spoof = s.value("n_spoof", 0);
    m.eer = s.value("eer", 0.0);
    m.eer_threshold = s.value("eer_threshold", 0.0);
    m.min_tdcf = s.value("min_tdcf", 0.0);
    m.tdcf_threshold = s.value("tdcf_threshold", 0.0);
    r.subsets.push_back(std::move(m));
  }
  return r;
}

RunReport score_file_report(const std::string& scores_path, const TdcfParams& params,
                            const std::string& asv_scores_path) {
  const std::vector<Trial> trials = read_scores(scores_path);
  TdcfParams effective = params;
  if (!asv_scores_path.empty())
    effective = with_asv_operating_point(params, read_asv_scores(asv_scores_path));
  RunReport r;
  r.mode = "scores";
  SubsetMetrics m;
  m.subset = "all";
  for (const auto& t : trials)
    (t.key == Key::kBonafide ? m.n_bonafide : m.n_spoof) += 1;
  const EerResult eer = compute_eer(trials);
  const TdcfResult td = min_tdcf(trials, effective);
  m.eer = eer.eer;
  m.eer_threshold = eer.threshold;
  m.min_tdcf = td.min_tdcf;
  m.tdcf_threshold = td.threshold;
  r.subsets.push_back(std::move(m));
  return r;
}

void write_det_csv(const std::vector<Trial>& trials, const std::string& path) {
  const DetCurve c = det_curve(trials);
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError(str("cannot open '", path, "' for writing"));
  os << "threshold,p_miss,p_fa\n";
  char buf[128];
  for (size_t i = 0; i < c.thresholds.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.12g,%.12g,%.12g\n", c.thresholds[i],
                  c.p_miss[i], c.p_fa[i]);
    os << buf;
  }
}

}  // namespace fg

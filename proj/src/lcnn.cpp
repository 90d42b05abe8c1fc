#include "fg/lcnn.hpp"

#include <algorithm>
#include <cmath>

#include "fg/checkpoint.hpp"
#include "fg/optimizer.hpp"
#include "layer_json.hpp"

namespace fg {

const char* pipeline_mode_name(PipelineMode m) {
  switch (m) {
    case PipelineMode::kBaseline: return "baseline";
    case PipelineMode::kFg: return "fg";
    case PipelineMode::kFs: return "fs";
  }
  return "?";
}

PipelineMode pipeline_mode_from_name(const std::string& name) {
  if (name == "baseline") return PipelineMode::kBaseline;
  if (name == "fg") return PipelineMode::kFg;
  if (name == "fs") return PipelineMode::kFs;
  throw FormatError(str("unknown pipeline mode '", name, "' (baseline|fg|fs)"));
}

namespace {

// Labels for the 2-way softmax: spoof = 0, bonafide = 1.
int key_label(Key k) { return k == Key::kBonafide ? 1 : 0; }

void append_fc_stage(std::vector<LayerSpec>& specs, const Shape& conv_out,
                     double drop_p) {
  const int flat = conv_out[1] * conv_out[2] * conv_out[3];
  specs.push_back(LayerSpec::affine(flat, 64));
  specs.push_back(LayerSpec::mfm());
  specs.push_back(LayerSpec::dropout(drop_p));
  specs.push_back(LayerSpec::affine(32, 2));
}

}  // namespace

LcnnArch LcnnArch::desk(int input_bins, int input_frames, double drop_p) {
  LcnnArch arch;
  arch.preset = "desk";
  arch.input_bins = input_bins;
  arch.input_frames = input_frames;
  auto& s = arch.specs;
  s.push_back(LayerSpec::conv2d(1, 16, 5, 1, 2));
  s.push_back(LayerSpec::mfm());  // -> 8
  s.push_back(LayerSpec::maxpool2d(2, 2));
  s.push_back(LayerSpec::batchnorm2d());
  s.push_back(LayerSpec::conv2d(8, 24, 3, 1, 1));
  s.push_back(LayerSpec::mfm());  // -> 12
  s.push_back(LayerSpec::maxpool2d(2, 2));
  s.push_back(LayerSpec::batchnorm2d());
  s.push_back(LayerSpec::conv2d(12, 32, 3, 1, 1));
  s.push_back(LayerSpec::mfm());  // -> 16
  s.push_back(LayerSpec::maxpool2d(2, 2));
  s.push_back(LayerSpec::batchnorm2d());
  const auto shapes = infer_stack_shapes(s, {1, 1, input_bins, input_frames});
  append_fc_stage(s, shapes.back(), drop_p);
  return arch;
}

LcnnArch LcnnArch::full(int input_bins, int input_frames, double drop_p) {
  LcnnArch arch;
  arch.preset = "full";
  arch.input_bins = input_bins;
  arch.input_frames = input_frames;
  auto& s = arch.specs;
  s.push_back(LayerSpec::conv2d(1, 64, 5, 1, 2));
  s.push_back(LayerSpec::mfm());  // -> 32
  s.push_back(LayerSpec::maxpool2d(2, 2));
  s.push_back(LayerSpec::batchnorm2d());
  s.push_back(LayerSpec::conv2d(32, 64, 1, 1, 0));
  s.push_back(LayerSpec::mfm());  // -> 32
  s.push_back(LayerSpec::conv2d(32, 96, 3, 1, 1));
  s.push_back(LayerSpec::mfm());  // -> 48
  s.push_back(LayerSpec::maxpool2d(2, 2));
  s.push_back(LayerSpec::batchnorm2d());
  s.push_back(LayerSpec::conv2d(48, 96, 1, 1, 0));
  s.push_back(LayerSpec::mfm());  // -> 48
  s.push_back(LayerSpec::conv2d(48, 128, 3, 1, 1));
  s.push_back(LayerSpec::mfm());  // -> 64
  s.push_back(LayerSpec::maxpool2d(2, 2));
  s.push_back(LayerSpec::batchnorm2d());
  s.push_back(LayerSpec::conv2d(64, 128, 1, 1, 0));
  s.push_back(LayerSpec::mfm());  // -> 64
  s.push_back(LayerSpec::conv2d(64, 64, 3, 1, 1));
  s.push_back(LayerSpec::mfm());  // -> 32
  s.push_back(LayerSpec::conv2d(32, 64, 3, 1, 1));
  s.push_back(LayerSpec::mfm());  // -> 32
  s.push_back(LayerSpec::maxpool2d(2, 2));
  s.push_back(LayerSpec::batchnorm2d());
  const auto shapes = infer_stack_shapes(s, {1, 1, input_bins, input_frames});
  append_fc_stage(s, shapes.back(), drop_p);
  return arch;
}

LcnnModel build_lcnn(const LcnnArch& arch, uint64_t seed, PipelineMode mode) {
  // infer_stack_shapes enforces the structural rules (MFM parity, kernel
  // fits); the classifier adds its own contract on top.
  const auto shapes =
      infer_stack_shapes(arch.specs, {1, 1, arch.input_bins, arch.input_frames});
  if (shapes.empty() || shapes.back() != Shape{1, 2})
    throw ConfigError(str("lcnn: stack must end in 2 logits, got ",
                          shapes.empty() ? "nothing" : shape_str(shapes.back())));
  int n_dropout = 0;
  int first_affine = -1;
  for (size_t i = 0; i < arch.specs.size(); ++i) {
    if (arch.specs[i].kind == LayerKind::kAffine && first_affine < 0)
      first_affine = static_cast<int>(i);
    if (arch.specs[i].kind == LayerKind::kDropout) {
      ++n_dropout;
      if (first_affine < 0)
        throw ConfigError(str("lcnn: dropout at layer ", i,
                              " precedes the fully connected stage"));
    }
  }
  if (n_dropout != 1)
    throw ConfigError(str("lcnn: expected exactly one dropout layer, found ",
                          n_dropout));
  LcnnModel model;
  model.arch = arch;
  model.mode = mode;
  Rng rng(seed);
  model.params = init_stack(arch.specs, {1, 1, arch.input_bins, arch.input_frames}, rng);
  return model;
}

namespace {

Tensor classifier_forward(LcnnModel& model, const Tensor& x, Mode mode, Rng* rng) {
  return run_stack(model.arch.specs, model.params, x, mode, rng);
}

double batch_eval_loss(LcnnModel& model, const std::vector<LabeledFeature>& set,
                       int batch) {
  double acc = 0.0;
  int64_t n = 0;
  for (size_t start = 0; start < set.size(); start += batch) {
    const size_t end = std::min(set.size(), start + batch);
    std::vector<const FixedFeature*> feats;
    std::vector<int> labels;
    for (size_t i = start; i < end; ++i) {
      feats.push_back(&set[i].feat);
      labels.push_back(key_label(set[i].key));
    }
    Tensor logits = classifier_forward(model, features_to_tensor(feats), Mode::kEval, nullptr);
    acc += softmax_cross_entropy(logits, labels).item() * static_cast<double>(feats.size());
    n += static_cast<int64_t>(feats.size());
  }
  return acc / static_cast<double>(n);
}

}  // namespace

std::vector<TrainCurvePoint> train_lcnn(LcnnModel& model,
                                        const std::vector<LabeledFeature>& train_set,
                                        const std::vector<LabeledFeature>* dev_set,
                                        const TrainRunConfig& cfg) {
  validate_train_config(cfg);
  if (train_set.empty()) throw ContractError("train_lcnn: empty training set");
  bool has_bona = false, has_spoof = false;
  for (const auto& lf : train_set) {
    (lf.key == Key::kBonafide ? has_bona : has_spoof) = true;
    if (lf.feat.bins != model.arch.input_bins || lf.feat.frames != model.arch.input_frames)
      throw ShapeError(str("train_lcnn: feature '", lf.feat.utterance_id,
                           "' has shape ", lf.feat.bins, "x", lf.feat.frames));
  }
  if (!has_bona || !has_spoof)
    throw ContractError(str("train_lcnn: training data has only the ",
                            has_bona ? "bonafide" : "spoof",
                            " class; both keys are required"));

  Rng rng(cfg.seed);
  Rng dropout_rng = rng.fork("dropout");
  Rng shuffle_rng = rng.fork("epochs");

  AdamConfig ac;
  ac.lr = cfg.lr;
  ac.beta1 = cfg.beta1;
  ac.beta2 = cfg.beta2;
  ac.eps = cfg.adam_eps;
  ac.weight_decay = cfg.weight_decay;
  AdamW opt(model.params.trainable(), ac);

  std::vector<size_t> order(train_set.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  const bool use_dev = dev_set != nullptr && !dev_set->empty();
  std::vector<TrainCurvePoint> curve;
  double best_sel = std::numeric_limits<double>::infinity();
  ParamSnapshot best = snapshot_params(model.params);
  int best_epoch = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.uniform_int(i)]);
    double loss_sum = 0.0;
    int64_t items = 0, correct = 0;
    for (size_t start = 0; start < order.size(); start += cfg.batch) {
      const size_t end = std::min(order.size(), start + cfg.batch);
      std::vector<const FixedFeature*> feats;
      std::vector<int> labels;
      for (size_t i = start; i < end; ++i) {
        feats.push_back(&train_set[order[i]].feat);
        labels.push_back(key_label(train_set[order[i]].key));
      }
      Tensor logits = classifier_forward(model, features_to_tensor(feats),
                                         Mode::kTrain, &dropout_rng);
      Tensor loss = softmax_cross_entropy(logits, labels);
      opt.zero_grad();
      backward(loss);
      opt.step();
      loss_sum += loss.item() * static_cast<double>(feats.size());
      items += static_cast<int64_t>(feats.size());
      auto lv = logits.values();
      for (size_t i = 0; i < feats.size(); ++i) {
        const int pred = lv[2 * i + 1] >= lv[2 * i] ? 1 : 0;
        correct += pred == labels[i] ? 1 : 0;
      }
    }
    const double train_loss = loss_sum / static_cast<double>(items);
    const double train_acc = static_cast<double>(correct) / static_cast<double>(items);
    const double sel_loss = use_dev ? batch_eval_loss(model, *dev_set, cfg.batch)
                                    : train_loss;
    curve.push_back({epoch, train_loss, sel_loss, train_acc});
    if (sel_loss < best_sel) {
      best_sel = sel_loss;
      best = snapshot_params(model.params);
      best_epoch = epoch;
    }
    model.epochs_seen = epoch;
    if (cfg.patience > 0 && epoch - best_epoch >= cfg.patience) break;
  }
  restore_params(model.params, best);
  model.final_loss = best_sel;
  return curve;
}

std::vector<CmScore> score_batch(const LcnnModel& model,
                                 const std::vector<const FixedFeature*>& feats,
                                 bool allow_untrained) {
  if (!model.trained() && !allow_untrained)
    throw ContractError("score: classifier has not been trained "
                        "(pass allow_untrained to override)");
  if (feats.empty()) return {};
  Tensor logits = classifier_forward(const_cast<LcnnModel&>(model),
                                     features_to_tensor(feats), Mode::kEval, nullptr);
  auto lv = logits.values();
  std::vector<CmScore> out;
  out.reserve(feats.size());
  for (size_t i = 0; i < feats.size(); ++i)
    out.push_back({feats[i]->utterance_id, lv[2 * i + 1] - lv[2 * i]});
  return out;
}

CmScore score(const LcnnModel& model, const FixedFeature& feat, bool allow_untrained) {
  return score_batch(model, {&feat}, allow_untrained).front();
}

CmScore score_pipeline(const GenuinizerModel* transformer, const LcnnModel& model,
                       const FixedFeature& feat) {
  switch (model.mode) {
    case PipelineMode::kBaseline:
      if (transformer != nullptr)
        throw ContractError("score_pipeline: baseline classifier takes no transformer");
      return score(model, feat);
    case PipelineMode::kFg:
      if (transformer == nullptr)
        throw ContractError("score_pipeline: FG classifier needs a transformer");
      if (transformer->source_class != Key::kBonafide)
        throw ContractError("score_pipeline: FG mode needs a bonafide-trained "
                            "transformer, got a spoof-trained one");
      break;
    case PipelineMode::kFs:
      if (transformer == nullptr)
        throw ContractError("score_pipeline: FS classifier needs a transformer");
      if (transformer->source_class != Key::kSpoof)
        throw ContractError("score_pipeline: FS mode needs a spoof-trained "
                            "transformer, got a bonafide-trained one");
      break;
  }
  return score(model, genuinize(*transformer, feat));
}

void save_lcnn(const LcnnModel& model, const std::string& path) {
  nlohmann::json meta;
  meta["kind"] = "lcnn";
  meta["preset"] = model.arch.preset;
  meta["specs"] = layers_to_json(model.arch.specs);
  meta["input_bins"] = model.arch.input_bins;
  meta["input_frames"] = model.arch.input_frames;
  meta["mode"] = pipeline_mode_name(model.mode);
  meta["epochs_seen"] = model.epochs_seen;
  if (std::isfinite(model.final_loss)) meta["final_loss"] = model.final_loss;

  Checkpoint ckpt;
  ckpt.metadata = meta.dump();
  for (const auto& [name, t] : model.params.params)
    ckpt.entries.push_back({name, t.shape(),
                            std::vector<double>(t.values().begin(), t.values().end())});
  size_t bn_idx = 0;
  for (size_t i = 0; i < model.arch.specs.size(); ++i) {
    if (model.arch.specs[i].kind != LayerKind::kBatchNorm2d) continue;
    const auto& st = model.params.bn_states.at(bn_idx++);
    const std::string prefix = "l" + std::to_string(i);
    ckpt.entries.push_back({prefix + ".running_mean",
                            {static_cast<int>(st.running_mean.size())},
                            st.running_mean});
    ckpt.entries.push_back({prefix + ".running_var",
                            {static_cast<int>(st.running_var.size())},
                            st.running_var});
  }
  save_checkpoint(path, ckpt);
}

LcnnModel load_lcnn(const std::string& path) {
  const Checkpoint ckpt = load_checkpoint(path);
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(ckpt.metadata);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(str("'", path, "': bad checkpoint metadata: ", e.what()));
  }
  if (meta.value("kind", "") != "lcnn")
    throw FormatError(str("'", path, "' is not an lcnn checkpoint (kind '",
                          meta.value("kind", ""), "')"));
  LcnnArch arch;
  arch.preset = meta.value("preset", "custom");
  arch.specs = layers_from_json(meta.at("specs"));
  arch.input_bins = meta.at("input_bins").get<int>();
  arch.input_frames = meta.at("input_frames").get<int>();
  LcnnModel model = build_lcnn(arch, /*seed=*/0,
                               pipeline_mode_from_name(meta.at("mode").get<std::string>()));
  model.epochs_seen = meta.value("epochs_seen", 0);
  model.final_loss = meta.value("final_loss",
                                std::numeric_limits<double>::quiet_NaN());
  for (auto& [name, t] : model.params.params) {
    const auto& e = ckpt.at(name);
    if (e.shape != t.shape())
      throw FormatError(str("'", path, "': entry '", name, "' has shape ",
                            shape_str(e.shape), ", expected ", shape_str(t.shape())));
    std::copy(e.data.begin(), e.data.end(), t.values().begin());
  }
  size_t bn_idx = 0;
  for (size_t i = 0; i < model.arch.specs.size(); ++i) {
    if (model.arch.specs[i].kind != LayerKind::kBatchNorm2d) continue;
    const std::string prefix = "l" + std::to_string(i);
    auto& st = model.params.bn_states.at(bn_idx++);
    st.running_mean = ckpt.at(prefix + ".running_mean").data;
    st.running_var = ckpt.at(prefix + ".running_var").data;
  }
  return model;
}

}  // namespace fg

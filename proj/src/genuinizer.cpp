#include "fg/genuinizer.hpp"

#include <algorithm>
#include <cmath>

#include "fg/checkpoint.hpp"
#include "fg/optimizer.hpp"
#include "layer_json.hpp"

namespace fg {

std::vector<LayerSpec> GenuinizerArch::build_specs() const {
  if (channels.empty()) throw ConfigError("genuinizer arch: empty channel ladder");
  std::vector<LayerSpec> specs;
  int prev = 3;  // feature plane plus row- and column-coordinate planes
  for (size_t i = 0; i < channels.size(); ++i) {
    specs.push_back(LayerSpec::conv2d(prev, channels[i], kernel, stride, padding));
    if (i > 0) specs.push_back(LayerSpec::batchnorm2d());
    specs.push_back(LayerSpec::leaky_relu(leaky_slope));
    prev = channels[i];
  }
  for (size_t i = channels.size(); i-- > 0;) {
    const int out = i == 0 ? 1 : channels[i - 1];
    specs.push_back(LayerSpec::conv_transpose2d(channels[i], out, kernel, stride, padding));
    if (i > 0) {
      specs.push_back(LayerSpec::batchnorm2d());
      specs.push_back(LayerSpec::relu());
    }
    // The last layer stays linear: log-power features are signed.
  }
  return specs;
}

namespace {

void validate_transformer_specs(const std::vector<LayerSpec>& specs,
                                int input_bins, int input_frames, int pad_bins_to) {
  if (pad_bins_to < input_bins)
    throw ConfigError(str("genuinizer: pad_bins_to ", pad_bins_to,
                          " smaller than input bins ", input_bins));
  if (specs.empty()) throw ConfigError("genuinizer: empty stack");
  for (size_t i = 0; i < specs.size(); ++i) {
    if (specs[i].kind == LayerKind::kAffine)
      throw ConfigError(str("genuinizer: layer ", i,
                            " is a fully connected layer; the transformer is "
                            "fully convolutional"));
    if (specs[i].kind == LayerKind::kDropout)
      throw ConfigError(str("genuinizer: layer ", i,
                            " is dropout; the transformer uses none"));
  }
  const int in_ch = specs.front().in_ch;
  if (specs.front().kind != LayerKind::kConv2d || in_ch < 1 || in_ch > 3)
    throw ConfigError("genuinizer: stack must start with a convolution over "
                      "the feature plane (optionally plus coordinate planes)");
  const Shape in{1, in_ch, pad_bins_to, input_frames};
  const Shape out{1, 1, pad_bins_to, input_frames};
  const auto shapes = infer_stack_shapes(specs, in);
  if (shapes.empty() || shapes.back() != out) {
    std::string trace = shape_str(in);
    for (const auto& s : shapes) trace += " -> " + shape_str(s);
    throw ConfigError(str("genuinizer: stack does not map back to the input "
                          "shape: ", trace));
  }
}

// Constant coordinate plane in [-0.5, 0.5] along one axis.
Tensor coord_plane(int n, int h, int w, bool along_rows) {
  std::vector<double> v(static_cast<size_t>(n) * h * w);
  for (int i = 0; i < n; ++i)
    for (int r = 0; r < h; ++r) {
      double* dst = v.data() + (static_cast<int64_t>(i) * h + r) * w;
      if (along_rows) {
        std::fill(dst, dst + w, static_cast<double>(r) / (h - 1) - 0.5);
      } else {
        for (int c = 0; c < w; ++c)
          dst[c] = static_cast<double>(c) / (w - 1) - 0.5;
      }
    }
  return Tensor::constant({n, 1, h, w}, std::move(v));
}

Tensor transformer_forward(GenuinizerModel& model, const Tensor& x, Mode mode) {
  const int pad = model.pad_bins_to - model.input_bins;
  Tensor cur = pad > 0 ? pad2d(x, 0, pad, 0, 0) : x;
  const int in_ch = model.specs.front().in_ch;
  if (in_ch >= 2)
    cur = concat_channels(cur, coord_plane(cur.dim(0), cur.dim(2), cur.dim(3), true));
  if (in_ch >= 3)
    cur = concat_channels(cur, coord_plane(cur.dim(0), cur.dim(2), cur.dim(3), false));
  cur = run_stack(model.specs, model.params, cur, mode, nullptr);
  if (pad > 0) cur = crop2d(cur, 0, pad, 0, 0);
  return cur;
}

std::string source_name(Key k) { return key_name(k); }

}  // namespace

GenuinizerModel build_genuinizer(std::vector<LayerSpec> specs, int input_bins,
                                 int input_frames, int pad_bins_to,
                                 uint64_t seed, Key source_class) {
  validate_transformer_specs(specs, input_bins, input_frames, pad_bins_to);
  GenuinizerModel model;
  model.specs = std::move(specs);
  model.input_bins = input_bins;
  model.input_frames = input_frames;
  model.pad_bins_to = pad_bins_to;
  model.source_class = source_class;
  Rng rng(seed);
  model.params = init_stack(model.specs,
                            {1, model.specs.front().in_ch, pad_bins_to, input_frames},
                            rng);
  return model;
}

GenuinizerModel build_genuinizer(const GenuinizerArch& arch, uint64_t seed,
                                 Key source_class) {
  return build_genuinizer(arch.build_specs(), arch.input_bins, arch.input_frames,
                          arch.pad_bins_to, seed, source_class);
}

std::vector<TrainCurvePoint> train_genuinizer(
    GenuinizerModel& model, const std::vector<LabeledFeature>& features,
    const TrainRunConfig& cfg) {
  validate_train_config(cfg);
  if (features.empty())
    throw ContractError("train_genuinizer: empty feature set");
  for (const auto& lf : features) {
    if (lf.key != model.source_class)
      throw ContractError(str("train_genuinizer: feature '", lf.feat.utterance_id,
                              "' is ", key_name(lf.key), " but this transformer trains on ",
                              source_name(model.source_class), " only"));
    if (lf.feat.bins != model.input_bins || lf.feat.frames != model.input_frames)
      throw ShapeError(str("train_genuinizer: feature '", lf.feat.utterance_id,
                           "' has shape ", lf.feat.bins, "x", lf.feat.frames));
  }

  Rng rng(cfg.seed);
  std::vector<size_t> order(features.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  // Deterministic holdout split for best-epoch selection.
  Rng split_rng = rng.fork("holdout");
  for (size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[split_rng.uniform_int(i)]);
  size_t n_holdout = static_cast<size_t>(cfg.holdout_fraction * static_cast<double>(order.size()));
  if (order.size() - n_holdout < 1) n_holdout = 0;
  std::vector<size_t> holdout(order.begin(), order.begin() + n_holdout);
  std::vector<size_t> train(order.begin() + n_holdout, order.end());

  AdamConfig ac;
  ac.lr = cfg.lr;
  ac.beta1 = cfg.beta1;
  ac.beta2 = cfg.beta2;
  ac.eps = cfg.adam_eps;
  ac.weight_decay = cfg.weight_decay;
  AdamW opt(model.params.trainable(), ac);

  auto eval_mse = [&](const std::vector<size_t>& idx) {
    double acc = 0.0;
    for (size_t i : idx) {
      Tensor x = features_to_tensor({&features[i].feat});
      Tensor out = transformer_forward(model, x, Mode::kEval);
      acc += mse_loss(out, x).item();
    }
    return acc / static_cast<double>(idx.size());
  };

  std::vector<TrainCurvePoint> curve;
  double best_sel = std::numeric_limits<double>::infinity();
  ParamSnapshot best = snapshot_params(model.params);
  int best_epoch = 0;
  Rng shuffle_rng = rng.fork("epochs");
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (size_t i = train.size(); i > 1; --i)
      std::swap(train[i - 1], train[shuffle_rng.uniform_int(i)]);
    double loss_sum = 0.0;
    int64_t items = 0;
    for (size_t start = 0; start < train.size(); start += cfg.batch) {
      const size_t end = std::min(train.size(), start + cfg.batch);
      std::vector<const FixedFeature*> batch;
      for (size_t i = start; i < end; ++i) batch.push_back(&features[train[i]].feat);
      Tensor x = features_to_tensor(batch);
      Tensor out = transformer_forward(model, x, Mode::kTrain);
      Tensor loss = mse_loss(out, x);
      opt.zero_grad();
      backward(loss);
      opt.step();
      loss_sum += loss.item() * static_cast<double>(batch.size());
      items += static_cast<int64_t>(batch.size());
    }
    const double train_loss = loss_sum / static_cast<double>(items);
    const double sel_loss = holdout.empty() ? train_loss : eval_mse(holdout);
    curve.push_back({epoch, train_loss, sel_loss, 0.0});
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

FixedFeature genuinize(const GenuinizerModel& model, const FixedFeature& feat,
                       bool allow_untrained) {
  if (!model.trained() && !allow_untrained)
    throw ContractError("genuinize: model has not been trained "
                        "(pass allow_untrained to override)");
  if (feat.bins != model.input_bins || feat.frames != model.input_frames)
    throw ShapeError(str("genuinize: feature '", feat.utterance_id, "' has shape ",
                         feat.bins, "x", feat.frames, ", expected ",
                         model.input_bins, "x", model.input_frames));
  Tensor x = features_to_tensor({&feat});
  // Eval forward only reads parameters, so the const_cast is safe across
  // concurrent callers.
  Tensor out = transformer_forward(const_cast<GenuinizerModel&>(model), x, Mode::kEval);
  FixedFeature res;
  res.utterance_id = feat.utterance_id;
  res.bins = feat.bins;
  res.frames = feat.frames;
  res.m.assign(out.values().begin(), out.values().end());
  return res;
}

double reconstruction_error(const GenuinizerModel& model, const FixedFeature& feat,
                            bool allow_untrained) {
  const FixedFeature rec = genuinize(model, feat, allow_untrained);
  double acc = 0.0;
  for (size_t i = 0; i < rec.m.size(); ++i) {
    const double d = rec.m[i] - feat.m[i];
    acc += d * d;
  }
  return acc / static_cast<double>(rec.m.size());
}

void save_genuinizer(const GenuinizerModel& model, const std::string& path) {
  nlohmann::json meta;
  meta["kind"] = "genuinizer";
  meta["specs"] = layers_to_json(model.specs);
  meta["input_bins"] = model.input_bins;
  meta["input_frames"] = model.input_frames;
  meta["pad_bins_to"] = model.pad_bins_to;
  meta["source_class"] = key_name(model.source_class);
  meta["epochs_seen"] = model.epochs_seen;
  if (std::isfinite(model.final_loss)) meta["final_loss"] = model.final_loss;

  Checkpoint ckpt;
  ckpt.metadata = meta.dump();
  for (const auto& [name, t] : model.params.params) {
    ckpt.entries.push_back({name, t.shape(),
                            std::vector<double>(t.values().begin(), t.values().end())});
  }
  size_t bn_idx = 0;
  for (size_t i = 0; i < model.specs.size(); ++i) {
    if (model.specs[i].kind != LayerKind::kBatchNorm2d) continue;
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

GenuinizerModel load_genuinizer(const std::string& path) {
  const Checkpoint ckpt = load_checkpoint(path);
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(ckpt.metadata);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(str("'", path, "': bad checkpoint metadata: ", e.what()));
  }
  if (meta.value("kind", "") != "genuinizer")
    throw FormatError(str("'", path, "' is not a genuinizer checkpoint (kind '",
                          meta.value("kind", ""), "')"));
  GenuinizerModel model = build_genuinizer(
      layers_from_json(meta.at("specs")), meta.at("input_bins").get<int>(),
      meta.at("input_frames").get<int>(), meta.at("pad_bins_to").get<int>(),
      /*seed=*/0, key_from_name(meta.at("source_class").get<std::string>()));
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
  for (size_t i = 0; i < model.specs.size(); ++i) {
    if (model.specs[i].kind != LayerKind::kBatchNorm2d) continue;
    const std::string prefix = "l" + std::to_string(i);
    auto& st = model.params.bn_states.at(bn_idx++);
    st.running_mean = ckpt.at(prefix + ".running_mean").data;
    st.running_var = ckpt.at(prefix + ".running_var").data;
  }
  return model;
}

}  // namespace fg

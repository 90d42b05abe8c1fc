#include "fg/training.hpp"

#include <algorithm>

namespace fg {

void validate_train_config(const TrainRunConfig& cfg) {
  if (cfg.epochs < 1) throw ConfigError(str("train config: epochs must be >= 1, got ", cfg.epochs));
  if (cfg.batch < 1) throw ConfigError(str("train config: batch must be >= 1, got ", cfg.batch));
  if (cfg.lr <= 0.0) throw ConfigError("train config: lr must be positive");
  if (cfg.holdout_fraction < 0.0 || cfg.holdout_fraction >= 1.0)
    throw ConfigError("train config: holdout fraction must be in [0,1)");
  if (cfg.patience < 0) throw ConfigError("train config: patience must be >= 0");
  if (cfg.weight_decay < 0.0) throw ConfigError("train config: weight decay must be >= 0");
}

Tensor features_to_tensor(const std::vector<const FixedFeature*>& batch) {
  if (batch.empty()) throw ContractError("features_to_tensor: empty batch");
  const int bins = batch.front()->bins;
  const int frames = batch.front()->frames;
  const int64_t per = static_cast<int64_t>(bins) * frames;
  std::vector<double> buf(static_cast<size_t>(batch.size()) * per);
  for (size_t i = 0; i < batch.size(); ++i) {
    const FixedFeature* f = batch[i];
    if (f->bins != bins || f->frames != frames)
      throw ShapeError(str("features_to_tensor: feature '", f->utterance_id,
                           "' has shape ", f->bins, "x", f->frames,
                           ", expected ", bins, "x", frames));
    std::copy(f->m.begin(), f->m.end(), buf.begin() + static_cast<int64_t>(i) * per);
  }
  return Tensor::constant({static_cast<int>(batch.size()), 1, bins, frames},
                          std::move(buf));
}

ParamSnapshot snapshot_params(const StackParams& sp) {
  ParamSnapshot snap;
  snap.values.reserve(sp.params.size());
  for (const auto& [name, t] : sp.params)
    snap.values.emplace_back(t.values().begin(), t.values().end());
  snap.bn.reserve(sp.bn_states.size());
  for (const auto& bn : sp.bn_states)
    snap.bn.emplace_back(bn.running_mean, bn.running_var);
  return snap;
}

void restore_params(StackParams& sp, const ParamSnapshot& snap) {
  if (snap.values.size() != sp.params.size() || snap.bn.size() != sp.bn_states.size())
    throw ContractError("restore_params: snapshot does not match parameter set");
  for (size_t i = 0; i < sp.params.size(); ++i) {
    auto vals = sp.params[i].second.values();
    if (vals.size() != snap.values[i].size())
      throw ShapeError("restore_params: parameter size changed");
    std::copy(snap.values[i].begin(), snap.values[i].end(), vals.begin());
  }
  for (size_t i = 0; i < sp.bn_states.size(); ++i) {
    sp.bn_states[i].running_mean = snap.bn[i].first;
    sp.bn_states[i].running_var = snap.bn[i].second;
  }
}

}  // namespace fg

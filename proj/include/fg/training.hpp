#ifndef FG_TRAINING_HPP
#define FG_TRAINING_HPP

#include <cstdint>
#include <vector>

#include "fg/cqt.hpp"
#include "fg/layers.hpp"
#include "fg/metrics.hpp"

namespace fg {

struct TrainRunConfig {
  int epochs = 10;
  int batch = 4;
  uint64_t seed = 0;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 2e-4;
  double holdout_fraction = 0.1;  // transformer best-epoch selection split
  int patience = 0;               // early stop after this many epochs without
                                  // selection-loss improvement; 0 disables
};

void validate_train_config(const TrainRunConfig& cfg);

struct LabeledFeature {
  FixedFeature feat;
  Key key = Key::kBonafide;
};

struct TrainCurvePoint {
  int epoch = 0;
  double train_loss = 0.0;
  double sel_loss = 0.0;   // holdout/dev loss when available, else train loss
  double train_acc = 0.0;  // classifier runs only
};

// [B,1,bins,frames] constant tensor from a feature batch.
Tensor features_to_tensor(const std::vector<const FixedFeature*>& batch);

// Deep copy of trainable values plus batch-norm running buffers, for
// best-epoch checkpointing.
struct ParamSnapshot {
  std::vector<std::vector<double>> values;
  std::vector<std::pair<std::vector<double>, std::vector<double>>> bn;
};

ParamSnapshot snapshot_params(const StackParams& sp);
void restore_params(StackParams& sp, const ParamSnapshot& snap);

}  // namespace fg

#endif  // FG_TRAINING_HPP

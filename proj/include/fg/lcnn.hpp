#ifndef FG_LCNN_HPP
#define FG_LCNN_HPP

#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "fg/genuinizer.hpp"
#include "fg/training.hpp"

namespace fg {

// Which transformer, if any, fed the classifier during training.
enum class PipelineMode { kBaseline, kFg, kFs };

const char* pipeline_mode_name(PipelineMode m);
PipelineMode pipeline_mode_from_name(const std::string& name);

// MFM-activated convolutional classifier: conv->MFM blocks with batch norm
// after each max pooling, then an MFM fully connected stage with a single
// dropout, ending in two logits (spoof, bonafide).
struct LcnnArch {
  std::vector<LayerSpec> specs;
  int input_bins = kLpsBins;
  int input_frames = kLpsFrames;
  std::string preset = "custom";

  // 3 conv-MFM blocks (8/12/16 channels after MFM), CPU-trainable.
  static LcnnArch desk(int input_bins = kLpsBins, int input_frames = kLpsFrames,
                       double drop_p = 0.4);
  // Deeper ladder with 1x1 bottleneck convolutions.
  static LcnnArch full(int input_bins = kLpsBins, int input_frames = kLpsFrames,
                       double drop_p = 0.4);
};

struct LcnnModel {
  LcnnArch arch;
  StackParams params;
  PipelineMode mode = PipelineMode::kBaseline;
  int epochs_seen = 0;
  double final_loss = std::numeric_limits<double>::quiet_NaN();

  bool trained() const { return epochs_seen >= 1; }
};

struct CmScore {
  std::string utterance_id;
  double score = 0.0;  // logit(bonafide) - logit(spoof)
};

// Enforces the arch invariants (even channels into every MFM, exactly one
// dropout placed in the fully connected stage, final width 2) and
// initializes deterministically from the seed.
LcnnModel build_lcnn(const LcnnArch& arch, uint64_t seed,
                     PipelineMode mode = PipelineMode::kBaseline);

// Softmax cross-entropy training; requires both classes in the training
// set. Best checkpoint by dev loss when a dev set is supplied, else by
// training loss.
std::vector<TrainCurvePoint> train_lcnn(
    LcnnModel& model, const std::vector<LabeledFeature>& train_set,
    const std::vector<LabeledFeature>* dev_set, const TrainRunConfig& cfg);

CmScore score(const LcnnModel& model, const FixedFeature& feat,
              bool allow_untrained = false);
std::vector<CmScore> score_batch(const LcnnModel& model,
                                 const std::vector<const FixedFeature*>& feats,
                                 bool allow_untrained = false);

// Applies the transformer (when present) then scores. The supplied
// transformer must match the classifier's recorded mode: baseline takes
// none, FG a bonafide-trained transformer, FS a spoof-trained one.
CmScore score_pipeline(const GenuinizerModel* transformer, const LcnnModel& model,
                       const FixedFeature& feat);

void save_lcnn(const LcnnModel& model, const std::string& path);
LcnnModel load_lcnn(const std::string& path);

}  // namespace fg

#endif  // FG_LCNN_HPP

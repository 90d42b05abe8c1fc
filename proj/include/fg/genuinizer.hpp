#ifndef FG_GENUINIZER_HPP
#define FG_GENUINIZER_HPP

#include <limits>
#include <string>
#include <vector>

#include "fg/training.hpp"

namespace fg {

// Fully convolutional encoder/decoder. The encoder downsamples with strided
// convolutions (leaky-ReLU, batch-norm on all but the first layer); the
// decoder mirrors it with transposed convolutions (ReLU, batch-norm on all
// but the last layer). The final layer is linear so signed log-power values
// pass through unclipped. No fully connected layers anywhere.
//
// The first convolution takes three channels: the feature plus fixed row-
// and column-coordinate planes. Frequency position is absolute for spectral
// features, and the coordinate inputs let the stack learn bin- and
// frame-dependent structure that pure weight sharing cannot represent.
struct GenuinizerArch {
  std::vector<int> channels = {16, 32, 64, 128};  // encoder ladder from 1
  int kernel = 4;
  int stride = 2;
  int padding = 1;
  double leaky_slope = 0.2;
  int input_bins = kLpsBins;
  int input_frames = kLpsFrames;
  // The bin axis is zero-padded up to this extent before the stack and
  // cropped back after it, keeping the external contract while allowing
  // power-of-two strides.
  int pad_bins_to = 864;

  std::vector<LayerSpec> build_specs() const;
};

struct GenuinizerModel {
  std::vector<LayerSpec> specs;
  StackParams params;
  int input_bins = kLpsBins;
  int input_frames = kLpsFrames;
  int pad_bins_to = 864;
  Key source_class = Key::kBonafide;
  int epochs_seen = 0;
  double final_loss = std::numeric_limits<double>::quiet_NaN();

  bool trained() const { return epochs_seen >= 1; }
};

// Validates the stack (no affine layers; the composition must reproduce the
// padded input shape exactly, reported layer by layer on failure) and
// initializes parameters deterministically from the seed.
GenuinizerModel build_genuinizer(const GenuinizerArch& arch, uint64_t seed,
                                 Key source_class = Key::kBonafide);
GenuinizerModel build_genuinizer(std::vector<LayerSpec> specs, int input_bins,
                                 int input_frames, int pad_bins_to,
                                 uint64_t seed, Key source_class);

// Minimizes reconstruction MSE on features of the model's source class only;
// a feature of the other class anywhere in the set is a contract error.
// Keeps the parameters of the best epoch by selection loss (holdout split
// when configured, else training loss).
std::vector<TrainCurvePoint> train_genuinizer(
    GenuinizerModel& model, const std::vector<LabeledFeature>& features,
    const TrainRunConfig& cfg);

// Deterministic eval-mode transform; output shape equals input shape.
// Untrained models are refused unless explicitly overridden.
FixedFeature genuinize(const GenuinizerModel& model, const FixedFeature& feat,
                       bool allow_untrained = false);

// MSE between genuinize(model, feat) and feat.
double reconstruction_error(const GenuinizerModel& model, const FixedFeature& feat,
                            bool allow_untrained = false);

void save_genuinizer(const GenuinizerModel& model, const std::string& path);
GenuinizerModel load_genuinizer(const std::string& path);

}  // namespace fg

#endif  // FG_GENUINIZER_HPP

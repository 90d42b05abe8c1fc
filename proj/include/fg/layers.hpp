#ifndef FG_LAYERS_HPP
#define FG_LAYERS_HPP

#include <array>
#include <string>
#include <vector>

#include "fg/rng.hpp"
#include "fg/tensor.hpp"

namespace fg {

enum class Mode { kTrain, kEval };

using Pair = std::array<int, 2>;  // {height, width}

// --- primitive differentiable ops ------------------------------------------
//
// Convolution is cross-correlation (no kernel flip), matching the usual
// deep-learning convention; the oracle tests encode the same definition.

// x [N,C,H,W], w [F,C,kh,kw], b [F] -> [N,F,H',W'],
// H' = (H + 2*pad - kh)/stride + 1 (floor).
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b,
              Pair stride, Pair pad);

// x [N,F,H,W], w [F,C,kh,kw], b [C] -> [N,C,H'',W''],
// H'' = (H-1)*stride - 2*pad + kh. The linear part is the exact adjoint of
// conv2d with the same weight and hyperparameters.
Tensor conv_transpose2d(const Tensor& x, const Tensor& w, const Tensor& b,
                        Pair stride, Pair pad);

struct BatchNormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  explicit BatchNormState(int channels = 0, double momentum_ = 0.1,
                          double eps_ = 1e-5)
      : running_mean(channels, 0.0),
        running_var(channels, 1.0),
        momentum(momentum_),
        eps(eps_) {}
};

// Train mode normalizes with per-channel batch statistics (population
// variance over N*H*W) and updates the running buffers; eval mode uses the
// running buffers only. Requires N*H*W >= 2 in train mode.
Tensor batchnorm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                   BatchNormState& state, Mode mode);

// max(x, slope*x); the subgradient at 0 is the positive-side derivative (1).
Tensor leaky_relu(const Tensor& x, double slope);
Tensor relu(const Tensor& x);

// Max-Feature-Map: splits the channel axis in halves and takes the
// elementwise max; ties route the gradient to the first half. Accepts
// [N,2K,H,W] or [N,2K].
Tensor mfm(const Tensor& x);

// Window-wise max, no padding; ties route to the first element in scan order.
Tensor maxpool2d(const Tensor& x, Pair kernel, Pair stride);

// x [N,D], w [D,M], b [M] -> [N,M].
Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b);

// Inverted dropout: train mode zeroes elements with probability p and scales
// survivors by 1/(1-p); eval mode (and p = 0) returns the input unchanged.
Tensor dropout(const Tensor& x, double p, Mode mode, Rng* rng);

// Mean squared difference over all elements.
Tensor mse_loss(const Tensor& pred, const Tensor& target);

// Mean over the batch of -log softmax(logits)[label].
Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels);

// --- layer descriptors ------------------------------------------------------

enum class LayerKind {
  kConv2d,
  kConvTranspose2d,
  kBatchNorm2d,
  kLeakyRelu,
  kRelu,
  kMfm,
  kMaxPool2d,
  kAffine,
  kDropout,
};

const char* layer_kind_name(LayerKind k);
LayerKind layer_kind_from_name(const std::string& name);

struct LayerSpec {
  LayerKind kind;
  int in_ch = 0, out_ch = 0;  // conv/conv_transpose channels; affine in/out dims
  int kh = 1, kw = 1;
  int sh = 1, sw = 1;
  int ph = 0, pw = 0;
  double slope = 0.0;   // leaky_relu
  double drop_p = 0.0;  // dropout

  static LayerSpec conv2d(int in, int out, int k, int s, int p);
  static LayerSpec conv_transpose2d(int in, int out, int k, int s, int p);
  static LayerSpec batchnorm2d();
  static LayerSpec leaky_relu(double slope);
  static LayerSpec relu();
  static LayerSpec mfm();
  static LayerSpec maxpool2d(int k, int s);
  static LayerSpec affine(int in, int out);
  static LayerSpec dropout(double p);
};

// Per-layer hyperparameter validation (strides/kernels >= 1, drop_p in
// [0,1)); shape-dependent rules live in infer_stack_shapes.
void validate_layer(const LayerSpec& spec);

// Output shape of every layer given the input shape. Throws ShapeError with
// the layer index and shape trace on any violation (odd channels into mfm,
// kernel larger than input, ...). An affine after a 4-D layer implies a
// flatten to [N, C*H*W].
std::vector<Shape> infer_stack_shapes(const std::vector<LayerSpec>& specs,
                                      const Shape& input);

// Trainable state for a LayerSpec stack.
struct StackParams {
  std::vector<std::pair<std::string, Tensor>> params;  // checkpoint order
  std::vector<BatchNormState> bn_states;               // one per batchnorm

  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  std::vector<Tensor> trainable() const;
};

// He-uniform weights, zero biases, unit gamma / zero beta; draw order is
// fixed so the result is deterministic in the seed.
StackParams init_stack(const std::vector<LayerSpec>& specs, const Shape& input,
                       Rng& rng);

Tensor run_stack(const std::vector<LayerSpec>& specs, StackParams& state,
                 const Tensor& x, Mode mode, Rng* dropout_rng);

}  // namespace fg

#endif  // FG_LAYERS_HPP

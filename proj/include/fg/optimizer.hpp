#ifndef FG_OPTIMIZER_HPP
#define FG_OPTIMIZER_HPP

#include <cstdint>
#include <vector>

#include "fg/tensor.hpp"

namespace fg {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 2e-4;  // decoupled; applied outside the adaptive step
};

// Adam with decoupled weight decay. The decay term -lr*wd*p uses the
// pre-update parameter value, so a zero-gradient step shrinks each
// parameter by exactly the factor (1 - lr*wd).
class AdamW {
 public:
  AdamW(std::vector<Tensor> params, AdamConfig cfg = {});

  // One update from the parameters' current grad buffers. Throws
  // EngineError on non-finite gradients, ShapeError if a parameter's
  // shape no longer matches its moment buffers.
  void step();
  void zero_grad();
  int64_t step_count() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  AdamConfig cfg_;
  int64_t t_ = 0;
};

}  // namespace fg

#endif  // FG_OPTIMIZER_HPP

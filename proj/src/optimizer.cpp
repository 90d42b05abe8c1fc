#include "fg/optimizer.hpp"

#include <cmath>

namespace fg {

AdamW::AdamW(std::vector<Tensor> params, AdamConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  if (cfg_.lr <= 0.0) throw ConfigError(str("AdamW: lr must be positive, got ", cfg_.lr));
  if (cfg_.beta1 < 0.0 || cfg_.beta1 >= 1.0 || cfg_.beta2 < 0.0 || cfg_.beta2 >= 1.0)
    throw ConfigError("AdamW: betas must be in [0,1)");
  if (cfg_.weight_decay < 0.0) throw ConfigError("AdamW: weight decay must be >= 0");
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

void AdamW::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    auto vals = p.values();
    auto grads = p.grad();
    if (m_[i].size() != vals.size())
      throw ShapeError(str("AdamW: parameter ", i, " changed size (",
                           vals.size(), " vs state ", m_[i].size(), ")"));
    if (grads.empty())
      throw ShapeError(str("AdamW: parameter ", i, " has no gradient buffer"));
    for (size_t j = 0; j < vals.size(); ++j) {
      const double g = grads[j];
      if (!std::isfinite(g))
        throw EngineError(str("AdamW: non-finite gradient in parameter ", i));
      m_[i][j] = cfg_.beta1 * m_[i][j] + (1.0 - cfg_.beta1) * g;
      v_[i][j] = cfg_.beta2 * v_[i][j] + (1.0 - cfg_.beta2) * g * g;
      const double mhat = m_[i][j] / bc1;
      const double vhat = v_[i][j] / bc2;
      const double prev = vals[j];
      vals[j] = prev - cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) +
                                  cfg_.weight_decay * prev);
    }
  }
}

void AdamW::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

}  // namespace fg

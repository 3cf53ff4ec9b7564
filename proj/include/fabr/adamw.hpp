#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "fabr/tensor.hpp"

namespace fabr {

struct AdamWConfig {
  float lr = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  float weight_decay = 1e-4f;
};

// AdamW with decoupled weight decay:
//   m <- b1 m + (1-b1) g          v <- b2 v + (1-b2) g^2
//   p <- p - lr (m_hat / (sqrt(v_hat) + eps) + wd p)
// First and second moments are kept per parameter; step count is shared.
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

  void attach(const std::vector<Tensor*>& params) {
    params_ = params;
    m_.clear();
    v_.clear();
    for (Tensor* p : params_) {
      m_.emplace_back(p->numel(), 0.0f);
      v_.emplace_back(p->numel(), 0.0f);
    }
    step_ = 0;
  }

  // Parameters [0, n) are skipped entirely by step() — no update, no decay,
  // no moment motion. Used to freeze the backbone in two-stage schedules.
  void set_frozen_prefix(size_t n) { frozen_prefix_ = n; }

  void step() {
    ++step_;
    const float bc1 = 1.0f - std::pow(cfg_.beta1, static_cast<float>(step_));
    const float bc2 = 1.0f - std::pow(cfg_.beta2, static_cast<float>(step_));
    for (size_t i = frozen_prefix_; i < params_.size(); ++i) {
      Tensor& p = *params_[i];
      if (!p.requires_grad()) throw std::runtime_error("adamw: parameter without grad buffer");
      float* pd = p.data();
      const float* g = p.grad();
      float* m = m_[i].data();
      float* v = v_[i].data();
      const std::int64_t n = p.numel();
      for (std::int64_t j = 0; j < n; ++j) {
        m[j] = cfg_.beta1 * m[j] + (1.0f - cfg_.beta1) * g[j];
        v[j] = cfg_.beta2 * v[j] + (1.0f - cfg_.beta2) * g[j] * g[j];
        const float mh = m[j] / bc1;
        const float vh = v[j] / bc2;
        pd[j] -= cfg_.lr * (mh / (std::sqrt(vh) + cfg_.eps) + cfg_.weight_decay * pd[j]);
      }
    }
  }

  void zero_grad() {
    for (Tensor* p : params_) p->zero_grad();
  }

  std::uint64_t step_count() const { return step_; }
  void set_step_count(std::uint64_t s) { step_ = s; }
  const AdamWConfig& config() const { return cfg_; }

  size_t param_count() const { return params_.size(); }
  std::vector<float>& moment1(size_t i) { return m_[i]; }
  std::vector<float>& moment2(size_t i) { return v_[i]; }

 private:
  AdamWConfig cfg_;
  std::vector<Tensor*> params_;
  std::vector<std::vector<float>> m_, v_;
  std::uint64_t step_ = 0;
  size_t frozen_prefix_ = 0;
};

} // namespace fabr

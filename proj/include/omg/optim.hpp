#pragma once

#include <cmath>
#include <numbers>
#include <unordered_map>
#include <vector>

#include "omg/nn.hpp"

namespace omg {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double warmup_fraction = 0.03;
  double clip_norm = 1.0;  // <= 0 disables clipping
  std::size_t total_steps = 1;
};

// Linear warmup followed by cosine decay to zero.
inline double scheduled_lr(const AdamConfig& c, std::size_t step) {
  const double total = static_cast<double>(std::max<std::size_t>(c.total_steps, 1));
  const double warm = std::max(1.0, std::floor(c.warmup_fraction * total));
  const double s = static_cast<double>(step);
  if (s < warm) return c.lr * (s + 1.0) / warm;
  const double t = std::min(1.0, (s - warm) / std::max(1.0, total - warm));
  return c.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

template <class T>
class Adam {
 public:
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

  const AdamConfig& config() const { return cfg_; }
  std::size_t steps() const { return step_; }

  // grads[i] belongs to params[i]; frozen parameters are skipped.
  // Returns the pre-clip global gradient norm.
  double step(const std::vector<ParamPtr<T>>& params, std::vector<std::vector<T>>& grads) {
    double sq = 0.0;
    for (std::size_t i = 0; i < params.size(); ++i)
      if (params[i]->trainable)
        for (T g : grads[i]) sq += static_cast<double>(g) * static_cast<double>(g);
    const double norm = std::sqrt(sq);
    const double clip = cfg_.clip_norm > 0 && norm > cfg_.clip_norm ? cfg_.clip_norm / norm : 1.0;
    const double lr = scheduled_lr(cfg_, step_);
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = *params[i];
      if (!p.trainable || grads[i].empty()) continue;
      auto& st = state_[&p];
      auto w = p.value.mutable_data();
      if (st.m.empty()) {
        st.m.assign(w.size(), 0.0);
        st.v.assign(w.size(), 0.0);
      }
      for (std::size_t j = 0; j < w.size(); ++j) {
        const double g = static_cast<double>(grads[i][j]) * clip;
        st.m[j] = cfg_.beta1 * st.m[j] + (1.0 - cfg_.beta1) * g;
        st.v[j] = cfg_.beta2 * st.v[j] + (1.0 - cfg_.beta2) * g * g;
        const double upd = lr * (st.m[j] / bc1) / (std::sqrt(st.v[j] / bc2) + cfg_.eps);
        w[j] = static_cast<T>(static_cast<double>(w[j]) - upd);
      }
    }
    return norm;
  }

 private:
  struct State {
    std::vector<double> m, v;
  };
  AdamConfig cfg_;
  std::size_t step_ = 0;
  std::unordered_map<const Parameter<T>*, State> state_;
};

}  // namespace omg

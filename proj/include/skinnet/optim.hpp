#pragma once

// Rectified Adam with decoupled weight decay.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "skinnet/nn.hpp"

namespace skinnet {

struct RAdamOptions {
  double learning_rate = 1e-4;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  // Rectification kicks in once the SMA length exceeds this.
  double rho_threshold = 5.0;
};

struct OptimizerState {
  std::uint64_t step_count = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  RAdamOptions options;
};

class RAdam {
 public:
  explicit RAdam(RAdamOptions options = {}) { state_.options = options; }

  const OptimizerState& state() const { return state_; }
  OptimizerState& state() { return state_; }

  // One update over every parameter in the store using its current grad.
  void step(ParameterStore& store) {
    auto& entries = store.entries();
    if (state_.first_moment.empty()) {
      for (const auto& [_, t] : entries) {
        state_.first_moment.emplace_back(t.numel(), 0.0);
        state_.second_moment.emplace_back(t.numel(), 0.0);
      }
    }
    if (state_.first_moment.size() != entries.size())
      throw TensorError("optimizer state does not match parameter count");
    for (std::size_t p = 0; p < entries.size(); ++p) {
      if (state_.first_moment[p].size() != entries[p].second.numel())
        throw TensorError("optimizer moments do not match shape of " +
                          entries[p].first);
      for (double g : entries[p].second.grad())
        if (!std::isfinite(g))
          throw TensorError("non-finite gradient in parameter " + entries[p].first);
    }

    const auto& o = state_.options;
    const auto t = static_cast<double>(++state_.step_count);
    const double b1t = std::pow(o.beta1, t);
    const double b2t = std::pow(o.beta2, t);
    const double rho_inf = 2.0 / (1.0 - o.beta2) - 1.0;
    const double rho_t = rho_inf - 2.0 * t * b2t / (1.0 - b2t);
    const bool rectify = rho_t > o.rho_threshold;
    double rect = 0.0;
    if (rectify)
      rect = std::sqrt((rho_t - 4.0) * (rho_t - 2.0) * rho_inf /
                       ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t));

    for (std::size_t p = 0; p < entries.size(); ++p) {
      auto& param = entries[p].second;
      auto& w = param.mutable_values();
      const auto& g = param.mutable_grad();
      auto& m = state_.first_moment[p];
      auto& v = state_.second_moment[p];
      for (std::size_t i = 0; i < w.size(); ++i) {
        w[i] *= 1.0 - o.learning_rate * o.weight_decay;
        m[i] = o.beta1 * m[i] + (1.0 - o.beta1) * g[i];
        v[i] = o.beta2 * v[i] + (1.0 - o.beta2) * g[i] * g[i];
        const double m_hat = m[i] / (1.0 - b1t);
        if (rectify) {
          const double adaptive = std::sqrt(1.0 - b2t) / (std::sqrt(v[i]) + o.epsilon);
          w[i] -= o.learning_rate * m_hat * rect * adaptive;
        } else {
          w[i] -= o.learning_rate * m_hat;
        }
      }
    }
  }

 private:
  OptimizerState state_;
};

}  // namespace skinnet

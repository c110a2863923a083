#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "synct/error.hpp"
#include "synct/tensor.hpp"

namespace synct {

// Transformer warmup schedule:
// scale · d_model^−0.5 · min(step^−0.5, step · warmup^−1.5).
inline double noam_lr(std::size_t step, std::size_t d_model, std::size_t warmup,
                      double scale) {
  if (step == 0) fail(ErrorCode::kContract, "noam_lr: step counts from 1");
  if (warmup == 0 || d_model == 0) fail(ErrorCode::kContract, "noam_lr: warmup and d_model must be >= 1");
  const double s = static_cast<double>(step);
  const double w = static_cast<double>(warmup);
  return scale / std::sqrt(static_cast<double>(d_model)) *
         std::min(1.0 / std::sqrt(s), s * std::pow(w, -1.5));
}

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double epsilon = 1e-9;
};

template <class T>
struct OptimizerState {
  std::size_t step = 0;
  std::vector<std::vector<T>> first_moment;
  std::vector<std::vector<T>> second_moment;

  friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

// Scales gradients so their global L2 norm is at most max_norm; a negative
// max_norm disables clipping. Returns the norm before clipping.
template <class T>
double clip_global_norm(std::vector<std::vector<T>>& grads, double max_norm) {
  double sq = 0;
  for (const auto& g : grads)
    for (T v : g) sq += static_cast<double>(v) * static_cast<double>(v);
  const double norm = std::sqrt(sq);
  if (max_norm >= 0 && norm > max_norm) {
    const T factor = static_cast<T>(max_norm / norm);
    for (auto& g : grads)
      for (T& v : g) v *= factor;
  } else if (max_norm == 0) {
    for (auto& g : grads)
      for (T& v : g) v = T(0);
  }
  return norm;
}

template <class T>
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  const AdamConfig& config() const { return config_; }

  // One update of every parameter with its (already clipped) gradient.
  void update(std::vector<Tensor<T>>& params,
              const std::vector<std::vector<T>>& grads, double lr,
              OptimizerState<T>& state) const {
    if (state.first_moment.empty()) {
      for (const Tensor<T>& p : params) {
        state.first_moment.emplace_back(p.size(), T(0));
        state.second_moment.emplace_back(p.size(), T(0));
      }
    }
    if (state.first_moment.size() != params.size() || grads.size() != params.size()) {
      fail(ErrorCode::kContract, "optimizer state does not match the parameter list");
    }
    ++state.step;
    const T b1 = static_cast<T>(config_.beta1);
    const T b2 = static_cast<T>(config_.beta2);
    const T c1 = static_cast<T>(1.0 - std::pow(config_.beta1, static_cast<double>(state.step)));
    const T c2 = static_cast<T>(1.0 - std::pow(config_.beta2, static_cast<double>(state.step)));
    const T eps = static_cast<T>(config_.epsilon);
    const T rate = static_cast<T>(lr);
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto p = params[i].mutable_data();
      auto& m = state.first_moment[i];
      auto& v = state.second_moment[i];
      const auto& g = grads[i];
      for (std::size_t j = 0; j < p.size(); ++j) {
        m[j] = b1 * m[j] + (T(1) - b1) * g[j];
        v[j] = b2 * v[j] + (T(1) - b2) * g[j] * g[j];
        const T mhat = m[j] / c1;
        const T vhat = v[j] / c2;
        p[j] -= rate * mhat / (std::sqrt(vhat) + eps);
      }
    }
  }

 private:
  AdamConfig config_;
};

}  // namespace synct

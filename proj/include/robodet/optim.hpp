#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <vector>

#include "robodet/tensor.hpp"

namespace robodet {

/// One contiguous parameter block with its gradient, optional prune mask and learning-rate multiplier.
template <typename Scalar>
struct ParamSlot {
  Scalar* value = nullptr;
  const Scalar* grad = nullptr;
  Eigen::Index size = 0;
  const std::uint8_t* mask = nullptr;  // 0 = pruned; pruned entries stay exactly zero
  double lr_scale = 1.0;
};

template <typename Scalar>
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::int64_t step = 0;
  std::vector<Vector<Scalar>> first;
  std::vector<Vector<Scalar>> second;
};

/// Bias-corrected Adam update over every slot.
template <typename Scalar>
void adam_step(std::span<const ParamSlot<Scalar>> slots, AdamState<Scalar>& state, double lr) {
  if (state.first.size() != slots.size()) {
    state.first.assign(slots.size(), {});
    state.second.assign(slots.size(), {});
    for (std::size_t i = 0; i < slots.size(); ++i) {
      state.first[i] = Vector<Scalar>::Zero(slots[i].size);
      state.second[i] = Vector<Scalar>::Zero(slots[i].size);
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(state.beta1, t);
  const double correction2 = 1.0 - std::pow(state.beta2, t);
  const auto b1 = static_cast<Scalar>(state.beta1);
  const auto b2 = static_cast<Scalar>(state.beta2);

  for (std::size_t i = 0; i < slots.size(); ++i) {
    const auto& slot = slots[i];
    Eigen::Map<Vector<Scalar>> param(slot.value, slot.size);
    Eigen::Map<const Vector<Scalar>> grad(slot.grad, slot.size);
    auto m = state.first[i].array();
    auto v = state.second[i].array();
    m = b1 * m + (Scalar(1) - b1) * grad.array();
    v = b2 * v + (Scalar(1) - b2) * grad.array().square();
    const auto step_size = static_cast<Scalar>(lr * slot.lr_scale / correction1);
    const auto eps = static_cast<Scalar>(state.epsilon);
    const auto denom_scale = static_cast<Scalar>(1.0 / std::sqrt(correction2));
    param.array() -= step_size * m / (v.sqrt() * denom_scale + eps);
    if (slot.mask != nullptr) {
      for (Eigen::Index k = 0; k < slot.size; ++k) {
        if (slot.mask[k] == 0) {
          param[k] = Scalar(0);
          m[k] = Scalar(0);
          v[k] = Scalar(0);
        }
      }
    }
  }
}

/// lr_min + ½(lr_max − lr_min)(1 + cos(π·t/T)).
inline double cosine_lr(std::int64_t step, std::int64_t total, double lr_max, double lr_min) {
  if (total <= 0) return lr_min;
  const double progress = static_cast<double>(step) / static_cast<double>(total);
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace robodet

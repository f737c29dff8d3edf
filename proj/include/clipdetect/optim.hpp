#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "clipdetect/tensor.hpp"

namespace clipdetect::nn {

/// Per-parameter gradients, in the same order and with the same shapes as
/// the parameter set they were computed for.
template <typename T>
struct GradientBundleT {
  std::vector<std::string> names;
  std::vector<BasicTensor<T>> tensors;

  std::size_t size() const { return tensors.size(); }

  static GradientBundleT zeros_like(const std::vector<std::string>& names,
                                    std::span<const BasicTensor<T>* const> params) {
    GradientBundleT bundle;
    bundle.names = names;
    bundle.tensors.reserve(params.size());
    for (const auto* p : params) bundle.tensors.emplace_back(p->shape());
    return bundle;
  }
};

using GradientBundle = GradientBundleT<float>;

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const {
    if (!(lr > 0.0)) throw ValidationError("adam: lr must be positive");
    if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) {
      throw ValidationError("adam: beta1 and beta2 must lie in (0, 1)");
    }
    if (!(epsilon > 0.0)) throw ValidationError("adam: epsilon must be positive");
  }
};

template <typename T>
struct AdamStateT {
  AdamConfig config;
  std::vector<BasicTensor<T>> first_moment;
  std::vector<BasicTensor<T>> second_moment;
  std::uint64_t step_count = 0;

  static AdamStateT fresh(std::span<const BasicTensor<T>* const> params, AdamConfig config = {}) {
    config.validate();
    AdamStateT state;
    state.config = config;
    for (const auto* p : params) {
      state.first_moment.emplace_back(p->shape());
      state.second_moment.emplace_back(p->shape());
    }
    return state;
  }
};

using AdamState = AdamStateT<float>;

/// One bias-corrected Adam update, in place.
template <typename T>
void adam_step(std::span<BasicTensor<T>* const> params, const GradientBundleT<T>& grads, AdamStateT<T>& state) {
  if (params.size() != grads.size() || params.size() != state.first_moment.size() ||
      params.size() != state.second_moment.size()) {
    throw DimensionError("adam_step: " + std::to_string(params.size()) + " parameters, " +
                         std::to_string(grads.size()) + " gradients, " + std::to_string(state.first_moment.size()) +
                         " moment slots");
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    const Shape& shape = params[k]->shape();
    require_shape(grads.tensors[k], shape, "adam_step gradient");
    require_shape(state.first_moment[k], shape, "adam_step first moment");
    require_shape(state.second_moment[k], shape, "adam_step second moment");
  }

  const AdamConfig& c = state.config;
  state.step_count += 1;
  const double t = static_cast<double>(state.step_count);
  const double correction1 = 1.0 - std::pow(c.beta1, t);
  const double correction2 = 1.0 - std::pow(c.beta2, t);

  for (std::size_t k = 0; k < params.size(); ++k) {
    T* theta = params[k]->data();
    const T* g = grads.tensors[k].data();
    T* m = state.first_moment[k].data();
    T* v = state.second_moment[k].data();
    const std::size_t n = params[k]->size();
    for (std::size_t i = 0; i < n; ++i) {
      const double gi = g[i];
      const double mi = c.beta1 * static_cast<double>(m[i]) + (1.0 - c.beta1) * gi;
      const double vi = c.beta2 * static_cast<double>(v[i]) + (1.0 - c.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double m_hat = mi / correction1;
      const double v_hat = vi / correction2;
      theta[i] = static_cast<T>(static_cast<double>(theta[i]) - c.lr * m_hat / (std::sqrt(v_hat) + c.epsilon));
    }
  }
}

}  // namespace clipdetect::nn

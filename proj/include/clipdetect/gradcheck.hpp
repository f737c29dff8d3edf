#pragma once

// Finite-difference verification of analytic gradients.
//
// An objective bundles a parameter set with a fixed input and target, and
// exposes parameters(), parameter_names(), loss(), gradients() and cast<U>().
// loss() optionally reports the activation signature (ReLU gates, pool
// winners) so that probes straddling a kink can be recognised. The analytic gradients are taken in the
// objective's own scalar type; the central differences are always taken on an
// extended-precision (long double) copy, so that rounding in the reference
// loss stays far below the gradients being checked.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <type_traits>
#include <vector>

#include "clipdetect/heads.hpp"
#include "clipdetect/layers.hpp"
#include "clipdetect/optim.hpp"

namespace clipdetect::nn {

template <typename O>
concept GradientObjective = requires(O o, const O co) {
  typename O::scalar_type;
  { o.parameters() } -> std::same_as<std::vector<BasicTensor<typename O::scalar_type>*>>;
  { co.parameter_names() } -> std::same_as<std::vector<std::string>>;
  { co.loss(static_cast<std::vector<std::uint32_t>*>(nullptr)) } -> std::same_as<long double>;
  { co.gradients() } -> std::same_as<GradientBundleT<typename O::scalar_type>>;
};

using reference_scalar = long double;

/// Suggested finite-difference step for objectives stored at type T.
template <typename T>
constexpr double default_epsilon() {
  return std::is_same_v<T, float> ? 1e-3 : 1e-5;
}

struct GradientFault {
  std::size_t parameter = 0;
  std::size_t index = 0;
  double factor = 2.0;
};

struct GradCheckOptions {
  double epsilon = 1e-5;
  /// 0 checks every coordinate; otherwise at most this many per tensor,
  /// drawn with `sample_seed`.
  std::size_t coordinates_per_tensor = 0;
  std::uint64_t sample_seed = 0;
  /// Exclude coordinates whose +/- epsilon probes cross a ReLU or max-pool
  /// switch; the central difference is meaningless there.
  bool skip_kinks = true;
  std::optional<GradientFault> fault;
};

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped_kinks = 0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

inline double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

namespace detail {

inline std::vector<std::size_t> pick_coordinates(std::size_t size, std::size_t limit, std::mt19937_64& rng) {
  std::vector<std::size_t> idx(size);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (limit == 0 || limit >= size) return idx;
  for (std::size_t i = 0; i < limit; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng() % (size - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(limit);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace detail

template <GradientObjective O>
GradCheckReport gradient_check(const O& objective, const GradCheckOptions& options = {}) {
  if (!(options.epsilon > 0.0)) throw ValidationError("gradient_check: epsilon must be positive");
  GradientBundleT<typename O::scalar_type> analytic = objective.gradients();
  if (options.fault) {
    const auto& f = *options.fault;
    analytic.tensors.at(f.parameter)[f.index] =
        static_cast<typename O::scalar_type>(analytic.tensors.at(f.parameter)[f.index] * f.factor);
  }

  auto reference = objective.template cast<reference_scalar>();
  std::vector<std::uint32_t> base_signature;
  std::vector<std::uint32_t> probe_signature;
  reference.loss(&base_signature);
  auto params = reference.parameters();
  const auto names = reference.parameter_names();
  std::mt19937_64 rng(options.sample_seed);

  GradCheckReport report;
  for (std::size_t k = 0; k < params.size(); ++k) {
    BasicTensor<reference_scalar>& p = *params[k];
    auto* sig = options.skip_kinks ? &probe_signature : nullptr;
    const reference_scalar eps = options.epsilon;
    for (std::size_t i : detail::pick_coordinates(p.size(), options.coordinates_per_tensor, rng)) {
      const reference_scalar saved = p[i];
      p[i] = saved + eps;
      const reference_scalar loss_plus = reference.loss(sig);
      const bool kink_plus = options.skip_kinks && probe_signature != base_signature;
      p[i] = saved - eps;
      const reference_scalar loss_minus = reference.loss(sig);
      const bool kink_minus = options.skip_kinks && probe_signature != base_signature;
      p[i] = saved;
      if (kink_plus || kink_minus) {
        ++report.skipped_kinks;
        continue;
      }
      // The step actually taken, as represented at reference precision.
      const reference_scalar span = (saved + eps) - (saved - eps);
      const double numeric = static_cast<double>((loss_plus - loss_minus) / span);
      const double a = static_cast<double>(analytic.tensors[k][i]);
      const double err = relative_error(a, numeric);
      ++report.checked;
      if (report.checked == 1 || err > report.max_relative_error) {
        report.max_relative_error = err;
        report.worst_parameter = names[k];
        report.worst_index = i;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Objectives.

/// A full head with fixed embedding, target, mode and dropout seed.
template <typename T>
struct HeadObjective {
  using scalar_type = T;
  BasicHead<T> head;
  BasicTensor<T> z;
  Label target = Label::Fake;
  Mode mode = Mode::Train;
  std::uint64_t dropout_seed = 0;

  std::vector<BasicTensor<T>*> parameters() { return head.parameters(); }
  std::vector<std::string> parameter_names() const { return BasicHead<T>::parameter_names(head.kind()); }
  long double loss(std::vector<std::uint32_t>* signature = nullptr) const {
    typename BasicHead<T>::Cache cache;
    const long double logit = head.forward_batch(z, mode, dropout_seed, signature ? &cache : nullptr)[0];
    if (signature != nullptr) *signature = head.activation_signature(cache);
    return bce_with_logits(logit, target == Label::Fake ? 1.0L : 0.0L);
  }
  GradientBundleT<T> gradients() const { return loss_and_gradients(head, z, target, mode, dropout_seed).gradients; }
  template <typename U>
  HeadObjective<U> cast() const {
    return {head.template cast<U>(), z.template cast<U>(), target, mode, dropout_seed};
  }
};

namespace detail {

// Isolated layers are scored by a fixed linear read-out followed by BCE, so
// the loss is scalar. The layer input is treated as a parameter, which checks
// the input gradient alongside the layer's own parameters.
template <typename T>
long double readout_loss(const BasicTensor<T>& out, const BasicTensor<T>& readout, double target) {
  const long double logit = dot(out.data(), readout.data(), out.size());
  return bce_with_logits(logit, static_cast<long double>(target));
}

template <typename T>
BasicTensor<accum_t<T>> readout_gradient(const BasicTensor<T>& out, const BasicTensor<T>& readout, double target) {
  using G = accum_t<T>;
  const G logit = dot(out.data(), readout.data(), out.size());
  const G g = bce_logit_gradient(logit, static_cast<G>(target));
  BasicTensor<G> grad(out.shape());
  for (std::size_t i = 0; i < grad.size(); ++i) grad[i] = g * static_cast<G>(readout[i]);
  return grad;
}

template <typename T>
BasicTensor<T> narrow(const BasicTensor<accum_t<T>>& g) {
  return g.template cast<T>();
}

}  // namespace detail

template <typename T>
struct DenseProbe {
  using scalar_type = T;
  DenseLayerT<T> layer;
  BasicTensor<T> x;
  BasicTensor<T> readout;
  double target = 1.0;

  std::vector<BasicTensor<T>*> parameters() { return {&layer.weights, &layer.bias, &x}; }
  std::vector<std::string> parameter_names() const { return {"weight", "bias", "input"}; }
  long double loss(std::vector<std::uint32_t>* = nullptr) const {
    return detail::readout_loss(dense_forward(layer, x), readout, target);
  }
  GradientBundleT<T> gradients() const {
    const auto out = dense_forward(layer, x);
    DenseLayerT<T> g{BasicTensor<T>(layer.weights.shape()), BasicTensor<T>(layer.bias.shape())};
    auto gx = dense_backward(layer, x, detail::readout_gradient(out, readout, target), g);
    return {parameter_names(), {std::move(g.weights), std::move(g.bias), detail::narrow<T>(gx)}};
  }
  template <typename U>
  DenseProbe<U> cast() const {
    return {{layer.weights.template cast<U>(), layer.bias.template cast<U>()}, x.template cast<U>(),
            readout.template cast<U>(), target};
  }
};

template <typename T>
struct Conv1DProbe {
  using scalar_type = T;
  Conv1DLayerT<T> layer;
  BasicTensor<T> x;
  BasicTensor<T> readout;
  double target = 1.0;

  std::vector<BasicTensor<T>*> parameters() { return {&layer.kernels, &layer.bias, &x}; }
  std::vector<std::string> parameter_names() const { return {"kernels", "bias", "input"}; }
  long double loss(std::vector<std::uint32_t>* = nullptr) const {
    return detail::readout_loss(conv1d_forward(layer, x), readout, target);
  }
  GradientBundleT<T> gradients() const {
    const auto out = conv1d_forward(layer, x);
    Conv1DLayerT<T> g{BasicTensor<T>(layer.kernels.shape()), BasicTensor<T>(layer.bias.shape()), layer.padding};
    auto gx = conv1d_backward(layer, x, detail::readout_gradient(out, readout, target), g);
    return {parameter_names(), {std::move(g.kernels), std::move(g.bias), detail::narrow<T>(gx)}};
  }
  template <typename U>
  Conv1DProbe<U> cast() const {
    return {{layer.kernels.template cast<U>(), layer.bias.template cast<U>(), layer.padding}, x.template cast<U>(),
            readout.template cast<U>(), target};
  }
};

template <typename T>
struct ReluProbe {
  using scalar_type = T;
  BasicTensor<T> x;
  BasicTensor<T> readout;
  double target = 1.0;

  std::vector<BasicTensor<T>*> parameters() { return {&x}; }
  std::vector<std::string> parameter_names() const { return {"input"}; }
  long double loss(std::vector<std::uint32_t>* signature = nullptr) const {
    if (signature != nullptr) {
      signature->clear();
      for (T v : x.values()) signature->push_back(v > T{0} ? 1u : 0u);
    }
    return detail::readout_loss(relu(x), readout, target);
  }
  GradientBundleT<T> gradients() const {
    return {parameter_names(), {detail::narrow<T>(relu_backward(x, detail::readout_gradient(relu(x), readout, target)))}};
  }
  template <typename U>
  ReluProbe<U> cast() const {
    return {x.template cast<U>(), readout.template cast<U>(), target};
  }
};

template <typename T>
struct MaxPoolProbe {
  using scalar_type = T;
  BasicTensor<T> x;  // [C x L]
  std::size_t window = 2;
  BasicTensor<T> readout;
  double target = 1.0;

  std::vector<BasicTensor<T>*> parameters() { return {&x}; }
  std::vector<std::string> parameter_names() const { return {"input"}; }
  long double loss(std::vector<std::uint32_t>* signature = nullptr) const {
    auto pooled = maxpool1d(x, window);
    if (signature != nullptr) *signature = pooled.argmax;
    return detail::readout_loss(pooled.pooled, readout, target);
  }
  GradientBundleT<T> gradients() const {
    auto pooled = maxpool1d(x, window);
    auto g = detail::readout_gradient(pooled.pooled, readout, target);
    return {parameter_names(), {detail::narrow<T>(maxpool1d_backward(x.shape(), pooled.argmax, g))}};
  }
  template <typename U>
  MaxPoolProbe<U> cast() const {
    return {x.template cast<U>(), window, readout.template cast<U>(), target};
  }
};

template <typename T>
struct DropoutProbe {
  using scalar_type = T;
  BasicTensor<T> x;
  DropoutSpec spec;
  BasicTensor<T> readout;
  double target = 1.0;

  std::vector<BasicTensor<T>*> parameters() { return {&x}; }
  std::vector<std::string> parameter_names() const { return {"input"}; }
  long double loss(std::vector<std::uint32_t>* = nullptr) const {
    return detail::readout_loss(dropout(x, spec).output, readout, target);
  }
  GradientBundleT<T> gradients() const {
    auto d = dropout(x, spec);
    auto g = dropout_backward(detail::readout_gradient(d.output, readout, target), d.mask, spec.rate);
    return {parameter_names(), {detail::narrow<T>(g)}};
  }
  template <typename U>
  DropoutProbe<U> cast() const {
    return {x.template cast<U>(), spec, readout.template cast<U>(), target};
  }
};

}  // namespace clipdetect::nn

#pragma once

// Forward and backward passes for the handful of layer types the heads use.
// Every function is pure: inputs in, outputs out, gradients accumulated into
// caller-owned buffers.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <type_traits>
#include <vector>

#include "clipdetect/tensor.hpp"

namespace clipdetect::nn {

enum class Mode { Train, Eval };

/// Accumulator used for dot products and reductions. Float layers reduce in
/// double so that gradients stay accurate to storage precision.
template <typename T>
using accum_t = std::conditional_t<std::is_same_v<T, float>, double, T>;

template <typename T>
struct DenseLayerT {
  BasicTensor<T> weights;  // [n_out x n_in]
  BasicTensor<T> bias;     // [n_out]

  std::size_t n_in() const { return weights.extent(1); }
  std::size_t n_out() const { return weights.extent(0); }

  void validate() const {
    if (weights.rank() != 2 || bias.rank() != 1 || weights.extent(0) != bias.extent(0)) {
      throw DimensionError("dense layer: weight rows must equal bias length, got weights " +
                           shape_to_string(weights.shape()) + " and bias " + shape_to_string(bias.shape()));
    }
  }
};

template <typename T>
struct Conv1DLayerT {
  BasicTensor<T> kernels;  // [out_channels x in_channels x kernel_width]
  BasicTensor<T> bias;     // [out_channels]
  std::size_t padding = 0;

  std::size_t out_channels() const { return kernels.extent(0); }
  std::size_t in_channels() const { return kernels.extent(1); }
  std::size_t kernel_width() const { return kernels.extent(2); }

  void validate() const {
    if (kernels.rank() != 3 || bias.rank() != 1 || kernels.extent(0) != bias.extent(0)) {
      throw DimensionError("conv1d layer: kernel out_channels must equal bias length, got kernels " +
                           shape_to_string(kernels.shape()) + " and bias " + shape_to_string(bias.shape()));
    }
    if (kernel_width() % 2 == 0) throw DimensionError("conv1d layer: kernel width must be odd");
  }
};

struct DropoutSpec {
  double rate = 0.2;
  Mode mode = Mode::Eval;
  std::uint64_t rng_seed = 0;
};

template <typename T>
struct DropoutResultT {
  BasicTensor<T> output;
  BasicTensor<T> mask;  // 0 or 1 per element
};

template <typename T>
struct PoolResultT {
  BasicTensor<T> pooled;
  std::vector<std::uint32_t> argmax;  // flat input index of each pooled element
};

namespace detail {

template <typename T>
inline accum_t<T> dot(const T* a, const T* b, std::size_t n) {
  if constexpr (std::is_same_v<accum_t<T>, long double>) {
    // x87 has no vector lanes; independent partial sums break the add chain.
    long double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
      s0 += static_cast<long double>(a[i]) * static_cast<long double>(b[i]);
      s1 += static_cast<long double>(a[i + 1]) * static_cast<long double>(b[i + 1]);
      s2 += static_cast<long double>(a[i + 2]) * static_cast<long double>(b[i + 2]);
      s3 += static_cast<long double>(a[i + 3]) * static_cast<long double>(b[i + 3]);
    }
    for (; i < n; ++i) s0 += static_cast<long double>(a[i]) * static_cast<long double>(b[i]);
    return (s0 + s1) + (s2 + s3);
  }
  accum_t<T> acc = 0;
#pragma omp simd reduction(+ : acc)
  for (std::size_t i = 0; i < n; ++i) acc += static_cast<accum_t<T>>(a[i]) * static_cast<accum_t<T>>(b[i]);
  return acc;
}

// Treats a rank-1 tensor as a single channel.
template <typename T>
inline std::pair<std::size_t, std::size_t> channels_and_length(const BasicTensor<T>& x, const char* what) {
  if (x.rank() == 1) return {1, x.extent(0)};
  if (x.rank() == 2) return {x.extent(0), x.extent(1)};
  throw DimensionError(std::string(what) + ": expected [C x L] input, got " + shape_to_string(x.shape()));
}

}  // namespace detail

/// y = W x + b for x of shape [n_in] or a batch [B x n_in].
template <typename T>
BasicTensor<T> dense_forward(const DenseLayerT<T>& layer, const BasicTensor<T>& x) {
  layer.validate();
  const std::size_t n_in = layer.n_in();
  const std::size_t n_out = layer.n_out();
  const bool batched = x.rank() == 2;
  const std::size_t in_len = batched ? x.extent(1) : (x.rank() == 1 ? x.extent(0) : 0);
  if (in_len != n_in) {
    throw DimensionError("dense_forward: expected input extent " + std::to_string(n_in) + ", got " +
                         shape_to_string(x.shape()));
  }
  const std::size_t batch = batched ? x.extent(0) : 1;
  BasicTensor<T> out(batched ? Shape{batch, n_out} : Shape{n_out});
  const T* w = layer.weights.data();
  for (std::size_t i = 0; i < n_out; ++i) {
    const T* w_row = w + i * n_in;
    for (std::size_t b = 0; b < batch; ++b) {
      out[b * n_out + i] = static_cast<T>(detail::dot(w_row, x.data() + b * n_in, n_in) + layer.bias[i]);
    }
  }
  return out;
}

/// Accumulates dL/dW and dL/db into `grad` and returns dL/dx (empty when
/// `want_input_grad` is false). Upstream gradients may be carried at a wider
/// type G than the layer's storage type.
template <typename T, typename G>
BasicTensor<G> dense_backward(const DenseLayerT<T>& layer, const BasicTensor<T>& x, const BasicTensor<G>& grad_out,
                              DenseLayerT<T>& grad, bool want_input_grad = true) {
  const std::size_t n_in = layer.n_in();
  const std::size_t n_out = layer.n_out();
  const std::size_t batch = x.rank() == 2 ? x.extent(0) : 1;
  if (x.size() != batch * n_in || grad_out.size() != batch * n_out) {
    throw DimensionError("dense_backward: input " + shape_to_string(x.shape()) + " / upstream gradient " +
                         shape_to_string(grad_out.shape()) + " do not match layer [" + std::to_string(n_out) + "x" +
                         std::to_string(n_in) + "]");
  }
  require_shape(grad.weights, layer.weights.shape(), "dense_backward weight gradient");
  require_shape(grad.bias, layer.bias.shape(), "dense_backward bias gradient");

  using A = accum_t<G>;
  BasicTensor<G> grad_in;
  std::vector<A> grad_in_acc;
  if (want_input_grad) grad_in_acc.assign(batch * n_in, 0);
  std::vector<A> row_acc(n_in);
  const T* w = layer.weights.data();

  for (std::size_t i = 0; i < n_out; ++i) {
    std::fill(row_acc.begin(), row_acc.end(), A{0});
    A bias_acc = 0;
    const T* w_row = w + i * n_in;
    for (std::size_t b = 0; b < batch; ++b) {
      const A delta = grad_out[b * n_out + i];
      if (delta == 0) continue;
      bias_acc += delta;
      const T* xb = x.data() + b * n_in;
      A* racc = row_acc.data();
#pragma omp simd
      for (std::size_t j = 0; j < n_in; ++j) racc[j] += delta * static_cast<A>(xb[j]);
      if (want_input_grad) {
        A* gin = grad_in_acc.data() + b * n_in;
#pragma omp simd
        for (std::size_t j = 0; j < n_in; ++j) gin[j] += delta * static_cast<A>(w_row[j]);
      }
    }
    T* g_row = grad.weights.data() + i * n_in;
#pragma omp simd
    for (std::size_t j = 0; j < n_in; ++j) g_row[j] += static_cast<T>(row_acc[j]);
    grad.bias[i] += static_cast<T>(bias_acc);
  }

  if (want_input_grad) {
    std::vector<G> values(grad_in_acc.size());
    for (std::size_t k = 0; k < values.size(); ++k) values[k] = static_cast<G>(grad_in_acc[k]);
    grad_in = BasicTensor<G>(x.shape(), std::move(values));
  }
  return grad_in;
}

inline std::size_t conv1d_output_length(std::size_t length, std::size_t padding, std::size_t kernel_width) {
  const long long out = static_cast<long long>(length) + 2 * static_cast<long long>(padding) -
                        static_cast<long long>(kernel_width) + 1;
  if (out <= 0) {
    throw InputTooShortError("conv1d: input length " + std::to_string(length) + " too short for kernel width " +
                             std::to_string(kernel_width) + " with padding " + std::to_string(padding));
  }
  return static_cast<std::size_t>(out);
}

/// Cross-correlation with zero padding plus per-channel bias.
template <typename T>
BasicTensor<T> conv1d_forward(const Conv1DLayerT<T>& layer, const BasicTensor<T>& x) {
  layer.validate();
  const auto [in_ch, length] = detail::channels_and_length(x, "conv1d_forward");
  if (in_ch != layer.in_channels()) {
    throw DimensionError("conv1d_forward: expected " + std::to_string(layer.in_channels()) + " input channels, got " +
                         std::to_string(in_ch));
  }
  const std::size_t k = layer.kernel_width();
  const std::size_t pad = layer.padding;
  const std::size_t out_len = conv1d_output_length(length, pad, k);
  const std::size_t out_ch = layer.out_channels();
  BasicTensor<T> out(Shape{out_ch, out_len});

  std::vector<accum_t<T>> acc(out_len);
  for (std::size_t o = 0; o < out_ch; ++o) {
    std::fill(acc.begin(), acc.end(), static_cast<accum_t<T>>(layer.bias[o]));
    for (std::size_t c = 0; c < in_ch; ++c) {
      const T* xc = x.data() + c * length;
      const T* kern = layer.kernels.data() + (o * in_ch + c) * k;
      for (std::size_t t = 0; t < k; ++t) {
        const accum_t<T> kv = kern[t];
        // out[p] += kern[t] * x[p + t - pad] over the valid range of p.
        const long long shift = static_cast<long long>(t) - static_cast<long long>(pad);
        const std::size_t p_begin = shift < 0 ? static_cast<std::size_t>(-shift) : 0;
        const long long p_end_ll = std::min<long long>(static_cast<long long>(out_len),
                                                       static_cast<long long>(length) - shift);
        for (long long p = static_cast<long long>(p_begin); p < p_end_ll; ++p) {
          acc[static_cast<std::size_t>(p)] += kv * static_cast<accum_t<T>>(xc[p + shift]);
        }
      }
    }
    T* out_row = out.data() + o * out_len;
    for (std::size_t p = 0; p < out_len; ++p) out_row[p] = static_cast<T>(acc[p]);
  }
  return out;
}

template <typename T, typename G>
BasicTensor<G> conv1d_backward(const Conv1DLayerT<T>& layer, const BasicTensor<T>& x, const BasicTensor<G>& grad_out,
                               Conv1DLayerT<T>& grad, bool want_input_grad = true) {
  using A = accum_t<G>;
  const auto [in_ch, length] = detail::channels_and_length(x, "conv1d_backward");
  const std::size_t k = layer.kernel_width();
  const std::size_t pad = layer.padding;
  const std::size_t out_len = conv1d_output_length(length, pad, k);
  const std::size_t out_ch = layer.out_channels();
  if (grad_out.size() != out_ch * out_len) {
    throw DimensionError("conv1d_backward: upstream gradient " + shape_to_string(grad_out.shape()) +
                         " does not match output [" + std::to_string(out_ch) + "x" + std::to_string(out_len) + "]");
  }
  require_shape(grad.kernels, layer.kernels.shape(), "conv1d_backward kernel gradient");
  require_shape(grad.bias, layer.bias.shape(), "conv1d_backward bias gradient");

  std::vector<A> gin(want_input_grad ? in_ch * length : 0, 0);
  for (std::size_t o = 0; o < out_ch; ++o) {
    const G* g = grad_out.data() + o * out_len;
    A bias_acc = 0;
    for (std::size_t p = 0; p < out_len; ++p) bias_acc += g[p];
    grad.bias[o] += static_cast<T>(bias_acc);
    for (std::size_t c = 0; c < in_ch; ++c) {
      const T* xc = x.data() + c * length;
      const T* kern = layer.kernels.data() + (o * in_ch + c) * k;
      T* gk = grad.kernels.data() + (o * in_ch + c) * k;
      for (std::size_t t = 0; t < k; ++t) {
        const long long shift = static_cast<long long>(t) - static_cast<long long>(pad);
        const std::size_t p_begin = shift < 0 ? static_cast<std::size_t>(-shift) : 0;
        const long long p_end = std::min<long long>(static_cast<long long>(out_len),
                                                    static_cast<long long>(length) - shift);
        A kacc = 0;
        for (long long p = static_cast<long long>(p_begin); p < p_end; ++p) {
          kacc += static_cast<A>(g[p]) * static_cast<A>(xc[p + shift]);
        }
        gk[t] += static_cast<T>(kacc);
        if (want_input_grad) {
          const A kv = kern[t];
          A* gc = gin.data() + c * length;
          for (long long p = static_cast<long long>(p_begin); p < p_end; ++p) {
            gc[p + shift] += kv * static_cast<A>(g[p]);
          }
        }
      }
    }
  }
  BasicTensor<G> grad_in;
  if (want_input_grad) {
    std::vector<G> values(gin.size());
    for (std::size_t i = 0; i < gin.size(); ++i) values[i] = static_cast<G>(gin[i]);
    grad_in = BasicTensor<G>(x.shape(), std::move(values));
  }
  return grad_in;
}

/// Non-overlapping max pooling along the last axis; a trailing remainder
/// shorter than the window is dropped. Ties resolve to the first maximum.
template <typename T>
PoolResultT<T> maxpool1d(const BasicTensor<T>& x, std::size_t window) {
  if (window == 0) throw DimensionError("maxpool1d: window must be positive");
  const auto [channels, length] = detail::channels_and_length(x, "maxpool1d");
  if (length < window) {
    throw InputTooShortError("maxpool1d: input length " + std::to_string(length) + " shorter than window " +
                             std::to_string(window));
  }
  const std::size_t out_len = length / window;
  PoolResultT<T> result{BasicTensor<T>(x.rank() == 1 ? Shape{out_len} : Shape{channels, out_len}), {}};
  result.argmax.resize(channels * out_len);
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t p = 0; p < out_len; ++p) {
      std::size_t best = c * length + p * window;
      for (std::size_t w = 1; w < window; ++w) {
        const std::size_t idx = c * length + p * window + w;
        if (x[idx] > x[best]) best = idx;
      }
      result.pooled[c * out_len + p] = x[best];
      result.argmax[c * out_len + p] = static_cast<std::uint32_t>(best);
    }
  }
  return result;
}

template <typename T>
BasicTensor<T> maxpool1d_backward(const Shape& input_shape, const std::vector<std::uint32_t>& argmax,
                                  const BasicTensor<T>& grad_out) {
  if (grad_out.size() != argmax.size()) {
    throw DimensionError("maxpool1d_backward: " + std::to_string(argmax.size()) + " pooled indices but upstream " +
                         "gradient has " + std::to_string(grad_out.size()) + " elements");
  }
  BasicTensor<T> grad_in(input_shape);
  for (std::size_t i = 0; i < argmax.size(); ++i) grad_in[argmax[i]] += grad_out[i];
  return grad_in;
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
  BasicTensor<T> out = x;
  for (auto& v : out.values()) v = v > T{0} ? v : T{0};
  return out;
}

/// Gates the upstream gradient on the sign of the pre-activation.
template <typename T, typename G>
BasicTensor<G> relu_backward(const BasicTensor<T>& pre_activation, const BasicTensor<G>& grad_out) {
  if (pre_activation.size() != grad_out.size()) {
    throw DimensionError("relu_backward: pre-activation " + shape_to_string(pre_activation.shape()) +
                         " vs upstream gradient " + shape_to_string(grad_out.shape()));
  }
  BasicTensor<G> out = grad_out;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!(pre_activation[i] > T{0})) out[i] = G{0};
  }
  return out;
}

inline void check_dropout_rate(double rate) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ValidationError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
}

/// Inverted dropout. The mask is drawn element by element from a
/// mt19937_64 seeded with `spec.rng_seed`, so it is reproducible.
template <typename T>
DropoutResultT<T> dropout(const BasicTensor<T>& x, const DropoutSpec& spec) {
  check_dropout_rate(spec.rate);
  DropoutResultT<T> result{x, BasicTensor<T>(x.shape(), T{1})};
  if (spec.mode == Mode::Eval || spec.rate == 0.0) return result;
  std::mt19937_64 rng(spec.rng_seed);
  const T scale = static_cast<T>(1.0 / (1.0 - spec.rate));
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    if (u < spec.rate) {
      result.mask[i] = T{0};
      result.output[i] = T{0};
    } else {
      result.output[i] = x[i] * scale;
    }
  }
  return result;
}

template <typename G, typename T>
BasicTensor<G> dropout_backward(const BasicTensor<G>& grad_out, const BasicTensor<T>& mask, double rate) {
  if (grad_out.size() != mask.size()) throw DimensionError("dropout_backward: mask and gradient sizes differ");
  BasicTensor<G> out = grad_out;
  // Same rounding of the scale as the forward pass.
  const G scale = static_cast<G>(static_cast<T>(1.0 / (1.0 - rate)));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = mask[i] == T{0} ? G{0} : out[i] * scale;
  return out;
}

template <typename R>
inline R sigmoid(R logit) {
  if (logit >= 0) return R{1} / (R{1} + std::exp(-logit));
  const R e = std::exp(logit);
  return e / (R{1} + e);
}

/// Binary cross-entropy on a logit, in the overflow-free form
/// max(l, 0) - t*l + log(1 + exp(-|l|)).
template <typename R>
inline R bce_with_logits(R logit, R target) {
  return std::max(logit, R{0}) - target * logit + std::log1p(std::exp(-std::abs(logit)));
}

/// d bce / d logit.
template <typename R>
inline R bce_logit_gradient(R logit, R target) {
  return sigmoid(logit) - target;
}

}  // namespace clipdetect::nn

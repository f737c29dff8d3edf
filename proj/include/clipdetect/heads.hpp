#pragma once

// The two classifier heads placed on top of frozen 512-d embeddings.
//
//   Mlp: 512 -> 256 -> ReLU -> Dropout(0.2) -> 128 -> ReLU -> 1
//   Cnn: Conv1d(1->32, k=3, pad=1) -> ReLU -> MaxPool1d(2) -> Dropout(0.2)
//        -> flatten(8192) -> 128 -> ReLU -> 1
//
// Both produce one logit per embedding; probability = sigmoid(logit) and
// the positive class is Fake.

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "clipdetect/layers.hpp"
#include "clipdetect/optim.hpp"
#include "clipdetect/types.hpp"

namespace clipdetect {

enum class HeadKind : std::uint8_t { Mlp = 0, Cnn = 1 };

inline std::string_view to_string(HeadKind kind) { return kind == HeadKind::Mlp ? "mlp" : "cnn"; }

inline HeadKind parse_head_kind(std::string_view text) {
  if (text == "mlp") return HeadKind::Mlp;
  if (text == "cnn") return HeadKind::Cnn;
  throw ValidationError("unknown head kind '" + std::string(text) + "' (expected mlp or cnn)");
}

namespace head_geometry {
inline constexpr std::size_t kMlpHidden1 = 256;
inline constexpr std::size_t kMlpHidden2 = 128;
inline constexpr std::size_t kCnnChannels = 32;
inline constexpr std::size_t kCnnKernel = 3;
inline constexpr std::size_t kCnnPadding = 1;
inline constexpr std::size_t kCnnPool = 2;
inline constexpr std::size_t kCnnFlat = kCnnChannels * (kEmbeddingDim / kCnnPool);  // 8192
inline constexpr std::size_t kCnnHidden = 128;
inline constexpr double kDropoutRate = 0.2;
}  // namespace head_geometry

struct Prediction {
  double probability = 0.0;
  Label label = Label::Real;
};

/// Probability >= threshold maps to Fake.
inline Prediction predict_from_logit(double logit, double threshold = 0.5) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw ValidationError("threshold must lie in (0, 1)");
  const double p = nn::sigmoid(logit);
  return {p, p >= threshold ? Label::Fake : Label::Real};
}

template <typename T>
class BasicHead {
 public:
  using scalar_type = T;
  /// Type of the gradients flowing backward between layers.
  using grad_type = nn::accum_t<T>;

  /// Activations retained by a forward pass for the matching backward pass.
  struct Cache {
    bool valid = false;
    std::size_t batch = 0;
    BasicTensor<T> input;  // [B x 512]
    // Mlp
    BasicTensor<T> pre1, dropped1, pre2, hidden2;
    // Cnn: per-sample conv pre-activations and pool indices, then the dense tail.
    std::vector<BasicTensor<T>> conv_pre;
    std::vector<std::vector<std::uint32_t>> pool_argmax;
    BasicTensor<T> dropped_flat, pre_fc, hidden_fc;
    BasicTensor<T> dropout_mask;
  };

  BasicHead() = default;

  /// Weights ~ U(-sqrt(1/fan_in), +sqrt(1/fan_in)), biases zero.
  static BasicHead init(HeadKind kind, std::uint64_t seed) {
    BasicHead head = zeros(kind);
    std::mt19937_64 rng(seed);
    auto fill_uniform = [&rng](BasicTensor<T>& t, std::size_t fan_in) {
      const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
      for (auto& v : t.values()) {
        const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
        v = static_cast<T>(-bound + 2.0 * bound * u);
      }
    };
    if (kind == HeadKind::Cnn) {
      fill_uniform(head.conv_.kernels, head.conv_.in_channels() * head.conv_.kernel_width());
    }
    for (auto& layer : head.dense_) fill_uniform(layer.weights, layer.n_in());
    return head;
  }

  static BasicHead zeros(HeadKind kind) {
    using namespace head_geometry;
    BasicHead head;
    head.kind_ = kind;
    auto dense = [](std::size_t n_out, std::size_t n_in) {
      return nn::DenseLayerT<T>{BasicTensor<T>(Shape{n_out, n_in}), BasicTensor<T>(Shape{n_out})};
    };
    if (kind == HeadKind::Mlp) {
      head.dense_ = {dense(kMlpHidden1, kEmbeddingDim), dense(kMlpHidden2, kMlpHidden1), dense(1, kMlpHidden2)};
    } else {
      head.conv_ = nn::Conv1DLayerT<T>{BasicTensor<T>(Shape{kCnnChannels, 1, kCnnKernel}),
                                       BasicTensor<T>(Shape{kCnnChannels}), kCnnPadding};
      head.dense_ = {dense(kCnnHidden, kCnnFlat), dense(1, kCnnHidden)};
    }
    return head;
  }

  HeadKind kind() const { return kind_; }

  /// Parameters in a fixed order: (conv kernels, conv bias,) then weights and
  /// bias of each dense layer from input to output.
  std::vector<BasicTensor<T>*> parameters() {
    std::vector<BasicTensor<T>*> out;
    if (kind_ == HeadKind::Cnn) {
      out.push_back(&conv_.kernels);
      out.push_back(&conv_.bias);
    }
    for (auto& layer : dense_) {
      out.push_back(&layer.weights);
      out.push_back(&layer.bias);
    }
    return out;
  }

  std::vector<const BasicTensor<T>*> parameters() const {
    auto mutable_params = const_cast<BasicHead*>(this)->parameters();
    return {mutable_params.begin(), mutable_params.end()};
  }

  static std::vector<std::string> parameter_names(HeadKind kind) {
    if (kind == HeadKind::Mlp) {
      return {"dense1.weight", "dense1.bias", "dense2.weight", "dense2.bias", "dense3.weight", "dense3.bias"};
    }
    return {"conv.weight", "conv.bias", "dense1.weight", "dense1.bias", "dense2.weight", "dense2.bias"};
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto* p : parameters()) n += p->size();
    return n;
  }

  /// Logits for a batch [B x 512] (or a single [512] vector).
  std::vector<T> forward_batch(const BasicTensor<T>& batch, nn::Mode mode, std::uint64_t dropout_seed,
                               Cache* cache = nullptr) const {
    const BasicTensor<T> input = as_batch(batch);
    if (cache != nullptr) {
      *cache = Cache{};
      cache->batch = input.extent(0);
      cache->input = input;
    }
    const nn::DropoutSpec drop{head_geometry::kDropoutRate, mode, dropout_seed};
    BasicTensor<T> logits;
    if (kind_ == HeadKind::Mlp) {
      BasicTensor<T> pre1 = nn::dense_forward(dense_[0], input);
      auto dropped = nn::dropout(nn::relu(pre1), drop);
      BasicTensor<T> pre2 = nn::dense_forward(dense_[1], dropped.output);
      BasicTensor<T> hidden2 = nn::relu(pre2);
      logits = nn::dense_forward(dense_[2], hidden2);
      if (cache != nullptr) {
        cache->pre1 = std::move(pre1);
        cache->dropped1 = std::move(dropped.output);
        cache->dropout_mask = std::move(dropped.mask);
        cache->pre2 = std::move(pre2);
        cache->hidden2 = std::move(hidden2);
      }
    } else {
      const std::size_t n = input.extent(0);
      BasicTensor<T> flat(Shape{n, head_geometry::kCnnFlat});
      if (cache != nullptr) {
        cache->conv_pre.reserve(n);
        cache->pool_argmax.reserve(n);
      }
      for (std::size_t b = 0; b < n; ++b) {
        const auto row = input.row(b);
        BasicTensor<T> x(Shape{1, kEmbeddingDim}, std::vector<T>(row.begin(), row.end()));
        BasicTensor<T> pre = nn::conv1d_forward(conv_, x);
        auto pooled = nn::maxpool1d(nn::relu(pre), head_geometry::kCnnPool);
        std::copy(pooled.pooled.values().begin(), pooled.pooled.values().end(), flat.row(b).begin());
        if (cache != nullptr) {
          cache->conv_pre.push_back(std::move(pre));
          cache->pool_argmax.push_back(std::move(pooled.argmax));
        }
      }
      auto dropped = nn::dropout(flat, drop);
      BasicTensor<T> pre_fc = nn::dense_forward(dense_[0], dropped.output);
      BasicTensor<T> hidden_fc = nn::relu(pre_fc);
      logits = nn::dense_forward(dense_[1], hidden_fc);
      if (cache != nullptr) {
        cache->dropped_flat = std::move(dropped.output);
        cache->dropout_mask = std::move(dropped.mask);
        cache->pre_fc = std::move(pre_fc);
        cache->hidden_fc = std::move(hidden_fc);
      }
    }
    if (cache != nullptr) cache->valid = true;
    return std::vector<T>(logits.values().begin(), logits.values().end());
  }

  T forward(const BasicTensor<T>& z, nn::Mode mode, std::uint64_t dropout_seed = 0) const {
    if (z.rank() != 1) {
      throw DimensionError("head_forward: expected a single [512] embedding, got " + shape_to_string(z.shape()));
    }
    return forward_batch(z, mode, dropout_seed)[0];
  }

  Prediction predict(const BasicTensor<T>& z, double threshold = 0.5) const {
    return predict_from_logit(static_cast<double>(forward(z, nn::Mode::Eval)), threshold);
  }

  /// Parameter gradients given dL/dlogit for every sample of the cached pass.
  nn::GradientBundleT<T> backward(const Cache& cache, std::span<const grad_type> grad_logits) const {
    using G = grad_type;
    if (!cache.valid) throw StateError("head backward: no forward cache available");
    if (grad_logits.size() != cache.batch) {
      throw DimensionError("head backward: " + std::to_string(grad_logits.size()) + " logit gradients for a batch of " +
                           std::to_string(cache.batch));
    }
    const auto params = parameters();
    auto grads = nn::GradientBundleT<T>::zeros_like(parameter_names(kind_), params);
    const std::size_t n = cache.batch;
    BasicTensor<G> g_logits(Shape{n, 1}, std::vector<G>(grad_logits.begin(), grad_logits.end()));
    const double rate = head_geometry::kDropoutRate;

    if (kind_ == HeadKind::Mlp) {
      auto d3 = grad_layer(grads, 4);
      BasicTensor<G> g_h2 = nn::dense_backward(dense_[2], cache.hidden2, g_logits, d3);
      BasicTensor<G> g_pre2 = nn::relu_backward(cache.pre2, g_h2);
      auto d2 = grad_layer(grads, 2);
      BasicTensor<G> g_drop = nn::dense_backward(dense_[1], cache.dropped1, g_pre2, d2);
      BasicTensor<G> g_pre1 = nn::relu_backward(cache.pre1, nn::dropout_backward(g_drop, cache.dropout_mask, rate));
      auto d1 = grad_layer(grads, 0);
      nn::dense_backward(dense_[0], cache.input, g_pre1, d1, false);
      store_grad_layer(grads, 0, d1);
      store_grad_layer(grads, 2, d2);
      store_grad_layer(grads, 4, d3);
    } else {
      auto d2 = grad_layer(grads, 4);
      BasicTensor<G> g_hidden = nn::dense_backward(dense_[1], cache.hidden_fc, g_logits, d2);
      BasicTensor<G> g_pre_fc = nn::relu_backward(cache.pre_fc, g_hidden);
      auto d1 = grad_layer(grads, 2);
      BasicTensor<G> g_dropped = nn::dense_backward(dense_[0], cache.dropped_flat, g_pre_fc, d1);
      BasicTensor<G> g_flat = nn::dropout_backward(g_dropped, cache.dropout_mask, rate);
      nn::Conv1DLayerT<T> conv_grad{std::move(grads.tensors[0]), std::move(grads.tensors[1]), conv_.padding};
      const Shape conv_shape{head_geometry::kCnnChannels, kEmbeddingDim};
      for (std::size_t b = 0; b < n; ++b) {
        const auto g_row = g_flat.row(b);
        BasicTensor<G> g_pooled(Shape{g_row.size()}, std::vector<G>(g_row.begin(), g_row.end()));
        BasicTensor<G> g_relu = nn::maxpool1d_backward(conv_shape, cache.pool_argmax[b], g_pooled);
        BasicTensor<G> g_pre = nn::relu_backward(cache.conv_pre[b], g_relu);
        const auto row = cache.input.row(b);
        BasicTensor<T> x(Shape{1, kEmbeddingDim}, std::vector<T>(row.begin(), row.end()));
        nn::conv1d_backward(conv_, x, g_pre, conv_grad, false);
      }
      grads.tensors[0] = std::move(conv_grad.kernels);
      grads.tensors[1] = std::move(conv_grad.bias);
      store_grad_layer(grads, 2, d1);
      store_grad_layer(grads, 4, d2);
    }
    return grads;
  }

  /// ReLU gates and pool winners of a cached pass; equal signatures mean
  /// two passes lie in the same linear region of the network.
  std::vector<std::uint32_t> activation_signature(const Cache& cache) const {
    std::vector<std::uint32_t> sig;
    auto gates = [&sig](const BasicTensor<T>& pre) {
      for (T v : pre.values()) sig.push_back(v > T{0} ? 1u : 0u);
    };
    if (kind_ == HeadKind::Mlp) {
      gates(cache.pre1);
      gates(cache.pre2);
    } else {
      for (const auto& pre : cache.conv_pre) gates(pre);
      for (const auto& idx : cache.pool_argmax) sig.insert(sig.end(), idx.begin(), idx.end());
      gates(cache.pre_fc);
    }
    return sig;
  }

  template <typename U>
  BasicHead<U> cast() const {
    BasicHead<U> out = BasicHead<U>::zeros(kind_);
    auto dst = out.parameters();
    const auto src = parameters();
    for (std::size_t k = 0; k < src.size(); ++k) *dst[k] = src[k]->template cast<U>();
    return out;
  }

  friend bool operator==(const BasicHead& a, const BasicHead& b) {
    if (a.kind_ != b.kind_) return false;
    const auto pa = a.parameters();
    const auto pb = b.parameters();
    for (std::size_t k = 0; k < pa.size(); ++k) {
      if (!(*pa[k] == *pb[k])) return false;
    }
    return true;
  }

 private:
  static BasicTensor<T> as_batch(const BasicTensor<T>& batch) {
    if (batch.rank() == 1 && batch.extent(0) == kEmbeddingDim) return batch.reshaped(Shape{1, kEmbeddingDim});
    if (batch.rank() == 2 && batch.extent(1) == kEmbeddingDim) return batch;
    throw DimensionError("head_forward: expected embeddings of width " + std::to_string(kEmbeddingDim) + ", got " +
                         shape_to_string(batch.shape()));
  }

  static nn::DenseLayerT<T> grad_layer(nn::GradientBundleT<T>& grads, std::size_t first) {
    return {std::move(grads.tensors[first]), std::move(grads.tensors[first + 1])};
  }
  static void store_grad_layer(nn::GradientBundleT<T>& grads, std::size_t first, nn::DenseLayerT<T>& layer) {
    grads.tensors[first] = std::move(layer.weights);
    grads.tensors[first + 1] = std::move(layer.bias);
  }

  HeadKind kind_ = HeadKind::Mlp;
  nn::Conv1DLayerT<T> conv_;
  std::vector<nn::DenseLayerT<T>> dense_;
};

using Head = BasicHead<float>;

/// BCE loss and parameter gradients for a single embedding.
template <typename T>
struct LossAndGradients {
  double loss = 0.0;
  double logit = 0.0;
  nn::GradientBundleT<T> gradients;
};

template <typename T>
LossAndGradients<T> loss_and_gradients(const BasicHead<T>& head, const BasicTensor<T>& z, Label target,
                                       nn::Mode mode, std::uint64_t dropout_seed = 0) {
  typename BasicHead<T>::Cache cache;
  const T logit = head.forward_batch(z, mode, dropout_seed, &cache)[0];
  const double y = target == Label::Fake ? 1.0 : 0.0;
  using G = typename BasicHead<T>::grad_type;
  const G g = nn::bce_logit_gradient(static_cast<G>(logit), static_cast<G>(y));
  return {static_cast<double>(nn::bce_with_logits(static_cast<G>(logit), static_cast<G>(y))),
          static_cast<double>(logit), head.backward(cache, std::span<const G>(&g, 1))};
}

}  // namespace clipdetect

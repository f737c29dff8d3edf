#pragma once

// Seeded random gradient-check configurations shared by the unit tests and
// the acceptance binary.

#include <array>
#include <random>
#include <string_view>

#include "clipdetect/gradcheck.hpp"

namespace clipdetect::testing {

enum class GradCase { MlpHead, CnnHead, Dense, Conv1D, Relu, MaxPool, Dropout };

inline constexpr std::array<GradCase, 7> kAllGradCases = {GradCase::MlpHead, GradCase::CnnHead, GradCase::Dense,
                                                          GradCase::Conv1D,  GradCase::Relu,    GradCase::MaxPool,
                                                          GradCase::Dropout};

inline constexpr double kTolerance32 = 1e-4;
inline constexpr double kTolerance64 = 1e-6;

inline std::string_view grad_case_name(GradCase c) {
  switch (c) {
    case GradCase::MlpHead: return "mlp_head";
    case GradCase::CnnHead: return "cnn_head";
    case GradCase::Dense: return "dense";
    case GradCase::Conv1D: return "conv1d";
    case GradCase::Relu: return "relu";
    case GradCase::MaxPool: return "maxpool";
    case GradCase::Dropout: return "dropout";
  }
  return "?";
}

namespace detail {

inline Tensor normal_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<float>(nd(rng));
  return t;
}

inline std::size_t uniform_int(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(rng() % (hi - lo + 1));
}

template <typename O>
nn::GradCheckReport check(const O& objective, bool wide, std::size_t coords, std::uint64_t seed) {
  nn::GradCheckOptions options;
  options.coordinates_per_tensor = coords;
  options.sample_seed = seed;
  if (wide) {
    options.epsilon = nn::default_epsilon<double>();
    return nn::gradient_check(objective.template cast<double>(), options);
  }
  options.epsilon = nn::default_epsilon<float>();
  return nn::gradient_check(objective, options);
}

}  // namespace detail

/// One seeded configuration. `wide` runs the 64-bit harness; otherwise the
/// objective is checked at 32-bit storage.
inline nn::GradCheckReport run_grad_case(GradCase c, std::uint64_t seed, bool wide) {
  using detail::normal_tensor;
  using detail::uniform_int;
  std::mt19937_64 rng(0x6772616443ULL ^ (seed * 0x9E3779B97F4A7C15ULL) ^ static_cast<std::uint64_t>(c));
  const double target = static_cast<double>(seed % 2);
  switch (c) {
    case GradCase::MlpHead:
    case GradCase::CnnHead: {
      const HeadKind kind = c == GradCase::MlpHead ? HeadKind::Mlp : HeadKind::Cnn;
      nn::HeadObjective<float> obj{Head::init(kind, seed), normal_tensor(Shape{kEmbeddingDim}, rng),
                                   seed % 2 ? Label::Fake : Label::Real, nn::Mode::Train, seed};
      return detail::check(obj, wide, kind == HeadKind::Mlp ? 8 : 6, seed);
    }
    case GradCase::Dense: {
      const std::size_t n_in = uniform_int(rng, 1, 24), n_out = uniform_int(rng, 1, 12);
      nn::DenseProbe<float> obj{{normal_tensor(Shape{n_out, n_in}, rng, 1.0 / std::sqrt(double(n_in))),
                                 normal_tensor(Shape{n_out}, rng, 0.1)},
                                normal_tensor(Shape{uniform_int(rng, 1, 4), n_in}, rng),
                                Tensor(Shape{1}),
                                target};
      obj.readout = normal_tensor(Shape{obj.x.extent(0), n_out}, rng, 0.5);
      return detail::check(obj, wide, 0, seed);
    }
    case GradCase::Conv1D: {
      const std::size_t in_ch = uniform_int(rng, 1, 3), out_ch = uniform_int(rng, 1, 4);
      const std::size_t k = 2 * uniform_int(rng, 0, 2) + 1;
      const std::size_t pad = uniform_int(rng, 0, k / 2);
      const std::size_t len = uniform_int(rng, k, 20);
      nn::Conv1DProbe<float> obj{{normal_tensor(Shape{out_ch, in_ch, k}, rng, 1.0 / std::sqrt(double(in_ch * k))),
                                  normal_tensor(Shape{out_ch}, rng, 0.1), pad},
                                 normal_tensor(Shape{in_ch, len}, rng),
                                 Tensor(Shape{1}),
                                 target};
      obj.readout = normal_tensor(Shape{out_ch, len + 2 * pad - k + 1}, rng, 0.5);
      return detail::check(obj, wide, 0, seed);
    }
    case GradCase::Relu: {
      const std::size_t n = uniform_int(rng, 1, 64);
      nn::ReluProbe<float> obj{normal_tensor(Shape{n}, rng), normal_tensor(Shape{n}, rng, 0.5), target};
      return detail::check(obj, wide, 0, seed);
    }
    case GradCase::MaxPool: {
      const std::size_t channels = uniform_int(rng, 1, 3), window = uniform_int(rng, 1, 3);
      const std::size_t len = uniform_int(rng, window, 24);
      nn::MaxPoolProbe<float> obj{normal_tensor(Shape{channels, len}, rng), window,
                                  normal_tensor(Shape{channels, len / window}, rng, 0.5), target};
      return detail::check(obj, wide, 0, seed);
    }
    case GradCase::Dropout: {
      const std::size_t n = uniform_int(rng, 1, 64);
      nn::DropoutProbe<float> obj{normal_tensor(Shape{n}, rng), nn::DropoutSpec{0.2, nn::Mode::Train, seed},
                                  normal_tensor(Shape{n}, rng, 0.5), target};
      return detail::check(obj, wide, 0, seed);
    }
  }
  throw ValidationError("unknown gradient case");
}

}  // namespace clipdetect::testing

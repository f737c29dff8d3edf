#pragma once

// Image preprocessing and the frozen ONNX vision encoder.

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "clipdetect/embedding_store.hpp"
#include "clipdetect/tensor.hpp"

namespace clipdetect {

inline constexpr std::array<float, 3> kClipMean = {0.48145466f, 0.4578275f, 0.40821073f};
inline constexpr std::array<float, 3> kClipStd = {0.26862954f, 0.26130258f, 0.27577711f};

struct PreprocessSpec {
  std::size_t target_size = 224;
  std::array<float, 3> mean = kClipMean;  // RGB order
  std::array<float, 3> std = kClipStd;

  void validate() const;
};

/// Geometry of the resize-then-crop step for a width x height source.
struct ResizePlan {
  std::size_t resized_width = 0;
  std::size_t resized_height = 0;
  std::size_t crop_x = 0;
  std::size_t crop_y = 0;
};

/// Shorter side to `target` (longer side truncated), then a centered crop
/// whose offset is floor((resized - target) / 2).
ResizePlan plan_resize(std::size_t width, std::size_t height, std::size_t target);

/// Decodes PNG/JPEG bytes and returns a normalized [3 x S x S] RGB tensor.
Tensor preprocess(std::span<const std::uint8_t> image_bytes, const PreprocessSpec& spec = {});

/// Same pipeline over interleaved 8-bit RGB pixels (row-major, height x width x 3).
Tensor preprocess_rgb(std::span<const std::uint8_t> rgb, std::size_t width, std::size_t height,
                      const PreprocessSpec& spec = {});

void l2_normalize(std::span<float> v);

/// A loaded encoder graph: input [1 x 3 x S x S] float, output [1 x 512] float.
class EncoderModel {
 public:
  /// Loads the model and runs a probe inference to verify the output shape.
  static EncoderModel load(const std::filesystem::path& path, const PreprocessSpec& spec = {});

  EncoderModel(EncoderModel&&) noexcept;
  EncoderModel& operator=(EncoderModel&&) noexcept;
  ~EncoderModel();

  const std::string& digest() const;  // SHA-256 of the model file
  const std::filesystem::path& path() const;
  const PreprocessSpec& spec() const;

  /// Runs the graph on a preprocessed [3 x S x S] tensor. Thread-safe.
  std::vector<float> infer(const Tensor& pixels) const;

  /// An independent handle on the same graph, for parallel workers.
  EncoderModel clone() const;

 private:
  struct Impl;
  explicit EncoderModel(std::unique_ptr<Impl> impl);
  std::unique_ptr<Impl> impl_;
};

std::vector<float> embed(const EncoderModel& model, std::span<const std::uint8_t> image_bytes, bool normalize);

struct EmbedOptions {
  bool normalize = true;
  bool incremental = true;  // keep records already present in the target cache
  std::size_t workers = 0;  // 0 = hardware concurrency
};

struct EmbedFailure {
  std::string path;
  std::string message;
};

struct EmbedSummary {
  std::size_t embedded = 0;
  std::size_t skipped = 0;
  std::vector<EmbedFailure> failures;
  std::size_t record_count = 0;
  std::uint64_t bytes_written = 0;
};

/// Embeds every manifest row into a CLPE cache; records follow manifest order
/// and ids are the manifest paths. Per-image failures are collected.
EmbedSummary embed_batch(const EncoderModel& model, const DatasetManifest& manifest,
                         const std::filesystem::path& cache_path, const EmbedOptions& options = {});

}  // namespace clipdetect

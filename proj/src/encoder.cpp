#include "clipdetect/encoder.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <optional>
#include <thread>
#include <unordered_map>

#include <opencv2/core.hpp>
#include <opencv2/dnn.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "clipdetect/errors.hpp"
#include "clipdetect/file_util.hpp"

namespace clipdetect {

namespace fs = std::filesystem;

void PreprocessSpec::validate() const {
  if (target_size == 0) throw ValidationError("preprocess: target_size must be positive");
  for (std::size_t c = 0; c < 3; ++c) {
    if (!std::isfinite(mean[c])) throw ValidationError("preprocess: mean must be finite");
    if (!(std[c] > 0.0f) || !std::isfinite(std[c])) throw ValidationError("preprocess: std must be positive");
  }
}

ResizePlan plan_resize(std::size_t width, std::size_t height, std::size_t target) {
  if (width == 0 || height == 0) throw ValidationError("preprocess: image has a zero dimension");
  ResizePlan plan;
  if (width <= height) {
    plan.resized_width = target;
    plan.resized_height = std::max<std::size_t>(target, height * target / width);
  } else {
    plan.resized_height = target;
    plan.resized_width = std::max<std::size_t>(target, width * target / height);
  }
  plan.crop_x = (plan.resized_width - target) / 2;
  plan.crop_y = (plan.resized_height - target) / 2;
  return plan;
}

namespace {

Tensor preprocess_mat(const cv::Mat& rgb, const PreprocessSpec& spec) {
  spec.validate();
  const auto plan = plan_resize(static_cast<std::size_t>(rgb.cols), static_cast<std::size_t>(rgb.rows),
                                spec.target_size);
  cv::Mat resized = rgb;
  if (plan.resized_width != static_cast<std::size_t>(rgb.cols) ||
      plan.resized_height != static_cast<std::size_t>(rgb.rows)) {
    cv::resize(rgb, resized, cv::Size(static_cast<int>(plan.resized_width), static_cast<int>(plan.resized_height)), 0,
               0, cv::INTER_CUBIC);
  }
  const int s = static_cast<int>(spec.target_size);
  const cv::Mat crop = resized(cv::Rect(static_cast<int>(plan.crop_x), static_cast<int>(plan.crop_y), s, s));

  const std::size_t plane = spec.target_size * spec.target_size;
  std::vector<float> out(3 * plane);
  for (int y = 0; y < s; ++y) {
    const auto* row = crop.ptr<cv::Vec3b>(y);
    for (int x = 0; x < s; ++x) {
      const std::size_t at = static_cast<std::size_t>(y) * spec.target_size + static_cast<std::size_t>(x);
      for (std::size_t c = 0; c < 3; ++c) {
        const float v = static_cast<float>(row[x][static_cast<int>(c)]) / 255.0f;
        out[c * plane + at] = (v - spec.mean[c]) / spec.std[c];
      }
    }
  }
  return Tensor(Shape{3, spec.target_size, spec.target_size}, std::move(out));
}

}  // namespace

Tensor preprocess(std::span<const std::uint8_t> image_bytes, const PreprocessSpec& spec) {
  if (image_bytes.empty()) throw DecodeError("preprocess: empty image data");
  const cv::Mat raw(1, static_cast<int>(image_bytes.size()), CV_8UC1, const_cast<std::uint8_t*>(image_bytes.data()));
  cv::Mat bgr;
  try {
    bgr = cv::imdecode(raw, cv::IMREAD_COLOR);
  } catch (const cv::Exception& e) {
    throw DecodeError(std::string("preprocess: cannot decode image: ") + e.what());
  }
  if (bgr.empty()) throw DecodeError("preprocess: cannot decode image (not a readable PNG or JPEG)");
  if (bgr.cols == 0 || bgr.rows == 0) throw ValidationError("preprocess: image has a zero dimension");
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  return preprocess_mat(rgb, spec);
}

Tensor preprocess_rgb(std::span<const std::uint8_t> rgb, std::size_t width, std::size_t height,
                      const PreprocessSpec& spec) {
  if (width == 0 || height == 0) throw ValidationError("preprocess: image has a zero dimension");
  if (rgb.size() != width * height * 3) {
    throw DimensionError("preprocess: expected " + std::to_string(width * height * 3) + " RGB bytes, got " +
                         std::to_string(rgb.size()));
  }
  const cv::Mat mat(static_cast<int>(height), static_cast<int>(width), CV_8UC3, const_cast<std::uint8_t*>(rgb.data()));
  return preprocess_mat(mat, spec);
}

void l2_normalize(std::span<float> v) {
  double sum = 0.0;
  for (float x : v) sum += static_cast<double>(x) * x;
  const double norm = std::sqrt(sum);
  if (!(norm > 0.0) || !std::isfinite(norm)) throw NumericalError("embed: embedding has zero or non-finite norm", 0, 0);
  for (float& x : v) x = static_cast<float>(x / norm);
}

struct EncoderModel::Impl {
  fs::path path;
  std::string digest;
  PreprocessSpec spec;
  std::vector<std::uint8_t> bytes;
  mutable std::mutex mutex;
  mutable cv::dnn::Net net;

  std::vector<float> run(const Tensor& pixels) const {
    const int s = static_cast<int>(spec.target_size);
    require_shape(pixels, Shape{3, spec.target_size, spec.target_size}, "encoder input");
    const int dims[4] = {1, 3, s, s};
    cv::Mat blob(4, dims, CV_32F, const_cast<float*>(pixels.data()));
    cv::Mat out;
    {
      std::lock_guard lock(mutex);
      try {
        net.setInput(blob);
        out = net.forward().clone();
      } catch (const cv::Exception& e) {
        throw ContractError("encoder " + path.string() + " (sha256 " + digest + "): inference failed: " + e.what());
      }
    }
    std::vector<int> shape(out.size.p, out.size.p + out.dims);
    const bool ok = out.type() == CV_32F && out.total() == kEmbeddingDim &&
                    ((shape.size() == 2 && shape[0] == 1 && shape[1] == static_cast<int>(kEmbeddingDim)));
    if (!ok) {
      std::string got;
      for (std::size_t i = 0; i < shape.size(); ++i) got += (i ? " x " : "") + std::to_string(shape[i]);
      throw ContractError("encoder " + path.string() + " (sha256 " + digest + "): output shape [" + got +
                          "], expected [1 x 512]");
    }
    const auto* p = out.ptr<float>();
    return std::vector<float>(p, p + kEmbeddingDim);
  }
};

EncoderModel::EncoderModel(std::unique_ptr<Impl> impl) : impl_(std::move(impl)) {}
EncoderModel::EncoderModel(EncoderModel&&) noexcept = default;
EncoderModel& EncoderModel::operator=(EncoderModel&&) noexcept = default;
EncoderModel::~EncoderModel() = default;

namespace {
cv::dnn::Net read_net(const std::vector<std::uint8_t>& bytes, const fs::path& path) {
  try {
    cv::dnn::Net net = cv::dnn::readNetFromONNX(reinterpret_cast<const char*>(bytes.data()), bytes.size());
    if (net.empty()) throw ContractError("encoder " + path.string() + ": model graph is empty");
    net.setPreferableBackend(cv::dnn::DNN_BACKEND_OPENCV);
    net.setPreferableTarget(cv::dnn::DNN_TARGET_CPU);
    return net;
  } catch (const cv::Exception& e) {
    throw FormatError("encoder " + path.string() + ": cannot load ONNX model: " + e.what());
  }
}
}  // namespace

EncoderModel EncoderModel::load(const fs::path& path, const PreprocessSpec& spec) {
  spec.validate();
  auto impl = std::make_unique<Impl>();
  impl->path = path;
  impl->spec = spec;
  impl->bytes = read_file_bytes(path);
  impl->digest = sha256_hex(impl->bytes);
  impl->net = read_net(impl->bytes, path);
  EncoderModel model(std::move(impl));
  model.infer(Tensor(Shape{3, spec.target_size, spec.target_size}));
  return model;
}

EncoderModel EncoderModel::clone() const {
  auto impl = std::make_unique<Impl>();
  impl->path = impl_->path;
  impl->digest = impl_->digest;
  impl->spec = impl_->spec;
  impl->bytes = impl_->bytes;
  impl->net = read_net(impl->bytes, impl->path);
  return EncoderModel(std::move(impl));
}

const std::string& EncoderModel::digest() const { return impl_->digest; }
const fs::path& EncoderModel::path() const { return impl_->path; }
const PreprocessSpec& EncoderModel::spec() const { return impl_->spec; }

std::vector<float> EncoderModel::infer(const Tensor& pixels) const { return impl_->run(pixels); }

std::vector<float> embed(const EncoderModel& model, std::span<const std::uint8_t> image_bytes, bool normalize) {
  auto z = model.infer(preprocess(image_bytes, model.spec()));
  for (float v : z) {
    if (!std::isfinite(v)) throw NumericalError("embed: encoder produced a non-finite value", 0, 0);
  }
  if (normalize) l2_normalize(z);
  return z;
}

EmbedSummary embed_batch(const EncoderModel& model, const DatasetManifest& manifest, const fs::path& cache_path,
                         const EmbedOptions& options) {
  std::unordered_map<std::string, std::vector<float>> existing;
  if (options.incremental && fs::exists(cache_path)) {
    for (auto& r : cache_read(cache_path)) existing.emplace(r.id, std::move(r.vector));
  }

  const std::size_t n = manifest.rows.size();
  std::vector<std::optional<EmbeddingRecord>> slots(n);
  std::vector<std::string> errors(n);
  std::vector<std::size_t> pending;
  EmbedSummary summary;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& row = manifest.rows[i];
    if (auto it = existing.find(row.path); it != existing.end()) {
      slots[i] = EmbeddingRecord{row.path, row.label, row.category, it->second};
      ++summary.skipped;
    } else {
      pending.push_back(i);
    }
  }

  std::size_t workers = options.workers ? options.workers : std::max(1u, std::thread::hardware_concurrency());
  workers = std::min(workers, std::max<std::size_t>(pending.size(), 1));
  std::atomic<std::size_t> next{0};
  auto work = [&](const EncoderModel& m) {
    for (std::size_t k = next++; k < pending.size(); k = next++) {
      const std::size_t i = pending[k];
      const auto& row = manifest.rows[i];
      try {
        auto z = embed(m, read_file_bytes(manifest.resolve(row)), options.normalize);
        slots[i] = EmbeddingRecord{row.path, row.label, row.category, std::move(z)};
      } catch (const Error& e) {
        errors[i] = e.what();
      } catch (const cv::Exception& e) {
        errors[i] = e.what();
      }
    }
  };
  if (workers <= 1) {
    work(model);
  } else {
    std::vector<EncoderModel> clones;
    for (std::size_t w = 1; w < workers; ++w) clones.push_back(model.clone());
    std::vector<std::jthread> threads;
    for (auto& c : clones) threads.emplace_back([&work, &c] { work(c); });
    work(model);
  }

  std::vector<EmbeddingRecord> records;
  for (std::size_t i = 0; i < n; ++i) {
    if (slots[i]) {
      records.push_back(std::move(*slots[i]));
    } else if (!errors[i].empty()) {
      summary.failures.push_back({manifest.rows[i].path, errors[i]});
    }
  }
  summary.embedded = records.size() - summary.skipped;
  summary.record_count = records.size();
  summary.bytes_written = cache_write(records, cache_path);
  return summary;
}

}  // namespace clipdetect

#include <pybind11/numpy.h>
#include <pybind11/operators.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstring>
#include <sstream>

#include "clipdetect/commands.hpp"
#include "clipdetect/embedding_store.hpp"
#include "clipdetect/encoder.hpp"
#include "clipdetect/errors.hpp"
#include "clipdetect/evaluator.hpp"
#include "clipdetect/file_util.hpp"
#include "clipdetect/head_io.hpp"
#include "clipdetect/llm_baseline.hpp"
#include "clipdetect/trainer.hpp"

namespace py = pybind11;
using namespace pybind11::literals;
using namespace clipdetect;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

Label label_from(const std::string& text) {
  if (auto l = parse_label(text)) return *l;
  throw ValidationError("label must be 'real' or 'fake', got '" + text + "'");
}

std::span<const std::uint8_t> byte_span(const py::bytes& b) {
  const std::string_view view(b);
  return {reinterpret_cast<const std::uint8_t*>(view.data()), view.size()};
}

py::bytes to_bytes(const std::vector<std::uint8_t>& v) {
  return py::bytes(reinterpret_cast<const char*>(v.data()), v.size());
}

FloatArray to_array(std::span<const float> values, std::vector<py::ssize_t> shape) {
  FloatArray out(shape);
  std::memcpy(out.mutable_data(), values.data(), values.size() * sizeof(float));
  return out;
}

// Accepts [512] or [N x 512].
Tensor batch_from(const FloatArray& z) {
  if (z.ndim() == 1) return Tensor(Shape{static_cast<std::size_t>(z.shape(0))}, {z.data(), z.data() + z.size()});
  if (z.ndim() == 2) {
    return Tensor(Shape{static_cast<std::size_t>(z.shape(0)), static_cast<std::size_t>(z.shape(1))},
                  {z.data(), z.data() + z.size()});
  }
  throw DimensionError("expected a [512] or [N x 512] array");
}

py::dict metrics_dict(const ConfusionMatrix& cm, const Metrics& m) {
  return py::dict("accuracy"_a = m.accuracy, "precision"_a = m.precision, "recall"_a = m.recall, "f1"_a = m.f1,
                  "precision_undefined"_a = m.precision_undefined, "recall_undefined"_a = m.recall_undefined,
                  "f1_undefined"_a = m.f1_undefined, "tp"_a = cm.tp, "fp"_a = cm.fp, "tn"_a = cm.tn, "fn"_a = cm.fn);
}

py::dict evaluation_dict(const Evaluation& ev) {
  py::dict d = metrics_dict(ev.confusion, ev.metrics);
  py::list preds;
  for (const auto& p : ev.predictions) {
    preds.append(py::dict("id"_a = p.id, "truth"_a = std::string(to_string(p.truth)),
                          "predicted"_a = std::string(to_string(p.predicted)), "probability"_a = p.probability,
                          "category"_a = p.category));
  }
  d["predictions"] = preds;
  py::list wrong;
  for (const auto& p : ev.misclassifications) wrong.append(p.id);
  d["misclassified"] = wrong;
  return d;
}

py::list history_list(const TrainHistory& h) {
  py::list out;
  for (const auto& e : h.epochs) {
    out.append(py::dict("epoch"_a = e.epoch, "train_loss"_a = e.train_loss, "val_loss"_a = e.val_loss,
                        "val_accuracy"_a = e.val_accuracy));
  }
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Embedding cache, classifier heads, training and evaluation for AI-generated image detection.";
  m.attr("EMBEDDING_DIM") = kEmbeddingDim;

  // Translators run newest first, so the base goes in before its subclasses.
  auto& base = py::register_exception<Error>(m, "ClipdetectError", PyExc_RuntimeError);
  py::register_exception<DimensionError>(m, "DimensionError", base);
  py::register_exception<ValidationError>(m, "ValidationError", base);
  py::register_exception<FormatError>(m, "FormatError", base);
  py::register_exception<CorruptionError>(m, "CorruptionError", base);
  py::register_exception<ConfigError>(m, "ConfigError", base);
  py::register_exception<NumericalError>(m, "NumericalError", base);
  py::register_exception<DecodeError>(m, "DecodeError", base);
  py::register_exception<ContractError>(m, "ContractError", base);
  py::register_exception<TransportError>(m, "TransportError", base);

  py::class_<EmbeddingRecord>(m, "Record")
      .def(py::init([](std::string id, const std::string& label, const FloatArray& vector, std::string category) {
             EmbeddingRecord r{std::move(id), label_from(label), std::move(category), {}};
             r.vector.assign(vector.data(), vector.data() + vector.size());
             validate_record(r);
             return r;
           }),
           "id"_a, "label"_a, "vector"_a, "category"_a = "")
      .def_readwrite("id", &EmbeddingRecord::id)
      .def_readwrite("category", &EmbeddingRecord::category)
      .def_property(
          "label", [](const EmbeddingRecord& r) { return std::string(to_string(r.label)); },
          [](EmbeddingRecord& r, const std::string& s) { r.label = label_from(s); })
      .def_property_readonly("vector",
                             [](const EmbeddingRecord& r) {
                               return to_array(r.vector, {static_cast<py::ssize_t>(r.vector.size())});
                             })
      .def(py::self == py::self)
      .def("__repr__", [](const EmbeddingRecord& r) {
        return "Record(id=" + r.id + ", label=" + std::string(to_string(r.label)) + ")";
      });

  m.def("read_cache", &cache_read, "path"_a, "Reads a CLPE embedding cache.");
  m.def(
      "write_cache", [](const std::vector<EmbeddingRecord>& r, const std::filesystem::path& p) { return cache_write(r, p); },
      "records"_a, "path"_a, "Writes a CLPE cache; returns the byte count.");
  m.def(
      "encode_cache", [](const std::vector<EmbeddingRecord>& r) { return to_bytes(encode_cache(r)); }, "records"_a);
  m.def(
      "decode_cache", [](const py::bytes& b) { return decode_cache(byte_span(b)); }, "data"_a);
  m.def(
      "dataset_digest", [](const std::vector<EmbeddingRecord>& r) { return dataset_digest(r); }, "records"_a);
  m.def(
      "few_shot_split",
      [](const std::vector<EmbeddingRecord>& records, std::uint64_t seed, double fraction, bool stratified) {
        const auto s = few_shot_split_indices(records, SplitSpec{seed, fraction, stratified});
        return py::make_tuple(s.adaptation, s.test);
      },
      "records"_a, "seed"_a = 0, "fraction"_a = 0.2, "stratified"_a = true,
      "Returns (adaptation indices, test indices).");

  py::class_<Head>(m, "Head")
      .def_static(
          "init", [](const std::string& kind, std::uint64_t seed) { return Head::init(parse_head_kind(kind), seed); },
          "kind"_a, "seed"_a = 0)
      .def_static(
          "zeros", [](const std::string& kind) { return Head::zeros(parse_head_kind(kind)); }, "kind"_a)
      .def_static("load", &load_head, "path"_a)
      .def_static(
          "from_bytes", [](const py::bytes& b) { return decode_head(byte_span(b)); }, "data"_a)
      .def_property_readonly("kind", [](const Head& h) { return std::string(to_string(h.kind())); })
      .def_property_readonly("parameter_count", &Head::parameter_count)
      .def(
          "forward",
          [](const Head& h, const FloatArray& z, bool train, std::uint64_t seed) {
            const auto logits =
                h.forward_batch(batch_from(z), train ? nn::Mode::Train : nn::Mode::Eval, seed);
            return to_array(logits, {static_cast<py::ssize_t>(logits.size())});
          },
          "z"_a, "train"_a = false, "seed"_a = 0, "Logits for a [512] vector or an [N x 512] batch.")
      .def(
          "predict",
          [](const Head& h, const FloatArray& z, double threshold) {
            const auto p = h.predict(batch_from(z), threshold);
            return py::make_tuple(p.probability, std::string(to_string(p.label)));
          },
          "z"_a, "threshold"_a = 0.5, "Returns (P(fake), label).")
      .def("save", [](const Head& h, const std::filesystem::path& p) { save_head(h, p); }, "path"_a)
      .def("to_bytes", [](const Head& h) { return to_bytes(encode_head(h)); })
      .def(py::self == py::self);

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("lr", &TrainConfig::lr)
      .def_readwrite("batch_size", &TrainConfig::batch_size)
      .def_readwrite("max_epochs", &TrainConfig::max_epochs)
      .def_readwrite("patience", &TrainConfig::patience)
      .def_readwrite("val_fraction", &TrainConfig::val_fraction)
      .def_readwrite("seed", &TrainConfig::seed)
      .def_readwrite("threshold", &TrainConfig::threshold)
      .def_readwrite("min_delta", &TrainConfig::min_delta)
      .def_property(
          "head", [](const TrainConfig& c) { return std::string(to_string(c.head_kind)); },
          [](TrainConfig& c, const std::string& s) { c.head_kind = parse_head_kind(s); });

  py::class_<TrainedHead>(m, "TrainedHead")
      .def_readonly("head", &TrainedHead::head)
      .def_readonly("threshold", &TrainedHead::threshold)
      .def_readonly("config", &TrainedHead::config)
      .def_readonly("dataset_digest", &TrainedHead::dataset_digest)
      .def_readonly("train_count", &TrainedHead::train_count)
      .def_readonly("val_count", &TrainedHead::val_count)
      .def("save", [](const TrainedHead& t, const std::filesystem::path& p) { save_trained_head(t, p); }, "path"_a)
      .def_static("load", &load_trained_head, "path"_a);

  m.def(
      "train",
      [](const std::vector<EmbeddingRecord>& records, const TrainConfig& config) {
        TrainResult r;
        {
          py::gil_scoped_release release;
          r = train(records, config);
        }
        return py::dict("trained"_a = r.trained, "history"_a = history_list(r.history),
                        "best_epoch"_a = r.history.best_epoch,
                        "stop_reason"_a = std::string(to_string(r.history.stop_reason)),
                        "train_indices"_a = r.train_indices, "val_indices"_a = r.val_indices);
      },
      "records"_a, "config"_a = TrainConfig{});
  m.def(
      "run_few_shot",
      [](const std::vector<EmbeddingRecord>& records, std::uint64_t seed, double fraction, bool stratified,
         const TrainConfig& config) {
        FewShotResult r;
        {
          py::gil_scoped_release release;
          r = run_few_shot(records, SplitSpec{seed, fraction, stratified}, config);
        }
        return py::dict("adaptation_ids"_a = r.adaptation_ids, "test_ids"_a = r.test_ids,
                        "trained"_a = r.training.trained, "test"_a = evaluation_dict(r.test));
      },
      "records"_a, "seed"_a = 0, "fraction"_a = 0.2, "stratified"_a = true, "config"_a = TrainConfig{});
  m.def(
      "evaluate",
      [](const Head& head, const std::vector<EmbeddingRecord>& records, double threshold) {
        return evaluation_dict(evaluate(head, threshold, records));
      },
      "head"_a, "records"_a, "threshold"_a = 0.5);
  m.def(
      "metrics",
      [](const std::vector<std::string>& truth, const std::vector<std::string>& predicted) {
        if (truth.size() != predicted.size()) throw ValidationError("metrics: truth and predicted differ in length");
        std::vector<std::pair<Label, Label>> pairs;
        for (std::size_t i = 0; i < truth.size(); ++i) pairs.emplace_back(label_from(truth[i]), label_from(predicted[i]));
        const auto cm = confusion(pairs);
        return metrics_dict(cm, metrics_from(cm));
      },
      "truth"_a, "predicted"_a, "Metrics with fake as the positive class.");

  m.def(
      "render_prompt", [](const std::string& kind) { return std::string(render_prompt(parse_prompt_kind(kind))); },
      "kind"_a = "basic");
  m.def(
      "parse_verdict",
      [](const std::string& raw, bool strict) { return std::string(to_string(parse_verdict(raw, strict).outcome)); },
      "raw"_a, "strict"_a = true, "Returns 'real', 'fake' or 'invalid'.");
  m.def(
      "sha256_hex", [](const py::bytes& b) { return sha256_hex(byte_span(b)); }, "data"_a);

  py::class_<EncoderModel>(m, "Encoder")
      .def_static(
          "load", [](const std::filesystem::path& p) { return EncoderModel::load(p); }, "path"_a)
      .def_property_readonly("digest", &EncoderModel::digest)
      .def(
          "embed",
          [](const EncoderModel& model, const py::bytes& image, bool normalize) {
            const auto v = embed(model, byte_span(image), normalize);
            return to_array(v, {static_cast<py::ssize_t>(v.size())});
          },
          "image"_a, "normalize"_a = true, "Embeds encoded PNG/JPEG bytes.");
  m.def(
      "preprocess",
      [](const py::bytes& image) {
        const Tensor t = preprocess(byte_span(image));
        std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
        return to_array(t.values(), shape);
      },
      "image"_a, "Decoded, resized, centre-cropped and normalized [3 x 224 x 224] pixels.");

  m.def(
      "run_cli",
      [](std::vector<std::string> args) {
        args.insert(args.begin(), "clipdetect");
        std::ostringstream out;
        std::ostringstream err;
        int code = 0;
        {
          py::gil_scoped_release release;
          code = run_cli(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      "args"_a, "Runs the command line in-process; returns (exit code, stdout, stderr).");
}

#include "clipdetect/evaluator.hpp"

#include <algorithm>
#include <charconv>
#include <map>

#include <nlohmann/json.hpp>

#include "clipdetect/errors.hpp"
#include "clipdetect/file_util.hpp"
#include "csv.hpp"

namespace clipdetect {

namespace {
constexpr std::size_t kEvalChunk = 256;

double ratio(std::uint64_t num, std::uint64_t den) { return static_cast<double>(num) / static_cast<double>(den); }
}  // namespace

void ConfusionMatrix::add(Label truth, Label predicted) {
  if (truth == Label::Fake) {
    (predicted == Label::Fake ? tp : fn) += 1;
  } else {
    (predicted == Label::Fake ? fp : tn) += 1;
  }
}

ConfusionMatrix confusion(std::span<const std::pair<Label, Label>> predictions) {
  if (predictions.empty()) throw ValidationError("confusion: no predictions");
  ConfusionMatrix cm;
  for (const auto& [truth, predicted] : predictions) cm.add(truth, predicted);
  return cm;
}

Metrics metrics_from(const ConfusionMatrix& cm) {
  const std::uint64_t total = cm.total();
  if (total == 0) throw ValidationError("metrics: confusion matrix is empty");
  Metrics m;
  m.accuracy = ratio(cm.tp + cm.tn, total);
  if (cm.tp + cm.fp == 0) m.precision_undefined = true;
  else m.precision = ratio(cm.tp, cm.tp + cm.fp);
  if (cm.tp + cm.fn == 0) m.recall_undefined = true;
  else m.recall = ratio(cm.tp, cm.tp + cm.fn);
  if (m.precision + m.recall > 0.0) m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
  else m.f1_undefined = true;
  return m;
}

double predicted_confidence(const ScoredPrediction& p) {
  return p.predicted == Label::Fake ? p.probability : 1.0 - p.probability;
}

Evaluation evaluate_predictions(std::vector<ScoredPrediction> predictions) {
  if (predictions.empty()) throw ValidationError("evaluate: no records");
  Evaluation ev;
  for (const auto& p : predictions) {
    ev.confusion.add(p.truth, p.predicted);
    if (p.truth != p.predicted) ev.misclassifications.push_back(p);
  }
  ev.metrics = metrics_from(ev.confusion);
  std::stable_sort(ev.misclassifications.begin(), ev.misclassifications.end(),
                   [](const ScoredPrediction& a, const ScoredPrediction& b) {
                     const double ca = predicted_confidence(a);
                     const double cb = predicted_confidence(b);
                     if (ca != cb) return ca > cb;
                     return a.id < b.id;
                   });
  ev.predictions = std::move(predictions);
  return ev;
}

std::vector<double> predict_probabilities(const Head& head, std::span<const EmbeddingRecord> records) {
  std::vector<double> probs;
  probs.reserve(records.size());
  for (std::size_t start = 0; start < records.size(); start += kEvalChunk) {
    const auto chunk = records.subspan(start, std::min(kEvalChunk, records.size() - start));
    const Tensor batch = stack_vectors(chunk);
    for (float logit : head.forward_batch(batch, nn::Mode::Eval, 0)) probs.push_back(nn::sigmoid<double>(logit));
  }
  return probs;
}

Evaluation evaluate(const Head& head, double threshold, std::span<const EmbeddingRecord> records) {
  if (records.empty()) throw ValidationError("evaluate: no records");
  if (!(threshold > 0.0 && threshold < 1.0)) throw ValidationError("evaluate: threshold must lie in (0, 1)");
  const auto probs = predict_probabilities(head, records);
  std::vector<ScoredPrediction> predictions;
  predictions.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    predictions.push_back(
        {r.id, r.label, probs[i] >= threshold ? Label::Fake : Label::Real, probs[i], r.category});
  }
  return evaluate_predictions(std::move(predictions));
}

std::vector<CategoryRow> category_breakdown(std::span<const ScoredPrediction> predictions) {
  std::map<std::string, ConfusionMatrix> by_category;
  ConfusionMatrix overall;
  for (const auto& p : predictions) {
    by_category[p.category.empty() ? std::string(kUntagged) : p.category].add(p.truth, p.predicted);
    overall.add(p.truth, p.predicted);
  }
  std::vector<CategoryRow> rows;
  for (const auto& [name, cm] : by_category) rows.push_back({name, cm, metrics_from(cm)});
  if (overall.total() > 0) rows.push_back({std::string(kOverall), overall, metrics_from(overall)});
  return rows;
}

std::string metrics_json(const ConfusionMatrix& cm, const Metrics& m, std::size_t invalid_count, bool include_invalid) {
  nlohmann::ordered_json j;
  j["positive_class"] = kPositiveClass;
  j["count"] = cm.total();
  j["accuracy"] = m.accuracy;
  j["precision"] = m.precision;
  j["recall"] = m.recall;
  j["f1"] = m.f1;
  j["flags"] = {{"precision_undefined", m.precision_undefined},
                {"recall_undefined", m.recall_undefined},
                {"f1_undefined", m.f1_undefined}};
  j["confusion"] = {{"tp", cm.tp}, {"fp", cm.fp}, {"tn", cm.tn}, {"fn", cm.fn}};
  if (include_invalid) j["invalid"] = invalid_count;
  return j.dump(2) + "\n";
}

std::string misclassification_csv(std::span<const ScoredPrediction> entries) {
  std::string out = "id,true,predicted,probability,category\n";
  for (const auto& e : entries) {
    out += detail::csv_escape(e.id) + "," + std::string(to_string(e.truth)) + "," +
           std::string(to_string(e.predicted)) + "," + format_double(e.probability) + "," +
           detail::csv_escape(e.category) + "\n";
  }
  return out;
}

std::string predictions_csv(std::span<const ScoredPrediction> predictions) {
  return misclassification_csv(predictions);
}

std::vector<ScoredPrediction> parse_predictions_csv(std::string_view text) {
  const auto lines = detail::split_lines(text);
  if (lines.empty() || lines[0] != "id,true,predicted,probability,category") {
    throw ParseError("predictions: expected header 'id,true,predicted,probability,category'", 1);
  }
  std::vector<ScoredPrediction> out;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const auto f = detail::split_csv_line(lines[i], i + 1, "predictions");
    if (f.size() != 5) throw ParseError("predictions: expected 5 fields", i + 1);
    const auto truth = parse_label(f[1]);
    const auto predicted = parse_label(f[2]);
    if (!truth || !predicted) throw ParseError("predictions: unknown label", i + 1);
    double prob = 0.0;
    const auto [ptr, ec] = std::from_chars(f[3].data(), f[3].data() + f[3].size(), prob);
    if (ec != std::errc{} || ptr != f[3].data() + f[3].size()) {
      throw ParseError("predictions: bad probability '" + f[3] + "'", i + 1);
    }
    out.push_back({f[0], *truth, *predicted, prob, f[4]});
  }
  return out;
}

std::string category_tsv(std::span<const CategoryRow> rows) {
  std::string out = "category\tcount\ttp\tfp\ttn\tfn\taccuracy\tprecision\trecall\tf1\n";
  for (const auto& r : rows) {
    out += r.category + "\t" + std::to_string(r.confusion.total()) + "\t" + std::to_string(r.confusion.tp) + "\t" +
           std::to_string(r.confusion.fp) + "\t" + std::to_string(r.confusion.tn) + "\t" +
           std::to_string(r.confusion.fn) + "\t" + format_double(r.metrics.accuracy) + "\t" +
           format_double(r.metrics.precision) + "\t" + format_double(r.metrics.recall) + "\t" +
           format_double(r.metrics.f1) + "\n";
  }
  return out;
}

}  // namespace clipdetect

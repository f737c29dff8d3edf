#pragma once

// Confusion counts, derived metrics, misclassification lists and per-category
// tables. The positive class is Fake throughout.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "clipdetect/embedding_store.hpp"
#include "clipdetect/heads.hpp"

namespace clipdetect {

inline constexpr std::string_view kPositiveClass = "fake";
inline constexpr std::string_view kUntagged = "untagged";
inline constexpr std::string_view kOverall = "overall";

struct ConfusionMatrix {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t tn = 0;
  std::uint64_t fn = 0;

  std::uint64_t total() const { return tp + fp + tn + fn; }
  void add(Label truth, Label predicted);

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

struct Metrics {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  bool precision_undefined = false;  // tp + fp = 0, reported as 0
  bool recall_undefined = false;     // tp + fn = 0, reported as 0
  bool f1_undefined = false;         // precision + recall = 0, reported as 0
};

/// Pairs are (truth, predicted).
ConfusionMatrix confusion(std::span<const std::pair<Label, Label>> predictions);
Metrics metrics_from(const ConfusionMatrix& cm);

struct ScoredPrediction {
  std::string id;
  Label truth = Label::Real;
  Label predicted = Label::Real;
  double probability = 0.0;  // P(fake)
  std::string category;
};

/// Probability the predictor assigned to the label it chose.
double predicted_confidence(const ScoredPrediction& p);

struct Evaluation {
  ConfusionMatrix confusion;
  Metrics metrics;
  std::vector<ScoredPrediction> predictions;        // input order
  std::vector<ScoredPrediction> misclassifications;  // descending wrong-answer confidence, then id
};

Evaluation evaluate_predictions(std::vector<ScoredPrediction> predictions);

/// Eval-mode predictions of `head` at `threshold`.
Evaluation evaluate(const Head& head, double threshold, std::span<const EmbeddingRecord> records);

/// Eval-mode probabilities P(fake) for each record, computed in fixed-size chunks.
std::vector<double> predict_probabilities(const Head& head, std::span<const EmbeddingRecord> records);

struct CategoryRow {
  std::string category;
  ConfusionMatrix confusion;
  Metrics metrics;
};

/// One row per category (sorted by name, empty tags as "untagged") followed
/// by an "overall" row.
std::vector<CategoryRow> category_breakdown(std::span<const ScoredPrediction> predictions);

std::string metrics_json(const ConfusionMatrix& cm, const Metrics& m, std::size_t invalid_count = 0,
                         bool include_invalid = false);
std::string misclassification_csv(std::span<const ScoredPrediction> entries);
std::string predictions_csv(std::span<const ScoredPrediction> predictions);
std::string category_tsv(std::span<const CategoryRow> rows);

/// Parses a predictions CSV written by predictions_csv.
std::vector<ScoredPrediction> parse_predictions_csv(std::string_view text);

}  // namespace clipdetect

#pragma once

// Mini-batch Adam training with early stopping, and the few-shot protocol.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "clipdetect/embedding_store.hpp"
#include "clipdetect/evaluator.hpp"
#include "clipdetect/heads.hpp"

namespace clipdetect {

struct TrainConfig {
  double lr = 1e-3;
  std::size_t batch_size = 64;
  std::size_t max_epochs = 100;
  std::size_t patience = 5;
  double val_fraction = 0.1;
  std::uint64_t seed = 0;
  HeadKind head_kind = HeadKind::Mlp;
  double threshold = 0.5;
  double min_delta = 1e-5;

  void validate() const;
};

enum class StopReason { EarlyStopped, MaxEpochs };

std::string_view to_string(StopReason reason);

struct EpochRecord {
  std::size_t epoch = 0;  // 0-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;

  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;  // index into epochs
  StopReason stop_reason = StopReason::MaxEpochs;

  friend bool operator==(const TrainHistory&, const TrainHistory&) = default;
};

struct TrainedHead {
  Head head;  // best-validation snapshot
  double threshold = 0.5;
  TrainConfig config;
  std::string dataset_digest;
  std::size_t train_count = 0;
  std::size_t val_count = 0;
};

struct TrainResult {
  TrainedHead trained;
  TrainHistory history;
  std::vector<std::size_t> train_indices;  // into the input records
  std::vector<std::size_t> val_indices;
};

/// Mean BCE of Eval-mode logits over `records`.
double mean_loss(const Head& head, std::span<const EmbeddingRecord> records);

TrainResult train(std::span<const EmbeddingRecord> records, const TrainConfig& config);

struct FewShotResult {
  std::vector<std::string> adaptation_ids;  // sorted
  std::vector<std::string> test_ids;        // sorted
  TrainResult training;
  Evaluation test;
};

/// Trains on the adaptation subset only and evaluates on the remainder.
FewShotResult run_few_shot(std::span<const EmbeddingRecord> records, const SplitSpec& split,
                           const TrainConfig& config);

std::string history_json(const TrainHistory& history);
std::string history_tsv(const TrainHistory& history);
TrainHistory parse_history_json(std::string_view text);

/// Writes `<path>` (AHD1) and `<path>.meta.json`.
void save_trained_head(const TrainedHead& trained, const std::filesystem::path& path);
TrainedHead load_trained_head(const std::filesystem::path& path);
std::filesystem::path trained_head_meta_path(const std::filesystem::path& path);

}  // namespace clipdetect

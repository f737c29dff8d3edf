#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "clipdetect/errors.hpp"
#include "clipdetect/file_util.hpp"
#include "clipdetect/head_io.hpp"
#include "clipdetect/trainer.hpp"
#include "test_support.hpp"

using namespace clipdetect;
using clipdetect::testing::separable_blobs;
using clipdetect::testing::TempDir;

namespace {

TrainConfig quick_config(HeadKind kind, std::uint64_t seed) {
  TrainConfig c;
  c.head_kind = kind;
  c.seed = seed;
  return c;
}

std::vector<EmbeddingRecord> shuffled_labels(std::vector<EmbeddingRecord> records, std::uint64_t seed) {
  std::vector<Label> labels;
  for (const auto& r : records) labels.push_back(r.label);
  std::mt19937_64 rng(seed);
  std::shuffle(labels.begin(), labels.end(), rng);
  for (std::size_t i = 0; i < records.size(); ++i) records[i].label = labels[i];
  return records;
}

}  // namespace

TEST(Train, SeparableBlobsReachPerfectValidation) {
  const auto records = separable_blobs(100, 1);
  for (auto kind : {HeadKind::Mlp, HeadKind::Cnn}) {
    auto config = quick_config(kind, 3);
    config.max_epochs = 20;
    const auto result = train(records, config);
    EXPECT_EQ(result.trained.val_count, 20u);
    EXPECT_EQ(result.trained.train_count, 180u);
    const auto& epochs = result.history.epochs;
    ASSERT_FALSE(epochs.empty());
    EXPECT_LE(epochs.size(), 20u);
    const bool perfect = std::any_of(epochs.begin(), epochs.end(), [](const auto& e) { return e.val_accuracy == 1.0; });
    EXPECT_TRUE(perfect) << to_string(kind);
    EXPECT_EQ(epochs[result.history.best_epoch].val_accuracy, 1.0) << to_string(kind);
  }
}

TEST(Train, DeterministicForSeedAndData) {
  const auto records = separable_blobs(60, 2, 2.0);
  for (auto kind : {HeadKind::Mlp, HeadKind::Cnn}) {
    auto config = quick_config(kind, 11);
    config.max_epochs = kind == HeadKind::Mlp ? 15 : 4;
    const auto a = train(records, config);
    const auto b = train(records, config);
    EXPECT_EQ(a.history, b.history);
    EXPECT_TRUE(a.trained.head == b.trained.head);
    EXPECT_EQ(encode_head(a.trained.head), encode_head(b.trained.head));
    EXPECT_EQ(a.train_indices, b.train_indices);
    config.seed = 12;
    const auto c = train(records, config);
    EXPECT_FALSE(a.history == c.history);
  }
}

TEST(Train, ShuffledLabelsGiveChanceAccuracy) {
  const auto records = shuffled_labels(separable_blobs(1000, 5), 17);
  auto config = quick_config(HeadKind::Mlp, 4);
  config.max_epochs = 30;
  const auto result = train(records, config);
  EXPECT_EQ(result.trained.val_count, 200u);
  const auto& best = result.history.epochs[result.history.best_epoch];
  EXPECT_NEAR(best.val_accuracy, 0.5, 0.1);
}

TEST(Train, FirstEpochLossNearLn2OnRandomLabels) {
  const auto records = shuffled_labels(separable_blobs(200, 6), 3);
  for (auto kind : {HeadKind::Mlp, HeadKind::Cnn}) {
    auto config = quick_config(kind, 8);
    config.max_epochs = 1;
    const auto result = train(records, config);
    EXPECT_NEAR(result.history.epochs[0].train_loss, std::log(2.0), 0.15) << to_string(kind);
  }
}

TEST(Train, EarlyStoppingInvariant) {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const auto records = shuffled_labels(separable_blobs(80, 10 + seed), seed);
    auto config = quick_config(HeadKind::Mlp, seed);
    config.patience = 3;
    config.max_epochs = 60;
    const auto result = train(records, config);
    const auto& h = result.history;
    const double best = h.epochs[h.best_epoch].val_loss;
    for (std::size_t e = 0; e < h.epochs.size(); ++e) EXPECT_GE(h.epochs[e].val_loss, best);
    if (h.stop_reason == StopReason::EarlyStopped) {
      ASSERT_GE(h.epochs.size(), config.patience + 1);
      EXPECT_EQ(h.best_epoch, h.epochs.size() - 1 - config.patience);
      for (std::size_t k = 0; k < config.patience; ++k) {
        EXPECT_GE(h.epochs[h.epochs.size() - 1 - k].val_loss, best - config.min_delta);
      }
    } else {
      EXPECT_EQ(h.epochs.size(), config.max_epochs);
    }
  }
}

TEST(Train, BestSnapshotReproducesValidationLoss) {
  const auto records = separable_blobs(60, 21, 1.0);
  auto config = quick_config(HeadKind::Mlp, 2);
  config.patience = 2;
  const auto result = train(records, config);
  std::vector<EmbeddingRecord> val;
  for (std::size_t i : result.val_indices) val.push_back(records[i]);
  EXPECT_DOUBLE_EQ(mean_loss(result.trained.head, val), result.history.epochs[result.history.best_epoch].val_loss);
}

TEST(Train, ValidationSplitIsStratifiedAndDisjoint) {
  const auto records = separable_blobs(50, 4);
  const auto result = train(records, [] {
    auto c = quick_config(HeadKind::Mlp, 1);
    c.max_epochs = 1;
    return c;
  }());
  std::set<std::size_t> all(result.train_indices.begin(), result.train_indices.end());
  for (std::size_t i : result.val_indices) EXPECT_TRUE(all.insert(i).second);
  EXPECT_EQ(all.size(), records.size());
  std::size_t fake = 0;
  for (std::size_t i : result.val_indices) fake += records[i].label == Label::Fake;
  EXPECT_EQ(fake, 5u);
  EXPECT_EQ(result.val_indices.size(), 10u);
}

TEST(Train, OverflowRaisesNumericalError) {
  auto records = separable_blobs(10, 1);
  for (auto& r : records) std::fill(r.vector.begin(), r.vector.end(), 3e38f);
  try {
    train(records, quick_config(HeadKind::Mlp, 0));
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_EQ(e.epoch(), 0u);
    EXPECT_EQ(e.batch(), 0u);
  }
}

TEST(Train, RejectsBadInput) {
  auto records = separable_blobs(10, 1);
  records.erase(std::remove_if(records.begin(), records.end(), [](const auto& r) { return r.label == Label::Fake; }),
                records.end());
  EXPECT_THROW(train(records, quick_config(HeadKind::Mlp, 0)), ValidationError);
  auto config = quick_config(HeadKind::Mlp, 0);
  config.lr = 0;
  EXPECT_THROW(train(separable_blobs(10, 1), config), ValidationError);
  config = quick_config(HeadKind::Mlp, 0);
  config.val_fraction = 1.0;
  EXPECT_THROW(train(separable_blobs(10, 1), config), ValidationError);
}

TEST(FewShot, CustomScaleSplitAndLeakageAudit) {
  const auto records = separable_blobs(130, 30);
  auto config = quick_config(HeadKind::Mlp, 5);
  const auto result = run_few_shot(records, SplitSpec{5, 0.2, true}, config);
  EXPECT_EQ(result.adaptation_ids.size(), 52u);
  EXPECT_EQ(result.test_ids.size(), 208u);
  EXPECT_EQ(result.training.trained.train_count + result.training.trained.val_count, 52u);
  std::set<std::string> adapt(result.adaptation_ids.begin(), result.adaptation_ids.end());
  for (const auto& p : result.test.predictions) EXPECT_FALSE(adapt.contains(p.id));
  EXPECT_EQ(result.test.predictions.size(), 208u);
  EXPECT_EQ(result.test.metrics.accuracy, 1.0);
  EXPECT_TRUE(std::is_sorted(result.test_ids.begin(), result.test_ids.end()));
}

TEST(HistoryFiles, JsonRoundTripAndTsv) {
  TrainHistory h;
  h.epochs = {{0, 0.69, 0.68, 0.5}, {1, 0.5, 0.51, 0.75}, {2, 0.4, 0.52, 0.8}};
  h.best_epoch = 1;
  h.stop_reason = StopReason::EarlyStopped;
  EXPECT_EQ(parse_history_json(history_json(h)), h);
  const std::string tsv = history_tsv(h);
  EXPECT_EQ(tsv.substr(0, tsv.find('\n')), "epoch\ttrain_loss\tval_loss\tval_acc");
  EXPECT_EQ(std::count(tsv.begin(), tsv.end(), '\n'), 4);
  EXPECT_THROW(parse_history_json("{"), FormatError);
}

TEST(HistoryFiles, DoublesRoundTripExactly) {
  const auto records = separable_blobs(30, 9);
  auto config = quick_config(HeadKind::Mlp, 9);
  config.max_epochs = 5;
  const auto result = train(records, config);
  EXPECT_EQ(parse_history_json(history_json(result.history)), result.history);
}

TEST(TrainedHeadFile, SaveLoadWithMetadata) {
  TempDir dir;
  const auto records = separable_blobs(20, 2);
  auto config = quick_config(HeadKind::Mlp, 4);
  config.max_epochs = 2;
  config.threshold = 0.4;
  const auto result = train(records, config);
  const auto path = dir / "h.ahd";
  save_trained_head(result.trained, path);
  EXPECT_TRUE(std::filesystem::exists(trained_head_meta_path(path)));
  const auto loaded = load_trained_head(path);
  EXPECT_TRUE(loaded.head == result.trained.head);
  EXPECT_EQ(loaded.threshold, 0.4);
  EXPECT_EQ(loaded.dataset_digest, result.trained.dataset_digest);
  EXPECT_EQ(loaded.train_count, result.trained.train_count);
  EXPECT_EQ(loaded.config.seed, 4u);
  // The AHD1 body alone still loads as a bare head.
  EXPECT_TRUE(load_head(path) == result.trained.head);
}

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>

#include "clipdetect/errors.hpp"
#include "clipdetect/evaluator.hpp"
#include "clipdetect/trainer.hpp"
#include "metrics_oracle.hpp"
#include "test_support.hpp"

using namespace clipdetect;
using clipdetect::testing::brute_force_metrics;
using clipdetect::testing::random_pairs;

namespace {

using Pairs = std::vector<std::pair<Label, Label>>;

Pairs repeat(Label truth, Label pred, int n, Pairs out = {}) {
  for (int i = 0; i < n; ++i) out.emplace_back(truth, pred);
  return out;
}

ScoredPrediction scored(std::string id, Label truth, double p_fake, std::string category = "") {
  return {std::move(id), truth, p_fake >= 0.5 ? Label::Fake : Label::Real, p_fake, std::move(category)};
}

}  // namespace

TEST(Confusion, AllCorrect) {
  auto pairs = repeat(Label::Fake, Label::Fake, 5, repeat(Label::Real, Label::Real, 5));
  const auto cm = confusion(pairs);
  EXPECT_EQ(cm, (ConfusionMatrix{5, 0, 5, 0}));
  const auto m = metrics_from(cm);
  EXPECT_EQ(m.accuracy, 1.0);
  EXPECT_EQ(m.precision, 1.0);
  EXPECT_EQ(m.recall, 1.0);
  EXPECT_EQ(m.f1, 1.0);
}

TEST(Confusion, AllPredictedFake) {
  auto pairs = repeat(Label::Fake, Label::Fake, 5, repeat(Label::Real, Label::Fake, 5));
  EXPECT_EQ(confusion(pairs), (ConfusionMatrix{5, 5, 0, 0}));
}

TEST(Confusion, HandFixture) {
  // tp=3 fp=1 fn=1 tn=5: acc 8/10, precision 3/4, recall 3/4, f1 3/4.
  Pairs pairs = repeat(Label::Fake, Label::Fake, 3);
  pairs = repeat(Label::Real, Label::Fake, 1, pairs);
  pairs = repeat(Label::Fake, Label::Real, 1, pairs);
  pairs = repeat(Label::Real, Label::Real, 5, pairs);
  const auto cm = confusion(pairs);
  EXPECT_EQ(cm, (ConfusionMatrix{3, 1, 5, 1}));
  const auto m = metrics_from(cm);
  EXPECT_DOUBLE_EQ(m.accuracy, 0.8);
  EXPECT_DOUBLE_EQ(m.precision, 0.75);
  EXPECT_DOUBLE_EQ(m.recall, 0.75);
  EXPECT_DOUBLE_EQ(m.f1, 0.75);
}

TEST(Confusion, EmptyIsError) {
  EXPECT_THROW(confusion(Pairs{}), ValidationError);
  EXPECT_THROW(metrics_from(ConfusionMatrix{}), ValidationError);
}

TEST(Metrics, UndefinedFlags) {
  const auto m = metrics_from(ConfusionMatrix{0, 0, 4, 0});
  EXPECT_TRUE(m.precision_undefined);
  EXPECT_TRUE(m.recall_undefined);
  EXPECT_TRUE(m.f1_undefined);
  EXPECT_EQ(m.precision, 0.0);
  EXPECT_EQ(m.recall, 0.0);
  EXPECT_EQ(m.f1, 0.0);
  EXPECT_EQ(m.accuracy, 1.0);
  const auto n = metrics_from(ConfusionMatrix{0, 3, 0, 2});
  EXPECT_FALSE(n.precision_undefined);
  EXPECT_FALSE(n.recall_undefined);
  EXPECT_TRUE(n.f1_undefined);
}

TEST(Metrics, MatchBruteForceOnRandomSets) {
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const auto pairs = random_pairs(seed);
    const auto m = metrics_from(confusion(pairs));
    const auto o = brute_force_metrics(pairs);
    ASSERT_NEAR(m.accuracy, o.accuracy, 1e-12) << seed;
    ASSERT_NEAR(m.precision, o.precision, 1e-12) << seed;
    ASSERT_NEAR(m.recall, o.recall, 1e-12) << seed;
    ASSERT_NEAR(m.f1, o.f1, 1e-12) << seed;
    for (double v : {m.accuracy, m.precision, m.recall, m.f1}) {
      ASSERT_GE(v, 0.0);
      ASSERT_LE(v, 1.0);
    }
  }
}

TEST(Confusion, PermutationInvariant) {
  std::mt19937_64 rng(4);
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    auto pairs = random_pairs(seed);
    const auto cm = confusion(pairs);
    std::shuffle(pairs.begin(), pairs.end(), rng);
    EXPECT_EQ(confusion(pairs), cm);
  }
}

TEST(Evaluate, ZeroHeadPredictsFake) {
  const auto records = clipdetect::testing::separable_blobs(7, 3);
  const auto eval = evaluate(Head::zeros(HeadKind::Mlp), 0.5, records);
  for (const auto& p : eval.predictions) {
    EXPECT_EQ(p.probability, 0.5);
    EXPECT_EQ(p.predicted, Label::Fake);
  }
  EXPECT_EQ(eval.metrics.recall, 1.0);
  EXPECT_DOUBLE_EQ(eval.metrics.accuracy, 0.5);
}

TEST(Evaluate, TrainedHeadOnSeparableData) {
  const auto records = clipdetect::testing::separable_blobs(60, 8);
  TrainConfig config;
  config.max_epochs = 20;
  const auto result = train(records, config);
  const auto eval = evaluate(result.trained.head, 0.5, records);
  EXPECT_EQ(eval.metrics.accuracy, 1.0);
  EXPECT_TRUE(eval.misclassifications.empty());
}

TEST(Evaluate, ConsistentWithConfusion) {
  const auto records = clipdetect::testing::random_records(50, 2);
  const Head head = Head::init(HeadKind::Mlp, 5);
  const auto eval = evaluate(head, 0.5, records);
  Pairs pairs;
  for (const auto& p : eval.predictions) pairs.emplace_back(p.truth, p.predicted);
  EXPECT_EQ(eval.confusion, confusion(pairs));
  const auto m = metrics_from(eval.confusion);
  EXPECT_EQ(eval.metrics.accuracy, m.accuracy);
  EXPECT_EQ(eval.metrics.f1, m.f1);
  EXPECT_EQ(eval.misclassifications.size(), eval.confusion.fp + eval.confusion.fn);
  const auto probs = predict_probabilities(head, records);
  for (std::size_t i = 0; i < records.size(); ++i) {
    EXPECT_EQ(eval.predictions[i].id, records[i].id);
    EXPECT_EQ(eval.predictions[i].probability, probs[i]);
    EXPECT_EQ(eval.predictions[i].probability,
              head.predict(Tensor::vector(records[i].vector)).probability);
  }
}

TEST(Evaluate, ThresholdMovesDecisions) {
  const auto records = clipdetect::testing::random_records(40, 6);
  const Head head = Head::init(HeadKind::Mlp, 1);
  const auto low = evaluate(head, 0.01, records);
  const auto high = evaluate(head, 0.99, records);
  EXPECT_EQ(low.confusion.tp + low.confusion.fp, 40u);
  EXPECT_EQ(high.confusion.tn + high.confusion.fn, 40u);
  EXPECT_THROW(evaluate(head, 1.0, records), ValidationError);
}

TEST(Misclassifications, OrderedByWrongConfidence) {
  std::vector<ScoredPrediction> preds = {
      scored("a", Label::Real, 0.9),  scored("b", Label::Fake, 0.05), scored("c", Label::Real, 0.6),
      scored("d", Label::Fake, 0.95), scored("e", Label::Fake, 0.1),  scored("f", Label::Real, 0.2),
  };
  const auto eval = evaluate_predictions(preds);
  ASSERT_EQ(eval.misclassifications.size(), 4u);
  EXPECT_EQ(eval.misclassifications[0].id, "b");  // confidence 0.95
  EXPECT_EQ(eval.misclassifications[1].id, "a");  // 0.9 tie with e, id order
  EXPECT_EQ(eval.misclassifications[2].id, "e");
  EXPECT_EQ(eval.misclassifications[3].id, "c");
  EXPECT_DOUBLE_EQ(predicted_confidence(preds[1]), 0.95);
  EXPECT_DOUBLE_EQ(predicted_confidence(preds[0]), 0.9);
}

TEST(Misclassifications, LengthIsFpPlusFnProperty) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<ScoredPrediction> preds;
    const std::size_t n = 1 + rng() % 60;
    for (std::size_t i = 0; i < n; ++i) {
      preds.push_back(scored("id" + std::to_string(i), rng() % 2 ? Label::Fake : Label::Real, u(rng)));
    }
    const auto eval = evaluate_predictions(preds);
    ASSERT_EQ(eval.misclassifications.size(), eval.confusion.fp + eval.confusion.fn);
  }
}

TEST(Categories, SingleCategoryDuplicatesOverall) {
  std::vector<ScoredPrediction> preds = {scored("a", Label::Real, 0.1, "x"), scored("b", Label::Fake, 0.3, "x"),
                                         scored("c", Label::Fake, 0.8, "x")};
  const auto rows = category_breakdown(preds);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].category, "x");
  EXPECT_EQ(rows[1].category, "overall");
  EXPECT_EQ(rows[0].confusion, rows[1].confusion);
  EXPECT_EQ(rows[0].metrics.f1, rows[1].metrics.f1);
}

TEST(Categories, HandArithmetic) {
  std::vector<ScoredPrediction> preds = {
      scored("1", Label::Fake, 0.9, "oil-painting"),  scored("2", Label::Real, 0.7, "oil-painting"),
      scored("3", Label::Real, 0.2, "oil-painting"),  scored("4", Label::Fake, 0.3, "wide-angle"),
      scored("5", Label::Fake, 0.6, "wide-angle"),    scored("6", Label::Real, 0.1, ""),
  };
  const auto rows = category_breakdown(preds);
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0].category, "oil-painting");
  EXPECT_EQ(rows[0].confusion, (ConfusionMatrix{1, 1, 1, 0}));
  EXPECT_DOUBLE_EQ(rows[0].metrics.accuracy, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(rows[0].metrics.precision, 0.5);
  EXPECT_EQ(rows[1].category, "untagged");
  EXPECT_EQ(rows[1].confusion, (ConfusionMatrix{0, 0, 1, 0}));
  EXPECT_EQ(rows[2].category, "wide-angle");
  EXPECT_EQ(rows[2].confusion, (ConfusionMatrix{1, 0, 0, 1}));
  EXPECT_DOUBLE_EQ(rows[2].metrics.recall, 0.5);
  EXPECT_EQ(rows[3].category, "overall");
  std::uint64_t sum = 0;
  for (std::size_t i = 0; i + 1 < rows.size(); ++i) sum += rows[i].confusion.total();
  EXPECT_EQ(sum, rows[3].confusion.total());
  EXPECT_EQ(sum, preds.size());
}

TEST(Reports, MetricsJson) {
  const auto cm = ConfusionMatrix{3, 1, 5, 1};
  const auto j = nlohmann::json::parse(metrics_json(cm, metrics_from(cm), 2, true));
  EXPECT_EQ(j.at("positive_class"), "fake");
  EXPECT_EQ(j.at("count"), 10);
  EXPECT_DOUBLE_EQ(j.at("accuracy").get<double>(), 0.8);
  EXPECT_EQ(j.at("confusion").at("tp"), 3);
  EXPECT_EQ(j.at("invalid"), 2);
  EXPECT_FALSE(nlohmann::json::parse(metrics_json(cm, metrics_from(cm))).contains("invalid"));
}

TEST(Reports, CsvAndTsvFormats) {
  std::vector<ScoredPrediction> preds = {scored("a,b", Label::Real, 0.75, "oil \"x\""), scored("c", Label::Fake, 0.25)};
  const std::string csv = predictions_csv(preds);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "id,true,predicted,probability,category");
  const auto back = parse_predictions_csv(csv);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].id, "a,b");
  EXPECT_EQ(back[0].category, "oil \"x\"");
  EXPECT_EQ(back[0].probability, 0.75);
  EXPECT_EQ(back[1].predicted, Label::Real);
  const auto mis = misclassification_csv(evaluate_predictions(preds).misclassifications);
  EXPECT_EQ(std::count(mis.begin(), mis.end(), '\n'), 3);
  const auto tsv = category_tsv(category_breakdown(preds));
  EXPECT_EQ(tsv.substr(0, tsv.find('\n')), "category\tcount\ttp\tfp\ttn\tfn\taccuracy\tprecision\trecall\tf1");
  EXPECT_THROW(parse_predictions_csv("x,y\n"), ParseError);
}

TEST(Reports, PredictionsCsvRoundTripsProbabilitiesExactly) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<ScoredPrediction> preds;
  for (int i = 0; i < 200; ++i) preds.push_back(scored("p" + std::to_string(i), Label::Fake, u(rng)));
  const auto back = parse_predictions_csv(predictions_csv(preds));
  for (std::size_t i = 0; i < preds.size(); ++i) EXPECT_EQ(back[i].probability, preds[i].probability);
}

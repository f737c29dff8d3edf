#include "clipdetect/trainer.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <unordered_set>
#include <utility>

#include <nlohmann/json.hpp>

#include "clipdetect/errors.hpp"
#include "clipdetect/file_util.hpp"
#include "clipdetect/head_io.hpp"
#include "clipdetect/optim.hpp"
#include "seeding.hpp"

namespace clipdetect {

namespace {

enum Salt : std::uint64_t { kSaltInit = 1, kSaltValSplit = 2, kSaltShuffle = 3, kSaltDropout = 4 };

constexpr std::size_t kEvalChunk = 256;

double target_of(Label label) { return label == Label::Fake ? 1.0 : 0.0; }

// Stratified validation carve-out: each class gives round(f * N_c) records,
// clamped to [1, N_c - 1] so both sides keep every class.
void split_validation(std::span<const EmbeddingRecord> records, const TrainConfig& config,
                      std::vector<std::size_t>& train_idx, std::vector<std::size_t>& val_idx) {
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return records[a].id < records[b].id; });
  std::array<std::vector<std::size_t>, 2> classes;
  for (std::size_t idx : order) classes[static_cast<std::size_t>(records[idx].label)].push_back(idx);
  for (std::size_t c = 0; c < 2; ++c) {
    auto& members = classes[c];
    if (members.size() < 2) {
      throw ValidationError("train: class '" + std::string(to_string(static_cast<Label>(c))) + "' has " +
                            std::to_string(members.size()) + " records, need at least 2");
    }
    const auto want = std::lround(config.val_fraction * static_cast<double>(members.size()));
    const auto take = static_cast<std::size_t>(std::clamp<long>(want, 1, static_cast<long>(members.size()) - 1));
    std::mt19937_64 rng(detail::mix_seed(config.seed, {kSaltValSplit, c}));
    for (std::size_t i = members.size() - 1; i > 0; --i) {
      std::swap(members[i], members[static_cast<std::size_t>(rng() % (i + 1))]);
    }
    val_idx.insert(val_idx.end(), members.begin(), members.begin() + static_cast<long>(take));
    train_idx.insert(train_idx.end(), members.begin() + static_cast<long>(take), members.end());
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(val_idx.begin(), val_idx.end());
}

Tensor gather(std::span<const EmbeddingRecord> records, std::span<const std::size_t> idx) {
  std::vector<float> data;
  data.reserve(idx.size() * kEmbeddingDim);
  for (std::size_t i : idx) data.insert(data.end(), records[i].vector.begin(), records[i].vector.end());
  return Tensor(Shape{idx.size(), kEmbeddingDim}, std::move(data));
}

struct ValScore {
  double loss = 0.0;
  double accuracy = 0.0;
};

ValScore score(const Head& head, std::span<const EmbeddingRecord> records, std::span<const std::size_t> idx,
               double threshold) {
  double loss = 0.0;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < idx.size(); start += kEvalChunk) {
    const auto chunk = idx.subspan(start, std::min(kEvalChunk, idx.size() - start));
    const auto logits = head.forward_batch(gather(records, chunk), nn::Mode::Eval, 0);
    for (std::size_t k = 0; k < chunk.size(); ++k) {
      const Label truth = records[chunk[k]].label;
      loss += nn::bce_with_logits<double>(logits[k], target_of(truth));
      if (predict_from_logit(logits[k], threshold).label == truth) ++correct;
    }
  }
  const auto n = static_cast<double>(idx.size());
  return {loss / n, static_cast<double>(correct) / n};
}

}  // namespace

void TrainConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ValidationError("train config: lr must be positive");
  if (batch_size == 0) throw ValidationError("train config: batch_size must be positive");
  if (max_epochs == 0) throw ValidationError("train config: max_epochs must be positive");
  if (patience == 0) throw ValidationError("train config: patience must be positive");
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ValidationError("train config: val_fraction must lie in (0, 1)");
  if (!(threshold > 0.0 && threshold < 1.0)) throw ValidationError("train config: threshold must lie in (0, 1)");
  if (!(min_delta >= 0.0) || !std::isfinite(min_delta)) throw ValidationError("train config: min_delta must be >= 0");
}

std::string_view to_string(StopReason reason) {
  return reason == StopReason::EarlyStopped ? "early_stopped" : "max_epochs";
}

double mean_loss(const Head& head, std::span<const EmbeddingRecord> records) {
  if (records.empty()) throw ValidationError("mean_loss: no records");
  std::vector<std::size_t> idx(records.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return score(head, records, idx, 0.5).loss;
}

TrainResult train(std::span<const EmbeddingRecord> records, const TrainConfig& config) {
  config.validate();
  for (const auto& r : records) validate_record(r);

  TrainResult result;
  split_validation(records, config, result.train_indices, result.val_indices);

  Head head = Head::init(config.head_kind, detail::mix_seed(config.seed, kSaltInit));
  auto state = nn::AdamState::fresh(std::as_const(head).parameters(), nn::AdamConfig{.lr = config.lr});
  Head best = head;
  double best_loss = std::numeric_limits<double>::infinity();
  std::size_t stale = 0;

  TrainHistory& history = result.history;
  std::vector<std::size_t> order = result.train_indices;
  const std::size_t n_train = order.size();
  Head::Cache cache;

  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    order = result.train_indices;
    std::mt19937_64 rng(detail::mix_seed(config.seed, {kSaltShuffle, epoch}));
    for (std::size_t i = n_train - 1; i > 0; --i) std::swap(order[i], order[static_cast<std::size_t>(rng() % (i + 1))]);

    double loss_sum = 0.0;
    std::size_t batch_no = 0;
    for (std::size_t start = 0; start < n_train; start += config.batch_size, ++batch_no) {
      const auto batch_idx = std::span<const std::size_t>(order).subspan(start, std::min(config.batch_size, n_train - start));
      const Tensor batch = gather(records, batch_idx);
      const auto logits = head.forward_batch(batch, nn::Mode::Train,
                                             detail::mix_seed(config.seed, {kSaltDropout, epoch, batch_no}), &cache);
      const auto b = static_cast<double>(batch_idx.size());
      std::vector<Head::grad_type> grad_logits(batch_idx.size());
      double batch_loss = 0.0;
      for (std::size_t k = 0; k < batch_idx.size(); ++k) {
        const double y = target_of(records[batch_idx[k]].label);
        batch_loss += nn::bce_with_logits<double>(logits[k], y);
        grad_logits[k] = nn::bce_logit_gradient<double>(logits[k], y) / b;
      }
      if (!std::isfinite(batch_loss)) throw NumericalError("train: non-finite loss", epoch, batch_no);
      loss_sum += batch_loss;
      const auto grads = head.backward(cache, grad_logits);
      for (const auto& g : grads.tensors) {
        if (!g.all_finite()) throw NumericalError("train: non-finite gradient", epoch, batch_no);
      }
      nn::adam_step(std::span<Tensor* const>(head.parameters()), grads, state);
    }

    const ValScore val = score(head, records, result.val_indices, config.threshold);
    if (!std::isfinite(val.loss)) throw NumericalError("train: non-finite validation loss", epoch, batch_no);
    history.epochs.push_back({epoch, loss_sum / static_cast<double>(n_train), val.loss, val.accuracy});

    if (val.loss < best_loss - config.min_delta) {
      best_loss = val.loss;
      best = head;
      history.best_epoch = epoch;
      stale = 0;
    } else if (++stale >= config.patience) {
      history.stop_reason = StopReason::EarlyStopped;
      break;
    }
  }

  TrainedHead& trained = result.trained;
  trained.head = std::move(best);
  trained.threshold = config.threshold;
  trained.config = config;
  trained.dataset_digest = dataset_digest(records);
  trained.train_count = result.train_indices.size();
  trained.val_count = result.val_indices.size();
  return result;
}

FewShotResult run_few_shot(std::span<const EmbeddingRecord> records, const SplitSpec& split,
                           const TrainConfig& config) {
  const SplitIndices idx = few_shot_split_indices(records, split);
  FewShotResult out;
  std::vector<EmbeddingRecord> adaptation;
  std::vector<EmbeddingRecord> test;
  for (std::size_t i : idx.adaptation) {
    adaptation.push_back(records[i]);
    out.adaptation_ids.push_back(records[i].id);
  }
  for (std::size_t i : idx.test) {
    test.push_back(records[i]);
    out.test_ids.push_back(records[i].id);
  }
  const std::unordered_set<std::string> adapt_set(out.adaptation_ids.begin(), out.adaptation_ids.end());
  for (const auto& id : out.test_ids) {
    if (adapt_set.contains(id)) throw StateError("few-shot: id '" + id + "' is in both adaptation and test sets");
  }
  if (adaptation.size() + test.size() != records.size()) throw StateError("few-shot: split is not exhaustive");

  out.training = train(adaptation, config);
  out.test = evaluate(out.training.trained.head, out.training.trained.threshold, test);
  return out;
}

std::string history_json(const TrainHistory& history) {
  nlohmann::ordered_json j;
  j["best_epoch"] = history.best_epoch;
  j["stop_reason"] = to_string(history.stop_reason);
  auto epochs = nlohmann::ordered_json::array();
  for (const auto& e : history.epochs) {
    epochs.push_back({{"epoch", e.epoch},
                      {"train_loss", e.train_loss},
                      {"val_loss", e.val_loss},
                      {"val_accuracy", e.val_accuracy}});
  }
  j["epochs"] = std::move(epochs);
  return j.dump(2) + "\n";
}

std::string history_tsv(const TrainHistory& history) {
  std::string out = "epoch\ttrain_loss\tval_loss\tval_acc\n";
  for (const auto& e : history.epochs) {
    out += std::to_string(e.epoch) + "\t" + format_double(e.train_loss) + "\t" + format_double(e.val_loss) + "\t" +
           format_double(e.val_accuracy) + "\n";
  }
  return out;
}

TrainHistory parse_history_json(std::string_view text) {
  try {
    const auto j = nlohmann::json::parse(text);
    TrainHistory h;
    h.best_epoch = j.at("best_epoch").get<std::size_t>();
    const auto reason = j.at("stop_reason").get<std::string>();
    if (reason == "early_stopped") h.stop_reason = StopReason::EarlyStopped;
    else if (reason == "max_epochs") h.stop_reason = StopReason::MaxEpochs;
    else throw FormatError("history: unknown stop_reason '" + reason + "'");
    for (const auto& e : j.at("epochs")) {
      h.epochs.push_back({e.at("epoch").get<std::size_t>(), e.at("train_loss").get<double>(),
                          e.at("val_loss").get<double>(), e.at("val_accuracy").get<double>()});
    }
    return h;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("history: ") + e.what());
  }
}

std::filesystem::path trained_head_meta_path(const std::filesystem::path& path) {
  return std::filesystem::path(path.string() + ".meta.json");
}

void save_trained_head(const TrainedHead& trained, const std::filesystem::path& path) {
  const TrainConfig& c = trained.config;
  nlohmann::ordered_json j;
  j["format"] = "AHD1";
  j["head_kind"] = to_string(trained.head.kind());
  j["parameter_count"] = trained.head.parameter_count();
  j["threshold"] = trained.threshold;
  j["positive_class"] = kPositiveClass;
  j["dataset_digest"] = trained.dataset_digest;
  j["train_count"] = trained.train_count;
  j["val_count"] = trained.val_count;
  j["config"] = {{"lr", c.lr},
                 {"batch_size", c.batch_size},
                 {"max_epochs", c.max_epochs},
                 {"patience", c.patience},
                 {"val_fraction", c.val_fraction},
                 {"seed", c.seed},
                 {"head_kind", to_string(c.head_kind)},
                 {"threshold", c.threshold},
                 {"min_delta", c.min_delta}};
  save_head(trained.head, path);
  write_file_atomic(trained_head_meta_path(path), j.dump(2) + "\n");
}

TrainedHead load_trained_head(const std::filesystem::path& path) {
  TrainedHead trained;
  trained.head = load_head(path);
  trained.config.head_kind = trained.head.kind();
  const auto meta_path = trained_head_meta_path(path);
  if (!std::filesystem::exists(meta_path)) return trained;
  try {
    const auto j = nlohmann::json::parse(read_file_text(meta_path));
    if (parse_head_kind(j.at("head_kind").get<std::string>()) != trained.head.kind()) {
      throw FormatError("trained head: metadata head_kind does not match " + path.string());
    }
    trained.threshold = j.at("threshold").get<double>();
    trained.dataset_digest = j.value("dataset_digest", "");
    trained.train_count = j.value("train_count", std::size_t{0});
    trained.val_count = j.value("val_count", std::size_t{0});
    if (j.contains("config")) {
      const auto& c = j["config"];
      TrainConfig& cfg = trained.config;
      cfg.lr = c.value("lr", cfg.lr);
      cfg.batch_size = c.value("batch_size", cfg.batch_size);
      cfg.max_epochs = c.value("max_epochs", cfg.max_epochs);
      cfg.patience = c.value("patience", cfg.patience);
      cfg.val_fraction = c.value("val_fraction", cfg.val_fraction);
      cfg.seed = c.value("seed", cfg.seed);
      cfg.threshold = c.value("threshold", cfg.threshold);
      cfg.min_delta = c.value("min_delta", cfg.min_delta);
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("trained head metadata " + meta_path.string() + ": " + e.what());
  }
  if (!(trained.threshold > 0.0 && trained.threshold < 1.0)) {
    throw FormatError("trained head metadata: threshold outside (0, 1)");
  }
  return trained;
}

}  // namespace clipdetect

#include "clipdetect/commands.hpp"

#include <algorithm>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "clipdetect/app_config.hpp"
#include "clipdetect/embedding_store.hpp"
#include "clipdetect/encoder.hpp"
#include "clipdetect/errors.hpp"
#include "clipdetect/evaluator.hpp"
#include "clipdetect/file_util.hpp"
#include "clipdetect/llm_baseline.hpp"
#include "clipdetect/trainer.hpp"

namespace clipdetect {

namespace fs = std::filesystem;

namespace {

class UsageError : public Error {
 public:
  using Error::Error;
};

struct Overrides {
  std::vector<std::pair<std::string, std::string>> settings;

  void bind(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
    app->add_option_function<std::string>(
        flag, [this, key](const std::string& v) { settings.emplace_back(key, v); }, help);
  }
};

struct GlobalOptions {
  std::string config_path;
  Overrides overrides;
};

AppConfig resolve_config(const GlobalOptions& g) {
  AppConfig cfg = g.config_path.empty() ? AppConfig{} : load_config(g.config_path);
  for (const auto& [k, v] : g.overrides.settings) apply_setting(cfg, k, v);
  return cfg;
}

fs::path output_path(const AppConfig& cfg, const std::string& name) {
  const fs::path p(name);
  if (name.empty() || p.is_absolute() || std::any_of(p.begin(), p.end(), [](const fs::path& part) { return part == ".."; })) {
    throw UsageError("output name '" + name + "' must be a relative path inside the output directory");
  }
  const fs::path full = cfg.out_dir / p;
  fs::create_directories(full.parent_path());
  return full;
}

void write_evaluation(const AppConfig& cfg, const std::string& name, const Evaluation& ev,
                      std::optional<std::size_t> invalid = std::nullopt) {
  write_file_atomic(output_path(cfg, name + ".metrics.json"),
                    metrics_json(ev.confusion, ev.metrics, invalid.value_or(0), invalid.has_value()));
  write_file_atomic(output_path(cfg, name + ".misclassified.csv"), misclassification_csv(ev.misclassifications));
  write_file_atomic(output_path(cfg, name + ".categories.tsv"), category_tsv(category_breakdown(ev.predictions)));
  write_file_atomic(output_path(cfg, name + ".predictions.csv"), predictions_csv(ev.predictions));
}

std::string summary_line(const Evaluation& ev) {
  const auto& m = ev.metrics;
  return "n=" + std::to_string(ev.confusion.total()) + " accuracy " + format_double(m.accuracy) + " precision " +
         format_double(m.precision) + " recall " + format_double(m.recall) + " f1 " + format_double(m.f1);
}

void write_training(const AppConfig& cfg, const std::string& name, const TrainResult& r) {
  save_trained_head(r.trained, output_path(cfg, name + ".ahd"));
  write_file_atomic(output_path(cfg, name + ".history.json"), history_json(r.history));
  write_file_atomic(output_path(cfg, name + ".history.tsv"), history_tsv(r.history));
}

std::string best_epoch_line(const TrainHistory& h) {
  const auto& e = h.epochs.at(h.best_epoch);
  return "best epoch " + std::to_string(e.epoch) + " of " + std::to_string(h.epochs.size()) + " (" +
         std::string(to_string(h.stop_reason)) + "): val_loss " + format_double(e.val_loss) + " val_accuracy " +
         format_double(e.val_accuracy);
}

// --- subcommands -----------------------------------------------------------

struct EmbedArgs {
  std::string manifest;
  std::string cache = "embeddings.clpe";
  bool no_incremental = false;
};

int cmd_embed(const AppConfig& cfg, const EmbedArgs& a, std::ostream& out) {
  if (cfg.model_path.empty()) throw ConfigError("embed: no model_path configured (use --model or the config file)");
  if (!fs::exists(cfg.model_path)) throw ConfigError("embed: model file " + cfg.model_path.string() + " not found");
  if (!fs::exists(a.manifest)) throw ConfigError("embed: manifest " + a.manifest + " not found");
  const auto manifest = manifest_load(a.manifest);
  const auto model = EncoderModel::load(cfg.model_path, cfg.preprocess);
  EmbedOptions opts;
  opts.normalize = cfg.normalize;
  opts.incremental = !a.no_incremental;
  opts.workers = cfg.embed_workers;
  const auto cache_path = output_path(cfg, a.cache);
  const auto s = embed_batch(model, manifest, cache_path, opts);
  out << "model sha256 " << model.digest() << ", normalize " << (cfg.normalize ? "true" : "false") << "\n";
  if (s.skipped == 0) out << s.embedded << " embedded, " << s.failures.size() << " failed\n";
  else out << s.embedded << " embedded, " << s.skipped << " skipped, " << s.failures.size() << " failed\n";
  for (const auto& f : s.failures) out << "  failed: " << f.path << ": " << f.message << "\n";
  out << "wrote " << cache_path.string() << " (" << s.record_count << " records, " << s.bytes_written << " bytes)\n";
  return kExitOk;
}

struct TrainArgs {
  std::string cache;
  std::string name;
};

int cmd_train(const AppConfig& cfg, const TrainArgs& a, std::ostream& out) {
  const auto records = cache_read(a.cache);
  const auto result = train(records, cfg.train);
  const std::string name = a.name.empty() ? "head_" + std::string(to_string(cfg.train.head_kind)) : a.name;
  write_training(cfg, name, result);
  out << to_string(cfg.train.head_kind) << " head, seed " << cfg.train.seed << ", " << result.trained.train_count
      << " train / " << result.trained.val_count << " val\n";
  out << best_epoch_line(result.history) << "\n";
  out << "wrote " << output_path(cfg, name + ".ahd").string() << "\n";
  return kExitOk;
}

struct EvalArgs {
  std::string cache;
  std::string head;
  std::string name = "eval";
};

int cmd_eval(const AppConfig& cfg, const EvalArgs& a, const std::optional<double>& threshold, std::ostream& out) {
  const auto trained = load_trained_head(a.head);
  const auto records = cache_read(a.cache);
  const auto ev = evaluate(trained.head, threshold.value_or(trained.threshold), records);
  write_evaluation(cfg, a.name, ev);
  out << summary_line(ev) << "\n";
  return kExitOk;
}

struct FewShotArgs {
  std::string cache;
  std::string name;
};

int cmd_fewshot(const AppConfig& cfg, const FewShotArgs& a, std::ostream& out) {
  if (!(cfg.fewshot_fraction > 0.0 && cfg.fewshot_fraction <= 0.5)) {
    throw ConfigError("fewshot: fraction " + format_double(cfg.fewshot_fraction) + " is outside (0, 0.5]");
  }
  const auto records = cache_read(a.cache);
  const SplitSpec split{cfg.train.seed, cfg.fewshot_fraction, cfg.stratified};
  const auto r = run_few_shot(records, split, cfg.train);
  const std::string name = a.name.empty() ? "fewshot_" + std::string(to_string(cfg.train.head_kind)) : a.name;

  nlohmann::ordered_json j;
  j["seed"] = split.seed;
  j["fraction"] = split.adaptation_fraction;
  j["stratified"] = split.stratified;
  j["dataset_digest"] = dataset_digest(records);
  j["adaptation_count"] = r.adaptation_ids.size();
  j["test_count"] = r.test_ids.size();
  j["adaptation"] = r.adaptation_ids;
  j["test"] = r.test_ids;
  write_file_atomic(output_path(cfg, name + ".split.json"), j.dump(2) + "\n");
  write_training(cfg, name, r.training);
  write_evaluation(cfg, name, r.test);
  out << r.adaptation_ids.size() << " adaptation, " << r.test_ids.size() << " test\n";
  out << best_epoch_line(r.training.history) << "\n";
  out << "test " << summary_line(r.test) << "\n";
  return kExitOk;
}

struct LlmArgs {
  std::string manifest;
  std::string prompt = "basic";
  std::string mock;
  std::string name;
  bool resume = false;
};

int cmd_llm_eval(const AppConfig& cfg, const LlmArgs& a, std::ostream& out) {
  const PromptKind kind = parse_prompt_kind(a.prompt);
  if (!fs::exists(a.manifest)) throw ConfigError("llm-eval: manifest " + a.manifest + " not found");
  const auto manifest = manifest_load(a.manifest);
  std::unique_ptr<Transport> transport;
  if (!a.mock.empty()) {
    std::unordered_map<std::string, Label> truth;
    for (const auto& row : manifest.rows) truth.emplace(row.path, row.label);
    transport = make_mock_transport(a.mock, truth);
  } else {
    transport = make_http_transport(cfg.llm);
  }
  auto client = ClientContext::create(cfg.llm, *transport);
  const std::string name = a.name.empty() ? "llm_" + std::string(to_string(kind)) : a.name;
  ZeroShotOptions opts;
  opts.log_path = output_path(cfg, name + ".verdicts.jsonl");
  opts.resume = a.resume;
  const auto r = zero_shot_eval(manifest, kind, client, opts);
  write_evaluation(cfg, name, r.evaluation, r.invalid_count);
  out << to_string(kind) << " prompt: " << r.requested << " requested, " << r.reused << " reused, "
      << r.invalid_count << " invalid\n";
  out << summary_line(r.evaluation) << "\n";
  return kExitOk;
}

int cmd_report(const AppConfig& cfg, std::ostream& out) {
  if (!fs::is_directory(cfg.out_dir)) throw ConfigError("report: output directory " + cfg.out_dir.string() + " not found");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(cfg.out_dir)) {
    if (entry.is_regular_file()) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());

  auto stem_of = [](const fs::path& p, std::string_view suffix) -> std::optional<std::string> {
    const std::string name = p.filename().string();
    if (name.size() <= suffix.size() || !name.ends_with(suffix)) return std::nullopt;
    return name.substr(0, name.size() - suffix.size());
  };

  std::string summary = "name\tcount\taccuracy\tprecision\trecall\tf1\tinvalid\n";
  std::size_t histories = 0;
  std::size_t evaluations = 0;
  for (const auto& f : files) {
    if (auto stem = stem_of(f, ".history.json")) {
      const auto h = parse_history_json(read_file_text(f));
      write_file_atomic(output_path(cfg, *stem + ".history.tsv"), history_tsv(h));
      ++histories;
    } else if (auto stem = stem_of(f, ".predictions.csv")) {
      const auto ev = evaluate_predictions(parse_predictions_csv(read_file_text(f)));
      std::optional<std::size_t> invalid;
      const fs::path log = cfg.out_dir / (*stem + ".verdicts.jsonl");
      if (fs::exists(log)) {
        invalid = 0;
        for (const auto& e : parse_verdict_log(read_file_text(log))) {
          if (e.verdict.outcome == Outcome::Invalid) ++*invalid;
        }
      }
      write_evaluation(cfg, *stem, ev, invalid);
      const auto& m = ev.metrics;
      summary += *stem + "\t" + std::to_string(ev.confusion.total()) + "\t" + format_double(m.accuracy) + "\t" +
                 format_double(m.precision) + "\t" + format_double(m.recall) + "\t" + format_double(m.f1) + "\t" +
                 (invalid ? std::to_string(*invalid) : std::string("-")) + "\n";
      ++evaluations;
    }
  }
  write_file_atomic(output_path(cfg, "summary.tsv"), summary);
  out << "regenerated " << histories << " histories and " << evaluations << " evaluations; wrote "
      << (cfg.out_dir / "summary.tsv").string() << "\n";
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Detects AI-generated images from frozen vision-encoder embeddings.", "clipdetect"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  GlobalOptions g;
  app.add_option("--config", g.config_path, "key = value settings file")->check(CLI::ExistingFile);
  g.overrides.bind(&app, "--seed", "seed", "Run seed");
  g.overrides.bind(&app, "--out", "out", "Output directory (all outputs are written here)");

  EmbedArgs embed_args;
  auto* embed = app.add_subcommand("embed", "Embed a manifest of images into a CLPE cache");
  embed->add_option("--manifest", embed_args.manifest, "CSV manifest path,label,category")->required();
  embed->add_option("--cache", embed_args.cache, "Cache file name inside the output directory");
  embed->add_flag("--no-incremental", embed_args.no_incremental, "Re-embed ids already in the cache");
  g.overrides.bind(embed, "--model", "model_path", "ONNX encoder file");
  g.overrides.bind(embed, "--workers", "embed_workers", "Parallel workers (0 = all cores)");
  embed->add_flag_callback("--raw", [&g] { g.overrides.settings.emplace_back("normalize", "false"); },
                           "Keep raw encoder outputs (no L2 normalization)");

  auto bind_train = [&g](CLI::App* sub) {
    g.overrides.bind(sub, "--head", "head", "Head architecture: mlp or cnn");
    g.overrides.bind(sub, "--lr", "lr", "Adam learning rate");
    g.overrides.bind(sub, "--batch-size", "batch_size", "Mini-batch size");
    g.overrides.bind(sub, "--max-epochs", "max_epochs", "Epoch limit");
    g.overrides.bind(sub, "--patience", "patience", "Early-stopping patience in epochs");
    g.overrides.bind(sub, "--val-fraction", "val_fraction", "Validation carve-out fraction");
    g.overrides.bind(sub, "--threshold", "threshold", "Decision threshold on P(fake)");
  };

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "Train a head on a CLPE cache");
  train_cmd->add_option("--cache", train_args.cache, "Input CLPE cache")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--name", train_args.name, "Output name (default head_<kind>)");
  bind_train(train_cmd);

  EvalArgs eval_args;
  std::optional<double> eval_threshold;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a trained head on a CLPE cache");
  eval_cmd->add_option("--cache", eval_args.cache, "Input CLPE cache")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--head", eval_args.head, "Trained head (.ahd)")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--name", eval_args.name, "Output name");
  eval_cmd->add_option("--threshold", eval_threshold, "Override the stored threshold");

  FewShotArgs fewshot_args;
  auto* fewshot = app.add_subcommand("fewshot", "Few-shot adaptation: train on a split, test on the rest");
  fewshot->add_option("--cache", fewshot_args.cache, "Input CLPE cache")->required()->check(CLI::ExistingFile);
  fewshot->add_option("--name", fewshot_args.name, "Output name (default fewshot_<kind>)");
  g.overrides.bind(fewshot, "--fraction", "fewshot_fraction", "Adaptation fraction in (0, 0.5]");
  fewshot->add_flag_callback("--unstratified", [&g] { g.overrides.settings.emplace_back("stratified", "false"); },
                             "Sample the split without per-class stratification");
  bind_train(fewshot);

  LlmArgs llm_args;
  auto* llm = app.add_subcommand("llm-eval", "Zero-shot multimodal-LLM baseline");
  llm->add_option("--manifest", llm_args.manifest, "CSV manifest path,label,category")->required();
  llm->add_option("--prompt", llm_args.prompt, "basic or detailed");
  llm->add_option("--mock", llm_args.mock, "oracle, real, fake, or a JSON mock script");
  llm->add_option("--name", llm_args.name, "Output name (default llm_<prompt>)");
  llm->add_flag("--resume", llm_args.resume, "Reuse verdicts from an existing log");
  llm->add_flag_callback("--lenient", [&g] { g.overrides.settings.emplace_back("llm_strict", "false"); },
                         "Accept verdicts whose first word is a token");
  g.overrides.bind(llm, "--endpoint", "llm_endpoint", "HTTP endpoint");
  g.overrides.bind(llm, "--wire-format", "llm_wire_format", "generic or gemini");

  auto* report = app.add_subcommand("report", "Regenerate TSV/JSON summaries from artifacts in the output directory");

  std::vector<std::string> argv_rev(args.rbegin(), args.rend());
  if (!argv_rev.empty()) argv_rev.pop_back();  // program name
  try {
    app.parse(argv_rev);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    err << "run with --help for usage\n";
    return kExitUsage;
  }

  try {
    const AppConfig cfg = resolve_config(g);
    if (embed->parsed()) return cmd_embed(cfg, embed_args, out);
    if (train_cmd->parsed()) return cmd_train(cfg, train_args, out);
    if (eval_cmd->parsed()) return cmd_eval(cfg, eval_args, eval_threshold, out);
    if (fewshot->parsed()) return cmd_fewshot(cfg, fewshot_args, out);
    if (llm->parsed()) return cmd_llm_eval(cfg, llm_args, out);
    if (report->parsed()) return cmd_report(cfg, out);
  } catch (const NumericalError& e) {
    err << "error: numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  return run_cli(std::vector<std::string>(argv, argv + argc), out, err);
}

}  // namespace clipdetect

#include "clipdetect/llm_baseline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <thread>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "clipdetect/errors.hpp"
#include "clipdetect/file_util.hpp"
#include "csv.hpp"

namespace clipdetect {

namespace {

constexpr std::string_view kBasicPrompt =
    "Return exactly one word: \"real\" or \"fake\".\n"
    "Classify the image as an AI‑generated image (\"fake\") or a real‑world photo (\"real\").\n"
    "Output nothing except that single word.";

constexpr std::string_view kDetailedPrompt =
    "You are an AI-image-detector model.\n"
    "Inspect lighting consistency, natural textures and biology correctness.\n"
    "If these cues suggest synthesis, answer \"fake\"; otherwise answer \"real\".\n"
    "Respond with exactly that single word and nothing else.";

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f'; }

bool is_ascii_alpha(char c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z'); }

// Removes whitespace, quotes, backticks and periods from both ends,
// including the UTF-8 curly quotes.
std::string_view strip_wrapping(std::string_view s) {
  static constexpr std::string_view kCurly[] = {"“", "”", "‘", "’"};
  bool changed = true;
  while (changed && !s.empty()) {
    changed = false;
    const char f = s.front();
    if (is_space(f) || f == '"' || f == '\'' || f == '`' || f == '.') {
      s.remove_prefix(1);
      changed = true;
      continue;
    }
    const char b = s.back();
    if (is_space(b) || b == '"' || b == '\'' || b == '`' || b == '.') {
      s.remove_suffix(1);
      changed = true;
      continue;
    }
    for (auto q : kCurly) {
      if (s.starts_with(q)) {
        s.remove_prefix(q.size());
        changed = true;
      } else if (s.ends_with(q)) {
        s.remove_suffix(q.size());
        changed = true;
      }
    }
  }
  return s;
}

std::string ascii_lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return out;
}

std::optional<Outcome> token_outcome(std::string_view word) {
  if (word == "real") return Outcome::Real;
  if (word == "fake") return Outcome::Fake;
  return std::nullopt;
}

Outcome outcome_from_string(std::string_view s) {
  if (s == "real") return Outcome::Real;
  if (s == "fake") return Outcome::Fake;
  if (s == "invalid") return Outcome::Invalid;
  throw FormatError("verdict log: unknown outcome '" + std::string(s) + "'");
}

}  // namespace

std::string_view to_string(PromptKind kind) { return kind == PromptKind::Basic ? "basic" : "detailed"; }

PromptKind parse_prompt_kind(std::string_view text) {
  if (text == "basic" || text == "normal") return PromptKind::Basic;
  if (text == "detailed") return PromptKind::Detailed;
  throw ValidationError("unknown prompt kind '" + std::string(text) + "' (expected basic or detailed)");
}

std::string_view render_prompt(PromptKind kind) { return kind == PromptKind::Basic ? kBasicPrompt : kDetailedPrompt; }

std::string_view to_string(Outcome outcome) {
  switch (outcome) {
    case Outcome::Real: return "real";
    case Outcome::Fake: return "fake";
    case Outcome::Invalid: break;
  }
  return "invalid";
}

Verdict parse_verdict(std::string_view raw, bool strict) {
  Verdict v;
  v.raw = std::string(raw);
  const std::string text = ascii_lower(strip_wrapping(raw));
  if (auto o = token_outcome(text)) {
    v.outcome = *o;
    return v;
  }
  if (strict) return v;

  std::size_t end = 0;
  while (end < text.size() && !is_space(text[end])) ++end;
  std::string_view first(text.data(), end);
  while (!first.empty() && !is_ascii_alpha(first.back())) first.remove_suffix(1);
  while (!first.empty() && !is_ascii_alpha(first.front())) first.remove_prefix(1);
  if (auto o = token_outcome(first)) {
    v.outcome = *o;
    return v;
  }

  std::unordered_set<Outcome> seen;
  for (std::size_t i = 0; i < text.size();) {
    if (!is_ascii_alpha(text[i])) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < text.size() && is_ascii_alpha(text[j])) ++j;
    if (auto o = token_outcome(std::string_view(text).substr(i, j - i))) seen.insert(*o);
    i = j;
  }
  if (seen.size() == 1) v.outcome = *seen.begin();
  return v;
}

std::string_view to_string(WireFormat format) { return format == WireFormat::Generic ? "generic" : "gemini"; }

WireFormat parse_wire_format(std::string_view text) {
  if (text == "generic") return WireFormat::Generic;
  if (text == "gemini") return WireFormat::Gemini;
  throw ValidationError("unknown wire format '" + std::string(text) + "' (expected generic or gemini)");
}

void LlmClientConfig::validate() const {
  if (!(timeout_s > 0.0) || !std::isfinite(timeout_s)) throw ConfigError("llm: timeout must be positive");
  if (!(backoff_base_s >= 0.0) || !std::isfinite(backoff_base_s)) throw ConfigError("llm: backoff base must be >= 0");
  if (!(max_requests_per_second > 0.0) || !std::isfinite(max_requests_per_second)) {
    throw ConfigError("llm: rate limit must be positive");
  }
  if (max_in_flight == 0) throw ConfigError("llm: max_in_flight must be positive");
}

RateLimiter::RateLimiter(double max_per_second) {
  if (!(max_per_second > 0.0) || !std::isfinite(max_per_second)) throw ConfigError("rate limit must be positive");
  if (max_per_second >= 1.0) {
    capacity_ = static_cast<std::size_t>(std::floor(max_per_second));
    window_ = std::chrono::seconds(1);
  } else {
    capacity_ = 1;
    window_ = std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::duration<double>(1.0 / max_per_second));
  }
}

void RateLimiter::acquire() {
  std::unique_lock lock(mutex_);
  for (;;) {
    const auto now = std::chrono::steady_clock::now();
    while (!issued_.empty() && now - issued_.front() >= window_) issued_.pop_front();
    if (issued_.size() < capacity_) {
      issued_.push_back(now);
      return;
    }
    const auto wake = issued_.front() + window_;
    lock.unlock();
    std::this_thread::sleep_until(wake);
    lock.lock();
  }
}

InFlightLimiter::InFlightLimiter(std::size_t limit) : limit_(limit) {
  if (limit == 0) throw ConfigError("in-flight limit must be positive");
}

void InFlightLimiter::acquire() {
  std::unique_lock lock(mutex_);
  cv_.wait(lock, [this] { return active_ < limit_; });
  ++active_;
}

void InFlightLimiter::release() {
  {
    std::lock_guard lock(mutex_);
    --active_;
  }
  cv_.notify_one();
}

ClientContext ClientContext::create(const LlmClientConfig& config, Transport& transport, SleepFn sleep) {
  config.validate();
  ClientContext ctx;
  ctx.config = config;
  ctx.transport = &transport;
  ctx.rate = std::make_shared<RateLimiter>(config.max_requests_per_second);
  ctx.in_flight = std::make_shared<InFlightLimiter>(config.max_in_flight);
  ctx.sleep = sleep ? std::move(sleep) : SleepFn([](std::chrono::duration<double> d) { std::this_thread::sleep_for(d); });
  return ctx;
}

std::string sniff_image_mime(std::span<const std::uint8_t> bytes) {
  if (bytes.size() >= 8 && bytes[0] == 0x89 && bytes[1] == 'P' && bytes[2] == 'N' && bytes[3] == 'G') return "image/png";
  if (bytes.size() >= 3 && bytes[0] == 0xFF && bytes[1] == 0xD8 && bytes[2] == 0xFF) return "image/jpeg";
  throw DecodeError("image is neither PNG nor JPEG");
}

Verdict classify_remote(std::span<const std::uint8_t> image_bytes, PromptKind kind, ClientContext& client,
                        const std::string& id) {
  if (client.transport == nullptr) throw ConfigError("llm: no transport configured");
  TransportRequest request;
  request.id = id;
  request.prompt = std::string(render_prompt(kind));
  request.mime_type = sniff_image_mime(image_bytes);
  request.image_base64 = base64_encode(image_bytes);

  const auto start = std::chrono::steady_clock::now();
  std::string last_error;
  for (std::size_t attempt = 1; attempt <= client.config.max_retries + 1; ++attempt) {
    client.rate->acquire();
    client.in_flight->acquire();
    TransportResponse response;
    try {
      response = client.transport->send(request);
    } catch (...) {
      client.in_flight->release();
      throw;
    }
    client.in_flight->release();

    if (!response.timed_out && response.status == 200) {
      Verdict v = parse_verdict(response.text, client.config.strict);
      v.attempts = attempt;
      v.latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
      return v;
    }
    const bool transient =
        response.timed_out || response.status == 0 || response.status == 429 || response.status >= 500;
    last_error = response.timed_out ? "timeout"
                                    : "HTTP " + std::to_string(response.status) +
                                          (response.error.empty() ? "" : ": " + response.error);
    if (!transient) throw TransportError("llm request failed (" + last_error + ")");
    if (attempt <= client.config.max_retries) {
      client.sleep(std::chrono::duration<double>(client.config.backoff_base_s * std::pow(2.0, attempt - 1)));
    }
  }
  throw TransportError("llm request failed after " + std::to_string(client.config.max_retries + 1) +
                       " attempts (last: " + last_error + ")");
}

std::string verdict_log_line(const VerdictLogEntry& entry) {
  nlohmann::ordered_json j;
  j["id"] = entry.id;
  j["kind"] = to_string(entry.kind);
  j["outcome"] = to_string(entry.verdict.outcome);
  j["raw"] = entry.verdict.raw;
  j["attempts"] = entry.verdict.attempts;
  j["latency_ms"] = entry.verdict.latency_ms;
  if (!entry.verdict.error.empty()) j["error"] = entry.verdict.error;
  return j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
}

std::vector<VerdictLogEntry> parse_verdict_log(std::string_view text) {
  std::vector<VerdictLogEntry> out;
  std::size_t line_no = 0;
  for (std::string_view line : detail::split_lines(text)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      VerdictLogEntry e;
      e.id = j.at("id").get<std::string>();
      e.kind = parse_prompt_kind(j.at("kind").get<std::string>());
      e.verdict.outcome = outcome_from_string(j.at("outcome").get<std::string>());
      e.verdict.raw = j.at("raw").get<std::string>();
      e.verdict.attempts = j.at("attempts").get<std::size_t>();
      e.verdict.latency_ms = j.at("latency_ms").get<double>();
      e.verdict.error = j.value("error", "");
      out.push_back(std::move(e));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("verdict log: ") + e.what(), line_no);
    }
  }
  return out;
}

std::vector<ScoredPrediction> score_verdicts(const DatasetManifest& manifest,
                                             std::span<const VerdictLogEntry> verdicts) {
  std::unordered_map<std::string, const VerdictLogEntry*> by_id;
  for (const auto& v : verdicts) by_id[v.id] = &v;
  std::vector<ScoredPrediction> out;
  for (const auto& row : manifest.rows) {
    const auto it = by_id.find(row.path);
    if (it == by_id.end()) throw StateError("zero-shot: no verdict for '" + row.path + "'");
    const Outcome o = it->second->verdict.outcome;
    const Label predicted = o == Outcome::Fake ? Label::Fake : o == Outcome::Real ? Label::Real : opposite(row.label);
    out.push_back({row.path, row.label, predicted, predicted == Label::Fake ? 1.0 : 0.0, row.category});
  }
  return out;
}

ZeroShotResult zero_shot_eval(const DatasetManifest& manifest, PromptKind kind, ClientContext& client,
                              const ZeroShotOptions& options) {
  if (manifest.rows.empty()) throw ValidationError("zero-shot: manifest has no rows");
  if (options.log_path.empty()) throw ConfigError("zero-shot: verdict log path is required");

  std::unordered_map<std::string, VerdictLogEntry> done;
  if (options.resume && std::filesystem::exists(options.log_path)) {
    for (auto& e : parse_verdict_log(read_file_text(options.log_path))) {
      if (e.kind == kind) done[e.id] = std::move(e);
    }
  } else {
    write_file_atomic(options.log_path, std::string_view{});
  }

  ZeroShotResult result;
  std::vector<std::size_t> pending;
  for (std::size_t i = 0; i < manifest.rows.size(); ++i) {
    if (done.contains(manifest.rows[i].path)) ++result.reused;
    else pending.push_back(i);
  }

  std::ofstream log(options.log_path, std::ios::binary | std::ios::app);
  if (!log) throw IoError("cannot open verdict log " + options.log_path.string());
  std::mutex log_mutex;
  std::vector<std::optional<VerdictLogEntry>> fresh(manifest.rows.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr fatal;

  auto worker = [&] {
    for (std::size_t k = next++; k < pending.size(); k = next++) {
      const auto& row = manifest.rows[pending[k]];
      VerdictLogEntry entry{row.path, kind, {}};
      try {
        entry.verdict = classify_remote(read_file_bytes(manifest.resolve(row)), kind, client, row.path);
      } catch (const ConfigError&) {
        std::lock_guard lock(log_mutex);
        if (!fatal) fatal = std::current_exception();
        next = pending.size();
        return;
      } catch (const Error& e) {
        entry.verdict.outcome = Outcome::Invalid;
        entry.verdict.error = e.what();
      }
      std::lock_guard lock(log_mutex);
      log << verdict_log_line(entry) << '\n';
      log.flush();
      fresh[pending[k]] = std::move(entry);
    }
  };
  const std::size_t workers = std::min(client.config.max_in_flight, std::max<std::size_t>(pending.size(), 1));
  {
    std::vector<std::jthread> threads;
    for (std::size_t w = 1; w < workers; ++w) threads.emplace_back(worker);
    worker();
  }
  if (fatal) std::rethrow_exception(fatal);
  result.requested = pending.size();

  for (std::size_t i = 0; i < manifest.rows.size(); ++i) {
    if (fresh[i]) result.verdicts.push_back(std::move(*fresh[i]));
    else result.verdicts.push_back(done.at(manifest.rows[i].path));
  }
  for (const auto& v : result.verdicts) {
    if (v.verdict.outcome == Outcome::Invalid) ++result.invalid_count;
  }
  result.evaluation = evaluate_predictions(score_verdicts(manifest, result.verdicts));
  return result;
}

}  // namespace clipdetect

#pragma once

// Prompted multimodal-LLM zero-shot baseline: prompts, verdict parsing, a
// rate-limited retrying client over a pluggable transport, and evaluation.

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "clipdetect/embedding_store.hpp"
#include "clipdetect/evaluator.hpp"

namespace clipdetect {

enum class PromptKind { Basic, Detailed };

std::string_view to_string(PromptKind kind);
PromptKind parse_prompt_kind(std::string_view text);

/// Exact prompt text; lines joined with '\n', no trailing newline.
std::string_view render_prompt(PromptKind kind);

enum class Outcome { Real, Fake, Invalid };

std::string_view to_string(Outcome outcome);

struct Verdict {
  Outcome outcome = Outcome::Invalid;
  std::string raw;    // response text as received
  std::string error;  // transport failure, if any
  double latency_ms = 0.0;
  std::size_t attempts = 0;
};

/// Trims whitespace, strips surrounding quotes and periods, lowercases.
/// Strict accepts only "real"/"fake". Lenient also accepts a response whose
/// first word is a token, or that mentions exactly one of the two tokens.
Verdict parse_verdict(std::string_view raw, bool strict = true);

enum class WireFormat { Generic, Gemini };

std::string_view to_string(WireFormat format);
WireFormat parse_wire_format(std::string_view text);

struct LlmClientConfig {
  std::string endpoint;
  std::string api_key_env = "CLIPDETECT_LLM_API_KEY";
  std::string model;  // forwarded to the provider when the wire format carries it
  WireFormat wire_format = WireFormat::Generic;
  double timeout_s = 30.0;
  std::size_t max_retries = 3;
  double backoff_base_s = 1.0;
  double max_requests_per_second = 1.0;
  std::size_t max_in_flight = 4;
  bool strict = true;

  void validate() const;
};

struct TransportRequest {
  std::string id;  // record id, for logging and mocks; never sent
  std::string prompt;
  std::string mime_type;
  std::string image_base64;
};

struct TransportResponse {
  int status = 0;       // HTTP status; 0 when no response arrived
  bool timed_out = false;
  std::string text;     // extracted model text on success
  std::string error;
};

class Transport {
 public:
  virtual ~Transport() = default;
  virtual TransportResponse send(const TransportRequest& request) = 0;
};

/// Request bodies and response extraction for each wire format.
std::string encode_request_body(WireFormat format, const TransportRequest& request, const std::string& model);
std::optional<std::string> extract_response_text(WireFormat format, std::string_view body);

/// HTTP JSON transport. Throws ConfigError when the key variable is unset.
std::unique_ptr<Transport> make_http_transport(const LlmClientConfig& config);

/// Deterministic in-process transport driven by a function of the request
/// and the 0-based call index for that id. Records issue times.
class MockTransport : public Transport {
 public:
  using Script = std::function<TransportResponse(const TransportRequest&, std::size_t call_for_id)>;

  explicit MockTransport(Script script);

  TransportResponse send(const TransportRequest& request) override;

  std::vector<std::chrono::steady_clock::time_point> timestamps() const;
  std::vector<std::string> requested_ids() const;
  std::size_t call_count() const;

  static TransportResponse ok(std::string text);
  static TransportResponse status(int code);

 private:
  Script script_;
  mutable std::mutex mutex_;
  std::unordered_map<std::string, std::size_t> calls_;
  std::vector<std::chrono::steady_clock::time_point> timestamps_;
  std::vector<std::string> ids_;
};

/// Named mock: "oracle" (true label per id), "real", "fake", or a JSON file
/// {"default": text, "responses": {id: text | [step, ...]}} where a step is
/// a text or {"status": code} / {"timeout": true}.
std::unique_ptr<MockTransport> make_mock_transport(std::string_view spec,
                                                   const std::unordered_map<std::string, Label>& truth);

/// At most N requests start in any 1-second window (N = floor(rate), or one
/// request per 1/rate seconds when rate < 1).
class RateLimiter {
 public:
  explicit RateLimiter(double max_per_second);
  void acquire();

 private:
  std::mutex mutex_;
  std::size_t capacity_;
  std::chrono::nanoseconds window_;
  std::deque<std::chrono::steady_clock::time_point> issued_;
};

class InFlightLimiter {
 public:
  explicit InFlightLimiter(std::size_t limit);
  void acquire();
  void release();

 private:
  std::mutex mutex_;
  std::condition_variable cv_;
  std::size_t limit_;
  std::size_t active_ = 0;
};

using SleepFn = std::function<void(std::chrono::duration<double>)>;

/// Shared request pacing for a client: rate limit, in-flight cap, sleep hook.
struct ClientContext {
  LlmClientConfig config;
  Transport* transport = nullptr;
  std::shared_ptr<RateLimiter> rate;
  std::shared_ptr<InFlightLimiter> in_flight;
  SleepFn sleep;

  static ClientContext create(const LlmClientConfig& config, Transport& transport, SleepFn sleep = {});
};

std::string sniff_image_mime(std::span<const std::uint8_t> bytes);

/// Sends prompt + image; retries timeouts, 429 and 5xx with exponential
/// backoff. Throws TransportError after max_retries retries or on other errors.
Verdict classify_remote(std::span<const std::uint8_t> image_bytes, PromptKind kind, ClientContext& client,
                        const std::string& id = {});

struct VerdictLogEntry {
  std::string id;
  PromptKind kind = PromptKind::Basic;
  Verdict verdict;
};

std::string verdict_log_line(const VerdictLogEntry& entry);
std::vector<VerdictLogEntry> parse_verdict_log(std::string_view text);

struct ZeroShotOptions {
  std::filesystem::path log_path;  // JSON-lines verdict log
  bool resume = false;
};

struct ZeroShotResult {
  Evaluation evaluation;
  std::size_t invalid_count = 0;
  std::size_t requested = 0;  // images sent this run
  std::size_t reused = 0;     // verdicts taken from an existing log
  std::vector<VerdictLogEntry> verdicts;  // manifest order
};

/// Invalid verdicts count as wrong predictions (scored as the opposite of
/// the true label) and are tallied separately.
std::vector<ScoredPrediction> score_verdicts(const DatasetManifest& manifest, std::span<const VerdictLogEntry> verdicts);

ZeroShotResult zero_shot_eval(const DatasetManifest& manifest, PromptKind kind, ClientContext& client,
                              const ZeroShotOptions& options);

}  // namespace clipdetect

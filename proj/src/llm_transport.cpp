#include <cstdlib>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "clipdetect/errors.hpp"
#include "clipdetect/file_util.hpp"
#include "clipdetect/llm_baseline.hpp"

namespace clipdetect {

namespace {

struct ParsedUrl {
  std::string scheme_host_port;
  std::string path;
};

ParsedUrl parse_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("llm: endpoint '" + url + "' has no scheme");
  const std::string scheme = url.substr(0, scheme_end);
  if (scheme != "http" && scheme != "https") throw ConfigError("llm: endpoint scheme must be http or https");
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

class HttpTransport : public Transport {
 public:
  HttpTransport(const LlmClientConfig& config, std::string api_key)
      : config_(config), url_(parse_url(config.endpoint)), api_key_(std::move(api_key)) {}

  TransportResponse send(const TransportRequest& request) override {
    httplib::Client client(url_.scheme_host_port);
    const auto secs = static_cast<time_t>(config_.timeout_s);
    const auto usecs = static_cast<time_t>((config_.timeout_s - static_cast<double>(secs)) * 1e6);
    client.set_connection_timeout(secs, usecs);
    client.set_read_timeout(secs, usecs);
    client.set_write_timeout(secs, usecs);

    httplib::Headers headers;
    if (config_.wire_format == WireFormat::Gemini) headers.emplace("x-goog-api-key", api_key_);
    else headers.emplace("Authorization", "Bearer " + api_key_);

    const std::string body = encode_request_body(config_.wire_format, request, config_.model);
    const auto res = client.Post(url_.path, headers, body, "application/json");
    TransportResponse out;
    if (!res) {
      const auto err = res.error();
      out.timed_out = err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read;
      out.error = httplib::to_string(err);
      return out;
    }
    out.status = res->status;
    if (res->status != 200) {
      out.error = res->body.substr(0, 200);
      return out;
    }
    if (auto text = extract_response_text(config_.wire_format, res->body)) {
      out.text = std::move(*text);
    } else {
      out.status = 502;
      out.error = "response body has no text field";
    }
    return out;
  }

 private:
  LlmClientConfig config_;
  ParsedUrl url_;
  std::string api_key_;
};

TransportResponse step_from_json(const nlohmann::json& step) {
  if (step.is_string()) return MockTransport::ok(step.get<std::string>());
  if (step.is_object()) {
    if (step.value("timeout", false)) {
      TransportResponse r;
      r.timed_out = true;
      return r;
    }
    if (step.contains("status")) {
      TransportResponse r = MockTransport::status(step.at("status").get<int>());
      if (r.status == 200) r.text = step.value("text", "");
      return r;
    }
    if (step.contains("text")) return MockTransport::ok(step.at("text").get<std::string>());
  }
  throw ConfigError("mock script: a step must be a string, {\"status\": code} or {\"timeout\": true}");
}

}  // namespace

std::string encode_request_body(WireFormat format, const TransportRequest& request, const std::string& model) {
  nlohmann::ordered_json j;
  if (format == WireFormat::Gemini) {
    j["contents"] = nlohmann::ordered_json::array(
        {{{"role", "user"},
          {"parts", nlohmann::ordered_json::array(
                        {{{"text", request.prompt}},
                         {{"inline_data", {{"mime_type", request.mime_type}, {"data", request.image_base64}}}}})}}});
    j["generationConfig"] = {{"temperature", 0}, {"topK", 1}, {"candidateCount", 1}, {"maxOutputTokens", 8}};
  } else {
    if (!model.empty()) j["model"] = model;
    j["prompt"] = request.prompt;
    j["mime_type"] = request.mime_type;
    j["image_base64"] = request.image_base64;
    j["temperature"] = 0;
  }
  return j.dump();
}

std::optional<std::string> extract_response_text(WireFormat format, std::string_view body) {
  const auto j = nlohmann::json::parse(body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) return std::nullopt;
  if (format == WireFormat::Gemini) {
    const auto candidates = j.find("candidates");
    if (candidates == j.end() || !candidates->is_array() || candidates->empty()) return std::nullopt;
    const auto& content = (*candidates)[0].value("content", nlohmann::json::object());
    const auto parts = content.find("parts");
    if (parts == content.end() || !parts->is_array()) return std::nullopt;
    std::string text;
    for (const auto& p : *parts) {
      if (p.contains("text") && p["text"].is_string()) text += p["text"].get<std::string>();
    }
    return text;
  }
  const auto it = j.find("text");
  if (it == j.end() || !it->is_string()) return std::nullopt;
  return it->get<std::string>();
}

std::unique_ptr<Transport> make_http_transport(const LlmClientConfig& config) {
  config.validate();
  if (config.endpoint.empty()) throw ConfigError("llm: no endpoint configured");
  if (config.api_key_env.empty()) throw ConfigError("llm: api_key_env is empty");
  const char* key = std::getenv(config.api_key_env.c_str());
  if (key == nullptr || *key == '\0') {
    throw ConfigError("llm: API key variable " + config.api_key_env + " is not set");
  }
  return std::make_unique<HttpTransport>(config, key);
}

MockTransport::MockTransport(Script script) : script_(std::move(script)) {}

TransportResponse MockTransport::send(const TransportRequest& request) {
  std::size_t call = 0;
  {
    std::lock_guard lock(mutex_);
    timestamps_.push_back(std::chrono::steady_clock::now());
    ids_.push_back(request.id);
    call = calls_[request.id]++;
  }
  return script_(request, call);
}

std::vector<std::chrono::steady_clock::time_point> MockTransport::timestamps() const {
  std::lock_guard lock(mutex_);
  return timestamps_;
}

std::vector<std::string> MockTransport::requested_ids() const {
  std::lock_guard lock(mutex_);
  return ids_;
}

std::size_t MockTransport::call_count() const {
  std::lock_guard lock(mutex_);
  return ids_.size();
}

TransportResponse MockTransport::ok(std::string text) {
  TransportResponse r;
  r.status = 200;
  r.text = std::move(text);
  return r;
}

TransportResponse MockTransport::status(int code) {
  TransportResponse r;
  r.status = code;
  return r;
}

std::unique_ptr<MockTransport> make_mock_transport(std::string_view spec,
                                                   const std::unordered_map<std::string, Label>& truth) {
  if (spec == "oracle") {
    return std::make_unique<MockTransport>([truth](const TransportRequest& req, std::size_t) {
      const auto it = truth.find(req.id);
      return it == truth.end() ? MockTransport::status(404) : MockTransport::ok(std::string(to_string(it->second)));
    });
  }
  if (spec == "real" || spec == "fake") {
    return std::make_unique<MockTransport>(
        [text = std::string(spec)](const TransportRequest&, std::size_t) { return MockTransport::ok(text); });
  }
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file_text(std::filesystem::path(std::string(spec))));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("mock script " + std::string(spec) + ": " + e.what());
  } catch (const IoError&) {
    throw ConfigError("mock '" + std::string(spec) + "' is not oracle, real, fake or a readable JSON script");
  }
  if (!j.is_object()) throw ConfigError("mock script must be a JSON object");
  std::optional<TransportResponse> fallback;
  if (j.contains("default")) fallback = step_from_json(j["default"]);
  std::unordered_map<std::string, std::vector<TransportResponse>> steps;
  if (j.contains("responses")) {
    for (const auto& [id, value] : j["responses"].items()) {
      auto& seq = steps[id];
      if (value.is_array()) {
        for (const auto& s : value) seq.push_back(step_from_json(s));
      } else {
        seq.push_back(step_from_json(value));
      }
      if (seq.empty()) throw ConfigError("mock script: empty response list for '" + id + "'");
    }
  }
  return std::make_unique<MockTransport>([steps = std::move(steps), fallback](const TransportRequest& req,
                                                                               std::size_t call) {
    const auto it = steps.find(req.id);
    if (it != steps.end()) return it->second[std::min(call, it->second.size() - 1)];
    if (fallback) return *fallback;
    return MockTransport::status(404);
  });
}

}  // namespace clipdetect

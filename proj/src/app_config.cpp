#include "clipdetect/app_config.hpp"

#include <charconv>
#include <functional>
#include <map>

#include "clipdetect/errors.hpp"
#include "clipdetect/file_util.hpp"
#include "csv.hpp"

namespace clipdetect {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, std::string_view expected) {
  throw ConfigError("config: " + std::string(key) + " = '" + std::string(value) + "': expected " +
                    std::string(expected));
}

double to_double(std::string_view key, std::string_view v) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size() || v.empty()) bad_value(key, v, "a number");
  return out;
}

std::uint64_t to_uint(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size() || v.empty()) bad_value(key, v, "a non-negative integer");
  return out;
}

bool to_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  bad_value(key, v, "true or false");
}

std::array<float, 3> to_triple(std::string_view key, std::string_view v) {
  std::array<float, 3> out{};
  std::size_t n = 0;
  std::size_t start = 0;
  while (start <= v.size()) {
    std::size_t end = v.find(',', start);
    if (end == std::string_view::npos) end = v.size();
    if (n == 3) bad_value(key, v, "three comma-separated numbers");
    out[n++] = static_cast<float>(to_double(key, trim(v.substr(start, end - start))));
    start = end + 1;
  }
  if (n != 3) bad_value(key, v, "three comma-separated numbers");
  return out;
}

std::string triple_text(const std::array<float, 3>& t) {
  return format_double(t[0]) + "," + format_double(t[1]) + "," + format_double(t[2]);
}

using Setter = std::function<void(AppConfig&, std::string_view, std::string_view)>;
using Getter = std::function<std::string(const AppConfig&)>;

struct Field {
  Setter set;
  Getter get;
};

const std::map<std::string, Field, std::less<>>& fields() {
  static const std::map<std::string, Field, std::less<>> table = {
      {"model_path", {[](AppConfig& c, auto, auto v) { c.model_path = std::string(v); },
                      [](const AppConfig& c) { return c.model_path.string(); }}},
      {"normalize", {[](AppConfig& c, auto k, auto v) { c.normalize = to_bool(k, v); },
                     [](const AppConfig& c) { return std::string(c.normalize ? "true" : "false"); }}},
      {"mean", {[](AppConfig& c, auto k, auto v) { c.preprocess.mean = to_triple(k, v); },
                [](const AppConfig& c) { return triple_text(c.preprocess.mean); }}},
      {"std", {[](AppConfig& c, auto k, auto v) { c.preprocess.std = to_triple(k, v); },
               [](const AppConfig& c) { return triple_text(c.preprocess.std); }}},
      {"embed_workers", {[](AppConfig& c, auto k, auto v) { c.embed_workers = to_uint(k, v); },
                         [](const AppConfig& c) { return std::to_string(c.embed_workers); }}},
      {"lr", {[](AppConfig& c, auto k, auto v) { c.train.lr = to_double(k, v); },
              [](const AppConfig& c) { return format_double(c.train.lr); }}},
      {"batch_size", {[](AppConfig& c, auto k, auto v) { c.train.batch_size = to_uint(k, v); },
                      [](const AppConfig& c) { return std::to_string(c.train.batch_size); }}},
      {"max_epochs", {[](AppConfig& c, auto k, auto v) { c.train.max_epochs = to_uint(k, v); },
                      [](const AppConfig& c) { return std::to_string(c.train.max_epochs); }}},
      {"patience", {[](AppConfig& c, auto k, auto v) { c.train.patience = to_uint(k, v); },
                    [](const AppConfig& c) { return std::to_string(c.train.patience); }}},
      {"val_fraction", {[](AppConfig& c, auto k, auto v) { c.train.val_fraction = to_double(k, v); },
                        [](const AppConfig& c) { return format_double(c.train.val_fraction); }}},
      {"min_delta", {[](AppConfig& c, auto k, auto v) { c.train.min_delta = to_double(k, v); },
                     [](const AppConfig& c) { return format_double(c.train.min_delta); }}},
      {"seed", {[](AppConfig& c, auto k, auto v) { c.train.seed = to_uint(k, v); },
                [](const AppConfig& c) { return std::to_string(c.train.seed); }}},
      {"head", {[](AppConfig& c, auto k, auto v) {
                  try {
                    c.train.head_kind = parse_head_kind(v);
                  } catch (const Error&) {
                    bad_value(k, v, "mlp or cnn");
                  }
                },
                [](const AppConfig& c) { return std::string(to_string(c.train.head_kind)); }}},
      {"threshold", {[](AppConfig& c, auto k, auto v) { c.train.threshold = to_double(k, v); },
                     [](const AppConfig& c) { return format_double(c.train.threshold); }}},
      {"fewshot_fraction", {[](AppConfig& c, auto k, auto v) { c.fewshot_fraction = to_double(k, v); },
                            [](const AppConfig& c) { return format_double(c.fewshot_fraction); }}},
      {"stratified", {[](AppConfig& c, auto k, auto v) { c.stratified = to_bool(k, v); },
                      [](const AppConfig& c) { return std::string(c.stratified ? "true" : "false"); }}},
      {"llm_endpoint", {[](AppConfig& c, auto, auto v) { c.llm.endpoint = std::string(v); },
                        [](const AppConfig& c) { return c.llm.endpoint; }}},
      {"llm_api_key_env", {[](AppConfig& c, auto, auto v) { c.llm.api_key_env = std::string(v); },
                           [](const AppConfig& c) { return c.llm.api_key_env; }}},
      {"llm_model", {[](AppConfig& c, auto, auto v) { c.llm.model = std::string(v); },
                     [](const AppConfig& c) { return c.llm.model; }}},
      {"llm_wire_format", {[](AppConfig& c, auto k, auto v) {
                             try {
                               c.llm.wire_format = parse_wire_format(v);
                             } catch (const Error&) {
                               bad_value(k, v, "generic or gemini");
                             }
                           },
                           [](const AppConfig& c) { return std::string(to_string(c.llm.wire_format)); }}},
      {"llm_timeout_s", {[](AppConfig& c, auto k, auto v) { c.llm.timeout_s = to_double(k, v); },
                         [](const AppConfig& c) { return format_double(c.llm.timeout_s); }}},
      {"llm_max_retries", {[](AppConfig& c, auto k, auto v) { c.llm.max_retries = to_uint(k, v); },
                           [](const AppConfig& c) { return std::to_string(c.llm.max_retries); }}},
      {"llm_backoff_base_s", {[](AppConfig& c, auto k, auto v) { c.llm.backoff_base_s = to_double(k, v); },
                              [](const AppConfig& c) { return format_double(c.llm.backoff_base_s); }}},
      {"llm_max_rps", {[](AppConfig& c, auto k, auto v) { c.llm.max_requests_per_second = to_double(k, v); },
                       [](const AppConfig& c) { return format_double(c.llm.max_requests_per_second); }}},
      {"llm_max_in_flight", {[](AppConfig& c, auto k, auto v) { c.llm.max_in_flight = to_uint(k, v); },
                             [](const AppConfig& c) { return std::to_string(c.llm.max_in_flight); }}},
      {"llm_strict", {[](AppConfig& c, auto k, auto v) { c.llm.strict = to_bool(k, v); },
                      [](const AppConfig& c) { return std::string(c.llm.strict ? "true" : "false"); }}},
      {"out", {[](AppConfig& c, auto, auto v) { c.out_dir = std::string(v); },
               [](const AppConfig& c) { return c.out_dir.string(); }}},
  };
  return table;
}

}  // namespace

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& [name, field] : fields()) k.push_back(name);
    return k;
  }();
  return keys;
}

void apply_setting(AppConfig& config, std::string_view key, std::string_view value) {
  const auto it = fields().find(key);
  if (it == fields().end()) throw ConfigError("config: unknown key '" + std::string(key) + "'");
  it->second.set(config, key, value);
}

AppConfig parse_config(std::string_view text, const std::filesystem::path& base_dir) {
  AppConfig config;
  std::size_t line_no = 0;
  for (std::string_view raw : detail::split_lines(text)) {
    ++line_no;
    std::string_view line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    try {
      apply_setting(config, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(std::string(e.what()) + " (line " + std::to_string(line_no) + ")");
    }
  }
  if (!base_dir.empty()) {
    if (!config.model_path.empty() && config.model_path.is_relative()) config.model_path = base_dir / config.model_path;
  }
  return config;
}

AppConfig load_config(const std::filesystem::path& path) {
  return parse_config(read_file_text(path), path.parent_path());
}

std::string render_config(const AppConfig& config) {
  std::string out;
  for (const auto& [name, field] : fields()) out += name + " = " + field.get(config) + "\n";
  return out;
}

}  // namespace clipdetect

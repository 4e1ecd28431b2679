#include "raml/remote.hpp"

#include <httplib.h>
#include <json.hpp>

#include <cctype>
#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

namespace raml::remote {

using nlohmann::json;

// ---------------------------- toml subset ----------------------------

namespace {

std::string trim(const std::string& s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) {
    ++b;
  }
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) {
    --e;
  }
  return s.substr(b, e - b);
}

std::string strip_comment(const std::string& line) {
  bool in_string = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"' && (i == 0 || line[i - 1] != '\\')) {
      in_string = !in_string;
    } else if (line[i] == '#' && !in_string) {
      return line.substr(0, i);
    }
  }
  return line;
}

std::string unescape(const std::string& s, int lineno) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '\\') {
      out.push_back(s[i]);
      continue;
    }
    if (++i >= s.size()) {
      throw ValidationError("toml: line " + std::to_string(lineno) + ": trailing backslash");
    }
    switch (s[i]) {
      case 'n': out.push_back('\n'); break;
      case 't': out.push_back('\t'); break;
      case '"': out.push_back('"'); break;
      case '\\': out.push_back('\\'); break;
      default:
        throw ValidationError("toml: line " + std::to_string(lineno) + ": unknown escape");
    }
  }
  return out;
}

TomlTable::Value parse_value(const std::string& raw, int lineno) {
  if (raw.empty()) {
    throw ValidationError("toml: line " + std::to_string(lineno) + ": empty value");
  }
  if (raw.front() == '"') {
    if (raw.size() < 2 || raw.back() != '"') {
      throw ValidationError("toml: line " + std::to_string(lineno) + ": unterminated string");
    }
    return unescape(raw.substr(1, raw.size() - 2), lineno);
  }
  if (raw == "true") {
    return true;
  }
  if (raw == "false") {
    return false;
  }
  const bool is_float = raw.find_first_of(".eE") != std::string::npos;
  try {
    std::size_t used = 0;
    if (is_float) {
      const double v = std::stod(raw, &used);
      if (used != raw.size()) {
        throw std::invalid_argument(raw);
      }
      return v;
    }
    const std::int64_t v = std::stoll(raw, &used);
    if (used != raw.size()) {
      throw std::invalid_argument(raw);
    }
    return v;
  } catch (const std::exception&) {
    throw ValidationError("toml: line " + std::to_string(lineno) + ": cannot parse value '" +
                          raw + "'");
  }
}

}  // namespace

TomlTable TomlTable::parse(const std::string& text) {
  TomlTable table;
  std::istringstream in(text);
  std::string line;
  std::string section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(strip_comment(line));
    if (line.empty()) {
      continue;
    }
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3) {
        throw ValidationError("toml: line " + std::to_string(lineno) + ": malformed section");
      }
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ValidationError("toml: line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) {
      throw ValidationError("toml: line " + std::to_string(lineno) + ": empty key");
    }
    const std::string dotted = section.empty() ? key : section + "." + key;
    table.values_[dotted] = parse_value(trim(line.substr(eq + 1)), lineno);
  }
  return table;
}

TomlTable TomlTable::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw ValidationError("cannot open config file: " + path);
  }
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse(ss.str());
  } catch (const ValidationError& e) {
    throw ValidationError(path + ": " + e.what());
  }
}

bool TomlTable::has(const std::string& dotted_key) const {
  return values_.count(dotted_key) > 0;
}

bool TomlTable::has_section(const std::string& section) const {
  const std::string prefix = section + ".";
  const auto it = values_.lower_bound(prefix);
  return it != values_.end() && it->first.rfind(prefix, 0) == 0;
}

std::string TomlTable::get_string(const std::string& dotted_key) const {
  const auto it = values_.find(dotted_key);
  if (it == values_.end()) {
    throw ValidationError("config: missing key '" + dotted_key + "'");
  }
  if (const auto* s = std::get_if<std::string>(&it->second)) {
    return *s;
  }
  throw ValidationError("config: key '" + dotted_key + "' is not a string");
}

std::string TomlTable::get_string(const std::string& dotted_key,
                                  const std::string& fallback) const {
  return has(dotted_key) ? get_string(dotted_key) : fallback;
}

std::int64_t TomlTable::get_int(const std::string& dotted_key, std::int64_t fallback) const {
  const auto it = values_.find(dotted_key);
  if (it == values_.end()) {
    return fallback;
  }
  if (const auto* v = std::get_if<std::int64_t>(&it->second)) {
    return *v;
  }
  throw ValidationError("config: key '" + dotted_key + "' is not an integer");
}

double TomlTable::get_double(const std::string& dotted_key, double fallback) const {
  const auto it = values_.find(dotted_key);
  if (it == values_.end()) {
    return fallback;
  }
  if (const auto* v = std::get_if<double>(&it->second)) {
    return *v;
  }
  if (const auto* i = std::get_if<std::int64_t>(&it->second)) {
    return static_cast<double>(*i);
  }
  throw ValidationError("config: key '" + dotted_key + "' is not a number");
}

bool TomlTable::get_bool(const std::string& dotted_key, bool fallback) const {
  const auto it = values_.find(dotted_key);
  if (it == values_.end()) {
    return fallback;
  }
  if (const auto* v = std::get_if<bool>(&it->second)) {
    return *v;
  }
  throw ValidationError("config: key '" + dotted_key + "' is not a boolean");
}

// ---------------------------- remote config ----------------------------

void RemoteConfig::validate() const {
  if (endpoint_url.empty()) {
    throw ValidationError("remote config: endpoint_url is required");
  }
  if (sampling.temperature < 0.0) {
    throw ValidationError("remote config: temperature must be >= 0");
  }
  if (sampling.max_tokens < 1) {
    throw ValidationError("remote config: max_tokens must be >= 1");
  }
  if (max_retries < 1) {
    throw ValidationError("remote config: max_retries must be >= 1");
  }
  if (max_in_flight < 1) {
    throw ValidationError("remote config: max_in_flight must be >= 1");
  }
}

RemoteConfig RemoteConfig::from_toml(const TomlTable& table, const std::string& section) {
  RemoteConfig cfg;
  cfg.endpoint_url = table.get_string(section + ".endpoint_url");
  cfg.model_name = table.get_string(section + ".model_name", "");
  cfg.api_key_env_var = table.get_string(section + ".api_key_env_var", "");
  cfg.timeout_s = table.get_double(section + ".timeout_s", cfg.timeout_s);
  cfg.max_retries = static_cast<int>(table.get_int(section + ".max_retries", cfg.max_retries));
  cfg.backoff_base_s = table.get_double(section + ".backoff_base_s", cfg.backoff_base_s);
  cfg.max_in_flight = static_cast<int>(table.get_int(section + ".max_in_flight", cfg.max_in_flight));
  cfg.sampling.temperature =
      table.get_double(section + ".sampling.temperature", cfg.sampling.temperature);
  cfg.sampling.top_p = table.get_double(section + ".sampling.top_p", cfg.sampling.top_p);
  cfg.sampling.top_k = static_cast<int>(table.get_int(section + ".sampling.top_k", cfg.sampling.top_k));
  cfg.sampling.max_tokens =
      static_cast<int>(table.get_int(section + ".sampling.max_tokens", cfg.sampling.max_tokens));
  cfg.validate();
  return cfg;
}

// ---------------------------- remote backend ----------------------------

struct RemoteBackend::Impl {
  mutable std::mutex gate_mutex;
  mutable std::condition_variable gate_cv;
  mutable int in_flight = 0;
  mutable std::mutex audit_mutex;

  void acquire(int cap) const {
    std::unique_lock<std::mutex> lock(gate_mutex);
    gate_cv.wait(lock, [&] { return in_flight < cap; });
    ++in_flight;
  }

  void release() const {
    {
      std::lock_guard<std::mutex> lock(gate_mutex);
      --in_flight;
    }
    gate_cv.notify_one();
  }
};

RemoteBackend::RemoteBackend(RemoteConfig config, std::string audit_path)
    : config_(std::move(config)), audit_path_(std::move(audit_path)), impl_(new Impl) {
  config_.validate();
}

RemoteBackend::~RemoteBackend() = default;

namespace {

bool retryable_status(int status) { return status >= 500 || status == 429; }

std::string bearer_token(const RemoteConfig& cfg) {
  if (cfg.api_key_env_var.empty()) {
    return "";
  }
  const char* key = std::getenv(cfg.api_key_env_var.c_str());
  return key != nullptr ? std::string(key) : std::string();
}

}  // namespace

std::string RemoteBackend::post_completion(const std::string& body) const {
  impl_->acquire(config_.max_in_flight);
  struct Release {
    const Impl* impl;
    ~Release() { impl->release(); }
  } release{impl_.get()};

  std::string last_error;
  for (int attempt = 0; attempt < config_.max_retries; ++attempt) {
    if (attempt > 0) {
      const double backoff = config_.backoff_base_s * static_cast<double>(1 << (attempt - 1));
      if (backoff > 0.0) {
        std::this_thread::sleep_for(std::chrono::duration<double>(backoff));
      }
    }
    httplib::Client client(config_.endpoint_url);
    client.set_connection_timeout(std::chrono::duration<double>(config_.timeout_s));
    client.set_read_timeout(std::chrono::duration<double>(config_.timeout_s));
    client.set_write_timeout(std::chrono::duration<double>(config_.timeout_s));
    const std::string token = bearer_token(config_);
    if (!token.empty()) {
      client.set_default_headers({{"Authorization", "Bearer " + token}});
    }

    auto result = client.Post("/v1/completions", body, "application/json");
    int status = 0;
    std::string response;
    if (!result) {
      last_error = "connection failed: " + httplib::to_string(result.error());
    } else {
      status = result->status;
      response = result->body;
    }

    if (!audit_path_.empty()) {
      std::lock_guard<std::mutex> lock(impl_->audit_mutex);
      std::ofstream audit(audit_path_, std::ios::app);
      json entry;
      entry["time_ms"] = std::chrono::duration_cast<std::chrono::milliseconds>(
                             std::chrono::system_clock::now().time_since_epoch())
                             .count();
      entry["endpoint"] = config_.endpoint_url;
      entry["path"] = "/v1/completions";
      entry["request"] = json::parse(body, nullptr, false);
      entry["status"] = status;
      entry["response"] = json::parse(response, nullptr, false);
      audit << entry.dump() << "\n";
    }

    if (result && status == 200) {
      return response;
    }
    if (result && !retryable_status(status)) {
      throw TransportError("remote: request rejected with status " + std::to_string(status) +
                           ": " + response);
    }
    if (result) {
      last_error = "status " + std::to_string(status);
    }
  }
  throw TransportError("remote: request failed after " + std::to_string(config_.max_retries) +
                       " attempts: " + last_error);
}

std::vector<double> RemoteBackend::score_sequence(const backend::TokenList& prefix,
                                                  const backend::TokenList& target) const {
  if (target.empty()) {
    throw ValidationError("score_sequence: empty target");
  }
  const std::string prefix_text = backend::detokenize(prefix);
  const std::string target_text = backend::detokenize(target);
  const std::string prompt =
      prefix_text.empty() ? target_text : prefix_text + " " + target_text;
  const std::size_t boundary = prompt.size() - target_text.size();

  json request;
  request["model"] = config_.model_name;
  request["prompt"] = prompt;
  request["max_tokens"] = 0;
  request["echo"] = true;
  request["logprobs"] = 0;
  request["temperature"] = config_.sampling.temperature;
  request["top_p"] = config_.sampling.top_p;
  request["top_k"] = config_.sampling.top_k;

  const std::string body = post_completion(request.dump());
  json response = json::parse(body, nullptr, false);
  if (response.is_discarded() || !response.contains("choices") || response["choices"].empty()) {
    throw TransportError("remote: malformed completion response");
  }
  const json& choice = response["choices"][0];
  if (!choice.contains("logprobs") || choice["logprobs"].is_null()) {
    throw TransportError("remote: endpoint returned no logprobs");
  }
  const json& lp = choice["logprobs"];
  if (!lp.contains("tokens") || !lp.contains("token_logprobs")) {
    throw TransportError("remote: logprobs lack 'tokens'/'token_logprobs'");
  }
  const auto tokens = lp["tokens"].get<std::vector<std::string>>();
  const auto& raw_logprobs = lp["token_logprobs"];

  // Character offsets of each echoed token, either as given or cumulative.
  std::vector<std::size_t> offsets;
  offsets.reserve(tokens.size());
  if (lp.contains("text_offset")) {
    for (const auto& o : lp["text_offset"]) {
      offsets.push_back(o.get<std::size_t>());
    }
    if (offsets.size() != tokens.size()) {
      throw AlignmentError("remote: text_offset length disagrees with tokens");
    }
  } else {
    std::size_t at = 0;
    for (const auto& t : tokens) {
      offsets.push_back(at);
      at += t.size();
    }
  }

  // The separating space may be tokenized into either side; accept both.
  std::size_t split = tokens.size();
  bool space_attached = false;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (offsets[i] == boundary) {
      split = i;
      break;
    }
    if (boundary > 0 && offsets[i] == boundary - 1 && !tokens[i].empty() && tokens[i][0] == ' ') {
      split = i;
      space_attached = true;
      break;
    }
    if (offsets[i] > boundary) {
      break;
    }
  }
  if (split == tokens.size()) {
    throw AlignmentError("remote: no token boundary at the prefix/target split");
  }

  std::string rebuilt;
  for (std::size_t i = split; i < tokens.size(); ++i) {
    rebuilt += tokens[i];
  }
  const std::string expected = space_attached ? " " + target_text : target_text;
  if (rebuilt != expected) {
    throw AlignmentError("remote: echoed tokens do not reassemble the target text");
  }

  std::vector<double> out;
  out.reserve(tokens.size() - split);
  for (std::size_t i = split; i < tokens.size(); ++i) {
    if (i >= raw_logprobs.size() || raw_logprobs[i].is_null()) {
      throw TransportError("remote: missing logprob for echoed token " + std::to_string(i));
    }
    const double v = raw_logprobs[i].get<double>();
    if (!std::isfinite(v)) {
      throw TransportError("remote: non-finite logprob for echoed token " + std::to_string(i));
    }
    out.push_back(v);
  }
  return out;
}

std::string RemoteBackend::generate(const std::string& prompt) const {
  json request;
  request["model"] = config_.model_name;
  request["prompt"] = prompt;
  request["max_tokens"] = config_.sampling.max_tokens;
  request["temperature"] = config_.sampling.temperature;
  request["top_p"] = config_.sampling.top_p;
  request["top_k"] = config_.sampling.top_k;

  const std::string body = post_completion(request.dump());
  json response = json::parse(body, nullptr, false);
  if (response.is_discarded() || !response.contains("choices") || response["choices"].empty() ||
      !response["choices"][0].contains("text")) {
    throw TransportError("remote: malformed completion response");
  }
  return response["choices"][0]["text"].get<std::string>();
}

}  // namespace raml::remote

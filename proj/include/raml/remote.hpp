#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "raml/backend.hpp"
#include "raml/common.hpp"

namespace raml::remote {

// Minimal TOML reader: [section] / [section.sub] headers, `key = value`
// pairs, quoted strings, integers, floats, booleans, # comments. Enough for
// backend configuration files; nothing more.
class TomlTable {
 public:
  using Value = std::variant<std::string, std::int64_t, double, bool>;

  static TomlTable parse(const std::string& text);
  static TomlTable load(const std::string& path);

  bool has(const std::string& dotted_key) const;
  bool has_section(const std::string& section) const;
  std::string get_string(const std::string& dotted_key) const;
  std::string get_string(const std::string& dotted_key, const std::string& fallback) const;
  std::int64_t get_int(const std::string& dotted_key, std::int64_t fallback) const;
  double get_double(const std::string& dotted_key, double fallback) const;
  bool get_bool(const std::string& dotted_key, bool fallback) const;

 private:
  std::map<std::string, Value> values_;
};

struct SamplingParams {
  double temperature = 0.7;
  double top_p = 1.0;
  int top_k = 50;
  int max_tokens = 8192;
};

struct RemoteConfig {
  std::string endpoint_url;
  std::string model_name;
  std::string api_key_env_var;
  SamplingParams sampling;
  double timeout_s = 120.0;
  int max_retries = 3;
  double backoff_base_s = 0.5;
  int max_in_flight = 4;

  void validate() const;
  // Reads endpoint_url, model_name, api_key_env_var, timeout_s, max_retries,
  // backoff_base_s, max_in_flight and <section>.sampling.* from the table.
  static RemoteConfig from_toml(const TomlTable& table, const std::string& section);
};

class TextGenerator {
 public:
  virtual ~TextGenerator() = default;
  virtual std::string generate(const std::string& prompt) const = 0;
};

// Completions-style HTTP client. Scoring uses echoed token logprobs over the
// prompt; the target span is located by character offset and must align with
// the endpoint's token boundaries. Transient failures are retried
// max_retries times with exponential backoff.
class RemoteBackend final : public backend::ScoringBackend, public TextGenerator {
 public:
  explicit RemoteBackend(RemoteConfig config, std::string audit_path = "");
  ~RemoteBackend() override;

  backend::Capabilities capabilities() const override { return {true, false}; }
  std::vector<double> score_sequence(const backend::TokenList& prefix,
                                     const backend::TokenList& target) const override;
  std::string generate(const std::string& prompt) const override;

  const RemoteConfig& config() const { return config_; }

 private:
  struct Impl;
  std::string post_completion(const std::string& body) const;

  RemoteConfig config_;
  std::string audit_path_;
  std::unique_ptr<Impl> impl_;
};

}  // namespace raml::remote

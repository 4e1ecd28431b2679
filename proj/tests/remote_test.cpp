#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

// Eigen (via the library headers) must precede httplib.
#include "raml/cli.hpp"
#include "raml/remote.hpp"
#include "raml/summarize.hpp"
#include "raml/traces.hpp"

#include <httplib.h>
#include <json.hpp>

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <thread>

using namespace raml;
using namespace raml::remote;
using nlohmann::json;

namespace {

// In-process completions endpoint. Echo requests are tokenized into words
// with the separating space attached to the following token, matching common
// completion tokenizers.
class MockServer {
 public:
  using Handler = std::function<json(const json&)>;

  explicit MockServer(Handler handler) : handler_(std::move(handler)) {
    server_.Post("/v1/completions", [this](const httplib::Request& req, httplib::Response& res) {
      requests.push_back(req.body);
      if (!req.get_header_value("Authorization").empty()) {
        auth_headers.push_back(req.get_header_value("Authorization"));
      }
      const int fail_budget = fail_first.load();
      if (static_cast<int>(requests.size()) <= fail_budget) {
        res.status = 503;
        res.set_content("{\"error\": \"busy\"}", "application/json");
        return;
      }
      if (reject_all.load()) {
        res.status = 401;
        res.set_content("{\"error\": \"bad key\"}", "application/json");
        return;
      }
      const json body = json::parse(requests.back());
      res.set_content(handler_(body).dump(), "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  ~MockServer() {
    server_.stop();
    thread_.join();
  }

  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }

  std::vector<std::string> requests;
  std::vector<std::string> auth_headers;
  std::atomic<int> fail_first{0};
  std::atomic<bool> reject_all{false};

 private:
  httplib::Server server_;
  Handler handler_;
  int port_ = 0;
  std::thread thread_;
};

// Splits "a b c" into tokens {"a", " b", " c"} with text offsets.
json echo_response(const std::string& prompt, double base_logprob) {
  json tokens = json::array();
  json logprobs = json::array();
  json offsets = json::array();
  std::size_t start = 0;
  bool first = true;
  while (start < prompt.size()) {
    std::size_t end = prompt.find(' ', first ? start : start + 1);
    if (end == std::string::npos) {
      end = prompt.size();
    }
    tokens.push_back(prompt.substr(start, end - start));
    offsets.push_back(start);
    if (first) {
      logprobs.push_back(nullptr);
    } else {
      logprobs.push_back(base_logprob - 0.01 * static_cast<double>(tokens.size()));
    }
    first = false;
    start = end;
  }
  json resp;
  resp["choices"] = json::array();
  resp["choices"].push_back(
      {{"text", ""},
       {"logprobs",
        {{"tokens", tokens}, {"token_logprobs", logprobs}, {"text_offset", offsets}}}});
  return resp;
}

RemoteConfig config_for(const MockServer& server) {
  RemoteConfig cfg;
  cfg.endpoint_url = server.url();
  cfg.model_name = "mock-model";
  cfg.backoff_base_s = 0.0;
  cfg.timeout_s = 5.0;
  return cfg;
}

}  // namespace

TEST_CASE("toml subset parsing") {
  const std::string text = R"(
# backend settings
[remote]
endpoint_url = "http://localhost:1234"  # inline comment
model_name = "m"
timeout_s = 12.5
max_retries = 2
flag = true

[remote.sampling]
temperature = 0.7
top_k = 50
)";
  const auto table = TomlTable::parse(text);
  CHECK(table.get_string("remote.endpoint_url") == "http://localhost:1234");
  CHECK(table.get_double("remote.timeout_s", 0.0) == 12.5);
  CHECK(table.get_int("remote.max_retries", 0) == 2);
  CHECK(table.get_bool("remote.flag", false));
  CHECK(table.get_double("remote.sampling.temperature", 0.0) == 0.7);
  CHECK(table.get_int("remote.sampling.top_k", 0) == 50);
  CHECK(table.has_section("remote"));
  CHECK_FALSE(table.has_section("missing"));
  CHECK(table.get_string("remote.absent", "fallback") == "fallback");

  CHECK_THROWS_AS(TomlTable::parse("key value"), ValidationError);
  CHECK_THROWS_AS(TomlTable::parse("[broken"), ValidationError);
  CHECK_THROWS_AS(TomlTable::parse("k = \"unterminated"), ValidationError);
}

TEST_CASE("remote config defaults and validation") {
  const auto table = TomlTable::parse("[remote]\nendpoint_url = \"http://x\"\n");
  const auto cfg = RemoteConfig::from_toml(table, "remote");
  CHECK(cfg.sampling.temperature == 0.7);
  CHECK(cfg.sampling.top_p == 1.0);
  CHECK(cfg.sampling.top_k == 50);
  CHECK(cfg.max_retries == 3);

  RemoteConfig bad = cfg;
  bad.sampling.temperature = -1.0;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = cfg;
  bad.sampling.max_tokens = 0;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
}

TEST_CASE("score_sequence passes canned logprobs through") {
  MockServer server([](const json& req) {
    return echo_response(req["prompt"].get<std::string>(), -0.5);
  });
  const RemoteBackend be(config_for(server));
  const auto lps = be.score_sequence({"one", "two"}, {"three", "four"});
  REQUIRE(lps.size() == 2);
  // Tokens are {"one", " two", " three", " four"}; canned values depend only
  // on the token index.
  CHECK(lps[0] == doctest::Approx(-0.5 - 0.03).epsilon(1e-12));
  CHECK(lps[1] == doctest::Approx(-0.5 - 0.04).epsilon(1e-12));

  const json sent = json::parse(server.requests.at(0));
  CHECK(sent["echo"] == true);
  CHECK(sent["max_tokens"] == 0);
  CHECK(sent["prompt"] == "one two three four");
}

TEST_CASE("misaligned echoes raise an alignment error") {
  MockServer server([](const json& req) {
    // Tokens that straddle the prefix/target boundary.
    const std::string prompt = req["prompt"].get<std::string>();
    json resp;
    resp["choices"] = json::array();
    resp["choices"].push_back(
        {{"text", ""},
         {"logprobs",
          {{"tokens", {prompt}}, {"token_logprobs", {nullptr}}, {"text_offset", {0}}}}});
    return resp;
  });
  const RemoteBackend be(config_for(server));
  CHECK_THROWS_AS(be.score_sequence({"one"}, {"two"}), AlignmentError);
}

TEST_CASE("transient failures are retried, hard failures are not") {
  MockServer server([](const json& req) {
    return echo_response(req["prompt"].get<std::string>(), -1.0);
  });

  server.fail_first = 2;
  RemoteConfig cfg = config_for(server);
  cfg.max_retries = 3;
  const RemoteBackend be(cfg);
  const auto lps = be.score_sequence({"a"}, {"b"});
  CHECK(lps.size() == 1);
  CHECK(server.requests.size() == 3);  // two 503s then success

  server.requests.clear();
  server.fail_first = 5;
  CHECK_THROWS_AS(be.score_sequence({"a"}, {"b"}), TransportError);
  CHECK(server.requests.size() == 3);  // every retry consumed

  server.requests.clear();
  server.fail_first = 0;
  server.reject_all = true;
  CHECK_THROWS_AS(be.score_sequence({"a"}, {"b"}), TransportError);
  CHECK(server.requests.size() == 1);  // 401 is not retryable
}

TEST_CASE("generate returns the completion text and sends sampling params") {
  MockServer server([](const json&) {
    json resp;
    resp["choices"] = json::array();
    resp["choices"].push_back({{"text", "a concise summary"}});
    return resp;
  });
  RemoteConfig cfg = config_for(server);
  cfg.sampling.max_tokens = 128;
  const RemoteBackend be(cfg);
  CHECK(be.generate("Summarize this.") == "a concise summary");
  const json sent = json::parse(server.requests.at(0));
  CHECK(sent["max_tokens"] == 128);
  CHECK(sent["temperature"] == 0.7);
  CHECK(sent["top_p"] == 1.0);
  CHECK(sent["top_k"] == 50);
}

TEST_CASE("bearer token comes from the configured environment variable") {
  MockServer server([](const json& req) {
    return echo_response(req["prompt"].get<std::string>(), -1.0);
  });
  setenv("RAML_TEST_KEY", "secret-token", 1);
  RemoteConfig cfg = config_for(server);
  cfg.api_key_env_var = "RAML_TEST_KEY";
  const RemoteBackend be(cfg);
  (void)be.score_sequence({"a"}, {"b"});
  REQUIRE_FALSE(server.auth_headers.empty());
  CHECK(server.auth_headers.front() == "Bearer secret-token");
  unsetenv("RAML_TEST_KEY");
}

TEST_CASE("audit log records requests and responses") {
  MockServer server([](const json&) {
    json resp;
    resp["choices"] = json::array();
    resp["choices"].push_back({{"text", "ok"}});
    return resp;
  });
  const auto audit =
      (std::filesystem::temp_directory_path() / "raml-remote-audit.jsonl").string();
  std::filesystem::remove(audit);
  const RemoteBackend be(config_for(server), audit);
  (void)be.generate("hello");
  std::ifstream in(audit);
  std::string line;
  REQUIRE(std::getline(in, line));
  const json entry = json::parse(line);
  CHECK(entry["status"] == 200);
  CHECK(entry["request"]["prompt"] == "hello");
}

// ---------------------------- summarization ----------------------------

namespace {

class ScriptedGenerator final : public TextGenerator {
 public:
  explicit ScriptedGenerator(std::string reply) : reply_(std::move(reply)) {}
  std::string generate(const std::string& prompt) const override {
    prompts.push_back(prompt);
    return reply_;
  }
  mutable std::vector<std::string> prompts;

 private:
  std::string reply_;
};

backend::TraceRecord source_trace(const std::string& id, const std::string& gold) {
  backend::TraceRecord r;
  r.id = id;
  r.instruction = "Solve it.";
  r.question = "What is six times seven ?";
  r.gold_answer = gold;
  for (int i = 0; i < 40; ++i) {
    r.trajectory_tokens.push_back("step" + std::to_string(i));
  }
  return r;
}

summarize::SummarizationJob basic_job(int repeats) {
  summarize::SummarizationJob job;
  job.repeats = repeats;
  job.summarizer_model.endpoint_url = "http://unused";
  job.target_model.endpoint_url = "http://unused";
  return job;
}

}  // namespace

TEST_CASE("summarization produces repeats x sources records") {
  const ScriptedGenerator gen("short recap");
  const std::vector<backend::TraceRecord> sources = {source_trace("a", "42"),
                                                     source_trace("b", "42")};
  const auto records = run_summarization(basic_job(4), sources, gen);
  CHECK(records.size() == 8);
  CHECK(records[0].id == "a/summary-0");
  CHECK(records[3].id == "a/summary-3");
  CHECK(records[4].id == "b/summary-0");
  REQUIRE(records[0].provenance.has_value());
  CHECK(records[0].provenance->source_id == "a");
  CHECK(records[0].provenance->repeat == 0);
  CHECK(records[0].provenance->source_token_count == 40);
}

TEST_CASE("summaries are shorter than their sources") {
  const ScriptedGenerator gen("just add them up");
  const auto records = run_summarization(basic_job(1), {source_trace("a", "42")}, gen);
  REQUIRE(records.size() == 1);
  CHECK(records[0].trajectory_tokens.size() <
        static_cast<std::size_t>(records[0].provenance->source_token_count));
  CHECK_FALSE(records[0].contaminated);
}

TEST_CASE("the summarizer never sees the gold answer") {
  const ScriptedGenerator gen("clean summary");
  const auto records = run_summarization(basic_job(3), {source_trace("a", "42")}, gen);
  CHECK(records.size() == 3);
  REQUIRE_FALSE(gen.prompts.empty());
  for (const auto& prompt : gen.prompts) {
    CHECK(prompt.find("42") == std::string::npos);
  }
}

TEST_CASE("summaries quoting the gold answer are flagged contaminated") {
  const ScriptedGenerator gen("the answer is 42 obviously");
  const auto records = run_summarization(basic_job(1), {source_trace("a", "42")}, gen);
  REQUIRE(records.size() == 1);
  CHECK(records[0].contaminated);
}

TEST_CASE("summarization validates its job and sources") {
  const ScriptedGenerator gen("x");
  CHECK_THROWS_AS(run_summarization(basic_job(0), {source_trace("a", "1")}, gen),
                  ValidationError);
  auto job = basic_job(1);
  job.source_ids = {"missing"};
  CHECK_THROWS_AS(run_summarization(job, {source_trace("a", "1")}, gen), ValidationError);
  job.source_ids.clear();
  job.exclude_answer = false;
  CHECK_THROWS_AS(run_summarization(job, {source_trace("a", "1")}, gen), ValidationError);
}

// ---------------------------- long2short end to end ----------------------------

TEST_CASE("long2short drives both endpoints and yields metric-ready tallies") {
  MockServer server([](const json& req) {
    const std::string prompt = req["prompt"].get<std::string>();
    json resp;
    resp["choices"] = json::array();
    if (prompt.find("Short summary:") != std::string::npos) {
      resp["choices"].push_back({{"text", "reuse the condensed steps"}});
    } else {
      resp["choices"].push_back({{"text", "Final conclusion: \\boxed{413}"}});
    }
    return resp;
  });

  const auto dir = std::filesystem::temp_directory_path() / "raml-long2short";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);

  backend::TraceRecord source;
  source.id = "l2s-q0";
  source.instruction = "Sum the numbers.";
  source.question = "What is three plus four ?";
  source.gold_answer = "413";
  for (int i = 0; i < 30; ++i) {
    source.trajectory_tokens.push_back("expand" + std::to_string(i));
  }
  backend::save_traces({source}, (dir / "src.jsonl").string());

  {
    std::ofstream cfg(dir / "raml.toml");
    cfg << "[summarizer]\nendpoint_url = \"" << server.url() << "\"\n"
        << "model_name = \"mock-summarizer\"\nbackoff_base_s = 0.0\n"
        << "[target]\nendpoint_url = \"" << server.url() << "\"\n"
        << "model_name = \"mock-target\"\nbackoff_base_s = 0.0\n";
  }

  std::ostringstream out;
  std::ostringstream err;
  const int code = cli::run({"long2short", "--config", (dir / "raml.toml").string(), "--traces",
                             (dir / "src.jsonl").string(), "--repeats", "3", "--generate", "--out",
                             (dir / "out").string()},
                            out, err);
  REQUIRE(code == 0);

  const auto summarized = backend::load_traces((dir / "out" / "summarized.jsonl").string());
  CHECK(summarized.size() == 3);
  for (const auto& r : summarized) {
    CHECK(r.trajectory_tokens.size() < source.trajectory_tokens.size());
    CHECK_FALSE(r.contaminated);
  }

  // Summarization prompts never carry the gold answer.
  int summarizer_requests = 0;
  for (const auto& body : server.requests) {
    const json req = json::parse(body);
    const std::string prompt = req["prompt"].get<std::string>();
    if (prompt.find("Short summary:") != std::string::npos) {
      ++summarizer_requests;
      CHECK(prompt.find("413") == std::string::npos);
    }
  }
  CHECK(summarizer_requests == 3);

  std::ifstream table(dir / "out" / "long2short.table.csv");
  std::string header;
  std::getline(table, header);
  CHECK(header == "source_id,repeat,source_tokens,summary_tokens,contaminated");

  // The generated responses feed straight into the metrics command.
  std::ostringstream mout;
  std::ostringstream merr;
  const int mcode = cli::run({"metrics", "--input", (dir / "out" / "responses.jsonl").string(),
                              "--k", "2", "--metric", "pass"},
                             mout, merr);
  CHECK(mcode == 0);
  CHECK(mout.str().find("1.000000") != std::string::npos);
}

#include "raml/traces.hpp"

#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace raml::backend {

using nlohmann::json;

void TraceRecord::validate() const {
  if (id.empty()) {
    throw ValidationError("trace record: empty id");
  }
  const int traj_len = static_cast<int>(trajectory_tokens.size());
  std::size_t logprob_len = 0;
  bool first = true;
  for (std::size_t k = 0; k < prefix_scores.size(); ++k) {
    const auto& ps = prefix_scores[k];
    if (ps.prefix_index < 0 || ps.prefix_index > traj_len) {
      std::ostringstream msg;
      msg << "trace record '" << id << "': prefix_scores[" << k << "].prefix_index "
          << ps.prefix_index << " out of range [0, " << traj_len << "]";
      throw ValidationError(msg.str());
    }
    if (first) {
      logprob_len = ps.answer_logprobs.size();
      first = false;
    } else if (ps.answer_logprobs.size() != logprob_len) {
      std::ostringstream msg;
      msg << "trace record '" << id << "': prefix_scores[" << k
          << "].answer_logprobs length differs from earlier entries";
      throw ValidationError(msg.str());
    }
  }
}

namespace {

json record_to_json(const TraceRecord& r) {
  json j;
  j["id"] = r.id;
  j["instruction"] = r.instruction;
  j["question"] = r.question;
  j["gold_answer"] = r.gold_answer;
  j["trajectory_tokens"] = r.trajectory_tokens;
  if (!r.prefix_scores.empty()) {
    json scores = json::array();
    for (const auto& ps : r.prefix_scores) {
      scores.push_back({{"prefix_index", ps.prefix_index},
                        {"answer_logprobs", ps.answer_logprobs}});
    }
    j["prefix_scores"] = std::move(scores);
  }
  if (r.provenance) {
    j["provenance"] = {{"source_id", r.provenance->source_id},
                       {"repeat", r.provenance->repeat},
                       {"source_token_count", r.provenance->source_token_count}};
  }
  if (r.contaminated) {
    j["contaminated"] = true;
  }
  return j;
}

template <typename T>
T require_field(const json& j, const char* key) {
  if (!j.contains(key)) {
    throw ValidationError(std::string("missing field '") + key + "'");
  }
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ValidationError(std::string("field '") + key + "' has the wrong type");
  }
}

TraceRecord record_from_json(const json& j) {
  if (!j.is_object()) {
    throw ValidationError("record is not a JSON object");
  }
  TraceRecord r;
  r.id = require_field<std::string>(j, "id");
  r.instruction = require_field<std::string>(j, "instruction");
  r.question = require_field<std::string>(j, "question");
  r.gold_answer = require_field<std::string>(j, "gold_answer");
  r.trajectory_tokens = require_field<std::vector<std::string>>(j, "trajectory_tokens");
  if (j.contains("prefix_scores")) {
    if (!j["prefix_scores"].is_array()) {
      throw ValidationError("field 'prefix_scores' must be an array");
    }
    for (const auto& e : j["prefix_scores"]) {
      PrefixScore ps;
      ps.prefix_index = require_field<int>(e, "prefix_index");
      ps.answer_logprobs = require_field<std::vector<double>>(e, "answer_logprobs");
      r.prefix_scores.push_back(std::move(ps));
    }
  }
  if (j.contains("provenance")) {
    const auto& p = j["provenance"];
    Provenance prov;
    prov.source_id = require_field<std::string>(p, "source_id");
    prov.repeat = require_field<int>(p, "repeat");
    prov.source_token_count = p.value("source_token_count", 0);
    r.provenance = prov;
  }
  r.contaminated = j.value("contaminated", false);
  r.validate();
  return r;
}

}  // namespace

std::string trace_to_json_line(const TraceRecord& record) { return record_to_json(record).dump(); }

TraceRecord trace_from_json_line(const std::string& line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("invalid JSON: ") + e.what());
  }
  return record_from_json(j);
}

std::vector<TraceRecord> load_traces(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw ValidationError("cannot open trace file: " + path);
  }
  std::vector<TraceRecord> records;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line.find_first_not_of(" \t\r") == std::string::npos) {
      continue;
    }
    try {
      records.push_back(trace_from_json_line(line));
    } catch (const ValidationError& e) {
      throw ValidationError(path + ": line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return records;
}

void save_traces(const std::vector<TraceRecord>& records, const std::string& path) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) {
      throw ValidationError("cannot write trace file: " + path);
    }
    for (const auto& r : records) {
      r.validate();
      out << trace_to_json_line(r) << "\n";
    }
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace raml::backend

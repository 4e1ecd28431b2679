#pragma once

#include <optional>
#include <string>
#include <vector>

#include "raml/common.hpp"

namespace raml::backend {

// Externally computed answer log-probabilities for one trajectory prefix.
struct PrefixScore {
  int prefix_index = 0;
  std::vector<double> answer_logprobs;
};

struct Provenance {
  std::string source_id;
  int repeat = 0;
  int source_token_count = 0;
};

struct TraceRecord {
  std::string id;
  std::string instruction;
  std::string question;
  std::string gold_answer;
  std::vector<std::string> trajectory_tokens;
  std::vector<PrefixScore> prefix_scores;  // empty when absent
  std::optional<Provenance> provenance;
  bool contaminated = false;

  void validate() const;  // throws ValidationError
};

// JSONL round trip. Loading validates every record and reports failures with
// the offending line number; saving is atomic (temp file + rename).
std::vector<TraceRecord> load_traces(const std::string& path);
void save_traces(const std::vector<TraceRecord>& records, const std::string& path);

std::string trace_to_json_line(const TraceRecord& record);
TraceRecord trace_from_json_line(const std::string& line);

}  // namespace raml::backend

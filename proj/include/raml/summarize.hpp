#pragma once

#include <string>
#include <vector>

#include "raml/remote.hpp"
#include "raml/traces.hpp"

namespace raml::summarize {

inline constexpr const char* kPromptVersion = "v1";

struct SummarizationJob {
  std::vector<std::string> source_ids;  // empty selects every source trace
  remote::RemoteConfig summarizer_model;
  remote::RemoteConfig target_model;
  bool exclude_answer = true;  // gold answers never reach the summarizer
  int repeats = 1;

  void validate() const;
};

// Prompt sent to the summarizer. Contains the question and the trajectory
// text, never the gold answer.
std::string summarizer_prompt(const backend::TraceRecord& source);

// Prompt used to elicit an answer from the target model given a (summarized)
// trajectory.
std::string answer_prompt(const backend::TraceRecord& record);

// One summarized trace per (selected source, repeat). Summaries that quote
// the gold answer verbatim are flagged contaminated; callers exclude them
// from downstream scoring by default.
std::vector<backend::TraceRecord> run_summarization(
    const SummarizationJob& job, const std::vector<backend::TraceRecord>& sources,
    const remote::TextGenerator& summarizer);

}  // namespace raml::summarize

#include "raml/summarize.hpp"

#include <algorithm>

#include "raml/backend.hpp"

namespace raml::summarize {

void SummarizationJob::validate() const {
  if (repeats < 1) {
    throw ValidationError("summarization job: repeats must be >= 1");
  }
  if (!exclude_answer) {
    throw ValidationError("summarization job: exclude_answer must stay enabled");
  }
}

std::string summarizer_prompt(const backend::TraceRecord& source) {
  // Template v1. The gold answer is deliberately absent.
  std::string prompt;
  prompt += "Condense the reasoning below into a much shorter version that keeps the ";
  prompt += "essential steps.\n";
  prompt += "Do not state, hint at, or reveal any final answer.\n\n";
  prompt += "Problem:\n";
  prompt += source.question;
  prompt += "\n\nReasoning:\n";
  prompt += backend::detokenize(source.trajectory_tokens);
  prompt += "\n\nShort summary:";
  return prompt;
}

std::string answer_prompt(const backend::TraceRecord& record) {
  std::string prompt;
  if (!record.instruction.empty()) {
    prompt += record.instruction;
    prompt += "\n\n";
  }
  prompt += record.question;
  prompt += "\n\n";
  prompt += backend::detokenize(record.trajectory_tokens);
  prompt += "\n\n**Final Answer**\n";
  return prompt;
}

std::vector<backend::TraceRecord> run_summarization(
    const SummarizationJob& job, const std::vector<backend::TraceRecord>& sources,
    const remote::TextGenerator& summarizer) {
  job.validate();

  std::vector<const backend::TraceRecord*> selected;
  if (job.source_ids.empty()) {
    for (const auto& s : sources) {
      selected.push_back(&s);
    }
  } else {
    for (const auto& id : job.source_ids) {
      const auto it = std::find_if(sources.begin(), sources.end(),
                                   [&](const backend::TraceRecord& r) { return r.id == id; });
      if (it == sources.end()) {
        throw ValidationError("summarization: unknown source trace '" + id + "'");
      }
      selected.push_back(&*it);
    }
  }

  std::vector<backend::TraceRecord> out;
  out.reserve(selected.size() * static_cast<std::size_t>(job.repeats));
  for (const auto* source : selected) {
    const std::string prompt = summarizer_prompt(*source);
    for (int repeat = 0; repeat < job.repeats; ++repeat) {
      const std::string summary = summarizer.generate(prompt);
      backend::TraceRecord record;
      record.id = source->id + "/summary-" + std::to_string(repeat);
      record.instruction = source->instruction;
      record.question = source->question;
      record.gold_answer = source->gold_answer;
      record.trajectory_tokens = backend::tokenize(summary);
      record.provenance = backend::Provenance{
          source->id, repeat, static_cast<int>(source->trajectory_tokens.size())};
      record.contaminated =
          !source->gold_answer.empty() && summary.find(source->gold_answer) != std::string::npos;
      out.push_back(std::move(record));
    }
  }
  return out;
}

}  // namespace raml::summarize

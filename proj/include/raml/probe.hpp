#pragma once

#include <string>
#include <vector>

#include "raml/backend.hpp"
#include "raml/common.hpp"
#include "raml/traces.hpp"

namespace raml::probe {

using backend::TokenList;

// The exact probe suffix appended behind a trajectory prefix when measuring
// answer confidence.
std::string answer_probe_text(const std::string& gold_answer);

struct PromptBundle {
  std::string id;
  TokenList instruction;
  TokenList question;
  TokenList trajectory;
  TokenList answer_probe;
  std::string answer_probe_text;
  std::string gold_answer;

  static PromptBundle from_trace(const backend::TraceRecord& record);
  // Content fingerprint used as the bundle reference in grids and manifests.
  std::string digest() const;
};

struct ProbePoint {
  int prefix_index = 0;
  double lhat = 0.0;  // negative log-probability of the answer probe
};

struct ProbeCurve {
  std::vector<ProbePoint> points;
  int stride = 1;
  bool normalized = false;  // x axis rescaled to [0,1] in plots
};

// Scores the answer probe behind every stride-th trajectory prefix, always
// including the empty prefix and the full trajectory. Points are ordered by
// prefix index regardless of worker scheduling.
ProbeCurve probe_trajectory(const PromptBundle& bundle, const backend::ScoringBackend& scorer,
                            int stride, int jobs = 1);

struct TokenChange {
  std::string token;
  int prefix_index = 0;  // curve position after including this token
  double delta = 0.0;
  double relative_delta = 0.0;
  bool flagged = false;
};

struct TokenChangeReport {
  std::vector<TokenChange> entries;
  double threshold = 0.0;
};

inline constexpr double kDefaultReflectionThreshold = 0.3;

// Per-token relative change of the curve; requires stride 1. The change at
// position i is (lhat_i - lhat_{i-1}) / max(|lhat_{i-1}|, 1e-12).
TokenChangeReport reflection_report(const ProbeCurve& curve, const TokenList& tokens,
                                    double threshold);

enum class ForcedMode {
  end_of_thinking,  // delimiter inserted right after the thinking-start marker
  budget_forcing,   // trajectory truncated to a budget, delimiter appended
};

struct ForcedProbeOptions {
  ForcedMode mode = ForcedMode::budget_forcing;
  int budget = 0;                                // budget_forcing only
  std::string thinking_start_marker = "<think>";  // end_of_thinking only
};

// The bundle actually probed in a forced mode: delimiter inserted or
// trajectory truncated-and-suffixed according to the options.
PromptBundle apply_forcing(const PromptBundle& bundle, const TokenList& delimiter,
                           const ForcedProbeOptions& options);

ProbeCurve forced_probe(const PromptBundle& bundle, const backend::ScoringBackend& scorer,
                        const TokenList& delimiter, const ForcedProbeOptions& options,
                        int stride = 1, int jobs = 1);

// Exports.
std::string curve_to_csv(const ProbeCurve& curve);
std::string curve_to_json(const ProbeCurve& curve);
ProbeCurve curve_from_json(const std::string& text);
std::string report_to_json(const TokenChangeReport& report);

}  // namespace raml::probe

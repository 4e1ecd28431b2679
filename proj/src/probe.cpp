#include "raml/probe.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "raml/parallel.hpp"

namespace raml::probe {

using nlohmann::json;

std::string answer_probe_text(const std::string& gold_answer) {
  return "Final Answer\n\\boxed{" + gold_answer + "}";
}

PromptBundle PromptBundle::from_trace(const backend::TraceRecord& record) {
  PromptBundle b;
  b.id = record.id;
  b.instruction = backend::tokenize(record.instruction);
  b.question = backend::tokenize(record.question);
  b.trajectory = record.trajectory_tokens;
  b.gold_answer = record.gold_answer;
  b.answer_probe_text = probe::answer_probe_text(record.gold_answer);
  b.answer_probe = backend::tokenize(b.answer_probe_text);
  return b;
}

std::string PromptBundle::digest() const {
  std::string blob = id;
  blob.push_back('\x1f');
  for (const auto& part : {instruction, question, trajectory, answer_probe}) {
    for (const auto& t : part) {
      blob += t;
      blob.push_back('\x1e');
    }
    blob.push_back('\x1f');
  }
  blob += gold_answer;
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a64(blob)));
  return buf;
}

namespace {

std::vector<int> prefix_indices(int traj_len, int stride) {
  std::vector<int> idx;
  for (int i = 0; i < traj_len; i += stride) {
    idx.push_back(i);
  }
  idx.push_back(traj_len);
  return idx;
}

double lhat_at_prefix(const PromptBundle& bundle, const backend::ScoringBackend& scorer,
                      int prefix_len) {
  TokenList prefix = bundle.instruction;
  prefix.insert(prefix.end(), bundle.question.begin(), bundle.question.end());
  prefix.insert(prefix.end(), bundle.trajectory.begin(),
                bundle.trajectory.begin() + prefix_len);
  std::vector<double> logprobs;
  try {
    logprobs = scorer.score_sequence(prefix, bundle.answer_probe);
  } catch (const TransportError& e) {
    throw TransportError("probe: prefix " + std::to_string(prefix_len) + ": " + e.what());
  } catch (const Error& e) {
    throw ValidationError("probe: prefix " + std::to_string(prefix_len) + ": " + e.what());
  }
  double sum = 0.0;
  for (double lp : logprobs) {
    sum += lp;
  }
  double lhat = -sum;
  if (!std::isfinite(lhat)) {
    throw NumericError("probe: non-finite score at prefix " + std::to_string(prefix_len));
  }
  if (lhat < 0.0) {
    if (lhat > -1e-9) {
      lhat = 0.0;  // rounding guard
    } else {
      throw NumericError("probe: backend returned positive log-probabilities at prefix " +
                         std::to_string(prefix_len));
    }
  }
  return lhat;
}

}  // namespace

ProbeCurve probe_trajectory(const PromptBundle& bundle, const backend::ScoringBackend& scorer,
                            int stride, int jobs) {
  if (stride < 1) {
    throw BoundsError("probe: stride must be >= 1");
  }
  if (bundle.answer_probe.empty()) {
    throw ValidationError("probe: empty answer probe");
  }
  const auto indices = prefix_indices(static_cast<int>(bundle.trajectory.size()), stride);
  ProbeCurve curve;
  curve.stride = stride;
  curve.points.resize(indices.size());
  parallel_for(static_cast<int>(indices.size()), jobs, [&](int k) {
    curve.points[k] = ProbePoint{indices[k], lhat_at_prefix(bundle, scorer, indices[k])};
  });
  return curve;
}

TokenChangeReport reflection_report(const ProbeCurve& curve, const TokenList& tokens,
                                    double threshold) {
  if (curve.stride != 1) {
    throw ValidationError("reflection_report: per-token resolution required (stride 1)");
  }
  if (curve.points.size() != tokens.size() + 1) {
    throw ShapeError("reflection_report: tokens do not align with the curve");
  }
  TokenChangeReport report;
  report.threshold = threshold;
  report.entries.reserve(tokens.size());
  for (std::size_t j = 0; j < tokens.size(); ++j) {
    const double prev = curve.points[j].lhat;
    const double cur = curve.points[j + 1].lhat;
    TokenChange tc;
    tc.token = tokens[j];
    tc.prefix_index = curve.points[j + 1].prefix_index;
    tc.delta = cur - prev;
    tc.relative_delta = tc.delta / std::max(std::abs(prev), 1e-12);
    tc.flagged = std::abs(tc.relative_delta) >= threshold;
    report.entries.push_back(std::move(tc));
  }
  return report;
}

PromptBundle apply_forcing(const PromptBundle& bundle, const TokenList& delimiter,
                           const ForcedProbeOptions& options) {
  PromptBundle forced = bundle;
  switch (options.mode) {
    case ForcedMode::end_of_thinking: {
      TokenList traj;
      std::size_t insert_at = 0;
      if (!bundle.trajectory.empty() && bundle.trajectory[0] == options.thinking_start_marker) {
        insert_at = 1;
      }
      traj.insert(traj.end(), bundle.trajectory.begin(), bundle.trajectory.begin() + insert_at);
      traj.insert(traj.end(), delimiter.begin(), delimiter.end());
      traj.insert(traj.end(), bundle.trajectory.begin() + insert_at, bundle.trajectory.end());
      forced.trajectory = std::move(traj);
      break;
    }
    case ForcedMode::budget_forcing: {
      if (options.budget < 0) {
        throw BoundsError("forced_probe: budget must be >= 0");
      }
      // A budget beyond the trajectory length means no truncation.
      const std::size_t keep =
          std::min<std::size_t>(static_cast<std::size_t>(options.budget),
                                bundle.trajectory.size());
      TokenList traj(bundle.trajectory.begin(), bundle.trajectory.begin() + keep);
      traj.insert(traj.end(), delimiter.begin(), delimiter.end());
      forced.trajectory = std::move(traj);
      break;
    }
  }
  return forced;
}

ProbeCurve forced_probe(const PromptBundle& bundle, const backend::ScoringBackend& scorer,
                        const TokenList& delimiter, const ForcedProbeOptions& options, int stride,
                        int jobs) {
  return probe_trajectory(apply_forcing(bundle, delimiter, options), scorer, stride, jobs);
}

std::string curve_to_csv(const ProbeCurve& curve) {
  std::ostringstream out;
  out << "prefix_index,lhat\n";
  char buf[40];
  for (const auto& p : curve.points) {
    std::snprintf(buf, sizeof(buf), "%.17g", p.lhat);
    out << p.prefix_index << "," << buf << "\n";
  }
  return out.str();
}

std::string curve_to_json(const ProbeCurve& curve) {
  json j;
  j["type"] = "probe_curve";
  j["stride"] = curve.stride;
  j["normalized"] = curve.normalized;
  json pts = json::array();
  for (const auto& p : curve.points) {
    pts.push_back({{"prefix_index", p.prefix_index}, {"lhat", p.lhat}});
  }
  j["points"] = std::move(pts);
  return j.dump(2);
}

ProbeCurve curve_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("probe curve: invalid JSON: ") + e.what());
  }
  if (!j.contains("points") || !j["points"].is_array()) {
    throw ValidationError("probe curve: missing 'points' array");
  }
  ProbeCurve curve;
  curve.stride = j.value("stride", 1);
  curve.normalized = j.value("normalized", false);
  for (const auto& p : j["points"]) {
    if (!p.contains("prefix_index") || !p.contains("lhat")) {
      throw ValidationError("probe curve: point missing 'prefix_index' or 'lhat'");
    }
    curve.points.push_back({p["prefix_index"].get<int>(), p["lhat"].get<double>()});
  }
  return curve;
}

std::string report_to_json(const TokenChangeReport& report) {
  json j;
  j["type"] = "token_change_report";
  j["threshold"] = report.threshold;
  json entries = json::array();
  for (const auto& e : report.entries) {
    entries.push_back({{"token", e.token},
                       {"prefix_index", e.prefix_index},
                       {"delta", e.delta},
                       {"relative_delta", e.relative_delta},
                       {"flagged", e.flagged}});
  }
  j["entries"] = std::move(entries);
  return j.dump(2);
}

}  // namespace raml::probe

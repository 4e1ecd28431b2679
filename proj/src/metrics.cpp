#include "raml/metrics.hpp"

#include <json.hpp>

#include <cctype>
#include <fstream>
#include <sstream>

namespace raml::metrics {

using nlohmann::json;

void OutcomeTally::validate() const {
  if (n < 1) {
    throw ValidationError("tally '" + question_id + "': n must be >= 1");
  }
  if (c < 0 || c > n) {
    throw ValidationError("tally '" + question_id + "': c must lie in [0, n]");
  }
}

BigInt binomial(int n, int k) {
  if (k < 0 || n < 0 || k > n) {
    return 0;
  }
  if (k > n - k) {
    k = n - k;
  }
  BigInt result = 1;
  for (int i = 1; i <= k; ++i) {
    result *= n - k + i;
    result /= i;
  }
  return result;
}

namespace {

void check_bounds(const OutcomeTally& t, int k) {
  t.validate();
  if (k < 1) {
    throw BoundsError("metrics: k must be >= 1");
  }
  if (k > t.n) {
    std::ostringstream msg;
    msg << "metrics: k=" << k << " exceeds n=" << t.n << " for tally '" << t.question_id << "'";
    throw BoundsError(msg.str());
  }
}

}  // namespace

Rational pass_at_k_exact(const std::vector<OutcomeTally>& tallies, int k) {
  if (tallies.empty()) {
    throw ValidationError("metrics: no tallies");
  }
  Rational sum = 0;
  for (const auto& t : tallies) {
    check_bounds(t, k);
    sum += 1 - Rational(binomial(t.n - t.c, k), binomial(t.n, k));
  }
  return sum / static_cast<int>(tallies.size());
}

double pass_at_k(const std::vector<OutcomeTally>& tallies, int k) {
  return pass_at_k_exact(tallies, k).convert_to<double>();
}

Rational mg_pass_at_k_exact(const std::vector<OutcomeTally>& tallies, int k) {
  if (tallies.empty()) {
    throw ValidationError("metrics: no tallies");
  }
  Rational sum = 0;
  for (const auto& t : tallies) {
    check_bounds(t, k);
    const BigInt denom = binomial(t.n, k);
    BigInt numer = 0;
    const int i_lo = (k + 1) / 2 + 1;  // ceil(k/2) + 1
    for (int i = i_lo; i <= k; ++i) {
      for (int j = i; j <= t.c; ++j) {
        numer += binomial(t.c, j) * binomial(t.n - t.c, k - j);
      }
    }
    sum += Rational(2 * numer, k * denom);
  }
  return sum / static_cast<int>(tallies.size());
}

double mg_pass_at_k(const std::vector<OutcomeTally>& tallies, int k) {
  return mg_pass_at_k_exact(tallies, k).convert_to<double>();
}

// ---------------------------- format / answers ----------------------------

namespace {

constexpr const char* kTags[] = {"<think>", "</think>", "<conclusion>", "</conclusion>"};

bool contains_any_tag(const std::string& s) {
  for (const char* tag : kTags) {
    if (s.find(tag) != std::string::npos) {
      return true;
    }
  }
  return false;
}

bool all_whitespace(const std::string& s) {
  for (char ch : s) {
    if (!std::isspace(static_cast<unsigned char>(ch))) {
      return false;
    }
  }
  return true;
}

// Returns the content between `open` (at position `from` after whitespace) and
// the matching `close`, or nullopt when the structure is off.
std::optional<std::string> take_block(const std::string& s, std::size_t& pos,
                                      const std::string& open, const std::string& close) {
  while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) {
    ++pos;
  }
  if (s.compare(pos, open.size(), open) != 0) {
    return std::nullopt;
  }
  pos += open.size();
  const std::size_t end = s.find(close, pos);
  if (end == std::string::npos) {
    return std::nullopt;
  }
  std::string body = s.substr(pos, end - pos);
  pos = end + close.size();
  return body;
}

}  // namespace

bool check_format(const std::string& response) {
  std::size_t pos = 0;
  const auto think = take_block(response, pos, "<think>", "</think>");
  if (!think || contains_any_tag(*think)) {
    return false;
  }
  const auto conclusion = take_block(response, pos, "<conclusion>", "</conclusion>");
  if (!conclusion || contains_any_tag(*conclusion)) {
    return false;
  }
  if (!extract_boxed(*conclusion)) {
    return false;
  }
  return all_whitespace(response.substr(pos));
}

std::optional<std::string> extract_boxed(const std::string& text) {
  static const std::string kMarker = "\\boxed{";
  std::optional<std::string> last;
  std::size_t pos = 0;
  while (true) {
    const std::size_t at = text.find(kMarker, pos);
    if (at == std::string::npos) {
      break;
    }
    std::size_t i = at + kMarker.size();
    int depth = 1;
    const std::size_t start = i;
    while (i < text.size() && depth > 0) {
      if (text[i] == '{') {
        ++depth;
      } else if (text[i] == '}') {
        --depth;
      }
      ++i;
    }
    if (depth == 0) {
      last = text.substr(start, i - 1 - start);
      pos = i;
    } else {
      break;  // unbalanced, ignore this and any later occurrence
    }
  }
  return last;
}

std::string normalize_answer(const std::string& answer) {
  // Trim and collapse runs of whitespace.
  std::string collapsed;
  bool in_space = false;
  for (char ch : answer) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      in_space = true;
      continue;
    }
    if (in_space && !collapsed.empty()) {
      collapsed.push_back(' ');
    }
    in_space = false;
    collapsed.push_back(ch);
  }
  // Strip leading zeros on pure integers, keeping a single final zero.
  if (!collapsed.empty()) {
    bool digits = true;
    for (char ch : collapsed) {
      if (!std::isdigit(static_cast<unsigned char>(ch))) {
        digits = false;
        break;
      }
    }
    if (digits) {
      std::size_t first = collapsed.find_first_not_of('0');
      if (first == std::string::npos) {
        return "0";
      }
      return collapsed.substr(first);
    }
  }
  return collapsed;
}

bool NormalizedStringVerifier::equivalent(const std::string& candidate,
                                          const std::string& gold) const {
  return normalize_answer(candidate) == normalize_answer(gold);
}

bool match_answer(const std::string& response, const std::string& gold,
                  const AnswerVerifier& verifier) {
  const auto boxed = extract_boxed(response);
  if (!boxed) {
    return false;
  }
  return verifier.equivalent(*boxed, gold);
}

bool match_answer(const std::string& response, const std::string& gold) {
  return match_answer(response, gold, NormalizedStringVerifier{});
}

RewardVerdict grpo_reward(const std::string& response, const std::string& gold) {
  RewardVerdict verdict;
  verdict.answer_matched = match_answer(response, gold);
  verdict.format_ok = check_format(response);
  if (verdict.answer_matched) {
    verdict.score = verdict.format_ok ? 1.0 : -0.5;
  } else {
    verdict.score = verdict.format_ok ? 0.0 : -1.0;
  }
  return verdict;
}

// ---------------------------- tally io ----------------------------

OutcomeTally tally_from_json_line(const std::string& line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("invalid JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("question_id")) {
    throw ValidationError("missing field 'question_id'");
  }
  OutcomeTally t;
  t.question_id = j["question_id"].get<std::string>();
  if (j.contains("n") && j.contains("c")) {
    t.n = j["n"].get<int>();
    t.c = j["c"].get<int>();
  } else if (j.contains("responses")) {
    const auto& responses = j["responses"];
    if (!responses.is_array()) {
      throw ValidationError("field 'responses' must be an array");
    }
    const std::string gold = j.value("gold_answer", std::string());
    t.n = static_cast<int>(responses.size());
    for (const auto& r : responses) {
      bool correct = false;
      if (r.contains("correct")) {
        correct = r["correct"].get<bool>();
      } else if (!gold.empty() && r.contains("text")) {
        correct = match_answer(r["text"].get<std::string>(), gold);
      } else {
        throw ValidationError("response lacks 'correct' and no 'gold_answer' is given");
      }
      t.c += correct ? 1 : 0;
    }
  } else {
    throw ValidationError("expected either 'n'/'c' or 'responses'");
  }
  t.validate();
  return t;
}

std::vector<OutcomeTally> load_tallies(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw ValidationError("cannot open tally file: " + path);
  }
  std::vector<OutcomeTally> tallies;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line.find_first_not_of(" \t\r") == std::string::npos) {
      continue;
    }
    try {
      tallies.push_back(tally_from_json_line(line));
    } catch (const ValidationError& e) {
      throw ValidationError(path + ": line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return tallies;
}

}  // namespace raml::metrics

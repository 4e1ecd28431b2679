#pragma once

#include <boost/multiprecision/cpp_int.hpp>

#include <optional>
#include <string>
#include <vector>

#include "raml/common.hpp"

namespace raml::metrics {

using BigInt = boost::multiprecision::cpp_int;
using Rational = boost::multiprecision::cpp_rational;

struct OutcomeTally {
  std::string question_id;
  int n = 0;  // responses generated
  int c = 0;  // responses correct

  void validate() const;  // enforces 1 <= n and 0 <= c <= n
};

// C(n, k) in exact integer arithmetic; zero outside 0 <= k <= n.
BigInt binomial(int n, int k);

// Mean over questions of 1 - C(n-c, k) / C(n, k).
Rational pass_at_k_exact(const std::vector<OutcomeTally>& tallies, int k);
double pass_at_k(const std::vector<OutcomeTally>& tallies, int k);

// Mean over questions of (2/k) * sum_{i=ceil(k/2)+1}^{k} sum_{j=i}^{c}
// C(c,j) C(n-c,k-j) / C(n,k).
Rational mg_pass_at_k_exact(const std::vector<OutcomeTally>& tallies, int k);
double mg_pass_at_k(const std::vector<OutcomeTally>& tallies, int k);

// True iff the response is optional whitespace, a single <think>...</think>
// block, then a single <conclusion>...</conclusion> block containing
// \boxed{...}, and optional trailing whitespace. Tags must not nest.
bool check_format(const std::string& response);

// Content of the last balanced \boxed{...} in the text, if any.
std::optional<std::string> extract_boxed(const std::string& text);

// Trim, collapse internal whitespace, strip leading zeros on pure integers.
std::string normalize_answer(const std::string& answer);

// Pluggable answer equivalence; the default compares normalized strings.
class AnswerVerifier {
 public:
  virtual ~AnswerVerifier() = default;
  virtual bool equivalent(const std::string& candidate, const std::string& gold) const = 0;
};

class NormalizedStringVerifier final : public AnswerVerifier {
 public:
  bool equivalent(const std::string& candidate, const std::string& gold) const override;
};

bool match_answer(const std::string& response, const std::string& gold);
bool match_answer(const std::string& response, const std::string& gold,
                  const AnswerVerifier& verifier);

struct RewardVerdict {
  double score = 0.0;  // one of {1.0, 0.0, -0.5, -1.0}
  bool answer_matched = false;
  bool format_ok = false;
};

RewardVerdict grpo_reward(const std::string& response, const std::string& gold);

// Tally file io: JSONL of either {"question_id", "n", "c"} or
// {"question_id", "gold_answer"?, "responses": [{"text", "correct"?}]}.
std::vector<OutcomeTally> load_tallies(const std::string& path);
OutcomeTally tally_from_json_line(const std::string& line);

}  // namespace raml::metrics

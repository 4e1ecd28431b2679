#pragma once

#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "raml/common.hpp"
#include "raml/microformer.hpp"
#include "raml/traces.hpp"

namespace raml::backend {

using TokenList = std::vector<std::string>;

struct Capabilities {
  bool scores_logprobs = true;
  bool perturbable = false;
};

// A scorer of token sequences. Implementations must be safe to share across
// concurrent callers.
class ScoringBackend {
 public:
  virtual ~ScoringBackend() = default;
  virtual Capabilities capabilities() const = 0;

  // Returns log p(target_j | prefix, target_<j) for each target token, in the
  // backend's own tokenization of the target. The prefix may be empty; the
  // target must not be.
  virtual std::vector<double> score_sequence(const TokenList& prefix,
                                             const TokenList& target) const = 0;
};

// A backend whose weights can be edited for a single call.
class PerturbableBackend : public ScoringBackend {
 public:
  virtual const micro::TransformerParams& params() const = 0;

  // Scores under params + delta without mutating the stored weights.
  virtual std::vector<double> perturb_and_score(const micro::ParamDelta& delta,
                                                const TokenList& prefix,
                                                const TokenList& target) const = 0;
};

// Whitespace tokenization, the toolkit's canonical split.
TokenList tokenize(const std::string& text);
std::string detokenize(const TokenList& tokens);

// Serialized model: weights plus the token embedding table and an optional
// explicit vocabulary. Stored as a single JSON document, row-major.
struct ModelFixture {
  micro::TransformerParams params;
  micro::Embeddings embeddings;        // vocab_size x d, row 0 doubles as BOS
  std::vector<std::string> vocab;      // empty => hash-derived token ids

  void validate() const;
};

ModelFixture load_model_fixture(const std::string& path);
void save_model_fixture(const ModelFixture& fixture, const std::string& path);
std::string model_fixture_to_json(const ModelFixture& fixture);
ModelFixture model_fixture_from_json(const std::string& text);

// Deterministic in-process scorer backed by the single-block model. Token ids
// come from the explicit vocabulary when present, otherwise from a 64-bit
// FNV-1a hash of the token text modulo the vocabulary size. Every sequence is
// scored with a beginning-of-sequence row (embedding row 0) prepended, so an
// empty prefix is well defined.
class LocalBackend final : public PerturbableBackend {
 public:
  explicit LocalBackend(ModelFixture fixture);
  LocalBackend(micro::TransformerParams params, micro::Embeddings embeddings,
               std::vector<std::string> vocab = {});
  static LocalBackend seeded(int dim, int vocab_size, std::uint64_t seed);

  Capabilities capabilities() const override { return {true, true}; }
  std::vector<double> score_sequence(const TokenList& prefix,
                                     const TokenList& target) const override;
  std::vector<double> perturb_and_score(const micro::ParamDelta& delta, const TokenList& prefix,
                                        const TokenList& target) const override;

  const micro::TransformerParams& params() const override { return fixture_.params; }
  const micro::Embeddings& embeddings() const { return fixture_.embeddings; }
  const ModelFixture& fixture() const { return fixture_; }
  int vocab_id(const std::string& token) const;

 private:
  std::vector<double> score_with(const micro::TransformerParams& theta, const TokenList& prefix,
                                 const TokenList& target) const;

  ModelFixture fixture_;
  std::unordered_map<std::string, int> vocab_index_;
};

// Serves stored per-prefix scores from a trace record. Only sequences of the
// form instruction + question + trajectory[:i] (with the record's answer probe
// as target) can be scored.
class TraceBackend final : public ScoringBackend {
 public:
  explicit TraceBackend(TraceRecord record);

  Capabilities capabilities() const override { return {true, false}; }
  std::vector<double> score_sequence(const TokenList& prefix,
                                     const TokenList& target) const override;

  const TraceRecord& record() const { return record_; }

 private:
  TraceRecord record_;
  TokenList base_;  // tokenized instruction + question
};

}  // namespace raml::backend

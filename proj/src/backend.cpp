#include "raml/backend.hpp"

#include <json.hpp>

#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "raml/rng.hpp"

namespace raml::backend {

using nlohmann::json;

TokenList tokenize(const std::string& text) {
  TokenList out;
  std::string cur;
  for (char ch : text) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!cur.empty()) {
        out.push_back(std::move(cur));
        cur.clear();
      }
    } else {
      cur.push_back(ch);
    }
  }
  if (!cur.empty()) {
    out.push_back(std::move(cur));
  }
  return out;
}

std::string detokenize(const TokenList& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i > 0) {
      out.push_back(' ');
    }
    out += tokens[i];
  }
  return out;
}

// ---------------------------- fixture io ----------------------------

void ModelFixture::validate() const {
  params.validate();
  if (embeddings.rows() < 1) {
    throw ValidationError("model fixture: embeddings need at least one row");
  }
  if (embeddings.cols() != params.dim()) {
    throw ValidationError("model fixture: embedding width must equal d");
  }
  if (!embeddings.allFinite()) {
    throw NumericError("model fixture: non-finite embeddings");
  }
  if (!vocab.empty() && static_cast<Eigen::Index>(vocab.size()) != embeddings.rows()) {
    throw ValidationError("model fixture: vocab size must match embedding rows");
  }
}

namespace {

json matrix_to_json(const micro::Matrix& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      row.push_back(m(i, j));
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

micro::Matrix matrix_from_json(const json& j, const char* name) {
  if (!j.is_array() || j.empty()) {
    throw ValidationError(std::string("model fixture: '") + name + "' must be a non-empty array");
  }
  const std::size_t rows = j.size();
  if (!j[0].is_array()) {
    throw ValidationError(std::string("model fixture: '") + name + "' must be a matrix");
  }
  const std::size_t cols = j[0].size();
  micro::Matrix m(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    if (!j[i].is_array() || j[i].size() != cols) {
      throw ValidationError(std::string("model fixture: ragged rows in '") + name + "'");
    }
    for (std::size_t k = 0; k < cols; ++k) {
      m(i, k) = j[i][k].get<double>();
    }
  }
  return m;
}

micro::Vector vector_from_json(const json& j, const char* name) {
  if (!j.is_array()) {
    throw ValidationError(std::string("model fixture: '") + name + "' must be an array");
  }
  micro::Vector v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) {
    v(i) = j[i].get<double>();
  }
  return v;
}

}  // namespace

std::string model_fixture_to_json(const ModelFixture& fixture) {
  fixture.validate();
  json j;
  j["d"] = fixture.params.dim();
  j["wq"] = matrix_to_json(fixture.params.wq);
  j["wk"] = matrix_to_json(fixture.params.wk);
  j["wv"] = matrix_to_json(fixture.params.wv);
  j["w1"] = matrix_to_json(fixture.params.w1);
  j["w2"] = matrix_to_json(fixture.params.w2);
  j["b1"] = json::array();
  j["b2"] = json::array();
  for (Eigen::Index i = 0; i < fixture.params.b1.size(); ++i) {
    j["b1"].push_back(fixture.params.b1(i));
    j["b2"].push_back(fixture.params.b2(i));
  }
  j["embeddings"] = matrix_to_json(fixture.embeddings);
  if (!fixture.vocab.empty()) {
    j["vocab"] = fixture.vocab;
  }
  return j.dump(2);
}

ModelFixture model_fixture_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("model fixture: invalid JSON: ") + e.what());
  }
  ModelFixture f;
  if (!j.contains("d")) {
    throw ValidationError("model fixture: missing field 'd'");
  }
  const int d = j["d"].get<int>();
  for (const char* key : {"wq", "wk", "wv", "w1", "w2", "b1", "b2", "embeddings"}) {
    if (!j.contains(key)) {
      throw ValidationError(std::string("model fixture: missing field '") + key + "'");
    }
  }
  f.params.wq = matrix_from_json(j["wq"], "wq");
  f.params.wk = matrix_from_json(j["wk"], "wk");
  f.params.wv = matrix_from_json(j["wv"], "wv");
  f.params.w1 = matrix_from_json(j["w1"], "w1");
  f.params.w2 = matrix_from_json(j["w2"], "w2");
  f.params.b1 = vector_from_json(j["b1"], "b1");
  f.params.b2 = vector_from_json(j["b2"], "b2");
  f.embeddings = matrix_from_json(j["embeddings"], "embeddings");
  if (j.contains("vocab")) {
    f.vocab = j["vocab"].get<std::vector<std::string>>();
  }
  if (f.params.dim() != d) {
    throw ValidationError("model fixture: 'd' disagrees with matrix shapes");
  }
  f.validate();
  return f;
}

ModelFixture load_model_fixture(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw ValidationError("cannot open model fixture: " + path);
  }
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return model_fixture_from_json(ss.str());
  } catch (const ValidationError& e) {
    throw ValidationError(path + ": " + e.what());
  }
}

void save_model_fixture(const ModelFixture& fixture, const std::string& path) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) {
      throw ValidationError("cannot write model fixture: " + path);
    }
    out << model_fixture_to_json(fixture) << "\n";
  }
  std::filesystem::rename(tmp, path);
}

// ---------------------------- local backend ----------------------------

LocalBackend::LocalBackend(ModelFixture fixture) : fixture_(std::move(fixture)) {
  fixture_.validate();
  for (std::size_t i = 0; i < fixture_.vocab.size(); ++i) {
    vocab_index_.emplace(fixture_.vocab[i], static_cast<int>(i));
  }
}

LocalBackend::LocalBackend(micro::TransformerParams params, micro::Embeddings embeddings,
                           std::vector<std::string> vocab)
    : LocalBackend(ModelFixture{std::move(params), std::move(embeddings), std::move(vocab)}) {}

LocalBackend LocalBackend::seeded(int dim, int vocab_size, std::uint64_t seed) {
  if (vocab_size < 1) {
    throw ValidationError("local backend: vocab size must be >= 1");
  }
  ModelFixture f;
  f.params = micro::TransformerParams::random(dim, seed);
  Rng rng(seed ^ 0x9e3779b97f4a7c15ull);
  f.embeddings.resize(vocab_size, dim);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dim));
  for (int i = 0; i < vocab_size; ++i) {
    for (int j = 0; j < dim; ++j) {
      f.embeddings(i, j) = scale * rng.gaussian();
    }
  }
  return LocalBackend(std::move(f));
}

int LocalBackend::vocab_id(const std::string& token) const {
  const auto it = vocab_index_.find(token);
  if (it != vocab_index_.end()) {
    return it->second;
  }
  return static_cast<int>(fnv1a64(token) % static_cast<std::uint64_t>(fixture_.embeddings.rows()));
}

std::vector<double> LocalBackend::score_with(const micro::TransformerParams& theta,
                                             const TokenList& prefix,
                                             const TokenList& target) const {
  if (target.empty()) {
    throw ValidationError("score_sequence: empty target");
  }
  const auto& emb = fixture_.embeddings;
  const int d = static_cast<int>(emb.cols());
  const int vocab = static_cast<int>(emb.rows());

  std::vector<int> ids;
  ids.reserve(prefix.size() + target.size() + 1);
  ids.push_back(0);  // BOS row
  for (const auto& t : prefix) {
    ids.push_back(vocab_id(t));
  }
  const std::size_t target_start = ids.size();
  for (const auto& t : target) {
    ids.push_back(vocab_id(t));
  }

  std::vector<double> out;
  out.reserve(target.size());
  for (std::size_t pos = target_start; pos < ids.size(); ++pos) {
    micro::Embeddings context(pos, d);
    for (std::size_t r = 0; r < pos; ++r) {
      context.row(r) = emb.row(ids[r]);
    }
    const micro::Vector act =
        micro::attention_forward(theta, context, emb.row(ids[pos - 1]));
    micro::Vector logits = emb * act;  // vocab x 1
    const double mx = logits.maxCoeff();
    double lse = 0.0;
    for (int v = 0; v < vocab; ++v) {
      lse += std::exp(logits(v) - mx);
    }
    out.push_back(logits(ids[pos]) - mx - std::log(lse));
  }
  return out;
}

std::vector<double> LocalBackend::score_sequence(const TokenList& prefix,
                                                 const TokenList& target) const {
  return score_with(fixture_.params, prefix, target);
}

std::vector<double> LocalBackend::perturb_and_score(const micro::ParamDelta& delta,
                                                    const TokenList& prefix,
                                                    const TokenList& target) const {
  const micro::TransformerParams perturbed = fixture_.params + delta;
  return score_with(perturbed, prefix, target);
}

// ---------------------------- trace backend ----------------------------

TraceBackend::TraceBackend(TraceRecord record) : record_(std::move(record)) {
  record_.validate();
  if (record_.prefix_scores.empty()) {
    throw ValidationError("trace backend: record '" + record_.id + "' carries no prefix_scores");
  }
  base_ = tokenize(record_.instruction);
  const TokenList q = tokenize(record_.question);
  base_.insert(base_.end(), q.begin(), q.end());
}

std::vector<double> TraceBackend::score_sequence(const TokenList& prefix,
                                                 const TokenList& target) const {
  if (target.empty()) {
    throw ValidationError("score_sequence: empty target");
  }
  if (prefix.size() < base_.size()) {
    throw ValidationError("trace backend: prefix shorter than instruction + question");
  }
  for (std::size_t i = 0; i < base_.size(); ++i) {
    if (prefix[i] != base_[i]) {
      throw ValidationError("trace backend: prefix does not start with instruction + question");
    }
  }
  const std::size_t traj_len = prefix.size() - base_.size();
  if (traj_len > record_.trajectory_tokens.size()) {
    throw ValidationError("trace backend: prefix extends past the stored trajectory");
  }
  for (std::size_t i = 0; i < traj_len; ++i) {
    if (prefix[base_.size() + i] != record_.trajectory_tokens[i]) {
      throw ValidationError("trace backend: prefix diverges from the stored trajectory at token " +
                            std::to_string(i));
    }
  }
  for (const auto& ps : record_.prefix_scores) {
    if (ps.prefix_index == static_cast<int>(traj_len)) {
      return ps.answer_logprobs;
    }
  }
  throw ValidationError("trace backend: no stored scores for prefix index " +
                        std::to_string(traj_len) + " in record '" + record_.id + "'");
}

}  // namespace raml::backend

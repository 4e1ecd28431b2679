#include "raml/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>

#include "raml/backend.hpp"
#include "raml/common.hpp"
#include "raml/landscape.hpp"
#include "raml/metrics.hpp"
#include "raml/microformer.hpp"
#include "raml/probe.hpp"
#include "raml/remote.hpp"
#include "raml/rng.hpp"
#include "raml/summarize.hpp"
#include "raml/svg.hpp"

namespace raml::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---------------------------- small helpers ----------------------------

void write_file_atomic(const fs::path& path, const std::string& content) {
  fs::create_directories(path.parent_path().empty() ? fs::path(".") : path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) {
      throw ValidationError("cannot write file: " + path.string());
    }
    out << content;
  }
  fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw ValidationError("cannot open file: " + path.string());
  }
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string iso_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string sanitize_id(const std::string& id) {
  std::string out;
  for (char c : id) {
    const bool ok = std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-' ||
                    c == '_';
    out.push_back(ok ? c : '_');
  }
  return out.empty() ? "record" : out;
}

std::string fmt6(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

struct RunContext {
  std::string subcommand;
  std::vector<std::string> argv;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::string config_blob;
  std::string started_at = iso_now();
};

std::string config_digest(const RunContext& ctx) {
  std::string blob;
  for (const auto& a : ctx.argv) {
    blob += a;
    blob.push_back('\x1f');
  }
  blob.push_back('\x1e');
  blob += ctx.config_blob;
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a64(blob)));
  return buf;
}

void write_manifest(const RunContext& ctx, const fs::path& out_dir) {
  json j;
  j["type"] = "run_manifest";
  j["subcommand"] = ctx.subcommand;
  j["argv"] = ctx.argv;
  j["config_digest"] = config_digest(ctx);
  j["seeds"] = ctx.seeds;
  j["tool_version"] = kToolVersion;
  j["started_at"] = ctx.started_at;
  j["finished_at"] = iso_now();
  j["inputs"] = ctx.inputs;
  j["outputs"] = ctx.outputs;
  write_file_atomic(out_dir / (ctx.subcommand + ".manifest.json"), j.dump(2) + "\n");
}

micro::Embeddings random_rows(int rows, int cols, Rng& rng) {
  micro::Embeddings e(rows, cols);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) {
      e(i, j) = rng.gaussian();
    }
  }
  return e;
}

// ---------------------------- backend wiring ----------------------------

struct BackendOptions {
  std::string kind = "local";  // local | trace | remote
  std::string fixture_path;
  int dim = 4;
  int vocab_size = 64;
  std::uint64_t seed = 7;
  std::string config_path = "raml.toml";
  std::string audit_path;
};

void add_backend_flags(CLI::App* cmd, BackendOptions& opts, bool allow_remote = true) {
  auto choices = allow_remote ? std::vector<std::string>{"local", "trace", "remote"}
                              : std::vector<std::string>{"local"};
  cmd->add_option("--backend", opts.kind, "scoring backend")
      ->check(CLI::IsMember(choices))
      ->capture_default_str();
  cmd->add_option("--fixture", opts.fixture_path, "model fixture JSON for the local backend");
  cmd->add_option("--dim", opts.dim, "embedding width of a seeded local backend")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  cmd->add_option("--vocab-size", opts.vocab_size, "vocabulary size of a seeded local backend")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  cmd->add_option("--seed", opts.seed, "seed of a seeded local backend")->capture_default_str();
  if (allow_remote) {
    cmd->add_option("--config", opts.config_path, "backend configuration file")
        ->capture_default_str();
    cmd->add_option("--audit", opts.audit_path, "append remote requests to this JSONL file");
  }
}

backend::LocalBackend make_local_backend(const BackendOptions& opts, RunContext& ctx) {
  if (!opts.fixture_path.empty()) {
    ctx.inputs.push_back(opts.fixture_path);
    return backend::LocalBackend(backend::load_model_fixture(opts.fixture_path));
  }
  ctx.seeds.push_back(opts.seed);
  return backend::LocalBackend::seeded(opts.dim, opts.vocab_size, opts.seed);
}

// ---------------------------- prop1-verify ----------------------------

struct Prop1Options {
  int dim = 8;
  int seq_len = 5;
  int trials = 100;
  std::uint64_t seed = 7;
  double tolerance = 1e-8;
  std::string fixture_path;
  std::string out_dir;
};

double equivalence_gap(const micro::TransformerParams& theta, const micro::Embeddings& ctx,
                       const micro::RowVector& token) {
  const auto built = micro::construct_updated_params(theta, ctx, token);
  const micro::Vector updated =
      micro::attention_forward(built.params, ctx, ctx.row(ctx.rows() - 1));
  micro::Embeddings aug(ctx.rows() + 1, ctx.cols());
  aug.topRows(ctx.rows()) = ctx;
  aug.row(ctx.rows()) = token;
  const micro::Vector reference = micro::attention_forward(theta, aug, token);
  return (updated - reference).cwiseAbs().maxCoeff();
}

int run_prop1(const Prop1Options& opts, RunContext& ctx, std::ostream& out) {
  ctx.seeds.push_back(opts.seed);
  std::optional<backend::ModelFixture> fixture;
  if (!opts.fixture_path.empty()) {
    fixture = backend::load_model_fixture(opts.fixture_path);
    ctx.inputs.push_back(opts.fixture_path);
    if (fixture->params.dim() != opts.dim) {
      throw ValidationError("prop1-verify: fixture dimension disagrees with --dim");
    }
  }

  json in_span = json::array();
  double max_gap = 0.0;
  bool all_pass = true;
  for (int t = 0; t < opts.trials; ++t) {
    const std::uint64_t trial_seed = opts.seed + 1000003ull * static_cast<std::uint64_t>(t);
    const micro::TransformerParams theta =
        fixture ? fixture->params : micro::TransformerParams::random(opts.dim, trial_seed);
    Rng rng(trial_seed ^ 0x9e3779b97f4a7c15ull);
    const micro::Embeddings context = random_rows(opts.seq_len, opts.dim, rng);
    micro::RowVector token = micro::RowVector::Zero(opts.dim);
    for (int r = 0; r < opts.seq_len; ++r) {
      token += rng.gaussian() * context.row(r);
    }
    const double gap = equivalence_gap(theta, context, token);
    max_gap = std::max(max_gap, gap);
    const bool pass = gap <= opts.tolerance;
    all_pass = all_pass && pass;
    in_span.push_back({{"trial", t}, {"discrepancy", gap}, {"pass", pass}});
  }

  json out_of_span = json::array();
  bool sweep_ok = true;
  const int sweep_trials = std::min(opts.trials, 10);
  for (int t = 0; t < sweep_trials; ++t) {
    const std::uint64_t trial_seed = opts.seed + 7777777ull * static_cast<std::uint64_t>(t + 1);
    const micro::TransformerParams theta =
        fixture ? fixture->params : micro::TransformerParams::random(opts.dim, trial_seed);
    Rng rng(trial_seed ^ 0x517cc1b727220a95ull);
    const micro::Embeddings context = random_rows(opts.seq_len, opts.dim, rng);
    micro::RowVector base = micro::RowVector::Zero(opts.dim);
    for (int r = 0; r < opts.seq_len; ++r) {
      base += rng.gaussian() * context.row(r);
    }
    micro::RowVector raw(opts.dim);
    for (int j = 0; j < opts.dim; ++j) {
      raw(j) = rng.gaussian();
    }
    const micro::Matrix pinv = micro::pseudoinverse(context);
    micro::RowVector ortho = raw - (raw * pinv) * context;
    if (ortho.norm() < 1e-10) {
      continue;  // context spans the whole space, nothing to sweep
    }
    ortho *= 0.5 / ortho.norm();

    json scales = json::array();
    json gaps = json::array();
    double prev = std::numeric_limits<double>::infinity();
    bool non_increasing = true;
    for (double scale : {1.0, 0.1, 0.01}) {
      const double gap = equivalence_gap(theta, context, micro::RowVector(base + scale * ortho));
      non_increasing = non_increasing && gap <= prev + 1e-12;
      prev = gap;
      scales.push_back(scale);
      gaps.push_back(gap);
    }
    sweep_ok = sweep_ok && non_increasing;
    out_of_span.push_back({{"trial", t},
                           {"scales", scales},
                           {"discrepancies", gaps},
                           {"non_increasing", non_increasing}});
  }

  json report;
  report["type"] = "prop1_report";
  report["dim"] = opts.dim;
  report["seq_len"] = opts.seq_len;
  report["trials"] = opts.trials;
  report["seed"] = opts.seed;
  report["tolerance"] = opts.tolerance;
  report["in_span"] = std::move(in_span);
  report["out_of_span"] = std::move(out_of_span);
  report["max_in_span_discrepancy"] = max_gap;
  report["all_in_span_pass"] = all_pass;
  report["sweep_non_increasing"] = sweep_ok;

  const std::string text = report.dump(2) + "\n";
  if (!opts.out_dir.empty()) {
    const fs::path dir(opts.out_dir);
    write_file_atomic(dir / "prop1_report.json", text);
    ctx.outputs.push_back((dir / "prop1_report.json").string());
    write_manifest(ctx, dir);
  } else {
    out << text;
  }
  out << "prop1-verify: " << (all_pass ? "PASS" : "FAIL") << " (" << opts.trials
      << " in-span trials, max discrepancy " << max_gap << ", sweep "
      << (sweep_ok ? "non-increasing" : "violated") << ")\n";
  return all_pass ? 0 : 1;
}

// ---------------------------- probe ----------------------------

struct ProbeOptions {
  BackendOptions backend;
  std::string traces_path;
  std::vector<std::string> ids;
  int stride = 1;
  int jobs = 1;
  bool normalized = false;
  bool reflect = false;
  double reflection_threshold = -1.0;  // < 0 disables the report
  std::string forced_mode = "none";    // none | end-of-thinking | budget
  int budget = 0;
  std::string delimiter;
  std::vector<std::string> formats = {"csv", "json", "svg"};
  std::string out_dir;
};

std::vector<backend::TraceRecord> select_records(const std::vector<backend::TraceRecord>& all,
                                                 const std::vector<std::string>& ids) {
  if (ids.empty()) {
    return all;
  }
  std::vector<backend::TraceRecord> out;
  for (const auto& id : ids) {
    const auto it = std::find_if(all.begin(), all.end(),
                                 [&](const backend::TraceRecord& r) { return r.id == id; });
    if (it == all.end()) {
      throw ValidationError("no trace with id '" + id + "'");
    }
    out.push_back(*it);
  }
  return out;
}

int run_probe(const ProbeOptions& opts, RunContext& ctx, std::ostream& out) {
  const auto records = backend::load_traces(opts.traces_path);
  ctx.inputs.push_back(opts.traces_path);
  const auto selected = select_records(records, opts.ids);
  if (selected.empty()) {
    throw ValidationError("probe: no trace records selected");
  }

  std::optional<backend::LocalBackend> local;
  std::optional<remote::RemoteBackend> remote_be;
  if (opts.backend.kind == "local") {
    local.emplace(make_local_backend(opts.backend, ctx));
  } else if (opts.backend.kind == "remote") {
    const remote::TomlTable table = remote::TomlTable::load(opts.backend.config_path);
    ctx.inputs.push_back(opts.backend.config_path);
    ctx.config_blob = read_file(opts.backend.config_path);
    remote_be.emplace(remote::RemoteConfig::from_toml(table, "remote"), opts.backend.audit_path);
  }

  const fs::path dir(opts.out_dir);
  const bool want_csv = std::count(opts.formats.begin(), opts.formats.end(), "csv") > 0;
  const bool want_json = std::count(opts.formats.begin(), opts.formats.end(), "json") > 0;
  const bool want_svg = std::count(opts.formats.begin(), opts.formats.end(), "svg") > 0;

  for (const auto& record : selected) {
    const auto bundle = probe::PromptBundle::from_trace(record);
    std::optional<backend::TraceBackend> trace_be;
    const backend::ScoringBackend* scorer = nullptr;
    if (local) {
      scorer = &*local;
    } else if (remote_be) {
      scorer = &*remote_be;
    } else {
      trace_be.emplace(record);
      scorer = &*trace_be;
    }

    probe::PromptBundle probed = bundle;
    if (opts.forced_mode != "none") {
      probe::ForcedProbeOptions fopts;
      backend::TokenList delimiter;
      if (opts.forced_mode == "end-of-thinking") {
        fopts.mode = probe::ForcedMode::end_of_thinking;
        delimiter = backend::tokenize(
            opts.delimiter.empty() ? "Therefore, after all this, I believe the answer is"
                                   : opts.delimiter);
      } else {
        fopts.mode = probe::ForcedMode::budget_forcing;
        fopts.budget = opts.budget;
        delimiter = backend::tokenize(opts.delimiter.empty() ? "**Final Answer**" : opts.delimiter);
      }
      probed = probe::apply_forcing(bundle, delimiter, fopts);
    }
    probe::ProbeCurve curve = probe::probe_trajectory(probed, *scorer, opts.stride, opts.jobs);
    curve.normalized = opts.normalized;

    const std::string base = sanitize_id(record.id);
    if (want_csv) {
      write_file_atomic(dir / (base + ".curve.csv"), probe::curve_to_csv(curve));
      ctx.outputs.push_back((dir / (base + ".curve.csv")).string());
    }
    if (want_json) {
      write_file_atomic(dir / (base + ".curve.json"), probe::curve_to_json(curve) + "\n");
      ctx.outputs.push_back((dir / (base + ".curve.json")).string());
    }
    if (want_svg) {
      write_file_atomic(dir / (base + ".curve.svg"),
                        svg::curve_chart(curve, "answer confidence: " + record.id));
      ctx.outputs.push_back((dir / (base + ".curve.svg")).string());
    }
    const double threshold = opts.reflection_threshold >= 0.0
                                 ? opts.reflection_threshold
                                 : (opts.reflect ? probe::kDefaultReflectionThreshold : -1.0);
    if (threshold >= 0.0) {
      const auto report = probe::reflection_report(curve, probed.trajectory, threshold);
      write_file_atomic(dir / (base + ".reflection.json"), probe::report_to_json(report) + "\n");
      ctx.outputs.push_back((dir / (base + ".reflection.json")).string());
    }
    out << "probe: " << record.id << ": " << curve.points.size() << " points\n";
  }
  write_manifest(ctx, dir);
  return 0;
}

// ---------------------------- landscape ----------------------------

struct LandscapeOptions {
  BackendOptions backend;
  std::string traces_path;
  std::string id;
  std::uint64_t direction_seed = 0;
  std::string normalization = "norm-matched";
  double grid_step = 0.1;
  int jobs = 1;
  std::vector<std::string> formats = {"csv", "json", "svg"};
  std::string out_dir;
};

int run_landscape(const LandscapeOptions& opts, RunContext& ctx, std::ostream& out) {
  const auto records = backend::load_traces(opts.traces_path);
  ctx.inputs.push_back(opts.traces_path);
  if (records.empty()) {
    throw ValidationError("landscape: trace file is empty");
  }
  const auto selected =
      opts.id.empty() ? records.front() : select_records(records, {opts.id}).front();

  const backend::LocalBackend local = make_local_backend(opts.backend, ctx);
  ctx.seeds.push_back(opts.direction_seed);

  const auto bundle = probe::PromptBundle::from_trace(selected);
  const auto normalization = opts.normalization == "none"
                                 ? landscape::Normalization::none
                                 : landscape::Normalization::norm_matched;
  const auto directions =
      landscape::sample_directions(local.params(), opts.direction_seed, normalization);
  const auto grid = landscape::sample_landscape(local.params(), bundle, directions,
                                                opts.grid_step, local, opts.jobs);
  for (const auto& w : grid.warnings) {
    out << "landscape: warning: " << w << "\n";
  }

  const fs::path dir(opts.out_dir);
  const std::string base = sanitize_id(selected.id);
  if (std::count(opts.formats.begin(), opts.formats.end(), "csv") > 0) {
    write_file_atomic(dir / (base + ".landscape.csv"), landscape::grid_to_csv(grid));
    ctx.outputs.push_back((dir / (base + ".landscape.csv")).string());
  }
  if (std::count(opts.formats.begin(), opts.formats.end(), "json") > 0) {
    write_file_atomic(dir / (base + ".landscape.json"), landscape::grid_to_json(grid) + "\n");
    ctx.outputs.push_back((dir / (base + ".landscape.json")).string());
  }
  if (std::count(opts.formats.begin(), opts.formats.end(), "svg") > 0) {
    write_file_atomic(dir / (base + ".landscape.svg"),
                      svg::grid_chart(grid, nullptr, "loss landscape: " + selected.id));
    ctx.outputs.push_back((dir / (base + ".landscape.svg")).string());
  }
  write_manifest(ctx, dir);
  out << "landscape: " << selected.id << ": " << grid.alphas1.size() << "x"
      << grid.alphas2.size() << " grid\n";
  return 0;
}

// ---------------------------- project ----------------------------

struct ProjectOptions {
  std::string grid_path;
  std::string curve_path;
  std::string out_dir;
};

int run_project(const ProjectOptions& opts, RunContext& ctx, std::ostream& out) {
  const auto grid = landscape::grid_from_json(read_file(opts.grid_path));
  const auto curve = probe::curve_from_json(read_file(opts.curve_path));
  ctx.inputs.push_back(opts.grid_path);
  ctx.inputs.push_back(opts.curve_path);

  const auto path = landscape::project_curve(grid, curve);
  const fs::path dir(opts.out_dir);
  write_file_atomic(dir / "projection.path.csv", landscape::path_to_csv(path));
  write_file_atomic(dir / "projection.path.json", landscape::path_to_json(path) + "\n");
  write_file_atomic(dir / "projection.overlay.svg",
                    svg::grid_chart(grid, &path, "projected descent path"));
  ctx.outputs.push_back((dir / "projection.path.csv").string());
  ctx.outputs.push_back((dir / "projection.path.json").string());
  ctx.outputs.push_back((dir / "projection.overlay.svg").string());
  write_manifest(ctx, dir);

  double max_err = 0.0;
  for (const auto& p : path.points) {
    max_err = std::max(max_err, p.match_error);
  }
  out << "project: " << path.points.size() << " points, max match error " << max_err << "\n";
  return 0;
}

// ---------------------------- metrics ----------------------------

struct MetricsOptions {
  std::string input_path;
  std::vector<int> ks;
  std::string metric = "both";  // pass | mg-pass | both
  std::string out_path;
};

int run_metrics(const MetricsOptions& opts, RunContext& ctx, std::ostream& out) {
  const auto tallies = metrics::load_tallies(opts.input_path);
  ctx.inputs.push_back(opts.input_path);
  if (tallies.empty()) {
    throw ValidationError("metrics: no tallies in " + opts.input_path);
  }

  const bool want_pass = opts.metric == "pass" || opts.metric == "both";
  const bool want_mg = opts.metric == "mg-pass" || opts.metric == "both";

  json results = json::array();
  out << std::left << std::setw(14) << "metric" << "value\n";
  for (int k : opts.ks) {
    if (want_pass) {
      const double v = metrics::pass_at_k(tallies, k);
      out << std::left << std::setw(14) << ("pass@" + std::to_string(k)) << fmt6(v) << "\n";
      results.push_back({{"metric", "pass"}, {"k", k}, {"value", v}});
    }
    if (want_mg) {
      const double v = metrics::mg_pass_at_k(tallies, k);
      out << std::left << std::setw(14) << ("mg-pass@" + std::to_string(k)) << fmt6(v) << "\n";
      results.push_back({{"metric", "mg-pass"}, {"k", k}, {"value", v}});
    }
  }

  if (!opts.out_path.empty()) {
    json j;
    j["type"] = "metric_results";
    j["input"] = opts.input_path;
    j["questions"] = tallies.size();
    j["results"] = std::move(results);
    const fs::path out_file(opts.out_path);
    write_file_atomic(out_file, j.dump(2) + "\n");
    ctx.outputs.push_back(opts.out_path);
    write_manifest(ctx, out_file.parent_path().empty() ? fs::path(".")
                                                       : out_file.parent_path());
  }
  return 0;
}

// ---------------------------- reward ----------------------------

struct RewardOptions {
  std::string response;
  std::string response_file;
  std::string gold;
  std::string out_path;
};

int run_reward(const RewardOptions& opts, RunContext& ctx, std::ostream& out) {
  std::string response = opts.response;
  if (!opts.response_file.empty()) {
    response = read_file(opts.response_file);
    ctx.inputs.push_back(opts.response_file);
  }
  const auto verdict = metrics::grpo_reward(response, opts.gold);
  char score[16];
  std::snprintf(score, sizeof(score), "%g", verdict.score);
  out << "score: " << score << "\n";
  out << "answer_matched: " << (verdict.answer_matched ? "true" : "false") << "\n";
  out << "format_ok: " << (verdict.format_ok ? "true" : "false") << "\n";

  if (!opts.out_path.empty()) {
    json j;
    j["type"] = "reward_verdict";
    j["score"] = verdict.score;
    j["answer_matched"] = verdict.answer_matched;
    j["format_ok"] = verdict.format_ok;
    const fs::path out_file(opts.out_path);
    write_file_atomic(out_file, j.dump(2) + "\n");
    ctx.outputs.push_back(opts.out_path);
    write_manifest(ctx, out_file.parent_path().empty() ? fs::path(".")
                                                       : out_file.parent_path());
  }
  return 0;
}

// ---------------------------- long2short ----------------------------

struct Long2ShortOptions {
  std::string config_path = "raml.toml";
  std::string traces_path;
  std::vector<std::string> ids;
  int repeats = 4;
  bool generate = false;
  bool include_contaminated = false;
  std::string audit_path;
  std::string out_dir;
};

int run_long2short(const Long2ShortOptions& opts, RunContext& ctx, std::ostream& out) {
  const auto sources = backend::load_traces(opts.traces_path);
  ctx.inputs.push_back(opts.traces_path);
  const remote::TomlTable table = remote::TomlTable::load(opts.config_path);
  ctx.inputs.push_back(opts.config_path);
  ctx.config_blob = read_file(opts.config_path);

  summarize::SummarizationJob job;
  job.source_ids = opts.ids;
  job.summarizer_model = remote::RemoteConfig::from_toml(table, "summarizer");
  job.target_model = remote::RemoteConfig::from_toml(table, "target");
  job.repeats = opts.repeats;

  const remote::RemoteBackend summarizer(job.summarizer_model, opts.audit_path);
  const auto summarized = run_summarization(job, sources, summarizer);

  int contaminated = 0;
  std::vector<backend::TraceRecord> kept;
  for (const auto& r : summarized) {
    if (r.contaminated) {
      ++contaminated;
      if (!opts.include_contaminated) {
        continue;
      }
    }
    kept.push_back(r);
  }

  const fs::path dir(opts.out_dir);
  fs::create_directories(dir);
  backend::save_traces(kept, (dir / "summarized.jsonl").string());
  ctx.outputs.push_back((dir / "summarized.jsonl").string());

  std::ostringstream table_csv;
  table_csv << "source_id,repeat,source_tokens,summary_tokens,contaminated\n";
  for (const auto& r : summarized) {
    table_csv << r.provenance->source_id << "," << r.provenance->repeat << ","
              << r.provenance->source_token_count << "," << r.trajectory_tokens.size() << ","
              << (r.contaminated ? "true" : "false") << "\n";
  }
  write_file_atomic(dir / "long2short.table.csv", table_csv.str());
  ctx.outputs.push_back((dir / "long2short.table.csv").string());

  if (opts.generate) {
    const remote::RemoteBackend target(job.target_model, opts.audit_path);
    // One tally line per source question over its summarized variants.
    std::vector<std::string> order;
    std::map<std::string, json> grouped;
    for (const auto& r : kept) {
      const std::string text = target.generate(summarize::answer_prompt(r));
      const bool correct = metrics::match_answer(text, r.gold_answer);
      const std::string& source = r.provenance->source_id;
      if (grouped.find(source) == grouped.end()) {
        order.push_back(source);
        grouped[source] = {{"question_id", source},
                           {"gold_answer", r.gold_answer},
                           {"responses", json::array()}};
      }
      grouped[source]["responses"].push_back({{"text", text}, {"correct", correct}});
    }
    std::ostringstream lines;
    for (const auto& id : order) {
      lines << grouped[id].dump() << "\n";
    }
    write_file_atomic(dir / "responses.jsonl", lines.str());
    ctx.outputs.push_back((dir / "responses.jsonl").string());
  }

  write_manifest(ctx, dir);
  out << "long2short: " << summarized.size() << " summaries (" << contaminated
      << " contaminated)\n";
  return 0;
}

// ---------------------------- replay ----------------------------

struct ReplayOptions {
  std::string manifest_path;
  std::string out_override;
};

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Reasoning-trajectory analysis toolkit"};
  app.set_help_all_flag("--help-all", "print help for every subcommand");
  app.require_subcommand(1);

  RunContext ctx;
  ctx.argv = args;
  std::function<int()> action;

  // prop1-verify
  auto prop1 = std::make_shared<Prop1Options>();
  {
    CLI::App* cmd = app.add_subcommand(
        "prop1-verify", "verify the constructive parameter update on random models");
    cmd->add_option("--dim", prop1->dim, "embedding width")->check(CLI::PositiveNumber)
        ->capture_default_str();
    cmd->add_option("--seq-len", prop1->seq_len, "context length")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    cmd->add_option("--trials", prop1->trials, "number of seeded trials")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    cmd->add_option("--seed", prop1->seed, "base seed")->capture_default_str();
    cmd->add_option("--tolerance", prop1->tolerance, "max allowed activation discrepancy")
        ->capture_default_str();
    cmd->add_option("--fixture", prop1->fixture_path, "use parameters from a model fixture");
    cmd->add_option("--out", prop1->out_dir, "directory for the JSON report");
    cmd->callback([&, prop1] {
      ctx.subcommand = "prop1-verify";
      action = [&, prop1] { return run_prop1(*prop1, ctx, out); };
    });
  }

  // probe
  auto probe_opts = std::make_shared<ProbeOptions>();
  {
    CLI::App* cmd =
        app.add_subcommand("probe", "answer-confidence curve along a reasoning trajectory");
    add_backend_flags(cmd, probe_opts->backend);
    cmd->add_option("--traces", probe_opts->traces_path, "trace JSONL file")->required();
    cmd->add_option("--id", probe_opts->ids, "trace ids to probe (default: all)");
    cmd->add_option("--stride", probe_opts->stride, "prefix stride")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    cmd->add_option("--jobs", probe_opts->jobs, "concurrent scoring workers")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    cmd->add_flag("--normalized", probe_opts->normalized, "normalize plot x axis to [0,1]");
    cmd->add_flag("--reflect", probe_opts->reflect,
                  "write a token-change report at the default threshold (needs stride 1)");
    cmd->add_option("--reflection-threshold", probe_opts->reflection_threshold,
                    "write a token-change report at this relative threshold (needs stride 1)");
    cmd->add_option("--forced-mode", probe_opts->forced_mode,
                    "probe variant: none, end-of-thinking, budget")
        ->check(CLI::IsMember({"none", "end-of-thinking", "budget"}))
        ->capture_default_str();
    cmd->add_option("--budget", probe_opts->budget, "token budget for --forced-mode budget")
        ->capture_default_str();
    cmd->add_option("--delimiter", probe_opts->delimiter,
                    "forcing text (defaults depend on the mode)");
    cmd->add_option("--format", probe_opts->formats, "outputs to write: csv, json, svg")
        ->check(CLI::IsMember({"csv", "json", "svg"}))
        ->capture_default_str();
    cmd->add_option("--out", probe_opts->out_dir, "output directory")->required();
    cmd->callback([&, probe_opts] {
      ctx.subcommand = "probe";
      action = [&, probe_opts] { return run_probe(*probe_opts, ctx, out); };
    });
  }

  // landscape
  auto land_opts = std::make_shared<LandscapeOptions>();
  {
    CLI::App* cmd =
        app.add_subcommand("landscape", "two-direction perturbation loss landscape");
    add_backend_flags(cmd, land_opts->backend, /*allow_remote=*/false);
    cmd->add_option("--traces", land_opts->traces_path, "trace JSONL file")->required();
    cmd->add_option("--id", land_opts->id, "trace id (default: first record)");
    cmd->add_option("--direction-seed", land_opts->direction_seed, "seed of the direction pair")
        ->capture_default_str();
    cmd->add_option("--normalization", land_opts->normalization, "none or norm-matched")
        ->check(CLI::IsMember({"none", "norm-matched"}))
        ->capture_default_str();
    cmd->add_option("--grid-step", land_opts->grid_step, "alpha step over [-1,1]")
        ->check(CLI::Range(1e-9, 2.0))
        ->capture_default_str();
    cmd->add_option("--jobs", land_opts->jobs, "concurrent grid workers")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    cmd->add_option("--format", land_opts->formats, "outputs to write: csv, json, svg")
        ->check(CLI::IsMember({"csv", "json", "svg"}))
        ->capture_default_str();
    cmd->add_option("--out", land_opts->out_dir, "output directory")->required();
    cmd->callback([&, land_opts] {
      ctx.subcommand = "landscape";
      action = [&, land_opts] { return run_landscape(*land_opts, ctx, out); };
    });
  }

  // project
  auto proj_opts = std::make_shared<ProjectOptions>();
  {
    CLI::App* cmd = app.add_subcommand("project", "project a probe curve onto a landscape grid");
    cmd->add_option("--grid", proj_opts->grid_path, "landscape grid JSON")->required();
    cmd->add_option("--curve", proj_opts->curve_path, "probe curve JSON")->required();
    cmd->add_option("--out", proj_opts->out_dir, "output directory")->required();
    cmd->callback([&, proj_opts] {
      ctx.subcommand = "project";
      action = [&, proj_opts] { return run_project(*proj_opts, ctx, out); };
    });
  }

  // metrics
  auto metric_opts = std::make_shared<MetricsOptions>();
  {
    CLI::App* cmd = app.add_subcommand("metrics", "pass@k and mg-pass@k over outcome tallies");
    cmd->add_option("--input", metric_opts->input_path, "tally JSONL file")->required();
    cmd->add_option("--k", metric_opts->ks, "k values")->required()->check(CLI::PositiveNumber);
    cmd->add_option("--metric", metric_opts->metric, "pass, mg-pass, or both")
        ->check(CLI::IsMember({"pass", "mg-pass", "both"}))
        ->capture_default_str();
    cmd->add_option("--out", metric_opts->out_path, "write results JSON here");
    cmd->callback([&, metric_opts] {
      ctx.subcommand = "metrics";
      action = [&, metric_opts] { return run_metrics(*metric_opts, ctx, out); };
    });
  }

  // reward
  auto reward_opts = std::make_shared<RewardOptions>();
  {
    CLI::App* cmd = app.add_subcommand("reward", "four-valued reward over answer and format");
    auto* r1 = cmd->add_option("--response", reward_opts->response, "response text");
    auto* r2 = cmd->add_option("--response-file", reward_opts->response_file,
                               "read the response from a file");
    r2->excludes(r1);
    auto* group = cmd->add_option_group("response source");
    group->add_options(r1, r2);
    group->require_option(1);
    cmd->add_option("--gold", reward_opts->gold, "gold answer")->required();
    cmd->add_option("--out", reward_opts->out_path, "write the verdict JSON here");
    cmd->callback([&, reward_opts] {
      ctx.subcommand = "reward";
      action = [&, reward_opts] { return run_reward(*reward_opts, ctx, out); };
    });
  }

  // long2short
  auto l2s_opts = std::make_shared<Long2ShortOptions>();
  {
    CLI::App* cmd = app.add_subcommand(
        "long2short", "summarize trajectories into shorter variants and regenerate answers");
    cmd->add_option("--config", l2s_opts->config_path,
                    "configuration with [summarizer] and [target] sections")
        ->capture_default_str();
    cmd->add_option("--traces", l2s_opts->traces_path, "source trace JSONL file")->required();
    cmd->add_option("--id", l2s_opts->ids, "source ids (default: all)");
    cmd->add_option("--repeats", l2s_opts->repeats, "summaries per source")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    cmd->add_flag("--generate", l2s_opts->generate,
                  "prompt the target model with each summary and tally answers");
    cmd->add_flag("--include-contaminated", l2s_opts->include_contaminated,
                  "keep summaries that leak the gold answer");
    cmd->add_option("--audit", l2s_opts->audit_path, "append remote requests to this JSONL file");
    cmd->add_option("--out", l2s_opts->out_dir, "output directory")->required();
    cmd->callback([&, l2s_opts] {
      ctx.subcommand = "long2short";
      action = [&, l2s_opts] { return run_long2short(*l2s_opts, ctx, out); };
    });
  }

  // replay
  auto replay_opts = std::make_shared<ReplayOptions>();
  {
    CLI::App* cmd = app.add_subcommand("replay", "re-run a subcommand from its manifest");
    cmd->add_option("--manifest", replay_opts->manifest_path, "run manifest JSON")->required();
    cmd->add_option("--out", replay_opts->out_override, "redirect outputs to this directory");
    cmd->callback([&, replay_opts] {
      ctx.subcommand = "replay";
      action = [&, replay_opts]() -> int {
        json manifest;
        try {
          manifest = json::parse(read_file(replay_opts->manifest_path));
        } catch (const json::exception& e) {
          throw ValidationError(std::string("replay: invalid manifest: ") + e.what());
        }
        if (!manifest.contains("argv") || !manifest["argv"].is_array()) {
          throw ValidationError("replay: manifest lacks 'argv'");
        }
        std::vector<std::string> argv = manifest["argv"].get<std::vector<std::string>>();
        if (!replay_opts->out_override.empty()) {
          bool replaced = false;
          for (std::size_t i = 0; i + 1 < argv.size(); ++i) {
            if (argv[i] == "--out") {
              argv[i + 1] = replay_opts->out_override;
              replaced = true;
            }
          }
          if (!replaced) {
            throw ValidationError("replay: stored argv has no --out to redirect");
          }
        }
        return run(argv, out, err);
      };
    });
  }

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n";
    return 2;
  }

  try {
    return action ? action() : 2;
  } catch (const TransportError& e) {
    err << "transport error: " << e.what() << "\n";
    return 3;
  } catch (const CapabilityError& e) {
    err << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace raml::cli

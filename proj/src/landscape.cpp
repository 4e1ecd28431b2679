#include "raml/landscape.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <mutex>
#include <sstream>

#include "raml/parallel.hpp"
#include "raml/rng.hpp"

namespace raml::landscape {

using nlohmann::json;

namespace {

void fill_direction(micro::Matrix& m, Rng& rng) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      m(i, j) = rng.gaussian();
    }
  }
}

void fill_direction(micro::Vector& v, Rng& rng) {
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    v(i) = rng.gaussian();
  }
}

micro::ParamDelta gaussian_delta(int d, Rng& rng) {
  micro::ParamDelta delta = micro::ParamDelta::zero(d);
  fill_direction(delta.wq, rng);
  fill_direction(delta.wk, rng);
  fill_direction(delta.wv, rng);
  fill_direction(delta.w1, rng);
  fill_direction(delta.w2, rng);
  fill_direction(delta.b1, rng);
  fill_direction(delta.b2, rng);
  return delta;
}

void match_norm(micro::Matrix& dir, const micro::Matrix& param) {
  const double target = param.norm();
  const double cur = dir.norm();
  dir = cur > 0.0 ? micro::Matrix((target / cur) * dir) : micro::Matrix(0.0 * dir);
}

void match_norm(micro::Vector& dir, const micro::Vector& param) {
  const double target = param.norm();
  const double cur = dir.norm();
  dir = cur > 0.0 ? micro::Vector((target / cur) * dir) : micro::Vector(0.0 * dir);
}

void normalize_delta(micro::ParamDelta& delta, const micro::TransformerParams& params) {
  match_norm(delta.wq, params.wq);
  match_norm(delta.wk, params.wk);
  match_norm(delta.wv, params.wv);
  match_norm(delta.w1, params.w1);
  match_norm(delta.w2, params.w2);
  match_norm(delta.b1, params.b1);
  match_norm(delta.b2, params.b2);
}

char* fmt17(char* buf, std::size_t n, double v) {
  std::snprintf(buf, n, "%.17g", v);
  return buf;
}

}  // namespace

DirectionPair sample_directions(const micro::TransformerParams& params, std::uint64_t seed,
                                Normalization normalization) {
  params.validate();
  Rng rng(seed);
  DirectionPair pair;
  pair.seed = seed;
  pair.normalization = normalization;
  pair.d1 = gaussian_delta(params.dim(), rng);
  pair.d2 = gaussian_delta(params.dim(), rng);
  if (normalization == Normalization::norm_matched) {
    normalize_delta(pair.d1, params);
    normalize_delta(pair.d2, params);
  }
  return pair;
}

std::vector<double> make_alphas(double grid_step) {
  if (!(grid_step > 0.0) || grid_step > 2.0) {
    throw BoundsError("landscape: grid step must lie in (0, 2]");
  }
  std::vector<double> alphas;
  for (int k = 0;; ++k) {
    double a = -1.0 + k * grid_step;
    if (a > 1.0 + grid_step * 1e-9) {
      break;
    }
    if (std::abs(a) < 1e-12) {
      a = 0.0;
    }
    if (std::abs(a - 1.0) < grid_step * 1e-9) {
      a = 1.0;
    }
    alphas.push_back(a);
  }
  return alphas;
}

LandscapeGrid sample_landscape(const micro::TransformerParams& params,
                               const probe::PromptBundle& bundle, const DirectionPair& directions,
                               double grid_step, const backend::PerturbableBackend& scorer,
                               int jobs) {
  params.validate();
  if (directions.d1.dim() != params.dim() || directions.d2.dim() != params.dim()) {
    throw ShapeError("landscape: direction shapes do not match the parameters");
  }
  if (bundle.answer_probe.empty()) {
    throw ValidationError("landscape: empty answer probe");
  }

  LandscapeGrid grid;
  grid.alphas1 = make_alphas(grid_step);
  grid.alphas2 = grid.alphas1;
  grid.bundle_ref = bundle.digest();
  const int n1 = static_cast<int>(grid.alphas1.size());
  const int n2 = static_cast<int>(grid.alphas2.size());
  grid.values.resize(n1, n2);

  backend::TokenList prefix = bundle.instruction;
  prefix.insert(prefix.end(), bundle.question.begin(), bundle.question.end());

  std::mutex warning_mutex;
  parallel_for(n1 * n2, jobs, [&](int cell) {
    const int i = cell / n2;
    const int j = cell % n2;
    micro::ParamDelta delta = directions.d1.scaled(grid.alphas1[i]);
    delta += directions.d2.scaled(grid.alphas2[j]);
    double value = std::numeric_limits<double>::quiet_NaN();
    try {
      const auto logprobs = scorer.perturb_and_score(delta, prefix, bundle.answer_probe);
      double sum = 0.0;
      for (double lp : logprobs) {
        sum += lp;
      }
      value = -sum;
    } catch (const NumericError&) {
      value = std::numeric_limits<double>::quiet_NaN();
    }
    if (!std::isfinite(value)) {
      value = std::numeric_limits<double>::quiet_NaN();
      std::ostringstream msg;
      msg << "missing cell at (" << grid.alphas1[i] << ", " << grid.alphas2[j]
          << "): non-finite score";
      std::lock_guard<std::mutex> lock(warning_mutex);
      grid.warnings.push_back(msg.str());
    }
    grid.values(i, j) = value;
  });
  std::sort(grid.warnings.begin(), grid.warnings.end());
  return grid;
}

LandscapeGrid sample_landscape(const micro::TransformerParams& params,
                               const probe::PromptBundle& bundle, const DirectionPair& directions,
                               double grid_step, const backend::ScoringBackend& scorer, int jobs) {
  const auto* perturbable = dynamic_cast<const backend::PerturbableBackend*>(&scorer);
  if (perturbable == nullptr || !scorer.capabilities().perturbable) {
    throw CapabilityError("landscape: backend does not support parameter editing");
  }
  return sample_landscape(params, bundle, directions, grid_step, *perturbable, jobs);
}

namespace {

struct Candidate {
  double error;
  double alpha2;
  double matched;
};

}  // namespace

ProjectedPath project_curve(const LandscapeGrid& grid, const probe::ProbeCurve& curve) {
  if (curve.points.empty()) {
    throw ValidationError("project_curve: empty curve");
  }
  if (grid.alphas1.empty() || grid.alphas2.empty()) {
    throw ValidationError("project_curve: empty grid");
  }

  const double a1_lo = grid.alphas1.front();
  const double a1_hi = grid.alphas1.back();
  const int max_prefix = curve.points.back().prefix_index;

  ProjectedPath path;
  path.points.reserve(curve.points.size());
  double prev_alpha2 = 0.0;
  bool have_prev = false;

  for (std::size_t pi = 0; pi < curve.points.size(); ++pi) {
    const auto& pt = curve.points[pi];
    const double tnorm = max_prefix > 0 ? static_cast<double>(pt.prefix_index) / max_prefix : 0.0;
    const double alpha1 = a1_lo + tnorm * (a1_hi - a1_lo);

    // Nearest grid row along the time axis (interpolation is along alpha2 only).
    int row = 0;
    double best_dist = std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < grid.alphas1.size(); ++r) {
      const double dist = std::abs(grid.alphas1[r] - alpha1);
      if (dist < best_dist - 1e-15) {
        best_dist = dist;
        row = static_cast<int>(r);
      }
    }

    const double target = pt.lhat;
    const double ref = have_prev ? prev_alpha2 : 0.0;
    std::vector<Candidate> candidates;
    const int n2 = static_cast<int>(grid.alphas2.size());
    for (int k = 0; k < n2; ++k) {
      const double v = grid.values(row, k);
      if (std::isfinite(v)) {
        candidates.push_back({std::abs(v - target), grid.alphas2[k], v});
      }
    }
    for (int k = 0; k + 1 < n2; ++k) {
      const double v0 = grid.values(row, k);
      const double v1 = grid.values(row, k + 1);
      if (!std::isfinite(v0) || !std::isfinite(v1)) {
        continue;
      }
      if (v0 == v1) {
        // Flat segment: every alpha2 in it scores the same, so offer the point
        // closest to the tie-break reference.
        const double a = std::clamp(ref, grid.alphas2[k], grid.alphas2[k + 1]);
        candidates.push_back({std::abs(v0 - target), a, v0});
      } else if ((target - v0) * (target - v1) <= 0.0) {
        const double t = (target - v0) / (v1 - v0);
        const double a = grid.alphas2[k] + t * (grid.alphas2[k + 1] - grid.alphas2[k]);
        candidates.push_back({0.0, a, target});
      }
    }
    if (candidates.empty()) {
      throw ValidationError("project_curve: all cells missing along the row for prefix " +
                            std::to_string(pt.prefix_index));
    }

    double best_error = std::numeric_limits<double>::infinity();
    for (const auto& c : candidates) {
      best_error = std::min(best_error, c.error);
    }
    const double tie_eps = 1e-12 * (1.0 + std::abs(target));
    const Candidate* chosen = nullptr;
    for (const auto& c : candidates) {
      if (c.error > best_error + tie_eps) {
        continue;
      }
      if (chosen == nullptr) {
        chosen = &c;
        continue;
      }
      const double cur_ref = std::abs(c.alpha2 - ref);
      const double old_ref = std::abs(chosen->alpha2 - ref);
      if (cur_ref < old_ref - 1e-15) {
        chosen = &c;
      } else if (std::abs(cur_ref - old_ref) <= 1e-15) {
        if (std::abs(c.alpha2) < std::abs(chosen->alpha2) - 1e-15 ||
            (std::abs(std::abs(c.alpha2) - std::abs(chosen->alpha2)) <= 1e-15 &&
             c.alpha2 < chosen->alpha2)) {
          chosen = &c;
        }
      }
    }

    ProjectedPoint out;
    out.prefix_index = pt.prefix_index;
    out.alpha1 = alpha1;
    out.alpha2 = chosen->alpha2;
    out.matched_lhat = chosen->matched;
    out.match_error = std::abs(out.matched_lhat - target);
    path.points.push_back(out);
    prev_alpha2 = out.alpha2;
    have_prev = true;
  }
  return path;
}

// ---------------------------- exports ----------------------------

std::string grid_to_csv(const LandscapeGrid& grid) {
  std::ostringstream out;
  char buf[40];
  out << "alpha1\\alpha2";
  for (double a : grid.alphas2) {
    out << "," << fmt17(buf, sizeof(buf), a);
  }
  out << "\n";
  for (std::size_t i = 0; i < grid.alphas1.size(); ++i) {
    out << fmt17(buf, sizeof(buf), grid.alphas1[i]);
    for (std::size_t j = 0; j < grid.alphas2.size(); ++j) {
      out << ",";
      const double v = grid.values(i, j);
      if (std::isfinite(v)) {
        out << fmt17(buf, sizeof(buf), v);
      }
    }
    out << "\n";
  }
  return out.str();
}

std::string grid_to_json(const LandscapeGrid& grid) {
  json j;
  j["type"] = "landscape_grid";
  j["bundle_ref"] = grid.bundle_ref;
  j["alphas1"] = grid.alphas1;
  j["alphas2"] = grid.alphas2;
  json rows = json::array();
  for (std::size_t i = 0; i < grid.alphas1.size(); ++i) {
    json row = json::array();
    for (std::size_t j2 = 0; j2 < grid.alphas2.size(); ++j2) {
      const double v = grid.values(i, j2);
      if (std::isfinite(v)) {
        row.push_back(v);
      } else {
        row.push_back(nullptr);
      }
    }
    rows.push_back(std::move(row));
  }
  j["values"] = std::move(rows);
  if (!grid.warnings.empty()) {
    j["warnings"] = grid.warnings;
  }
  return j.dump(2);
}

LandscapeGrid grid_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("landscape grid: invalid JSON: ") + e.what());
  }
  for (const char* key : {"alphas1", "alphas2", "values"}) {
    if (!j.contains(key)) {
      throw ValidationError(std::string("landscape grid: missing field '") + key + "'");
    }
  }
  LandscapeGrid grid;
  grid.alphas1 = j["alphas1"].get<std::vector<double>>();
  grid.alphas2 = j["alphas2"].get<std::vector<double>>();
  grid.bundle_ref = j.value("bundle_ref", std::string());
  const auto& rows = j["values"];
  if (!rows.is_array() || rows.size() != grid.alphas1.size()) {
    throw ValidationError("landscape grid: 'values' shape mismatch");
  }
  grid.values.resize(grid.alphas1.size(), grid.alphas2.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (!rows[i].is_array() || rows[i].size() != grid.alphas2.size()) {
      throw ValidationError("landscape grid: ragged 'values' rows");
    }
    for (std::size_t k = 0; k < rows[i].size(); ++k) {
      grid.values(i, k) = rows[i][k].is_null() ? std::numeric_limits<double>::quiet_NaN()
                                               : rows[i][k].get<double>();
    }
  }
  return grid;
}

std::string path_to_csv(const ProjectedPath& path) {
  std::ostringstream out;
  char buf[40];
  out << "prefix_index,alpha1,alpha2,matched_lhat,match_error\n";
  for (const auto& p : path.points) {
    out << p.prefix_index << "," << fmt17(buf, sizeof(buf), p.alpha1);
    out << "," << fmt17(buf, sizeof(buf), p.alpha2);
    out << "," << fmt17(buf, sizeof(buf), p.matched_lhat);
    out << "," << fmt17(buf, sizeof(buf), p.match_error) << "\n";
  }
  return out.str();
}

std::string path_to_json(const ProjectedPath& path) {
  json j;
  j["type"] = "projected_path";
  json pts = json::array();
  for (const auto& p : path.points) {
    pts.push_back({{"prefix_index", p.prefix_index},
                   {"alpha1", p.alpha1},
                   {"alpha2", p.alpha2},
                   {"matched_lhat", p.matched_lhat},
                   {"match_error", p.match_error}});
  }
  j["points"] = std::move(pts);
  return j.dump(2);
}

ProjectedPath path_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("projected path: invalid JSON: ") + e.what());
  }
  if (!j.contains("points") || !j["points"].is_array()) {
    throw ValidationError("projected path: missing 'points' array");
  }
  ProjectedPath path;
  for (const auto& p : j["points"]) {
    path.points.push_back({p.at("prefix_index").get<int>(), p.at("alpha1").get<double>(),
                           p.at("alpha2").get<double>(), p.at("matched_lhat").get<double>(),
                           p.at("match_error").get<double>()});
  }
  return path;
}

}  // namespace raml::landscape

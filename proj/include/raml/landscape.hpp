#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "raml/backend.hpp"
#include "raml/microformer.hpp"
#include "raml/probe.hpp"

namespace raml::landscape {

enum class Normalization {
  none,
  norm_matched,  // each direction tensor rescaled to its parameter's Frobenius norm
};

struct DirectionPair {
  micro::ParamDelta d1, d2;
  std::uint64_t seed = 0;
  Normalization normalization = Normalization::norm_matched;
};

// Two Gaussian perturbation direction sets matching the parameter shapes.
// Embeddings are deliberately not covered. Deterministic in the seed.
DirectionPair sample_directions(const micro::TransformerParams& params, std::uint64_t seed,
                                Normalization normalization);

struct LandscapeGrid {
  std::vector<double> alphas1, alphas2;  // strictly increasing, within [-1, 1]
  // values(i, j) = lhat at params + alphas1[i] * d1 + alphas2[j] * d2.
  // NaN marks a missing cell.
  Eigen::MatrixXd values;
  std::string bundle_ref;
  std::vector<std::string> warnings;

  bool missing(int i, int j) const { return !std::isfinite(values(i, j)); }
};

// Evaluates the answer-probe loss over the perturbation grid. The backend's
// stored weights are never mutated; each cell scores a scratch copy.
LandscapeGrid sample_landscape(const micro::TransformerParams& params,
                               const probe::PromptBundle& bundle, const DirectionPair& directions,
                               double grid_step, const backend::PerturbableBackend& scorer,
                               int jobs = 1);

// Capability-checked entry point; throws CapabilityError when the backend
// cannot edit parameters.
LandscapeGrid sample_landscape(const micro::TransformerParams& params,
                               const probe::PromptBundle& bundle, const DirectionPair& directions,
                               double grid_step, const backend::ScoringBackend& scorer,
                               int jobs = 1);

struct ProjectedPoint {
  int prefix_index = 0;
  double alpha1 = 0.0;
  double alpha2 = 0.0;
  double matched_lhat = 0.0;
  double match_error = 0.0;
};

struct ProjectedPath {
  std::vector<ProjectedPoint> points;
};

// Maps a probe curve onto the grid: alpha1 is the normalized prefix index
// stretched over the alpha1 range, alpha2 the closest-value coordinate along
// that grid row with linear interpolation between nodes. Ties are broken
// toward the previous point's alpha2, then toward zero.
ProjectedPath project_curve(const LandscapeGrid& grid, const probe::ProbeCurve& curve);

// Exports.
std::string grid_to_csv(const LandscapeGrid& grid);
std::string grid_to_json(const LandscapeGrid& grid);
LandscapeGrid grid_from_json(const std::string& text);
std::string path_to_csv(const ProjectedPath& path);
std::string path_to_json(const ProjectedPath& path);
ProjectedPath path_from_json(const std::string& text);

std::vector<double> make_alphas(double grid_step);

}  // namespace raml::landscape

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "raml/backend.hpp"
#include "raml/landscape.hpp"
#include "raml/probe.hpp"

using namespace raml;
using namespace raml::landscape;
using backend::LocalBackend;
using backend::TokenList;

namespace {

probe::PromptBundle small_bundle() {
  backend::TraceRecord r;
  r.id = "landscape-fixture";
  r.instruction = "Answer briefly.";
  r.question = "What is two plus two ?";
  r.gold_answer = "4";
  r.trajectory_tokens = {"add", "the", "numbers"};
  return probe::PromptBundle::from_trace(r);
}

double probe_origin(const LocalBackend& be, const probe::PromptBundle& bundle) {
  auto b = bundle;
  b.trajectory.clear();
  return probe::probe_trajectory(b, be, 1).points[0].lhat;
}

}  // namespace

TEST_CASE("direction sampling is deterministic in the seed") {
  const auto params = micro::TransformerParams::random(4, 3);
  const auto a = sample_directions(params, 42, Normalization::norm_matched);
  const auto b = sample_directions(params, 42, Normalization::norm_matched);
  CHECK(a.d1.wq == b.d1.wq);
  CHECK(a.d2.w2 == b.d2.w2);
  CHECK(a.d1.b1 == b.d1.b1);
}

TEST_CASE("norm matching reproduces each parameter's Frobenius norm") {
  auto params = micro::TransformerParams::random(5, 9);
  params.wq *= 3.0 / params.wq.norm();  // force a known norm
  const auto pair = sample_directions(params, 7, Normalization::norm_matched);
  CHECK(std::abs(pair.d1.wq.norm() - 3.0) <= 1e-10);
  CHECK(std::abs(pair.d1.wk.norm() - params.wk.norm()) <= 1e-10);
  CHECK(std::abs(pair.d2.b1.norm() - params.b1.norm()) <= 1e-10);
  const auto raw = sample_directions(params, 7, Normalization::none);
  CHECK(std::abs(raw.d1.wq.norm() - 3.0) > 1e-6);  // unscaled Gaussian mass
}

TEST_CASE("distinct seeds give distinct directions") {
  const auto params = micro::TransformerParams::random(4, 11);
  std::set<double> fingerprints;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto pair = sample_directions(params, seed, Normalization::none);
    fingerprints.insert(pair.d1.wq(0, 0));
  }
  CHECK(fingerprints.size() == 100);
}

TEST_CASE("directions cover exactly the seven weight tensors") {
  const auto params = micro::TransformerParams::random(3, 1);
  const auto pair = sample_directions(params, 1, Normalization::none);
  // Shape inventory: everything matches the parameter set, nothing matches an
  // embedding table (which would be vocab x d with vocab != d here).
  CHECK(pair.d1.wq.rows() == 3);
  CHECK(pair.d1.wq.cols() == 3);
  CHECK(pair.d1.w1.rows() == 3);
  CHECK(pair.d1.b1.size() == 3);
  CHECK(pair.d1.b2.size() == 3);
  CHECK(pair.d2.wv.rows() == 3);
}

TEST_CASE("make_alphas spans [-1, 1]") {
  CHECK(make_alphas(1.0) == std::vector<double>{-1.0, 0.0, 1.0});
  CHECK(make_alphas(0.5) == std::vector<double>{-1.0, -0.5, 0.0, 0.5, 1.0});
  const auto fine = make_alphas(0.1);
  CHECK(fine.size() == 21);
  CHECK(fine.front() == -1.0);
  CHECK(fine.back() == 1.0);
  CHECK(fine[10] == 0.0);
  CHECK_THROWS_AS(make_alphas(0.0), BoundsError);
  CHECK_THROWS_AS(make_alphas(2.5), BoundsError);
}

TEST_CASE("origin cell equals the unperturbed probe") {
  const auto be = LocalBackend::seeded(4, 24, 17);
  const auto bundle = small_bundle();
  const auto dirs = sample_directions(be.params(), 5, Normalization::norm_matched);
  const auto grid = sample_landscape(be.params(), bundle, dirs, 1.0, be);
  REQUIRE(grid.alphas1.size() == 3);
  const double origin = grid.values(1, 1);
  CHECK(std::abs(origin - probe_origin(be, bundle)) <= 1e-12);
}

TEST_CASE("swapping the directions transposes the grid") {
  const auto be = LocalBackend::seeded(4, 16, 23);
  const auto bundle = small_bundle();
  auto dirs = sample_directions(be.params(), 5, Normalization::norm_matched);
  const auto grid = sample_landscape(be.params(), bundle, dirs, 0.5, be);

  DirectionPair swapped = dirs;
  std::swap(swapped.d1, swapped.d2);
  const auto grid_sw = sample_landscape(be.params(), bundle, swapped, 0.5, be);

  REQUIRE(grid.alphas1.size() == 5);
  for (int i = 0; i < 5; ++i) {
    for (int j = 0; j < 5; ++j) {
      CHECK(std::abs(grid_sw.values(i, j) - grid.values(j, i)) <= 1e-12);
    }
  }
}

TEST_CASE("every cell matches a rebuilt-from-scratch model") {
  const auto be = LocalBackend::seeded(4, 16, 29);
  const auto bundle = small_bundle();
  const auto dirs = sample_directions(be.params(), 31, Normalization::norm_matched);
  const auto grid = sample_landscape(be.params(), bundle, dirs, 0.5, be);

  TokenList prefix = bundle.instruction;
  prefix.insert(prefix.end(), bundle.question.begin(), bundle.question.end());

  for (std::size_t i = 0; i < grid.alphas1.size(); ++i) {
    for (std::size_t j = 0; j < grid.alphas2.size(); ++j) {
      micro::ParamDelta delta = dirs.d1.scaled(grid.alphas1[i]);
      delta += dirs.d2.scaled(grid.alphas2[j]);
      const LocalBackend rebuilt(be.params() + delta, be.embeddings());
      const auto lps = rebuilt.score_sequence(prefix, bundle.answer_probe);
      double sum = 0.0;
      for (double lp : lps) {
        sum += lp;
      }
      CHECK(std::abs(grid.values(i, j) - (-sum)) <= 1e-10);
    }
  }
}

TEST_CASE("sampling leaves the backend state untouched") {
  const auto be = LocalBackend::seeded(4, 16, 37);
  const auto bundle = small_bundle();
  const double before = probe_origin(be, bundle);
  const auto dirs = sample_directions(be.params(), 3, Normalization::norm_matched);
  (void)sample_landscape(be.params(), bundle, dirs, 0.5, be, 2);
  const double after = probe_origin(be, bundle);
  CHECK(before == after);  // bit-exact
}

TEST_CASE("grid evaluation is independent of the worker count") {
  const auto be = LocalBackend::seeded(4, 16, 41);
  const auto bundle = small_bundle();
  const auto dirs = sample_directions(be.params(), 43, Normalization::norm_matched);
  const auto g1 = sample_landscape(be.params(), bundle, dirs, 0.5, be, 1);
  const auto g4 = sample_landscape(be.params(), bundle, dirs, 0.5, be, 4);
  for (int i = 0; i < 5; ++i) {
    for (int j = 0; j < 5; ++j) {
      CHECK(g1.values(i, j) == g4.values(i, j));
    }
  }
}

TEST_CASE("non-perturbable backends are rejected") {
  backend::TraceRecord r;
  r.id = "t";
  r.trajectory_tokens = {};
  backend::PrefixScore ps;
  ps.prefix_index = 0;
  ps.answer_logprobs = {-1.0};
  r.prefix_scores.push_back(ps);
  const backend::TraceBackend tb(r);
  const auto params = micro::TransformerParams::random(4, 1);
  const auto dirs = sample_directions(params, 1, Normalization::none);
  const backend::ScoringBackend& as_scorer = tb;
  CHECK_THROWS_AS(
      sample_landscape(params, small_bundle(), dirs, 1.0, as_scorer), CapabilityError);
}

TEST_CASE("projection onto a constant grid sits at zero") {
  LandscapeGrid grid;
  grid.alphas1 = make_alphas(0.5);
  grid.alphas2 = grid.alphas1;
  grid.values = Eigen::MatrixXd::Constant(5, 5, 2.5);

  probe::ProbeCurve curve;
  curve.points = {{0, 2.5}, {1, 2.5}, {2, 2.5}};
  const auto path = project_curve(grid, curve);
  REQUIRE(path.points.size() == 3);
  for (const auto& p : path.points) {
    CHECK(p.alpha2 == 0.0);
    CHECK(p.match_error == 0.0);
  }
  CHECK(path.points.front().alpha1 == -1.0);
  CHECK(path.points.back().alpha1 == 1.0);
  CHECK(path.points[1].alpha1 == 0.0);
}

TEST_CASE("projection inverts a grid linear in alpha2") {
  LandscapeGrid grid;
  grid.alphas1 = make_alphas(0.1);
  grid.alphas2 = grid.alphas1;
  grid.values.resize(21, 21);
  for (int i = 0; i < 21; ++i) {
    for (int j = 0; j < 21; ++j) {
      grid.values(i, j) = grid.alphas2[j];
    }
  }
  probe::ProbeCurve curve;
  curve.points = {{0, -0.5}, {1, 0.0}, {2, 0.5}};
  const auto path = project_curve(grid, curve);
  REQUIRE(path.points.size() == 3);
  CHECK(path.points[0].alpha2 == -0.5);
  CHECK(path.points[1].alpha2 == 0.0);
  CHECK(path.points[2].alpha2 == 0.5);
  for (const auto& p : path.points) {
    CHECK(p.match_error == 0.0);
  }
  // Values between the nodes are still hit exactly through interpolation.
  probe::ProbeCurve off;
  off.points = {{0, 0.123}, {1, -0.777}};
  const auto path2 = project_curve(grid, off);
  CHECK(path2.points[0].alpha2 == doctest::Approx(0.123).epsilon(1e-12));
  CHECK(path2.points[1].alpha2 == doctest::Approx(-0.777).epsilon(1e-12));
}

TEST_CASE("projection agrees with a dense argmin scan") {
  const auto be = LocalBackend::seeded(4, 16, 53);
  const auto bundle = small_bundle();
  const auto dirs = sample_directions(be.params(), 59, Normalization::norm_matched);
  const auto grid = sample_landscape(be.params(), bundle, dirs, 0.25, be);
  const auto curve = probe::probe_trajectory(bundle, be, 1);
  const auto path = project_curve(grid, curve);

  const double cell = 0.25;
  int within = 0;
  for (std::size_t pi = 0; pi < path.points.size(); ++pi) {
    const auto& pt = path.points[pi];
    // Same nearest-row rule as the implementation.
    int row = 0;
    double best = 1e300;
    for (std::size_t r = 0; r < grid.alphas1.size(); ++r) {
      if (std::abs(grid.alphas1[r] - pt.alpha1) < best - 1e-15) {
        best = std::abs(grid.alphas1[r] - pt.alpha1);
        row = static_cast<int>(r);
      }
    }
    const double target = curve.points[pi].lhat;
    double best_err = 1e300;
    double best_alpha = 0.0;
    for (double a = -1.0; a <= 1.0 + 1e-12; a += 1e-4) {
      // Piecewise-linear interpolation along the row.
      double v = 0.0;
      if (a <= grid.alphas2.front()) {
        v = grid.values(row, 0);
      } else if (a >= grid.alphas2.back()) {
        v = grid.values(row, grid.alphas2.size() - 1);
      } else {
        for (std::size_t k = 0; k + 1 < grid.alphas2.size(); ++k) {
          if (a >= grid.alphas2[k] && a <= grid.alphas2[k + 1]) {
            const double t = (a - grid.alphas2[k]) / (grid.alphas2[k + 1] - grid.alphas2[k]);
            v = grid.values(row, k) + t * (grid.values(row, k + 1) - grid.values(row, k));
            break;
          }
        }
      }
      const double err = std::abs(v - target);
      if (err < best_err - 1e-15) {
        best_err = err;
        best_alpha = a;
      }
    }
    if (std::abs(pt.alpha2 - best_alpha) <= cell + 1e-9) {
      ++within;
    }
  }
  CHECK(within == static_cast<int>(path.points.size()));
}

TEST_CASE("projection skips missing cells and fails on empty rows") {
  LandscapeGrid grid;
  grid.alphas1 = {-1.0, 0.0, 1.0};
  grid.alphas2 = {-1.0, 0.0, 1.0};
  grid.values.resize(3, 3);
  grid.values.setConstant(std::numeric_limits<double>::quiet_NaN());
  grid.values(0, 1) = 5.0;

  probe::ProbeCurve one;
  one.points = {{0, 5.0}};
  const auto path = project_curve(grid, one);
  CHECK(path.points[0].alpha2 == 0.0);
  CHECK(path.points[0].match_error == 0.0);

  probe::ProbeCurve two;
  two.points = {{0, 5.0}, {1, 5.0}};
  CHECK_THROWS_AS(project_curve(grid, two), ValidationError);
}

TEST_CASE("grid and path exports round-trip") {
  LandscapeGrid grid;
  grid.alphas1 = {-1.0, 0.0, 1.0};
  grid.alphas2 = {-1.0, 0.0, 1.0};
  grid.values.resize(3, 3);
  grid.values.setZero();
  grid.values(0, 0) = 1.25;
  grid.values(2, 1) = std::numeric_limits<double>::quiet_NaN();
  grid.bundle_ref = "abc";

  const auto back = grid_from_json(grid_to_json(grid));
  CHECK(back.alphas1 == grid.alphas1);
  CHECK(back.values(0, 0) == 1.25);
  CHECK(back.missing(2, 1));
  CHECK(back.bundle_ref == "abc");

  const std::string csv = grid_to_csv(grid);
  CHECK(csv.find("alpha1\\alpha2,-1,0,1") != std::string::npos);
  // Missing cell appears as an empty field.
  CHECK(csv.find("1,,") == std::string::npos);  // layout sanity, not content

  ProjectedPath path;
  path.points = {{0, -1.0, 0.5, 2.0, 0.125}};
  const auto pback = path_from_json(path_to_json(path));
  REQUIRE(pback.points.size() == 1);
  CHECK(pback.points[0].alpha2 == 0.5);
  CHECK(path_to_csv(path).find("prefix_index,alpha1,alpha2") == 0);
}

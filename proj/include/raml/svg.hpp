#pragma once

#include <string>

#include "raml/landscape.hpp"
#include "raml/probe.hpp"

namespace raml::svg {

inline constexpr const char* kGeneratorVersion = "raml-svg-1";

// Line plot of a probe curve. When the curve is marked normalized, the x axis
// runs over [0, 1] instead of prefix indices.
std::string curve_chart(const probe::ProbeCurve& curve, const std::string& title);

// Heatmap of a landscape grid with an optional projected path drawn as a
// purple polyline. Missing cells render gray.
std::string grid_chart(const landscape::LandscapeGrid& grid,
                       const landscape::ProjectedPath* path, const std::string& title);

}  // namespace raml::svg

#include "raml/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace raml::svg {

namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

struct Range {
  double lo = 0.0;
  double hi = 1.0;
  double span() const { return hi - lo; }
};

Range padded(double lo, double hi) {
  if (!(hi > lo)) {
    const double pad = std::abs(lo) > 0.0 ? std::abs(lo) * 0.1 : 1.0;
    return {lo - pad, hi + pad};
  }
  const double pad = (hi - lo) * 0.05;
  return {lo - pad, hi + pad};
}

// Two-segment diverging colormap: blue through white to red.
std::string heat_color(double t) {
  t = std::clamp(t, 0.0, 1.0);
  const double stops[3][3] = {{0.231, 0.298, 0.753}, {0.969, 0.969, 0.969}, {0.706, 0.016, 0.150}};
  const double* a;
  const double* b;
  double u;
  if (t < 0.5) {
    a = stops[0];
    b = stops[1];
    u = t * 2.0;
  } else {
    a = stops[1];
    b = stops[2];
    u = (t - 0.5) * 2.0;
  }
  char buf[8];
  std::snprintf(buf, sizeof(buf), "#%02x%02x%02x",
                static_cast<int>(std::lround(255.0 * (a[0] + u * (b[0] - a[0])))),
                static_cast<int>(std::lround(255.0 * (a[1] + u * (b[1] - a[1])))),
                static_cast<int>(std::lround(255.0 * (a[2] + u * (b[2] - a[2])))));
  return buf;
}

void open_svg(std::ostringstream& out, int width, int height, const std::string& title) {
  out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  out << "<!-- " << kGeneratorVersion << " -->\n";
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
      << height << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
  out << "<rect width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";
  out << "<text x=\"" << width / 2 << "\" y=\"22\" text-anchor=\"middle\" "
      << "font-family=\"sans-serif\" font-size=\"14\">" << escape(title) << "</text>\n";
}

}  // namespace

std::string curve_chart(const probe::ProbeCurve& curve, const std::string& title) {
  const int width = 640;
  const int height = 420;
  const double left = 70.0;
  const double right = width - 20.0;
  const double top = 40.0;
  const double bottom = height - 50.0;

  double ymin = std::numeric_limits<double>::infinity();
  double ymax = -std::numeric_limits<double>::infinity();
  double xmax = 1.0;
  for (const auto& p : curve.points) {
    ymin = std::min(ymin, p.lhat);
    ymax = std::max(ymax, p.lhat);
    xmax = std::max(xmax, static_cast<double>(p.prefix_index));
  }
  if (curve.points.empty()) {
    ymin = 0.0;
    ymax = 1.0;
  }
  const Range yr = padded(ymin, ymax);
  const double xdiv = curve.normalized ? xmax : 1.0;
  const Range xr{0.0, std::max(xmax / xdiv, 1e-9)};

  auto sx = [&](double x) { return left + (x - xr.lo) / xr.span() * (right - left); };
  auto sy = [&](double y) { return bottom - (y - yr.lo) / yr.span() * (bottom - top); };

  std::ostringstream out;
  open_svg(out, width, height, title);

  // Axes and ticks.
  out << "<g stroke=\"#444\" stroke-width=\"1\" font-family=\"sans-serif\" font-size=\"11\">\n";
  out << "<line x1=\"" << num(left) << "\" y1=\"" << num(bottom) << "\" x2=\"" << num(right)
      << "\" y2=\"" << num(bottom) << "\"/>\n";
  out << "<line x1=\"" << num(left) << "\" y1=\"" << num(top) << "\" x2=\"" << num(left)
      << "\" y2=\"" << num(bottom) << "\"/>\n";
  for (int t = 0; t <= 5; ++t) {
    const double fx = xr.lo + xr.span() * t / 5.0;
    const double fy = yr.lo + yr.span() * t / 5.0;
    out << "<line x1=\"" << num(sx(fx)) << "\" y1=\"" << num(bottom) << "\" x2=\"" << num(sx(fx))
        << "\" y2=\"" << num(bottom + 4) << "\"/>\n";
    out << "<text x=\"" << num(sx(fx)) << "\" y=\"" << num(bottom + 16)
        << "\" text-anchor=\"middle\" stroke=\"none\" fill=\"#444\">" << num(fx) << "</text>\n";
    out << "<line x1=\"" << num(left - 4) << "\" y1=\"" << num(sy(fy)) << "\" x2=\"" << num(left)
        << "\" y2=\"" << num(sy(fy)) << "\"/>\n";
    out << "<text x=\"" << num(left - 8) << "\" y=\"" << num(sy(fy) + 4)
        << "\" text-anchor=\"end\" stroke=\"none\" fill=\"#444\">" << num(fy) << "</text>\n";
  }
  out << "</g>\n";
  out << "<text x=\"" << (left + right) / 2.0 << "\" y=\"" << height - 12
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">"
      << (curve.normalized ? "normalized trajectory position" : "trajectory prefix length")
      << "</text>\n";
  out << "<text x=\"16\" y=\"" << (top + bottom) / 2.0
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" "
      << "transform=\"rotate(-90 16 " << (top + bottom) / 2.0 << ")\">answer NLL</text>\n";

  if (!curve.points.empty()) {
    out << "<polyline fill=\"none\" stroke=\"#3557c0\" stroke-width=\"2\" points=\"";
    for (const auto& p : curve.points) {
      out << num(sx(p.prefix_index / xdiv)) << "," << num(sy(p.lhat)) << " ";
    }
    out << "\"/>\n";
    for (const auto& p : curve.points) {
      out << "<circle cx=\"" << num(sx(p.prefix_index / xdiv)) << "\" cy=\"" << num(sy(p.lhat))
          << "\" r=\"2.5\" fill=\"#3557c0\"/>\n";
    }
  }
  out << "</svg>\n";
  return out.str();
}

std::string grid_chart(const landscape::LandscapeGrid& grid,
                       const landscape::ProjectedPath* path, const std::string& title) {
  const int width = 560;
  const int height = 560;
  const double left = 70.0;
  const double right = width - 30.0;
  const double top = 40.0;
  const double bottom = height - 60.0;

  const int n1 = static_cast<int>(grid.alphas1.size());
  const int n2 = static_cast<int>(grid.alphas2.size());

  double vmin = std::numeric_limits<double>::infinity();
  double vmax = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < n1; ++i) {
    for (int j = 0; j < n2; ++j) {
      const double v = grid.values(i, j);
      if (std::isfinite(v)) {
        vmin = std::min(vmin, v);
        vmax = std::max(vmax, v);
      }
    }
  }
  if (!(vmax > vmin)) {
    vmax = vmin + 1.0;
  }

  const double a1_lo = grid.alphas1.front();
  const double a1_hi = grid.alphas1.back();
  const double a2_lo = grid.alphas2.front();
  const double a2_hi = grid.alphas2.back();
  const double cw = (right - left) / std::max(n1 - 1, 1);
  const double ch = (bottom - top) / std::max(n2 - 1, 1);

  // alpha1 runs along x, alpha2 along y (upward); cells center on their node.
  auto sx = [&](double a1) {
    return left + (a1 - a1_lo) / std::max(a1_hi - a1_lo, 1e-12) * (right - left);
  };
  auto sy = [&](double a2) {
    return bottom - (a2 - a2_lo) / std::max(a2_hi - a2_lo, 1e-12) * (bottom - top);
  };

  std::ostringstream out;
  open_svg(out, width, height, title);

  for (int i = 0; i < n1; ++i) {
    for (int j = 0; j < n2; ++j) {
      const double v = grid.values(i, j);
      const std::string fill =
          std::isfinite(v) ? heat_color((v - vmin) / (vmax - vmin)) : std::string("#cccccc");
      const double x = sx(grid.alphas1[i]) - cw / 2.0;
      const double y = sy(grid.alphas2[j]) - ch / 2.0;
      out << "<rect x=\"" << num(x) << "\" y=\"" << num(y) << "\" width=\"" << num(cw)
          << "\" height=\"" << num(ch) << "\" fill=\"" << fill << "\"/>\n";
    }
  }

  // Axis labels at the corners and center.
  out << "<g font-family=\"sans-serif\" font-size=\"11\" fill=\"#444\">\n";
  for (double a : {a1_lo, 0.0, a1_hi}) {
    out << "<text x=\"" << num(sx(a)) << "\" y=\"" << num(bottom + 16)
        << "\" text-anchor=\"middle\">" << num(a) << "</text>\n";
  }
  for (double a : {a2_lo, 0.0, a2_hi}) {
    out << "<text x=\"" << num(left - 8) << "\" y=\"" << num(sy(a) + 4)
        << "\" text-anchor=\"end\">" << num(a) << "</text>\n";
  }
  out << "</g>\n";
  out << "<text x=\"" << (left + right) / 2.0 << "\" y=\"" << height - 16
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">alpha1 "
      << "(trajectory time)</text>\n";
  out << "<text x=\"16\" y=\"" << (top + bottom) / 2.0
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" "
      << "transform=\"rotate(-90 16 " << (top + bottom) / 2.0 << ")\">alpha2</text>\n";

  if (path != nullptr && !path->points.empty()) {
    out << "<polyline fill=\"none\" stroke=\"#800080\" stroke-width=\"2.5\" points=\"";
    for (const auto& p : path->points) {
      out << num(sx(p.alpha1)) << "," << num(sy(p.alpha2)) << " ";
    }
    out << "\"/>\n";
    for (const auto& p : path->points) {
      out << "<circle cx=\"" << num(sx(p.alpha1)) << "\" cy=\"" << num(sy(p.alpha2))
          << "\" r=\"3\" fill=\"#800080\"/>\n";
    }
  }
  out << "</svg>\n";
  return out.str();
}

}  // namespace raml::svg

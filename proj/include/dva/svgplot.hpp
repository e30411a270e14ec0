#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

// Self-contained SVG line/scatter plots: axes, ticks, legend, series. Only
// paths and text elements, so the files render anywhere without scripts.

namespace dva {

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
  bool points = false;  // scatter instead of polyline
};

struct PlotSpec {
  std::string title;
  std::string xlabel;
  std::string ylabel;
  std::vector<Series> series;
};

namespace detail {

inline std::string fmt2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string fmt_tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '&') out += "&amp;";
    else if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else out += c;
  }
  return out;
}

}  // namespace detail

inline std::string render_svg_plot(const PlotSpec& spec) {
  if (spec.series.empty()) throw std::invalid_argument("plot: no series to draw");
  double xmin = 0, xmax = 0, ymin = 0, ymax = 0;
  bool first = true;
  for (const Series& s : spec.series) {
    if (s.x.empty() || s.x.size() != s.y.size())
      throw std::invalid_argument("plot: series '" + s.label + "' is empty or misaligned");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i]))
        throw std::invalid_argument("plot: non-finite value in series '" + s.label + "'");
      if (first) {
        xmin = xmax = s.x[i];
        ymin = ymax = s.y[i];
        first = false;
      } else {
        xmin = std::min(xmin, s.x[i]);
        xmax = std::max(xmax, s.x[i]);
        ymin = std::min(ymin, s.y[i]);
        ymax = std::max(ymax, s.y[i]);
      }
    }
  }
  if (xmin == xmax) {
    xmin -= 1.0;
    xmax += 1.0;
  }
  if (ymin == ymax) {
    ymin -= 1.0;
    ymax += 1.0;
  }
  const double xpad = 0.05 * (xmax - xmin), ypad = 0.05 * (ymax - ymin);
  xmin -= xpad;
  xmax += xpad;
  ymin -= ypad;
  ymax += ypad;

  const double W = 720, H = 480, L = 70, R = 700, T = 45, B = 430;
  auto px = [&](double v) { return L + (v - xmin) / (xmax - xmin) * (R - L); };
  auto py = [&](double v) { return B - (v - ymin) / (ymax - ymin) * (B - T); };
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c",
                                  "#ff7f0e", "#9467bd", "#8c564b"};
  const std::size_t ncolors = sizeof(palette) / sizeof(palette[0]);
  using detail::fmt2;

  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt2(W) + "\" height=\"" +
         fmt2(H) + "\" viewBox=\"0 0 " + fmt2(W) + " " + fmt2(H) + "\">\n";
  svg += "<rect width=\"" + fmt2(W) + "\" height=\"" + fmt2(H) + "\" fill=\"white\"/>\n";
  if (!spec.title.empty())
    svg += "<text x=\"" + fmt2(W / 2) +
           "\" y=\"22\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">" +
           detail::xml_escape(spec.title) + "</text>\n";

  for (int k = 0; k <= 4; ++k) {
    const double fx = xmin + (xmax - xmin) * k / 4.0;
    const double fy = ymin + (ymax - ymin) * k / 4.0;
    svg += "<path d=\"M " + fmt2(px(fx)) + " " + fmt2(T) + " L " + fmt2(px(fx)) + " " + fmt2(B) +
           "\" stroke=\"#dddddd\" fill=\"none\"/>\n";
    svg += "<path d=\"M " + fmt2(L) + " " + fmt2(py(fy)) + " L " + fmt2(R) + " " + fmt2(py(fy)) +
           "\" stroke=\"#dddddd\" fill=\"none\"/>\n";
    svg += "<text x=\"" + fmt2(px(fx)) + "\" y=\"" + fmt2(B + 18) +
           "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" +
           detail::fmt_tick(fx) + "</text>\n";
    svg += "<text x=\"" + fmt2(L - 8) + "\" y=\"" + fmt2(py(fy) + 4) +
           "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" +
           detail::fmt_tick(fy) + "</text>\n";
  }
  svg += "<path d=\"M " + fmt2(L) + " " + fmt2(T) + " L " + fmt2(L) + " " + fmt2(B) + " L " +
         fmt2(R) + " " + fmt2(B) + "\" stroke=\"black\" fill=\"none\"/>\n";
  if (!spec.xlabel.empty())
    svg += "<text x=\"" + fmt2((L + R) / 2) + "\" y=\"" + fmt2(B + 38) +
           "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">" +
           detail::xml_escape(spec.xlabel) + "</text>\n";
  if (!spec.ylabel.empty())
    svg += "<text x=\"16\" y=\"" + fmt2((T + B) / 2) +
           "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" "
           "transform=\"rotate(-90 16 " +
           fmt2((T + B) / 2) + ")\">" + detail::xml_escape(spec.ylabel) + "</text>\n";

  for (std::size_t si = 0; si < spec.series.size(); ++si) {
    const Series& s = spec.series[si];
    const char* color = palette[si % ncolors];
    if (s.points) {
      for (std::size_t i = 0; i < s.x.size(); ++i)
        svg += "<circle cx=\"" + fmt2(px(s.x[i])) + "\" cy=\"" + fmt2(py(s.y[i])) +
               "\" r=\"2.5\" fill=\"" + color + "\" fill-opacity=\"0.7\"/>\n";
    } else {
      std::string d = "M " + fmt2(px(s.x[0])) + " " + fmt2(py(s.y[0]));
      for (std::size_t i = 1; i < s.x.size(); ++i)
        d += " L " + fmt2(px(s.x[i])) + " " + fmt2(py(s.y[i]));
      svg += "<path d=\"" + d + "\" stroke=\"" + color +
             "\" stroke-width=\"1.5\" fill=\"none\"/>\n";
    }
  }

  const double lx = R - 170, ly0 = T + 12;
  for (std::size_t si = 0; si < spec.series.size(); ++si) {
    const Series& s = spec.series[si];
    const char* color = palette[si % ncolors];
    const double ly = ly0 + 18.0 * double(si);
    if (s.points)
      svg += "<circle cx=\"" + fmt2(lx + 12) + "\" cy=\"" + fmt2(ly - 4) + "\" r=\"2.5\" fill=\"" +
             color + "\"/>\n";
    else
      svg += "<path d=\"M " + fmt2(lx) + " " + fmt2(ly - 4) + " L " + fmt2(lx + 24) + " " +
             fmt2(ly - 4) + "\" stroke=\"" + color + "\" stroke-width=\"1.5\"/>\n";
    svg += "<text x=\"" + fmt2(lx + 30) + "\" y=\"" + fmt2(ly) +
           "\" font-family=\"sans-serif\" font-size=\"12\">" + detail::xml_escape(s.label) +
           "</text>\n";
  }
  svg += "</svg>\n";
  return svg;
}

inline void write_svg_plot(const std::string& path, const PlotSpec& spec) {
  const std::string svg = render_svg_plot(spec);  // validate before touching the file
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("plot: cannot open " + path + " for writing");
  out << svg;
  if (!out) throw std::runtime_error("plot: write failed for " + path);
}

}  // namespace dva

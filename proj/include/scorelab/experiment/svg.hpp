#pragma once

// Minimal static SVG line/area charts. Coordinates are printed with a fixed
// number of decimals so identical inputs give identical bytes.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace scorelab::experiment::svg {

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
  std::string color = "#1f77b4";
  bool markers = false;
  bool line = true;
  bool dashed = false;
};

/// Stacked bands drawn under the line series; band i spans
/// [sum_{j<i} y_j, sum_{j<=i} y_j].
struct Stack {
  std::vector<double> x;
  std::vector<std::vector<double>> layers;
  std::vector<std::string> labels;
  std::vector<std::string> colors;
};

struct Chart {
  std::string title;
  std::string x_label;
  std::string y_label;
  bool log_x = false;
  bool log_y = false;
  std::vector<Series> series;
  std::optional<Stack> stack;
  int width = 640;
  int height = 420;
};

namespace detail {

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

inline std::string escape(const std::string& s) {
  std::string o;
  for (char c : s) {
    if (c == '&') o += "&amp;";
    else if (c == '<') o += "&lt;";
    else if (c == '>') o += "&gt;";
    else o += c;
  }
  return o;
}

struct Axis {
  double lo = 0.0, hi = 1.0;
  bool log = false;

  double map(double v) const {
    const double a = log ? std::log10(v) : v;
    return (a - lo) / (hi - lo);
  }

  std::vector<double> ticks() const {
    std::vector<double> t;
    if (log) {
      for (int e = static_cast<int>(std::floor(lo)); e <= static_cast<int>(std::ceil(hi)); ++e) {
        const double v = std::pow(10.0, e);
        if (e >= lo - 1e-9 && e <= hi + 1e-9) t.push_back(v);
      }
      if (t.size() < 2)
        for (int i = 0; i <= 4; ++i) t.push_back(std::pow(10.0, lo + (hi - lo) * i / 4.0));
    } else {
      for (int i = 0; i <= 5; ++i) t.push_back(lo + (hi - lo) * i / 5.0);
    }
    return t;
  }
};

inline Axis make_axis(std::vector<double> vals, bool log) {
  Axis a;
  a.log = log;
  std::vector<double> v;
  for (double x : vals)
    if (std::isfinite(x) && (!log || x > 0.0)) v.push_back(log ? std::log10(x) : x);
  if (v.empty()) return a;
  a.lo = *std::min_element(v.begin(), v.end());
  a.hi = *std::max_element(v.begin(), v.end());
  if (!log) a.lo = std::min(a.lo, 0.0);
  if (a.hi - a.lo < 1e-12) {
    a.lo -= 0.5;
    a.hi += 0.5;
  }
  const double pad = 0.05 * (a.hi - a.lo);
  a.hi += pad;
  if (log) a.lo -= pad;
  return a;
}

}  // namespace detail

inline std::string render(const Chart& c) {
  using namespace detail;
  const double L = 70, R = 170, T = 40, B = 50;
  const double pw = c.width - L - R, ph = c.height - T - B;
  std::vector<double> xs, ys;
  for (const auto& s : c.series) {
    xs.insert(xs.end(), s.x.begin(), s.x.end());
    ys.insert(ys.end(), s.y.begin(), s.y.end());
  }
  if (c.stack) {
    xs.insert(xs.end(), c.stack->x.begin(), c.stack->x.end());
    for (std::size_t i = 0; i < c.stack->x.size(); ++i) {
      double acc = 0.0;
      for (const auto& l : c.stack->layers) acc += std::max(0.0, l[i]);
      ys.push_back(acc);
    }
  }
  const Axis ax = make_axis(xs, c.log_x), ay = make_axis(ys, c.log_y);
  auto px = [&](double v) { return L + pw * ax.map(v); };
  auto py = [&](double v) { return T + ph * (1.0 - ay.map(v)); };

  std::string o;
  o += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(c.width) + "\" height=\"" +
       std::to_string(c.height) + "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  o += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o += "<text x=\"" + num(L + pw / 2) + "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" + escape(c.title) +
       "</text>\n";
  o += "<rect x=\"" + num(L) + "\" y=\"" + num(T) + "\" width=\"" + num(pw) + "\" height=\"" + num(ph) +
       "\" fill=\"none\" stroke=\"black\"/>\n";
  for (double t : ax.ticks()) {
    const double x = px(t);
    if (x < L - 0.5 || x > L + pw + 0.5) continue;
    o += "<line x1=\"" + num(x) + "\" y1=\"" + num(T + ph) + "\" x2=\"" + num(x) + "\" y2=\"" + num(T + ph + 5) +
         "\" stroke=\"black\"/>\n";
    o += "<text x=\"" + num(x) + "\" y=\"" + num(T + ph + 18) + "\" text-anchor=\"middle\">" + tick_label(t) +
         "</text>\n";
  }
  for (double t : ay.ticks()) {
    const double y = py(t);
    if (y < T - 0.5 || y > T + ph + 0.5) continue;
    o += "<line x1=\"" + num(L - 5) + "\" y1=\"" + num(y) + "\" x2=\"" + num(L) + "\" y2=\"" + num(y) +
         "\" stroke=\"black\"/>\n";
    o += "<text x=\"" + num(L - 8) + "\" y=\"" + num(y + 4) + "\" text-anchor=\"end\">" + tick_label(t) + "</text>\n";
  }
  o += "<text x=\"" + num(L + pw / 2) + "\" y=\"" + num(c.height - 10.0) + "\" text-anchor=\"middle\">" +
       escape(c.x_label) + "</text>\n";
  o += "<text transform=\"translate(16," + num(T + ph / 2) + ") rotate(-90)\" text-anchor=\"middle\">" +
       escape(c.y_label) + "</text>\n";

  int legend = 0;
  auto legend_entry = [&](const std::string& label, const std::string& color) {
    const double y = T + 10 + 16 * legend++;
    o += "<rect x=\"" + num(L + pw + 12) + "\" y=\"" + num(y - 8) + "\" width=\"12\" height=\"10\" fill=\"" + color +
         "\"/>\n";
    o += "<text x=\"" + num(L + pw + 30) + "\" y=\"" + num(y + 1) + "\">" + escape(label) + "</text>\n";
  };

  if (c.stack) {
    const auto& s = *c.stack;
    std::vector<double> base(s.x.size(), 0.0);
    for (std::size_t l = 0; l < s.layers.size(); ++l) {
      std::vector<double> top(s.x.size());
      for (std::size_t i = 0; i < s.x.size(); ++i) top[i] = base[i] + std::max(0.0, s.layers[l][i]);
      std::string pts;
      for (std::size_t i = 0; i < s.x.size(); ++i) pts += num(px(s.x[i])) + "," + num(py(top[i])) + " ";
      for (std::size_t i = s.x.size(); i-- > 0;) pts += num(px(s.x[i])) + "," + num(py(base[i])) + " ";
      o += "<polygon points=\"" + pts + "\" fill=\"" + s.colors[l] + "\" fill-opacity=\"0.6\" stroke=\"none\"/>\n";
      legend_entry(s.labels[l], s.colors[l]);
      base = top;
    }
  }

  for (const auto& s : c.series) {
    std::string pts;
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      if ((c.log_x && s.x[i] <= 0) || (c.log_y && s.y[i] <= 0)) continue;
      pts += num(px(s.x[i])) + "," + num(py(s.y[i])) + " ";
      if (s.markers)
        o += "<circle cx=\"" + num(px(s.x[i])) + "\" cy=\"" + num(py(s.y[i])) + "\" r=\"3\" fill=\"" + s.color +
             "\"/>\n";
    }
    if (s.line && !pts.empty())
      o += "<polyline points=\"" + pts + "\" fill=\"none\" stroke=\"" + s.color + "\" stroke-width=\"1.5\"" +
           (s.dashed ? " stroke-dasharray=\"5,3\"" : "") + "/>\n";
    legend_entry(s.label, s.color);
  }
  o += "</svg>\n";
  return o;
}

}  // namespace scorelab::experiment::svg
